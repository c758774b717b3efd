"""Brute-force reference: explicit path enumeration and direct summation.

Everything here is deliberately naive.  Path probabilities are formed by
exponentiating summed log-probabilities, so the oracle is exact at small
scale and underflows at large scale.  Pass tables of ``mpmath.mpf`` values
to evaluate in extended precision (used by the finite-difference checks).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from math import comb
from typing import Callable, Optional, Sequence

import mpmath
import numpy as np

from .engine import Lattice
from .errors import SemiringUsageError
from .semirings import SemiringLike, get_semiring

PATH_LIMIT = 10**6


@dataclass(frozen=True)
class AlignmentPath:
    """A maximal path; ``weight_refs`` starts with the root's entry weight when it has one."""

    vertices: tuple
    weight_refs: tuple
    logp: Optional[float] = None
    logq: Optional[float] = None


def count_paths(lattice: Lattice) -> int:
    V = lattice.num_vertices
    n = [0] * V
    for r in lattice.roots.tolist():
        n[r] = 1
    for s, d in zip(lattice.src.tolist(), lattice.dst.tolist()):
        n[d] += n[s]
    return sum(n[v] for v in lattice.leaves.tolist())


def enumerate_paths(lattice: Lattice, logp: Optional[Sequence] = None,
                    logq: Optional[Sequence] = None, limit: int = PATH_LIMIT) -> list[AlignmentPath]:
    """All maximal paths, depth first from ascending roots along ascending out-edges."""
    total = count_paths(lattice)
    if total > limit:
        raise SemiringUsageError(f"{total} paths exceed the enumeration guard of {limit}")
    out_edges: list[list[int]] = [[] for _ in range(lattice.num_vertices)]
    for i, s in sorted(enumerate(lattice.src.tolist()), key=lambda x: (x[1], lattice.dst[x[0]], x[0])):
        out_edges[s].append(i)
    is_leaf = np.zeros(lattice.num_vertices, bool)
    is_leaf[lattice.leaves] = True
    dst, ref = lattice.dst.tolist(), lattice.weight_ref.tolist()

    def path_sum(refs, table):
        if table is None:
            return None
        acc = 0
        for r in refs:
            acc = acc + table[r]
        return acc

    paths = []
    for root, rw in zip(lattice.roots.tolist(), lattice.root_weight_ref.tolist()):
        stack = [(root, (root,), (rw,) if rw >= 0 else ())]
        while stack:
            v, verts, refs = stack.pop()
            if is_leaf[v]:
                paths.append(AlignmentPath(verts, refs, path_sum(refs, logp), path_sum(refs, logq)))
                continue
            for e in reversed(out_edges[v]):
                stack.append((dst[e], verts + (dst[e],), refs + (ref[e],)))
    return paths


def _is_mp(x) -> bool:
    return isinstance(x, mpmath.mpf)


def _fns(x):
    if _is_mp(x):
        return mpmath.exp, mpmath.log, mpmath.mpf(0)
    return math.exp, math.log, 0.0


def _xlogy(x, logy, zero):
    return zero if x == 0 else x * logy


def oracle_quantities(paths: Sequence[AlignmentPath], mode: str):
    """Direct sums over paths in the probability domain.

    Modes: ``likelihood`` (sum p), ``nll``, ``entropy`` (-sum p log p),
    ``kl`` (sum q log q/p), ``cross`` (-sum q log p), ``teacher_entropy``
    (-sum q log q), ``count``.
    """
    if mode == "count":
        return len(paths)
    if not paths:
        return {"likelihood": 0.0, "nll": math.inf, "entropy": 0.0, "kl": 0.0,
                "cross": 0.0, "teacher_entropy": 0.0}[mode]
    exp, log, zero = _fns(paths[0].logp)
    if mode == "likelihood":
        return sum((exp(p.logp) for p in paths), zero)
    if mode == "nll":
        z = sum((exp(p.logp) for p in paths), zero)
        return math.inf if z == 0 else -log(z)
    if mode == "entropy":
        return -sum((_xlogy(exp(p.logp), p.logp, zero) for p in paths), zero)
    if any(p.logq is None for p in paths):
        raise SemiringUsageError(f"mode {mode!r} needs teacher log-probabilities")
    if mode == "cross":
        return -sum((_xlogy(exp(p.logq), p.logp, zero) for p in paths), zero)
    if mode == "teacher_entropy":
        return -sum((_xlogy(exp(p.logq), p.logq, zero) for p in paths), zero)
    if mode == "kl":
        return sum((_xlogy(exp(p.logq), p.logq - p.logp, zero) for p in paths), zero)
    raise SemiringUsageError(f"unknown oracle mode {mode!r}")


def oracle_semiring_total(paths: Sequence[AlignmentPath], weights, semiring: SemiringLike):
    """(+) over paths of the (x)-product of lifted weights, one path at a time."""
    sr = get_semiring(semiring)
    w = np.asarray(weights, dtype=sr.dtype)
    total = sr.zero()
    for p in paths:
        acc = sr.one()
        for r in p.weight_refs:
            acc = sr.times(acc, w[:, r])
        total = sr.plus(total, acc)
    return total


def oracle_vertex_posteriors(lattice: Lattice, paths: Sequence[AlignmentPath]) -> np.ndarray:
    """Share of the total path probability passing through each vertex."""
    mass = np.zeros(lattice.num_vertices)
    for p in paths:
        pr = math.exp(p.logp)
        for v in p.vertices:
            mass[v] += pr
    z = sum(math.exp(p.logp) for p in paths)
    return mass / z


def oracle_kl_state(teacher, student) -> float:
    """sum over every distribution entry of q (log q - log p), by explicit loop."""
    t = np.asarray(teacher, dtype=np.float64).ravel().tolist()
    s = np.asarray(student, dtype=np.float64).ravel().tolist()
    if len(t) != len(s):
        raise SemiringUsageError("teacher and student shapes differ")
    acc = 0.0
    for lq, lp in zip(t, s):
        q = math.exp(lq)
        if q > 0:
            acc += q * (lq - lp)
    return acc


def finite_difference(func: Callable, table, index: int, h: float = 1e-6):
    """Central difference of ``func(table)`` in coordinate ``index``.

    Works on lists of floats or ``mpmath.mpf`` (where ``h`` is added exactly).
    """
    table = list(table)
    plus, minus = list(table), list(table)
    step = mpmath.mpf(h) if _is_mp(table[index]) else h
    plus[index] = table[index] + step
    minus[index] = table[index] - step
    return (func(plus) - func(minus)) / (2 * step)


def mp_table(values, dps: int = 40) -> list:
    mpmath.mp.dps = dps
    return [mpmath.mpf(float(v)) for v in np.asarray(values, dtype=np.float64).ravel()]


def oracle_gradient(lattice: Lattice, logp, mode: str, ref: int, logq=None,
                    h: float = 1e-6, dps: Optional[int] = 40, log_domain: bool = True) -> float:
    """Central finite difference of an oracle quantity w.r.t. ``logp[ref]``.

    Re-enumerates at both evaluation points.  ``log_domain`` differentiates the
    logarithm of the quantity (matching :func:`semirng.engine.gradient`), with
    ``nll`` returned as d log-likelihood.  ``dps=None`` evaluates in float64.
    """
    to_tab = (lambda x: mp_table(x, dps)) if dps else (lambda x: np.asarray(x, float).ravel().tolist())
    lq = None if logq is None else to_tab(logq)
    base_mode = "likelihood" if mode == "nll" else mode

    def func(tab):
        val = oracle_quantities(enumerate_paths(lattice, tab, lq), base_mode)
        if not log_domain:
            return val
        return mpmath.log(val) if _is_mp(val) else math.log(val)

    return float(finite_difference(func, to_tab(logp), ref, h))


def naive_op_count(T: int, U: int) -> tuple[int, int]:
    """Scalar operations for entropy by explicit per-alignment summation on a T x U grid."""
    n = comb(T + U, U)
    return n * (T + U + 1), n - 1
