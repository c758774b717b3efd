"""Shared fixtures and random instance generators for the test suite."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import log_softmax

from semirng.engine import Lattice

LN_HALF = math.log(0.5)
# Example DAG: two roots feed v3, which fans out to two leaves
EXAMPLE_P = (0.2, 0.3, 0.4, 0.6)


def example_dag() -> Lattice:
    return Lattice.from_edges(5, [(0, 2, 0), (1, 2, 1), (2, 3, 2), (2, 4, 3)], [0, 1], [3, 4])


def example_logp() -> np.ndarray:
    return np.log(np.array(EXAMPLE_P))


def single_edge() -> Lattice:
    return Lattice.from_edges(2, [(0, 1, 0)], [0], [1])


def parallel_edges() -> Lattice:
    return Lattice.from_edges(2, [(0, 1, 0), (0, 1, 1)], [0], [1])


def normalized(rng: np.random.Generator, shape, scale: float = 1.5) -> np.ndarray:
    return log_softmax(rng.normal(scale=scale, size=shape), axis=-1)


def random_labels(rng: np.random.Generator, U: int, V: int, blank: int = 0) -> list:
    choices = [v for v in range(V) if v != blank]
    return [int(rng.choice(choices)) for _ in range(U)]


def random_ctc(rng, T_max=6, U_max=3, V_max=4):
    V = int(rng.integers(2, V_max + 1))
    U = int(rng.integers(1, U_max + 1))
    T = int(rng.integers(1, T_max + 1))
    return normalized(rng, (T, V)), random_labels(rng, U, V)


def random_rnnt(rng, T_max=5, U_max=3, V_max=4):
    V = int(rng.integers(2, V_max + 1))
    U = int(rng.integers(0, U_max + 1))
    T = int(rng.integers(1, T_max + 1))
    return normalized(rng, (T + 1, U + 1, V)), random_labels(rng, U, V)


def random_dag(rng: np.random.Generator, n: int, p_edge: float = 0.4, n_weights: int = 6) -> Lattice:
    """Random lattice on ``n`` vertices with every vertex on a root-to-leaf path."""
    edges = []
    for d in range(1, n):
        srcs = [s for s in range(d) if rng.random() < p_edge]
        edges += [(s, d, int(rng.integers(n_weights))) for s in srcs]
    indeg = np.zeros(n, int)
    outdeg = np.zeros(n, int)
    for s, d, _ in edges:
        indeg[d] += 1
        outdeg[s] += 1
    roots = [v for v in range(n) if indeg[v] == 0]
    leaves = [v for v in range(n) if outdeg[v] == 0]
    return Lattice.from_edges(n, edges, roots, leaves)


def rel_close(a, b, rtol: float) -> bool:
    a, b = float(a), float(b)
    return a == b or math.isclose(a, b, rel_tol=rtol)


# ---- loss oracle ---------------------------------------------------------------


def oracle_loss_total(kind: str, student, labels, cfg, teacher=None, dps: int = 40):
    """Loss total by path enumeration in mpmath, over the full input array."""
    import mpmath

    from semirng.losses import alignment_problem
    from semirng.oracle import enumerate_paths, oracle_quantities

    mpmath.mp.dps = dps
    s = [mpmath.mpf(v) if not isinstance(v, mpmath.mpf) else v for v in np.ravel(student)]
    shape = np.shape(student)
    prob = alignment_problem(shape, labels, cfg)
    idx = prob.index.tolist()
    tab_s = [s[i] for i in idx]
    tab_t = None
    if teacher is not None:
        t = [mpmath.mpf(float(v)) for v in np.ravel(teacher)]
        tab_t = [t[i] for i in idx]
    paths = enumerate_paths(prob.lattice, tab_s, tab_t)
    nll = oracle_quantities(paths, "nll")
    if kind == "nll":
        return nll
    if kind == "entropy":
        return nll - cfg.alpha_ent * oracle_quantities(paths, "entropy")
    ks = mpmath.fsum(mpmath.exp(q) * (q - p) for q, p in zip(t, s) if q != -mpmath.inf)
    if kind == "soft":
        return nll + cfg.alpha_state * ks
    return nll + cfg.alpha_state * ks + cfg.alpha_seq * oracle_quantities(paths, "kl")


def oracle_loss_grad(kind: str, student, labels, cfg, index: int, teacher=None,
                     h: float = 1e-6, dps: int = 40) -> float:
    """Central difference of :func:`oracle_loss_total` in one input coordinate."""
    import mpmath

    mpmath.mp.dps = dps
    base = [mpmath.mpf(float(v)) for v in np.ravel(student)]
    shape = np.shape(student)

    def at(delta):
        x = list(base)
        x[index] = x[index] + delta
        return oracle_loss_total(kind, np.array(x, dtype=object).reshape(shape), labels, cfg,
                                 teacher, dps)

    step = mpmath.mpf(h)
    return float((at(step) - at(-step)) / (2 * step))
