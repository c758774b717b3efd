"""Semiring dynamic programming over multi-root weighted DAGs.

The engine evaluates

    forward[root] = 1 (or the root's entry weight)
    forward[v]    = (+)_{e=(u,v)} forward[u] (x) w(e)
    total         = (+)_{leaf} forward[leaf]

in one topological sweep.  Vertices are processed in *groups* (a schedule);
within a group every vertex folds its incoming edges left to right in
ascending ``(dst, src)`` order.  The fold for one step is vectorised across
the group, so the wavefront schedule and the one-vertex-per-group sequential
schedule perform exactly the same floating point operations per vertex and
give bit-identical results.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import LatticeStructureError, SemiringUsageError, UnsupportedError
from .semirings import Semiring, SemiringLike, get_semiring

THREADS_ENV = "SEMIRNG_THREADS"
_MIN_CHUNK = 256


def _int_array(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.int64).ravel())


@dataclass(eq=False)
class Lattice:
    """A topologically indexed multi-root DAG.

    Edges are re-sorted by ``(dst, src)`` on construction (stable, so parallel
    edges keep their given order).  ``root_weight_ref`` optionally attaches an
    entry weight to each root (``-1`` for none), which is how CTC's first-frame
    emissions enter the computation.
    """

    num_vertices: int
    src: np.ndarray
    dst: np.ndarray
    weight_ref: np.ndarray
    roots: np.ndarray
    leaves: np.ndarray
    root_weight_ref: Optional[np.ndarray] = None
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.num_vertices = int(self.num_vertices)
        src, dst, ref = _int_array(self.src), _int_array(self.dst), _int_array(self.weight_ref)
        if not (len(src) == len(dst) == len(ref)):
            raise LatticeStructureError("src, dst and weight_ref lengths differ")
        order = np.lexsort((src, dst))
        self.src, self.dst, self.weight_ref = src[order], dst[order], ref[order]
        self.roots = np.unique(_int_array(self.roots))
        self.leaves = np.unique(_int_array(self.leaves))
        if self.root_weight_ref is None:
            self.root_weight_ref = np.full(len(self.roots), -1, dtype=np.int64)
        else:
            rw = _int_array(self.root_weight_ref)
            if len(rw) != len(self.roots):
                raise LatticeStructureError("root_weight_ref must have one entry per root")
            self.root_weight_ref = rw
        self._validate()

    @classmethod
    def from_edges(cls, num_vertices, edges: Iterable[Sequence[int]], roots, leaves,
                   root_weight_ref=None) -> "Lattice":
        edges = list(edges)
        arr = np.asarray(edges, dtype=np.int64).reshape(-1, 3)
        return cls(num_vertices, arr[:, 0], arr[:, 1], arr[:, 2], roots, leaves,
                   root_weight_ref)

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def _validate(self) -> None:
        V = self.num_vertices
        if V < 0:
            raise LatticeStructureError("negative vertex count")
        if V == 0:
            if self.num_edges or len(self.roots) or len(self.leaves):
                raise LatticeStructureError("empty lattice cannot have edges, roots or leaves")
            self._levels = np.zeros(0, dtype=np.int64)
            return
        for name, arr in (("src", self.src), ("dst", self.dst), ("roots", self.roots),
                          ("leaves", self.leaves)):
            if len(arr) and (arr.min() < 0 or arr.max() >= V):
                raise LatticeStructureError(f"{name} index out of range")
        if np.any(self.src >= self.dst):
            raise LatticeStructureError("edges must satisfy src < dst (topological indexing)")
        if np.any(self.weight_ref < 0) or np.any(self.root_weight_ref < -1):
            raise LatticeStructureError("negative weight_ref")
        if not len(self.roots) or not len(self.leaves):
            raise LatticeStructureError("lattice needs at least one root and one leaf")
        indeg = np.bincount(self.dst, minlength=V)
        outdeg = np.bincount(self.src, minlength=V)
        if np.any(indeg[self.roots]):
            raise LatticeStructureError("roots must have in-degree 0")
        if np.any(outdeg[self.leaves]):
            raise LatticeStructureError("leaves must have out-degree 0")
        is_root = np.zeros(V, bool)
        is_root[self.roots] = True
        if np.any((indeg == 0) & ~is_root):
            raise LatticeStructureError("vertex with in-degree 0 is not a root")

        # longest-path level and reachability in one sweep over (dst, src)-sorted edges
        level = [0] * V
        reach = is_root.tolist()
        for s, d in zip(self.src.tolist(), self.dst.tolist()):
            if level[s] + 1 > level[d]:
                level[d] = level[s] + 1
            if reach[s]:
                reach[d] = True
        co = [False] * V
        for v in self.leaves.tolist():
            co[v] = True
        src_l, dst_l = self.src.tolist(), self.dst.tolist()
        for i in np.argsort(-self.src, kind="stable").tolist():
            if co[dst_l[i]]:
                co[src_l[i]] = True
        alive = np.asarray(reach) & np.asarray(co)
        if not alive.all():
            bad = int(np.flatnonzero(~alive)[0])
            raise LatticeStructureError(f"vertex {bad} lies on no root-to-leaf path")
        self._levels = np.asarray(level, dtype=np.int64)

    # ---- derived structure -------------------------------------------------

    @property
    def levels(self) -> np.ndarray:
        """Longest distance (in edges) from a root."""
        return self._levels

    @property
    def in_ptr(self) -> np.ndarray:
        if "in_ptr" not in self._cache:
            counts = np.bincount(self.dst, minlength=self.num_vertices)
            self._cache["in_ptr"] = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        return self._cache["in_ptr"]

    def level_groups(self) -> list[np.ndarray]:
        """Vertices grouped by level; every edge goes from a lower to a higher group."""
        if "levels" not in self._cache:
            if self.num_vertices == 0:
                self._cache["levels"] = []
            else:
                order = np.argsort(self.levels, kind="stable")
                bounds = np.searchsorted(self.levels[order], np.arange(self.levels.max() + 2))
                self._cache["levels"] = [order[bounds[i]:bounds[i + 1]]
                                         for i in range(len(bounds) - 1)]
        return self._cache["levels"]

    def sequential_groups(self) -> list[np.ndarray]:
        return [np.array([v]) for v in range(self.num_vertices)]

    def reversed(self) -> "Lattice":
        """Edge-reversed lattice with vertex ``v`` mapped to ``V - 1 - v``."""
        if "reversed" not in self._cache:
            V = self.num_vertices
            rev = Lattice(V, V - 1 - self.dst, V - 1 - self.src, self.weight_ref,
                          V - 1 - self.leaves, V - 1 - self.roots)
            rev._cache["reversed"] = self
            self._cache["reversed"] = rev
        return self._cache["reversed"]

    def referenced_weights(self) -> np.ndarray:
        refs = np.concatenate([self.weight_ref, self.root_weight_ref[self.root_weight_ref >= 0]])
        return np.unique(refs)

    def required_table_size(self) -> int:
        refs = self.referenced_weights()
        return int(refs.max()) + 1 if len(refs) else 0


# --------------------------------------------------------------------------
# results


@dataclass
class OpCount:
    """Scalar operation counts for one or more DP passes.

    Multiplications and additions follow each semiring's ``times_cost`` and
    ``plus_cost``; root initialisation is free.
    """

    real_multiplications: int = 0
    real_additions: int = 0
    times_ops: int = 0
    plus_ops: int = 0
    passes: int = 0

    def add_times(self, sr: Semiring, n: int) -> None:
        self.times_ops += n
        self.real_multiplications += n * sr.times_cost[0]
        self.real_additions += n * sr.times_cost[1]

    def add_plus(self, sr: Semiring, n: int) -> None:
        self.plus_ops += n
        self.real_multiplications += n * sr.plus_cost[0]
        self.real_additions += n * sr.plus_cost[1]

    def __add__(self, other: "OpCount") -> "OpCount":
        return OpCount(*(a + b for a, b in zip(self.astuple(), other.astuple())))

    def astuple(self):
        return (self.real_multiplications, self.real_additions, self.times_ops,
                self.plus_ops, self.passes)

    def as_dict(self) -> dict:
        return {"mul": self.real_multiplications, "add": self.real_additions}


@dataclass
class ComputeResult:
    total: np.ndarray
    forward: Optional[np.ndarray] = None
    backward: Optional[np.ndarray] = None
    ops: Optional[OpCount] = None


@dataclass
class GradientTable:
    """Derivatives keyed by weight reference; absent references have derivative 0."""

    refs: np.ndarray
    values: np.ndarray

    def __getitem__(self, ref: int) -> float:
        i = np.searchsorted(self.refs, ref)
        if i < len(self.refs) and self.refs[i] == ref:
            return float(self.values[i])
        return 0.0

    def __len__(self) -> int:
        return len(self.refs)

    def as_dict(self) -> dict[int, float]:
        return {int(r): float(v) for r, v in zip(self.refs, self.values)}

    def dense(self, size: int) -> np.ndarray:
        out = np.zeros(size)
        out[self.refs] = self.values
        return out


# --------------------------------------------------------------------------
# scheduling


Schedule = Union[str, Sequence[Sequence[int]]]


def default_threads() -> int:
    try:
        return max(0, int(os.environ.get(THREADS_ENV, "0")))
    except ValueError:
        return 0


def _groups(lattice: Lattice, schedule: Schedule) -> list[np.ndarray]:
    if isinstance(schedule, str):
        if schedule == "wavefront":
            return lattice.level_groups()
        if schedule == "sequential":
            return lattice.sequential_groups()
        raise SemiringUsageError(f"unknown schedule {schedule!r}")
    groups = [np.asarray(g, dtype=np.int64).ravel() for g in schedule]
    seen = np.concatenate(groups) if groups else np.zeros(0, np.int64)
    if len(seen) != lattice.num_vertices or len(np.unique(seen)) != len(seen):
        raise LatticeStructureError("schedule must list every vertex exactly once")
    pos = np.empty(lattice.num_vertices, np.int64)
    for i, g in enumerate(groups):
        pos[g] = i
    if np.any(pos[lattice.src] >= pos[lattice.dst]):
        raise LatticeStructureError("schedule places an edge source at or after its target")
    return groups


def _plan(lattice: Lattice, schedule: Schedule):
    """Per group, a list of fold steps ``(vertices, edge indices)``."""
    key = ("plan", schedule if isinstance(schedule, str) else id(schedule))
    if isinstance(schedule, str) and key in lattice._cache:
        return lattice._cache[key]
    ptr = lattice.in_ptr
    plan = []
    for g in _groups(lattice, schedule):
        starts = ptr[g]
        counts = ptr[g + 1] - starts
        keep = counts > 0
        g, starts, counts = g[keep], starts[keep], counts[keep]
        if not len(g):
            continue
        steps = []
        for k in range(int(counts.max())):
            m = counts > k
            steps.append((g[m], starts[m] + k))
        plan.append(steps)
    if isinstance(schedule, str):
        lattice._cache[key] = plan
    return plan


def _check_weights(lattice: Lattice, weights, sr: Semiring) -> np.ndarray:
    w = np.asarray(weights, dtype=sr.dtype)
    if w.ndim == 1 and sr.arity == 1:
        w = w[None]
    if w.ndim != 2 or w.shape[0] != sr.arity:
        raise SemiringUsageError(
            f"weight table for {sr.id.value} must have shape ({sr.arity}, n), got {w.shape}"
        )
    if w.shape[1] < lattice.required_table_size():
        raise LatticeStructureError("weight_ref out of range of the weight table")
    return w


# --------------------------------------------------------------------------
# forward / backward


def _forward(lattice: Lattice, w: np.ndarray, sr: Semiring, schedule: Schedule,
             threads: int, ops: Optional[OpCount]) -> np.ndarray:
    V = lattice.num_vertices
    fwd = sr.zero(V)
    if V == 0:
        return fwd
    fwd[:, lattice.roots] = sr.one(len(lattice.roots))
    entry = lattice.root_weight_ref >= 0
    fwd[:, lattice.roots[entry]] = w[:, lattice.root_weight_ref[entry]]
    src, ref = lattice.src, lattice.weight_ref

    def step(verts, edges, first):
        prod = sr.times(fwd[:, src[edges]], w[:, ref[edges]])
        fwd[:, verts] = prod if first else sr.plus(fwd[:, verts], prod)

    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for steps in _plan(lattice, schedule):
            for k, (verts, edges) in enumerate(steps):
                n = len(verts)
                if pool is not None and n >= 2 * _MIN_CHUNK:
                    bounds = np.linspace(0, n, min(threads, n // _MIN_CHUNK) + 1).astype(int)
                    futs = [pool.submit(step, verts[a:b], edges[a:b], k == 0)
                            for a, b in zip(bounds[:-1], bounds[1:])]
                    for f in futs:
                        f.result()
                else:
                    step(verts, edges, k == 0)
                if ops is not None:
                    ops.add_times(sr, n)
                    if k:
                        ops.add_plus(sr, n)
    finally:
        if pool is not None:
            pool.shutdown()
    return fwd


def _leaf_sum(fwd: np.ndarray, leaves: np.ndarray, sr: Semiring,
              ops: Optional[OpCount]) -> np.ndarray:
    if not len(leaves):
        return sr.zero()
    total = fwd[:, leaves[0]].copy()
    for leaf in leaves[1:]:
        total = sr.plus(total, fwd[:, leaf])
    if ops is not None:
        ops.add_plus(sr, len(leaves) - 1)
    return total


def compute(lattice: Lattice, weights, semiring: SemiringLike, *, want_tables: bool = False,
            want_ops: bool = False, schedule: Schedule = "wavefront",
            threads: Optional[int] = None) -> ComputeResult:
    """Sum over all maximal paths of the product of edge weights.

    ``weights`` is an ``(arity, n)`` table of lifted edge weights indexed by
    ``weight_ref``.  With ``want_tables`` the per-vertex forward and backward
    tables are returned as well; ``ops`` counts the forward pass only.
    """
    sr = get_semiring(semiring)
    w = _check_weights(lattice, weights, sr)
    threads = default_threads() if threads is None else threads
    ops = OpCount(passes=1) if want_ops else None
    fwd = _forward(lattice, w, sr, schedule, threads, ops)
    total = _leaf_sum(fwd, lattice.leaves, sr, ops)
    result = ComputeResult(total=total, ops=ops)
    if want_tables:
        result.forward = fwd
        result.backward = _backward(lattice, w, sr, schedule, threads)
    return result


def _backward(lattice, w, sr, schedule, threads):
    rev_schedule = schedule if isinstance(schedule, str) else "wavefront"
    rev_fwd = _forward(lattice.reversed(), w, sr, rev_schedule, threads, None)
    return np.ascontiguousarray(rev_fwd[:, ::-1])


def backward(lattice: Lattice, weights, semiring: SemiringLike, *,
             schedule: Schedule = "wavefront", threads: Optional[int] = None) -> np.ndarray:
    """Per-vertex sums over paths from the vertex to a leaf (``1`` at leaves)."""
    sr = get_semiring(semiring)
    w = _check_weights(lattice, weights, sr)
    threads = default_threads() if threads is None else threads
    return _backward(lattice, w, sr, schedule, threads)


# --------------------------------------------------------------------------
# gradients


def _differentiable(semiring: SemiringLike) -> Semiring:
    sr = get_semiring(semiring)
    if not sr.differentiable:
        raise UnsupportedError(f"gradients are not supported for the {sr.id.value} semiring")
    return sr


def linear_gradients(lattice: Lattice, logp, semiring: SemiringLike,
                     components: Sequence[int], logq=None, *,
                     schedule: Schedule = "wavefront", want_ops: bool = False):
    """Reverse-mode derivatives of ``exp(total[c])`` w.r.t. each raw student log-probability.

    Runs one forward pass (tables kept), then one adjoint sweep per requested
    component over the same schedule in reverse.  Adjoints live in the log
    domain and are shifted by ``log_scale = total[c]`` (or 0 when that is
    ``-inf``) before exponentiating, so long lattices do not underflow.

    Returns ``(ComputeResult, {c: (log_scale, grad)})`` where the true
    derivative of ``exp(total[c])`` is ``exp(log_scale) * grad``.
    """
    sr = _differentiable(semiring)
    logp = np.asarray(logp, dtype=np.float64).ravel()
    if logq is not None:
        logq = np.asarray(logq, dtype=np.float64).ravel()
    w = _check_weights(lattice, sr.lift(logp, logq), sr)
    ops = OpCount(passes=1) if want_ops else None
    fwd = _forward(lattice, w, sr, schedule, 0, ops)
    total = _leaf_sum(fwd, lattice.leaves, sr, ops)
    result = ComputeResult(total=total, forward=fwd, ops=ops)
    plan = _plan(lattice, schedule)
    src, ref = lattice.src, lattice.weight_ref
    rw = lattice.root_weight_ref
    entry = rw >= 0
    refs = np.concatenate([ref, rw[entry]])
    lq_all = None if logq is None else logq[refs]
    grads = {}
    for c in components:
        if not 0 <= c < sr.arity:
            raise SemiringUsageError(f"component {c} out of range for {sr.id.value}")
        scale = float(total[c]) if np.isfinite(total[c]) else 0.0
        adj = np.full((sr.arity, lattice.num_vertices), -np.inf)
        adj[c, lattice.leaves] = -scale
        adj_edge = np.full((sr.arity, lattice.num_edges), -np.inf)
        for steps in reversed(plan):
            for verts, edges in reversed(steps):
                a = adj[:, verts]
                s = src[edges]
                adj_edge[:, edges] = sr.adjoint_times(a, fwd[:, s])
                contrib = sr.adjoint_times(a, w[:, ref[edges]])
                for j in range(sr.arity):
                    np.logaddexp.at(adj[j], s, contrib[j])
        adj_all = np.concatenate([adj_edge, adj[:, lattice.roots[entry]]], axis=1)
        g = sr.lift_grad(adj_all, logp[refs], lq_all)
        grads[c] = (scale, np.bincount(refs, weights=g, minlength=len(logp)))
    return result, grads


def gradient(lattice: Lattice, logp, semiring: SemiringLike, component: int = 0,
             logq=None, *, schedule: Schedule = "wavefront") -> GradientTable:
    """Derivative of ``total[component]`` (a log-domain value) w.r.t. each student log-probability.

    Undefined (inf/nan) where ``total[component]`` is ``-inf``.
    """
    result, grads = linear_gradients(lattice, logp, semiring, [component], logq,
                                     schedule=schedule)
    scale, g = grads[component]
    refs = lattice.referenced_weights()
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        values = g[refs] * np.exp(scale - result.total[component])
    return GradientTable(refs=refs, values=values)


# --------------------------------------------------------------------------
# problems: a lattice plus the gather from a full model output


@dataclass(eq=False)
class AlignmentProblem:
    """A lattice whose weight table is gathered from a larger model-output array.

    ``index[r]`` is the flat position in the full array that feeds weight
    reference ``r``.  Gradients on the table are scattered back with
    :meth:`scatter`.
    """

    lattice: Lattice
    index: np.ndarray
    shape: tuple

    def table(self, full) -> np.ndarray:
        full = np.asarray(full, dtype=np.float64)
        if full.shape != tuple(self.shape):
            raise SemiringUsageError(f"expected input of shape {self.shape}, got {full.shape}")
        return full.ravel()[self.index]

    def scatter(self, table_grad) -> np.ndarray:
        size = int(np.prod(self.shape))
        return np.bincount(self.index, weights=table_grad, minlength=size).reshape(self.shape)
