"""RNN-T grid lattice, its computations, and the loop-skewed wavefront schedule.

Grid vertex ``(t, u)`` (``t`` in ``0..T``, ``u`` in ``0..U``) has index
``t * (U + 1) + u``.  A blank edge ``(t, u) -> (t + 1, u)`` is weighted by
``blank[t, u]`` and a label edge ``(t, u) -> (t, u + 1)`` by ``label[t, u]``.
The default topology has leaf ``(T, U)`` and ``C(T + U, U)`` alignments.
With ``final_blank`` the grid stops at ``t = T - 1`` and a terminal vertex is
reached only through the blank ``(T - 1, U) -> terminal``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Optional

import numpy as np

from .ctc import LabelSequence, as_labels
from .engine import AlignmentProblem, Lattice, Schedule, compute, gradient
from .errors import InfeasibleAlignmentError, SemiringUsageError, UnsupportedError
from .semirings import SemiringLike, get_semiring


@dataclass
class RnntGridLogProbs:
    """Pre-sliced blank / label log-probabilities.

    ``blank`` has shape ``(T, U + 1)``; ``label`` has shape ``(T + 1, U)``
    (``(T, U)`` suffices for the final-blank topology).
    """

    blank: np.ndarray
    label: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        self.blank = np.asarray(self.blank, dtype=np.float64)
        self.label = np.asarray(self.label, dtype=np.float64)
        if self.blank.ndim != 2 or self.label.ndim != 2:
            raise SemiringUsageError("blank and label grids must be 2-D")
        T, U1 = self.blank.shape
        if T < 1:
            raise SemiringUsageError("RNN-T needs at least one frame")
        if self.label.shape[1] != U1 - 1 or self.label.shape[0] not in (T, T + 1):
            raise SemiringUsageError(
                f"label grid shape {self.label.shape} does not match blank grid {self.blank.shape}"
            )

    @property
    def T(self) -> int:
        return self.blank.shape[0]

    @property
    def U(self) -> int:
        return self.blank.shape[1] - 1

    def table(self) -> np.ndarray:
        return np.concatenate([self.blank.ravel(), self.label.ravel()])

    @classmethod
    def from_joint(cls, joint, labels, blank_id: int = 0, num_frames: Optional[int] = None):
        """Slice a ``(T', U + 1, V)`` joint tensor; ``T' = T + 1`` or ``T``."""
        joint = np.asarray(joint, dtype=np.float64)
        labels = as_labels(labels, blank_id) if len(labels) else None
        U = 0 if labels is None else len(labels)
        if joint.ndim != 3 or joint.shape[1] != U + 1:
            raise SemiringUsageError(f"joint must have shape (T', {U + 1}, V), got {joint.shape}")
        T = joint.shape[0] - 1 if num_frames is None else int(num_frames)
        if joint.shape[0] not in (T, T + 1):
            raise SemiringUsageError("joint time axis must have T or T+1 rows")
        if labels is not None:
            labels.check_vocab(joint.shape[2])
        blank = joint[:T, :, blank_id]
        rows = joint.shape[0]
        if U:
            y = np.asarray(labels.tokens)
            label = joint[:rows, np.arange(U), y]
        else:
            label = np.zeros((rows, 0))
        return cls(blank, label)


def joint_index(joint_shape, labels, blank_id: int, T: int) -> np.ndarray:
    """Flat positions in the joint tensor feeding each weight reference."""
    rows, U1, V = joint_shape
    U = U1 - 1
    t, u = np.meshgrid(np.arange(T), np.arange(U1), indexing="ij")
    blank_idx = (t * U1 + u) * V + blank_id
    if U:
        y = np.asarray(as_labels(labels, blank_id).tokens)
        t, u = np.meshgrid(np.arange(rows), np.arange(U), indexing="ij")
        label_idx = (t * U1 + u) * V + y[u]
    else:
        label_idx = np.zeros(0, np.int64)
    return np.concatenate([blank_idx.ravel(), label_idx.ravel()]).astype(np.int64)


@dataclass(eq=False)
class RnntLattice:
    lattice: Lattice
    T: int
    U: int
    final_blank: bool
    label_rows: int

    def vertex(self, t: int, u: int) -> int:
        return t * (self.U + 1) + u

    @property
    def terminal(self) -> int:
        return self.lattice.num_vertices - 1


def build_rnnt_lattice(T: int, U: int, final_blank: bool = False,
                       label_rows: Optional[int] = None) -> RnntLattice:
    """Grid lattice; ``label_rows`` is the row count of the label grid (default ``T + 1``)."""
    T, U = int(T), int(U)
    if T < 1 or U < 0:
        raise SemiringUsageError("RNN-T needs T >= 1 and U >= 0")
    label_rows = T + 1 if label_rows is None else int(label_rows)
    if label_rows not in (T, T + 1) or (label_rows == T and not final_blank):
        raise SemiringUsageError("default topology needs label log-probabilities for t = 0..T")
    U1 = U + 1
    rows = T if final_blank else T + 1
    bt, bu = np.meshgrid(np.arange(rows - 1), np.arange(U1), indexing="ij")
    b_src = (bt * U1 + bu).ravel()
    lt, lu = np.meshgrid(np.arange(rows), np.arange(U), indexing="ij")
    l_src = (lt * U1 + lu).ravel()
    # blank refs coincide with the source vertex id; label refs follow the blank grid
    src = [b_src, l_src]
    dst = [b_src + U1, l_src + 1]
    ref = [b_src, T * U1 + (lt * U + lu).ravel()]
    if final_blank:
        term = rows * U1
        src.append([(T - 1) * U1 + U])
        dst.append([term])
        ref.append([(T - 1) * U1 + U])
        num_vertices, leaf = term + 1, term
    else:
        num_vertices, leaf = rows * U1, T * U1 + U
    lattice = Lattice(num_vertices, np.concatenate(src), np.concatenate(dst),
                      np.concatenate(ref), [0], [leaf])
    return RnntLattice(lattice, T, U, final_blank, label_rows)


def wavefront_schedule(T: int, U: int) -> list[list[tuple[int, int]]]:
    """Anti-diagonals ``d = t + u`` of the default grid, ``d = 0..T+U``."""
    return [[(t, d - t) for t in range(max(0, d - U), min(d, T) + 1)] for d in range(T + U + 1)]


def wavefront_groups(T: int, U: int) -> list[np.ndarray]:
    """:func:`wavefront_schedule` as vertex-index groups for :func:`semirng.engine.compute`."""
    return [np.array([t * (U + 1) + u for t, u in g], dtype=np.int64)
            for g in wavefront_schedule(T, U)]


def num_alignments(T: int, U: int, final_blank: bool = False) -> int:
    return comb(T - 1 + U, U) if final_blank else comb(T + U, U)


# --------------------------------------------------------------------------
# computations


def _grid(x) -> RnntGridLogProbs:
    if isinstance(x, RnntGridLogProbs):
        return x
    if isinstance(x, tuple) and len(x) == 2:
        return RnntGridLogProbs(*x)
    raise SemiringUsageError("expected RnntGridLogProbs or a (blank, label) pair")


def rnnt_compute(grid, semiring: SemiringLike, teacher=None, *, final_blank: bool = False,
                 want_tables: bool = False, want_ops: bool = False,
                 schedule: Schedule = "wavefront", threads: Optional[int] = None):
    """One semiring pass over the grid; returns ``(RnntLattice, ComputeResult)``.

    ``schedule="wavefront"`` uses the anti-diagonal groups of the grid.
    """
    sr = get_semiring(semiring)
    g = _grid(grid)
    needs_norm = sr.id.value in ("entropy", "log-entropy", "log-reverse-kl")
    if needs_norm and not g.normalized:
        raise UnsupportedError("entropy and KL need normalised log-probabilities")
    rl = build_rnnt_lattice(g.T, g.U, final_blank, g.label.shape[0])
    logq = None
    if sr.needs_teacher:
        if teacher is None:
            raise SemiringUsageError("log-reverse-kl needs teacher log-probabilities")
        tg = _grid(teacher)
        if not tg.normalized:
            raise UnsupportedError("teacher log-probabilities must be normalised")
        if tg.blank.shape != g.blank.shape or tg.label.shape != g.label.shape:
            raise SemiringUsageError("teacher and student grids differ in shape")
        logq = tg.table()
    if schedule == "wavefront" and not final_blank:
        schedule = wavefront_groups(g.T, g.U)
    w = sr.lift(g.table(), logq)
    res = compute(rl.lattice, w, sr, want_tables=want_tables, want_ops=want_ops,
                  schedule=schedule, threads=threads)
    return rl, res


def rnnt_nll(grid, *, final_blank: bool = False) -> float:
    _, res = rnnt_compute(grid, "log", final_blank=final_blank)
    return -float(res.total[0])


def rnnt_alignment_entropy(grid, *, final_blank: bool = False) -> float:
    _, res = rnnt_compute(grid, "log-entropy", final_blank=final_blank)
    return float(np.exp(res.total[1]))


def rnnt_kl_seq(teacher, student, *, final_blank: bool = False, want_ops: bool = False):
    """Single log-reverse-KL pass; returns ``(kl_seq, student_nll, teacher_neg_entropy)``.

    With ``want_ops`` the :class:`~semirng.engine.OpCount` is appended.
    """
    _, res = rnnt_compute(student, "log-reverse-kl", teacher, final_blank=final_blank,
                          want_ops=want_ops)
    c = res.total
    out = (float(np.exp(c[3]) - np.exp(c[2])), -float(c[0]), -float(np.exp(c[2])))
    return out + (res.ops,) if want_ops else out


def rnnt_vertex_posteriors(grid, *, final_blank: bool = False) -> np.ndarray:
    """Occupancy probability of each grid vertex, shape ``(rows, U + 1)``."""
    rl, res = rnnt_compute(grid, "log", final_blank=final_blank, want_tables=True)
    logz = float(res.total[0])
    if not np.isfinite(logz):
        raise InfeasibleAlignmentError("infeasible alignment: P(labels | x) = 0")
    post = np.exp(res.forward[0] + res.backward[0] - logz)
    rows = rl.T if final_blank else rl.T + 1
    return post[: rows * (rl.U + 1)].reshape(rows, rl.U + 1)


def rnnt_nll_gradient(grid, *, final_blank: bool = False) -> RnntGridLogProbs:
    """d NLL / d (blank, label) as grids of the input shapes."""
    g = _grid(grid)
    rl = build_rnnt_lattice(g.T, g.U, final_blank, g.label.shape[0])
    table = g.table()
    dense = -gradient(rl.lattice, table, "log", 0).dense(len(table))
    nb = g.blank.size
    return RnntGridLogProbs(dense[:nb].reshape(g.blank.shape),
                            dense[nb:].reshape(g.label.shape), normalized=False)


def rnnt_problem(joint_shape, labels, blank_id: int = 0, final_blank: bool = False,
                 num_frames: Optional[int] = None) -> AlignmentProblem:
    """Lattice plus gather from a full ``(T', U + 1, V)`` joint tensor."""
    rows = joint_shape[0]
    T = rows - 1 if num_frames is None else int(num_frames)
    if not final_blank and rows != T + 1:
        raise SemiringUsageError("default topology needs a joint tensor with T + 1 rows")
    rl = build_rnnt_lattice(T, joint_shape[1] - 1, final_blank, rows)
    return AlignmentProblem(rl.lattice, joint_index(joint_shape, labels, blank_id, T),
                            tuple(joint_shape))
