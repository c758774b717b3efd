"""CTC alignment lattice and the quantities computed over it.

Vertices are states ``(t, s)`` of the blank-expanded label sequence
``e y1 e y2 ... yU e`` (``s`` in ``0..2U``).  An edge into ``(t, s)`` carries
the emission ``logits[t, expanded[s]]``; the two first-frame roots carry
their emission as an entry weight.  States that lie on no complete
alignment are pruned, so an infeasible ``(T, labels)`` pair produces an
empty lattice whose total is the semiring zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .engine import AlignmentProblem, ComputeResult, Lattice, Schedule, compute, gradient
from .errors import InfeasibleAlignmentError, SemiringUsageError, UnsupportedError
from .semirings import SemiringLike, get_semiring

INT64_MAX = 2**63 - 1


@dataclass(frozen=True)
class LabelSequence:
    tokens: tuple
    blank_id: int = 0

    def __post_init__(self):
        tokens = tuple(int(t) for t in self.tokens)
        object.__setattr__(self, "tokens", tokens)
        if not tokens:
            raise SemiringUsageError("label sequence must contain at least one token")
        if self.blank_id < 0 or any(t < 0 for t in tokens):
            raise SemiringUsageError("token ids must be nonnegative")
        if self.blank_id in tokens:
            raise SemiringUsageError("label sequence contains the blank id")

    def __len__(self) -> int:
        return len(self.tokens)

    def check_vocab(self, num_classes: int) -> None:
        if max(max(self.tokens), self.blank_id) >= num_classes:
            raise SemiringUsageError(f"token id out of range for vocabulary of size {num_classes}")

    def expanded(self) -> np.ndarray:
        out = np.full(2 * len(self.tokens) + 1, self.blank_id, dtype=np.int64)
        out[1::2] = self.tokens
        return out


def as_labels(labels, blank_id: int = 0) -> LabelSequence:
    if isinstance(labels, LabelSequence):
        return labels
    return LabelSequence(tuple(labels), blank_id)


@dataclass
class FrameLogProbs:
    """``T x V`` per-frame log-probabilities.

    ``normalized=False`` marks scores whose rows need not sum to one; the
    entropy and KL computations refuse such inputs.
    """

    data: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise SemiringUsageError("frame log-probabilities must be a T x V matrix")

    def check_normalized(self, tol: float = 1e-9) -> None:
        check_rows_normalized(self.data, tol)


def check_rows_normalized(logprobs, tol: float = 1e-9) -> None:
    """Raise if any row (last axis) does not logsumexp to 0 within ``tol``."""
    from scipy.special import logsumexp

    lse = logsumexp(np.asarray(logprobs, dtype=np.float64), axis=-1)
    bad = np.abs(lse) > tol
    if np.any(bad):
        raise SemiringUsageError(
            f"log-probabilities are not normalised (max |logsumexp| = {np.max(np.abs(lse)):.3g})"
        )


def _logits(x, need_normalized: bool = False) -> np.ndarray:
    if isinstance(x, FrameLogProbs):
        if need_normalized and not x.normalized:
            raise UnsupportedError("entropy and KL need normalised log-probabilities")
        return x.data
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise SemiringUsageError("frame log-probabilities must be a T x V matrix")
    return arr


@dataclass(eq=False)
class CtcLattice:
    lattice: Lattice
    num_frames: int
    num_classes: int
    labels: LabelSequence
    expanded: np.ndarray
    frame: np.ndarray  # vertex -> t (0-based)
    state: np.ndarray  # vertex -> s

    @property
    def feasible(self) -> bool:
        return self.lattice.num_vertices > 0

    def problem(self) -> AlignmentProblem:
        T, V = self.num_frames, self.num_classes
        return AlignmentProblem(self.lattice, np.arange(T * V), (T, V))


def _shift(a: np.ndarray, k: int) -> np.ndarray:
    """a[s - k] along the last axis, False-padded."""
    out = np.zeros_like(a)
    if k < a.shape[-1]:
        out[..., k:] = a[..., :a.shape[-1] - k]
    return out


def build_ctc_lattice(num_frames: int, labels, num_classes: Optional[int] = None,
                      blank_id: int = 0) -> CtcLattice:
    labels = as_labels(labels, blank_id)
    T = int(num_frames)
    if T < 1:
        raise SemiringUsageError("CTC needs at least one frame")
    V = int(num_classes) if num_classes is not None else max(max(labels.tokens), labels.blank_id) + 1
    labels.check_vocab(V)
    ext = labels.expanded()
    S = len(ext)
    skip_ok = np.zeros(S, bool)
    skip_ok[2:] = (ext[2:] != labels.blank_id) & (ext[2:] != ext[:-2])

    reach = np.zeros((T, S), bool)
    reach[0, :2] = True
    for t in range(1, T):
        prev = reach[t - 1]
        reach[t] = prev | _shift(prev, 1) | (_shift(prev, 2) & skip_ok)
    co = np.zeros((T, S), bool)
    co[T - 1, S - 2:] = True
    for t in range(T - 2, -1, -1):
        nxt = co[t + 1]
        co[t] = nxt.copy()
        co[t, :-1] |= nxt[1:]
        co[t, :-2] |= (nxt & skip_ok)[2:]
    alive = reach & co

    vid = np.full((T, S), -1, dtype=np.int64)
    tt, ss = np.nonzero(alive)
    vid[tt, ss] = np.arange(len(tt))

    src, dst, ref = [], [], []
    for k in (0, 1, 2):
        if k >= S:
            continue
        m = alive[:-1, :S - k] & alive[1:, k:]
        if k == 2:
            m &= skip_ok[2:]
        t0, s0 = np.nonzero(m)
        src.append(vid[t0, s0])
        dst.append(vid[t0 + 1, s0 + k])
        ref.append((t0 + 1) * V + ext[s0 + k])
    src, dst, ref = (np.concatenate(x) if x else np.zeros(0, np.int64) for x in (src, dst, ref))

    roots = [vid[0, s] for s in (0, 1) if alive[0, s]]
    root_refs = [ext[s] for s in (0, 1) if alive[0, s]]
    leaves = [vid[T - 1, s] for s in (S - 2, S - 1) if alive[T - 1, s]]
    order = np.argsort(roots)
    lattice = Lattice(len(tt), src, dst, ref, np.asarray(roots, np.int64)[order],
                      leaves, np.asarray(root_refs, np.int64)[order])
    return CtcLattice(lattice, T, V, labels, ext, tt, ss)


# --------------------------------------------------------------------------
# computations


def ctc_compute(logits, labels, semiring: SemiringLike, teacher_logits=None, *,
                want_tables: bool = False, want_ops: bool = False,
                schedule: Schedule = "wavefront", threads: Optional[int] = None,
                blank_id: int = 0):
    """Run one semiring pass over the CTC lattice; returns ``(CtcLattice, ComputeResult)``."""
    sr = get_semiring(semiring)
    x = _logits(logits, need_normalized=sr.id.value in ("entropy", "log-entropy", "log-reverse-kl"))
    labels = as_labels(labels, blank_id)
    cl = build_ctc_lattice(x.shape[0], labels, x.shape[1])
    logq = None
    if sr.needs_teacher:
        if teacher_logits is None:
            raise SemiringUsageError("log-reverse-kl needs teacher log-probabilities")
        logq = _logits(teacher_logits, need_normalized=True)
        if logq.shape != x.shape:
            raise SemiringUsageError("teacher and student shapes differ")
    w = sr.lift(x.ravel(), None if logq is None else logq.ravel())
    res = compute(cl.lattice, w, sr, want_tables=want_tables, want_ops=want_ops,
                  schedule=schedule, threads=threads)
    return cl, res


def ctc_nll(logits, labels, *, blank_id: int = 0) -> float:
    """-log P(labels | logits); ``inf`` when no alignment exists."""
    _, res = ctc_compute(logits, labels, "log", blank_id=blank_id)
    return -float(res.total[0])


def ctc_alignment_entropy(logits, labels, *, blank_id: int = 0) -> float:
    """-sum_pi P(pi) log P(pi) over valid alignments (unnormalised path probabilities)."""
    _, res = ctc_compute(logits, labels, "log-entropy", blank_id=blank_id)
    return float(np.exp(res.total[1]))


def ctc_kl_seq(teacher_logits, student_logits, labels, *, blank_id: int = 0):
    """One log-reverse-KL pass; returns ``(kl_seq, student_nll, teacher_neg_entropy)``."""
    _, res = ctc_compute(student_logits, labels, "log-reverse-kl", teacher_logits,
                         blank_id=blank_id)
    c = res.total
    return float(np.exp(c[3]) - np.exp(c[2])), -float(c[0]), -float(np.exp(c[2]))


def ctc_state_posteriors(logits, labels, *, blank_id: int = 0) -> np.ndarray:
    """``T x (2U+1)`` matrix of P(alignment passes through state (t, s) | labels)."""
    cl, res = ctc_compute(logits, labels, "log", want_tables=True, blank_id=blank_id)
    logz = float(res.total[0])
    if not np.isfinite(logz):
        raise InfeasibleAlignmentError("infeasible alignment: P(labels | logits) = 0")
    post = np.zeros((cl.num_frames, len(cl.expanded)))
    post[cl.frame, cl.state] = np.exp(res.forward[0] + res.backward[0] - logz)
    return post


def ctc_alignment_count(num_frames: int, labels, *, blank_id: int = 0) -> int:
    """Exact number of CTC alignments (counting semiring)."""
    cl = build_ctc_lattice(num_frames, labels, blank_id=blank_id)
    sr = get_semiring("counting")
    w = sr.one(cl.lattice.required_table_size())
    n = int(compute(cl.lattice, w, sr).total[0])
    if n > INT64_MAX:
        raise OverflowError(f"alignment count exceeds 2^63-1 ({n})")
    return n


def ctc_nll_gradient(logits, labels, *, blank_id: int = 0) -> np.ndarray:
    """d NLL / d logits as a dense ``T x V`` array."""
    x = _logits(logits)
    cl = build_ctc_lattice(x.shape[0], as_labels(labels, blank_id), x.shape[1])
    g = gradient(cl.lattice, x.ravel(), "log", 0)
    return -g.dense(x.size).reshape(x.shape)
