"""Semirings used by the lattice engine.

A semiring value is a numpy array whose *leading* axis holds the components:
a single value has shape ``(arity,)`` and a table of ``n`` values has shape
``(arity, n)``.  Every component row is contiguous, so the engine can apply
one elementwise kernel per component over a whole wavefront.

The three log-space semirings (``log``, ``log-entropy``, ``log-reverse-kl``)
also carry hand-written adjoints used by :func:`semirng.engine.linear_gradients`.
Adjoints are taken with respect to the *linear* (probability-domain) image of
each component.  All of those images are nonnegative bilinear forms, so the
adjoints are nonnegative and are stored as logarithms.
"""

from __future__ import annotations

import enum
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DomainError, SemiringUsageError

NEG_INF = -np.inf


class SemiringId(str, enum.Enum):
    PROBABILITY = "probability"
    LOG = "log"
    TROPICAL = "tropical"
    COUNTING = "counting"
    ENTROPY = "entropy"
    LOG_ENTROPY = "log-entropy"
    LOG_REVERSE_KL = "log-reverse-kl"


# --------------------------------------------------------------------------
# scalar kernels


def _check_logprob(x: np.ndarray, what: str = "log-probability") -> None:
    if np.any(x > 0):
        raise DomainError(f"{what} must be <= 0 (got max {np.nanmax(x)!r})")


def lmul(x, y):
    """``x + y`` in log space with ``-inf`` absorbing (``-inf + inf = -inf``).

    NaN operands still produce NaN.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        out = x + y
    absorb = (np.isneginf(x) & ~np.isnan(y)) | (np.isneginf(y) & ~np.isnan(x))
    return np.where(absorb, NEG_INF, out)


def ladd(x, y):
    """log(e^x + e^y) via max-subtraction; (-inf, -inf) -> -inf."""
    return np.logaddexp(x, y)


def log_neg(logp):
    """log(-logp): ``-inf`` at ``logp = 0`` and ``+inf`` at ``logp = -inf``."""
    logp = np.asarray(logp, dtype=np.float64)
    _check_logprob(logp)
    with np.errstate(divide="ignore"):
        return np.log(-logp)


def xlogx_log(logp):
    """log(-p log p) computed from ``logp`` without forming ``p``.

    Returns ``-inf`` at both ends of the domain (``p = 1`` and ``p = 0``).
    """
    logp = np.asarray(logp, dtype=np.float64)
    _check_logprob(logp)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = logp + np.log(-logp)
    out = np.where(np.isneginf(logp), NEG_INF, out)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# semiring classes


class Semiring:
    """Base class; subclasses define the component algebra."""

    id: SemiringId
    arity: int = 1
    dtype = np.float64
    log_space = False
    differentiable = False
    needs_teacher = False
    _zero: tuple = (0.0,)
    _one: tuple = (1.0,)
    # (multiplications, additions) per binary operation
    times_cost: tuple = (1, 0)
    plus_cost: tuple = (0, 1)

    def __repr__(self) -> str:
        return f"<Semiring {self.id.value}>"

    def _const(self, comps, shape):
        out = np.empty((self.arity, *shape), dtype=self.dtype)
        for i, c in enumerate(comps):
            out[i] = c
        return out

    def zero(self, *shape: int) -> np.ndarray:
        return self._const(self._zero, shape)

    def one(self, *shape: int) -> np.ndarray:
        return self._const(self._one, shape)

    def plus(self, a, b):
        raise NotImplementedError

    def times(self, a, b):
        raise NotImplementedError

    def lift(self, logp, logq=None):
        raise NotImplementedError

    def to_linear(self, x) -> np.ndarray:
        """Image of ``x`` in the probability domain (used for comparisons)."""
        return np.asarray(x, dtype=np.float64)

    def _lift_args(self, logp, logq):
        logp = np.asarray(logp, dtype=np.float64)
        _check_logprob(logp)
        if self.needs_teacher:
            if logq is None:
                raise SemiringUsageError(f"{self.id.value} needs teacher log-probabilities")
            logq = np.asarray(logq, dtype=np.float64)
            _check_logprob(logq, "teacher log-probability")
            if logq.shape != logp.shape:
                raise SemiringUsageError("student and teacher shapes differ")
        elif logq is not None:
            raise SemiringUsageError(f"{self.id.value} takes no teacher log-probabilities")
        return logp, logq


class ProbabilitySemiring(Semiring):
    id = SemiringId.PROBABILITY
    times_cost = (1, 0)
    plus_cost = (0, 1)

    def plus(self, a, b):
        return a + b

    def times(self, a, b):
        return a * b

    def lift(self, logp, logq=None):
        logp, _ = self._lift_args(logp, logq)
        return np.exp(logp)[None]


class LogSemiring(Semiring):
    id = SemiringId.LOG
    log_space = True
    differentiable = True
    _zero = (NEG_INF,)
    _one = (0.0,)
    times_cost = (0, 1)
    plus_cost = (0, 1)

    def plus(self, a, b):
        return ladd(a, b)

    def times(self, a, b):
        return lmul(a, b)

    def lift(self, logp, logq=None):
        logp, _ = self._lift_args(logp, logq)
        return logp[None].copy()

    def to_linear(self, x):
        return np.exp(np.asarray(x, dtype=np.float64))

    def adjoint_times(self, adj, other):
        return lmul(adj, other)

    def lift_grad(self, adj, logp, logq=None):
        return np.exp(lmul(adj[0], logp))


class TropicalSemiring(Semiring):
    """Max-plus over log-probabilities (Viterbi)."""

    id = SemiringId.TROPICAL
    log_space = True
    _zero = (NEG_INF,)
    _one = (0.0,)
    times_cost = (0, 1)
    plus_cost = (0, 1)

    def plus(self, a, b):
        return np.maximum(a, b)

    def times(self, a, b):
        return lmul(a, b)

    def lift(self, logp, logq=None):
        logp, _ = self._lift_args(logp, logq)
        return logp[None].copy()

    def to_linear(self, x):
        return np.exp(np.asarray(x, dtype=np.float64))


class CountingSemiring(Semiring):
    """Exact path counting with Python integers."""

    id = SemiringId.COUNTING
    dtype = object
    _zero = (0,)
    _one = (1,)
    times_cost = (1, 0)
    plus_cost = (0, 1)

    def plus(self, a, b):
        return a + b

    def times(self, a, b):
        return a * b

    def lift(self, logp, logq=None):
        logp = np.asarray(logp, dtype=np.float64)
        return self.one(*logp.shape)

    def to_linear(self, x):
        return np.asarray(x, dtype=np.float64)


class EntropySemiring(Semiring):
    """Dual numbers <p, p log p>; numerically naive, kept as a reference."""

    id = SemiringId.ENTROPY
    arity = 2
    _zero = (0.0, 0.0)
    _one = (1.0, 0.0)
    times_cost = (3, 1)
    plus_cost = (0, 2)

    def plus(self, a, b):
        return np.stack([a[0] + b[0], a[1] + b[1]])

    def times(self, a, b):
        return np.stack([a[0] * b[0], a[0] * b[1] + a[1] * b[0]])

    def lift(self, logp, logq=None):
        logp, _ = self._lift_args(logp, logq)
        p = np.exp(logp)
        with np.errstate(invalid="ignore"):
            plogp = np.where(np.isneginf(logp), 0.0, p * logp)
        return np.stack([p, plogp])


class LogEntropySemiring(Semiring):
    """<log p, log(-p log p)>: the entropy semiring under a log morphism."""

    id = SemiringId.LOG_ENTROPY
    arity = 2
    log_space = True
    differentiable = True
    _zero = (NEG_INF, NEG_INF)
    _one = (0.0, NEG_INF)
    times_cost = (3, 1)
    plus_cost = (0, 2)

    def plus(self, a, b):
        return np.stack([ladd(a[0], b[0]), ladd(a[1], b[1])])

    def times(self, a, b):
        return np.stack([
            lmul(a[0], b[0]),
            ladd(lmul(a[0], b[1]), lmul(a[1], b[0])),
        ])

    def lift(self, logp, logq=None):
        logp, _ = self._lift_args(logp, logq)
        return np.stack([logp, np.asarray(xlogx_log(logp))])

    def to_linear(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.stack([np.exp(x[0]), -np.exp(x[1])])

    def adjoint_times(self, adj, other):
        # out = <x0 o0, x0 o1 + x1 o0>
        return np.stack([
            ladd(lmul(adj[0], other[0]), lmul(adj[1], other[1])),
            lmul(adj[1], other[0]),
        ])

    def lift_grad(self, adj, logp, logq=None):
        # d/dl of p = p ; d/dl of (-p log p) = -p (1 + l)
        with np.errstate(invalid="ignore"):
            ent = np.exp(lmul(adj[1], logp)) * (1.0 + logp)
        ent = np.where(np.isneginf(logp), 0.0, ent)
        return np.exp(lmul(adj[0], logp)) - ent


class LogReverseKLSemiring(Semiring):
    """<log p, log q, log(-q log q), log(-q log p)> for single-pass distillation.

    ``p`` is the student and ``q`` the teacher.  Gradients are taken with
    respect to the student only.
    """

    id = SemiringId.LOG_REVERSE_KL
    arity = 4
    log_space = True
    differentiable = True
    needs_teacher = True
    _zero = (NEG_INF, NEG_INF, NEG_INF, NEG_INF)
    _one = (0.0, 0.0, NEG_INF, NEG_INF)
    # <pf, qg, qh + cg, qi + dg>
    times_cost = (6, 2)
    plus_cost = (0, 4)

    def plus(self, a, b):
        return np.stack([ladd(a[i], b[i]) for i in range(4)])

    def times(self, a, b):
        return np.stack([
            lmul(a[0], b[0]),
            lmul(a[1], b[1]),
            ladd(lmul(a[1], b[2]), lmul(a[2], b[1])),
            ladd(lmul(a[1], b[3]), lmul(a[3], b[1])),
        ])

    def lift(self, logp, logq=None):
        logp, logq = self._lift_args(logp, logq)
        return np.stack([
            logp,
            logq,
            np.asarray(xlogx_log(logq)),
            lmul(logq, log_neg(logp)),
        ])

    def to_linear(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.stack([np.exp(x[0]), np.exp(x[1]), -np.exp(x[2]), -np.exp(x[3])])

    def adjoint_times(self, adj, other):
        # out = <x0 o0, x1 o1, x1 o2 + x2 o1, x1 o3 + x3 o1>
        return np.stack([
            lmul(adj[0], other[0]),
            ladd(ladd(lmul(adj[1], other[1]), lmul(adj[2], other[2])), lmul(adj[3], other[3])),
            lmul(adj[2], other[1]),
            lmul(adj[3], other[1]),
        ])

    def lift_grad(self, adj, logp, logq=None):
        # d/dlp of p = p ; d/dlp of (-q lp) = -q
        return np.exp(lmul(adj[0], logp)) - np.exp(lmul(adj[3], logq))


_REGISTRY = {
    cls.id: cls()
    for cls in (
        ProbabilitySemiring,
        LogSemiring,
        TropicalSemiring,
        CountingSemiring,
        EntropySemiring,
        LogEntropySemiring,
        LogReverseKLSemiring,
    )
}

SemiringLike = Union[str, SemiringId, Semiring]


def get_semiring(s: SemiringLike) -> Semiring:
    if isinstance(s, Semiring):
        return s
    try:
        return _REGISTRY[SemiringId(s)]
    except ValueError:
        raise SemiringUsageError(f"unknown semiring {s!r}") from None


def all_semirings() -> list[Semiring]:
    return list(_REGISTRY.values())


# --------------------------------------------------------------------------
# value-level API


def _value(sr: Semiring, a) -> np.ndarray:
    arr = np.asarray(a, dtype=sr.dtype)
    if arr.ndim == 0:
        arr = arr[None]
    if arr.shape[0] != sr.arity:
        raise SemiringUsageError(
            f"{sr.id.value} values have {sr.arity} component(s), got {arr.shape[0]}"
        )
    return arr


def plus(s: SemiringLike, a, b) -> np.ndarray:
    sr = get_semiring(s)
    return sr.plus(_value(sr, a), _value(sr, b))


def times(s: SemiringLike, a, b) -> np.ndarray:
    sr = get_semiring(s)
    return sr.times(_value(sr, a), _value(sr, b))


def zero(s: SemiringLike) -> np.ndarray:
    return get_semiring(s).zero()


def one(s: SemiringLike) -> np.ndarray:
    return get_semiring(s).one()


def lift(s: SemiringLike, student_logp, teacher_logq: Optional[float] = None) -> np.ndarray:
    return get_semiring(s).lift(student_logp, teacher_logq)


def lift_table(s: SemiringLike, logp: Sequence[float], logq=None) -> np.ndarray:
    """Lift a 1-D table of log-probabilities to an ``(arity, n)`` weight table."""
    sr = get_semiring(s)
    logp = np.asarray(logp, dtype=np.float64).ravel()
    if logq is not None:
        logq = np.asarray(logq, dtype=np.float64).ravel()
    return sr.lift(logp, logq)
