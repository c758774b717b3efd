"""Training objectives built from lattice passes.

Inputs are full model outputs: a ``T x V`` frame matrix for CTC, or a
``(T', U + 1, V)`` joint tensor for RNN-T.  Each loss gathers its lattice
weights from that array, runs the needed semiring pass, and (optionally)
scatters reverse-mode gradients back onto the same shape.  Teacher inputs
are treated as constants, so their gradient is reported as exact zeros.

Inputs must be row-normalised; ``validate=False`` skips that check (finite
difference probes perturb single entries and break normalisation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .ctc import as_labels, build_ctc_lattice, check_rows_normalized
from .engine import AlignmentProblem, OpCount, linear_gradients
from .errors import SemiringUsageError
from .rnnt import rnnt_problem

# order in which weighted terms are added to the NLL
TERM_ORDER = ("entropy", "kl_state", "kl_seq")


@dataclass(frozen=True)
class LossConfig:
    """Loss weights.  ``alpha_distill`` weights KL_seq in :func:`sequence_distillation_loss`."""

    alpha_ent: float = 0.0
    alpha_state: float = 0.0
    alpha_seq: float = 0.0
    alpha_distill: float = 0.0
    model_kind: str = "ctc"
    final_blank: bool = False
    blank_id: int = 0

    def __post_init__(self):
        for name in ("alpha_ent", "alpha_state", "alpha_seq", "alpha_distill"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise SemiringUsageError(f"{name} must be finite and nonnegative, got {v}")
            object.__setattr__(self, name, v)
        if self.model_kind not in ("ctc", "rnnt"):
            raise SemiringUsageError(f"model_kind must be 'ctc' or 'rnnt', got {self.model_kind!r}")
        if self.final_blank and self.model_kind != "rnnt":
            raise SemiringUsageError("final_blank applies to RNN-T only")


@dataclass
class LossReport:
    """Loss parts plus the coefficients that compose them.

    ``total == nll + sum(weights[k] * part[k])`` evaluated left to right in
    :data:`TERM_ORDER`.  ``cross_term`` and ``teacher_entropy_term`` split
    ``kl_seq`` into ``-sum q log p`` and ``sum q log q``.
    """

    nll: float
    total: float
    entropy: Optional[float] = None
    kl_state: Optional[float] = None
    kl_seq: Optional[float] = None
    teacher_entropy_term: Optional[float] = None
    cross_term: Optional[float] = None
    weights: dict = field(default_factory=dict)
    grad: Optional[np.ndarray] = None
    teacher_grad: Optional[np.ndarray] = None
    ops: Optional[OpCount] = None

    def recomposed_total(self) -> float:
        return compose_total(self.nll, {k: getattr(self, k) for k in self.weights}, self.weights)

    def as_dict(self) -> dict:
        out = {"nll": self.nll}
        for k in ("entropy", "kl_state", "kl_seq", "teacher_entropy_term", "cross_term"):
            v = getattr(self, k)
            if v is not None:
                out[k] = v
        out["total"] = self.total
        return out


def compose_total(nll: float, parts: dict, weights: dict) -> float:
    total = nll
    for k in TERM_ORDER:
        if k in weights:
            total = total + weights[k] * parts[k]
    return total


# --------------------------------------------------------------------------
# inputs


def alignment_problem(shape, labels, cfg: LossConfig) -> AlignmentProblem:
    """Lattice and gather index for a model output of the given shape."""
    if cfg.model_kind == "ctc":
        if len(shape) != 2:
            raise SemiringUsageError(f"CTC inputs must be T x V, got shape {shape}")
        return build_ctc_lattice(shape[0], as_labels(labels, cfg.blank_id), shape[1]).problem()
    if len(shape) != 3:
        raise SemiringUsageError(f"RNN-T inputs must be (T', U+1, V), got shape {shape}")
    return rnnt_problem(shape, labels, cfg.blank_id, cfg.final_blank,
                        shape[0] if cfg.final_blank else None)


def _inputs(x, name: str, validate: bool = True) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise SemiringUsageError(f"{name} contains NaN")
    if validate:
        check_rows_normalized(x)
    return x


def _pair(teacher, student, validate: bool = True):
    t, s = _inputs(teacher, "teacher", validate), _inputs(student, "student", validate)
    if t.shape != s.shape:
        raise SemiringUsageError(f"teacher shape {t.shape} differs from student shape {s.shape}")
    return t, s


def _scaled(grads, c) -> np.ndarray:
    scale, g = grads[c]
    return math.exp(scale) * g


# --------------------------------------------------------------------------
# losses


def kl_state(teacher, student) -> float:
    """Sum over all distributions of ``q (log q - log p)``; zero-mass teacher entries drop out."""
    t, s = np.asarray(teacher, np.float64), np.asarray(student, np.float64)
    if t.shape != s.shape:
        raise SemiringUsageError(f"teacher shape {t.shape} differs from student shape {s.shape}")
    live = t > -np.inf
    q = np.exp(t[live])
    diff = t[live] - s[live]
    return float(np.sum(q * diff))


def kl_state_grad(teacher, student) -> np.ndarray:
    t = np.asarray(teacher, np.float64)
    return -np.exp(t) * (t > -np.inf)


def nll_loss(logits, labels, cfg: LossConfig, *, want_grad: bool = False) -> LossReport:
    """Plain ``-log P(labels | x)``; accepts unnormalised scores."""
    x = _inputs(logits, "logits", validate=False)
    prob = alignment_problem(x.shape, labels, cfg)
    res, grads = linear_gradients(prob.lattice, prob.table(x), "log", [0] if want_grad else [])
    nll = -float(res.total[0])
    report = LossReport(nll=nll, total=nll)
    if want_grad:
        report.grad = prob.scatter(-grads[0][1]) if math.isfinite(nll) else np.zeros(x.shape)
    return report


def entropy_regularized_loss(logits, labels, cfg: LossConfig, *, want_grad: bool = False,
                             validate: bool = True) -> LossReport:
    """``nll - alpha_ent * H`` with both parts from one log-entropy pass."""
    x = _inputs(logits, "logits", validate)
    prob = alignment_problem(x.shape, labels, cfg)
    res, grads = linear_gradients(prob.lattice, prob.table(x), "log-entropy",
                                  [0, 1] if want_grad else [])
    logz = float(res.total[0])
    weights = {"entropy": -cfg.alpha_ent}
    if not math.isfinite(logz):
        report = LossReport(nll=math.inf, total=math.inf, entropy=0.0, weights=weights)
        if want_grad:
            report.grad = np.zeros(x.shape)
        return report
    nll = -logz
    h = float(np.exp(res.total[1]))
    report = LossReport(nll=nll, total=compose_total(nll, {"entropy": h}, weights),
                        entropy=h, weights=weights)
    if want_grad:
        # d log P = exp(-log P) d P; the NLL adjoint is seeded with log_scale = log P
        table_grad = -grads[0][1] - cfg.alpha_ent * _scaled(grads, 1)
        report.grad = prob.scatter(table_grad)
    return report


def soft_distillation_loss(teacher, student, labels, cfg: LossConfig, *,
                           want_grad: bool = False, validate: bool = True) -> LossReport:
    """Student NLL on the teacher labels plus ``alpha_state * kl_state``."""
    t, s = _pair(teacher, student, validate)
    prob = alignment_problem(s.shape, labels, cfg)
    res, grads = linear_gradients(prob.lattice, prob.table(s), "log", [0] if want_grad else [])
    nll = -float(res.total[0])
    ks = kl_state(t, s)
    weights = {"kl_state": cfg.alpha_state}
    report = LossReport(nll=nll, total=compose_total(nll, {"kl_state": ks}, weights),
                        kl_state=ks, weights=weights)
    if want_grad:
        g = prob.scatter(-grads[0][1]) if math.isfinite(nll) else np.zeros(s.shape)
        report.grad = g + cfg.alpha_state * kl_state_grad(t, s)
        report.teacher_grad = np.zeros(t.shape)
    return report


def _seq_pass(t, s, labels, cfg, want_grad: bool):
    prob = alignment_problem(s.shape, labels, cfg)
    res, grads = linear_gradients(prob.lattice, prob.table(s), "log-reverse-kl",
                                  [0, 3] if want_grad else [], prob.table(t), want_ops=True)
    c = res.total
    nll = -float(c[0])
    cross = float(np.exp(c[3]))
    teacher_term = -float(np.exp(c[2]))
    parts = {"nll": nll, "cross_term": cross, "teacher_entropy_term": teacher_term,
             "kl_seq": cross + teacher_term}
    g_nll = g_seq = None
    if want_grad:
        feasible = math.isfinite(nll)
        g_nll = prob.scatter(-grads[0][1]) if feasible else np.zeros(s.shape)
        g_seq = prob.scatter(_scaled(grads, 3))
    return parts, res.ops, g_nll, g_seq


def semiring_distillation_loss(teacher, student, labels, cfg: LossConfig, *,
                               want_grad: bool = False, validate: bool = True) -> LossReport:
    """``nll + alpha_state * kl_state + alpha_seq * kl_seq``.

    NLL and both halves of KL_seq come from a single log-reverse-KL lattice
    pass; ``report.ops`` holds that pass's counters.
    """
    t, s = _pair(teacher, student, validate)
    parts, ops, g_nll, g_seq = _seq_pass(t, s, labels, cfg, want_grad)
    parts["kl_state"] = kl_state(t, s)
    weights = {"kl_state": cfg.alpha_state, "kl_seq": cfg.alpha_seq}
    report = LossReport(total=compose_total(parts["nll"], parts, weights), weights=weights,
                        ops=ops, **parts)
    if want_grad:
        report.grad = g_nll + cfg.alpha_state * kl_state_grad(t, s) + cfg.alpha_seq * g_seq
        report.teacher_grad = np.zeros(t.shape)
    return report


def sequence_distillation_loss(teacher, student, labels, cfg: LossConfig, *,
                               want_grad: bool = False, validate: bool = True) -> LossReport:
    """Hard NLL plus ``alpha_distill * kl_seq`` (no state-level term)."""
    t, s = _pair(teacher, student, validate)
    parts, ops, g_nll, g_seq = _seq_pass(t, s, labels, cfg, want_grad)
    weights = {"kl_seq": cfg.alpha_distill}
    report = LossReport(total=compose_total(parts["nll"], parts, weights), weights=weights,
                        ops=ops, **parts)
    if want_grad:
        report.grad = g_nll + cfg.alpha_distill * g_seq
        report.teacher_grad = np.zeros(t.shape)
    return report
