import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _helpers import normalized, oracle_loss_grad, oracle_loss_total, random_ctc, random_rnnt
from semirng.ctc import ctc_alignment_entropy, ctc_nll
from semirng.errors import SemiringUsageError
from semirng.losses import (TERM_ORDER, LossConfig, compose_total, entropy_regularized_loss,
                            kl_state, kl_state_grad, nll_loss, semiring_distillation_loss,
                            sequence_distillation_loss, soft_distillation_loss)
from semirng.oracle import oracle_kl_state

UNIFORM3 = np.full((2, 3), -math.log(3))
CTC = LossConfig()
RNNT = LossConfig(model_kind="rnnt")


def test_config_validation():
    for bad in ({"alpha_ent": -0.1}, {"alpha_seq": math.inf}, {"alpha_state": math.nan},
                {"model_kind": "hmm"}, {"final_blank": True}):
        with pytest.raises(SemiringUsageError):
            LossConfig(**bad)
    LossConfig(model_kind="rnnt", final_blank=True)


def test_compose_total_order():
    assert TERM_ORDER == ("entropy", "kl_state", "kl_seq")
    parts = {"entropy": 2.0, "kl_state": 3.0, "kl_seq": 5.0}
    assert compose_total(1.0, parts, {"kl_seq": 0.5, "entropy": -1.0}) == 1.0 - 2.0 + 2.5


# ---- entropy-regularised loss ---------------------------------------------------


def test_entropy_loss_example():
    rep = entropy_regularized_loss(UNIFORM3, [1], LossConfig(alpha_ent=0.01))
    assert rep.nll == pytest.approx(math.log(3), rel=1e-14)
    assert rep.entropy == pytest.approx(0.7324081924454064, rel=1e-14)
    assert rep.total == pytest.approx(math.log(3) - 0.01 * 2 / 3 * math.log(3), rel=1e-14)
    assert rep.total == pytest.approx(1.0912882067436558, rel=1e-14)


def test_entropy_loss_alpha_zero_is_bitwise_nll():
    rng = np.random.default_rng(0)
    for _ in range(10):
        x, labels = random_ctc(rng)
        rep = entropy_regularized_loss(x, labels, CTC)
        assert rep.total == rep.nll
        assert rep.nll == nll_loss(x, labels, CTC).nll or math.isinf(rep.nll)


def test_entropy_loss_single_path():
    # one alignment of probability 1: H = 0, so the regulariser vanishes
    x = np.array([[-math.inf, 0.0]])
    rep = entropy_regularized_loss(x, [1], LossConfig(alpha_ent=0.5))
    assert rep.entropy == 0.0 and rep.total == rep.nll == 0.0
    # entropy is over unnormalised path mass, so a lone path of mass p gives -p log p
    x = np.log([[0.3, 0.7]])
    rep = entropy_regularized_loss(x, [1], LossConfig(alpha_ent=0.5))
    assert rep.entropy == pytest.approx(-0.7 * math.log(0.7), rel=1e-14)


def test_entropy_loss_infeasible():
    rep = entropy_regularized_loss(UNIFORM3, [1, 1], LossConfig(alpha_ent=0.1), want_grad=True)
    assert rep.total == math.inf and rep.entropy == 0.0
    assert not rep.grad.any()


def test_entropy_loss_rejects_unnormalized_and_nan():
    with pytest.raises(SemiringUsageError):
        entropy_regularized_loss(UNIFORM3 + 0.5, [1], CTC)
    bad = UNIFORM3.copy()
    bad[0, 0] = math.nan
    with pytest.raises(SemiringUsageError):
        entropy_regularized_loss(bad, [1], CTC, validate=False)


def test_entropy_loss_matches_ctc_functions():
    x = normalized(np.random.default_rng(1), (6, 4))
    rep = entropy_regularized_loss(x, [1, 2], LossConfig(alpha_ent=0.3))
    assert rep.nll == pytest.approx(ctc_nll(x, [1, 2]), rel=1e-14)
    assert rep.entropy == pytest.approx(ctc_alignment_entropy(x, [1, 2]), rel=1e-12)


# ---- KL_state ---------------------------------------------------------------------


def test_kl_state_example():
    t = np.array([[0.0, -math.inf]])
    s = np.log([[0.5, 0.5]])
    assert kl_state(t, s) == pytest.approx(math.log(2), rel=1e-15)


def test_kl_state_identity_and_inf():
    x = normalized(np.random.default_rng(2), (3, 2, 4))
    assert kl_state(x, x) == 0.0
    s = np.array([[0.0, -math.inf]])
    t = np.log([[0.5, 0.5]])
    assert kl_state(t, s) == math.inf


def test_kl_state_shape_mismatch():
    with pytest.raises(SemiringUsageError):
        kl_state(np.zeros((2, 3)), np.zeros((3, 2)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(2, 5))
def test_kl_state_nonnegative_and_matches_oracle(seed, n, v):
    rng = np.random.default_rng(seed)
    t, s = normalized(rng, (n, v), 3.0), normalized(rng, (n, v), 3.0)
    k = kl_state(t, s)
    assert k >= -1e-15
    assert math.isclose(k, oracle_kl_state(t, s), rel_tol=1e-12, abs_tol=1e-15)


def test_kl_state_grad_is_minus_teacher_prob():
    t = normalized(np.random.default_rng(3), (2, 3))
    assert np.array_equal(kl_state_grad(t, t), -np.exp(t))


# ---- distillation -----------------------------------------------------------------


def _pair_rnnt(seed, T=3, U=2, V=3):
    rng = np.random.default_rng(seed)
    labels = [int(v) for v in rng.integers(1, V, size=U)]
    return normalized(rng, (T + 1, U + 1, V)), normalized(rng, (T + 1, U + 1, V)), labels


def test_soft_distillation():
    t, s, labels = _pair_rnnt(4)
    rep = soft_distillation_loss(t, s, labels, LossConfig(model_kind="rnnt", alpha_state=0.2))
    assert rep.total == rep.nll + 0.2 * rep.kl_state
    assert rep.total == rep.recomposed_total()
    rep0 = soft_distillation_loss(t, s, labels, RNNT)
    assert rep0.total == rep0.nll
    same = soft_distillation_loss(s, s, labels, LossConfig(model_kind="rnnt", alpha_state=1.0))
    assert same.total == same.nll


def test_semiring_distillation_teacher_equals_student():
    _, s, labels = _pair_rnnt(5)
    rep = semiring_distillation_loss(s, s, labels,
                                     LossConfig(model_kind="rnnt", alpha_state=0.7, alpha_seq=0.4))
    assert abs(rep.kl_seq) < 1e-12 and rep.kl_state == 0.0
    assert rep.total == pytest.approx(rep.nll, rel=1e-12)


def test_semiring_distillation_decomposition():
    t, s, labels = _pair_rnnt(6)
    cfg = LossConfig(model_kind="rnnt", alpha_state=0.3, alpha_seq=0.6)
    rep = semiring_distillation_loss(t, s, labels, cfg)
    assert rep.kl_seq == rep.cross_term + rep.teacher_entropy_term
    assert rep.teacher_entropy_term <= 0 <= rep.cross_term
    assert rep.total == rep.recomposed_total()
    d = rep.as_dict()
    assert list(d) == ["nll", "kl_state", "kl_seq", "teacher_entropy_term", "cross_term", "total"]
    no_state = semiring_distillation_loss(t, s, labels, LossConfig(model_kind="rnnt", alpha_seq=0.6))
    assert no_state.total == no_state.nll + 0.6 * no_state.kl_seq


def test_sequence_distillation():
    t, s, labels = _pair_rnnt(7)
    rep = sequence_distillation_loss(t, s, labels, LossConfig(model_kind="rnnt", alpha_distill=0.5))
    assert rep.total == rep.nll + 0.5 * rep.kl_seq
    assert rep.kl_state is None


def test_distillation_shape_mismatch():
    t, s, labels = _pair_rnnt(8)
    with pytest.raises(SemiringUsageError):
        semiring_distillation_loss(t[:-1], s, labels, RNNT)


@pytest.mark.parametrize("T, U", [(1, 0), (3, 2), (4, 2), (6, 4)])
def test_single_pass_ops(T, U):
    t, s, labels = _pair_rnnt(9, T, U)
    rep = semiring_distillation_loss(t, s, labels, LossConfig(model_kind="rnnt", alpha_seq=1.0))
    edges = 2 * T * U + T + U
    assert rep.ops.passes == 1
    assert rep.ops.times_ops == edges
    assert rep.ops.real_multiplications == 6 * edges


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_distillation_matches_oracle_composition(seed):
    rng = np.random.default_rng(seed)
    s, labels = random_rnnt(rng, T_max=4, U_max=2)
    t = normalized(rng, s.shape)
    cfg = LossConfig(model_kind="rnnt", alpha_state=float(rng.random()), alpha_seq=float(rng.random()))
    rep = semiring_distillation_loss(t, s, labels, cfg)
    want = float(oracle_loss_total("semiring", s, labels, cfg, t))
    assert math.isclose(rep.total, want, rel_tol=1e-9)


# ---- gradients ----------------------------------------------------------------------


def _check_grad(got, kind, x, labels, cfg, teacher=None, coords=None):
    flat = got.ravel()
    coords = range(flat.size) if coords is None else coords
    for i in coords:
        fd = oracle_loss_grad(kind, x, labels, cfg, i, teacher)
        if abs(fd) > 1e-8 or abs(flat[i]) > 1e-8:
            assert flat[i] == pytest.approx(fd, rel=1e-5), i
        else:
            assert abs(flat[i]) < 1e-8


def test_nll_gradient_ctc():
    x, labels = normalized(np.random.default_rng(10), (4, 3)), [1, 2]
    rep = nll_loss(x, labels, CTC, want_grad=True)
    _check_grad(rep.grad, "nll", x, labels, CTC)


def test_entropy_loss_gradient():
    rng = np.random.default_rng(11)
    x, labels = normalized(rng, (4, 3)), [2]
    cfg = LossConfig(alpha_ent=0.7)
    rep = entropy_regularized_loss(x, labels, cfg, want_grad=True, validate=False)
    _check_grad(rep.grad, "entropy", x, labels, cfg)


def test_entropy_loss_gradient_rnnt():
    rng = np.random.default_rng(12)
    x, labels = normalized(rng, (3, 2, 3)), [1]
    cfg = LossConfig(alpha_ent=0.4, model_kind="rnnt")
    rep = entropy_regularized_loss(x, labels, cfg, want_grad=True)
    _check_grad(rep.grad, "entropy", x, labels, cfg)


def test_semiring_distillation_gradient_and_stop_gradient():
    t, s, labels = _pair_rnnt(13, T=2, U=1)
    cfg = LossConfig(model_kind="rnnt", alpha_state=0.3, alpha_seq=0.8)
    rep = semiring_distillation_loss(t, s, labels, cfg, want_grad=True)
    assert rep.teacher_grad.shape == t.shape and not rep.teacher_grad.any()
    _check_grad(rep.grad, "semiring", s, labels, cfg, t)


def test_soft_distillation_gradient():
    t, s, labels = _pair_rnnt(14, T=2, U=1)
    cfg = LossConfig(model_kind="rnnt", alpha_state=0.5)
    rep = soft_distillation_loss(t, s, labels, cfg, want_grad=True)
    assert not rep.teacher_grad.any()
    _check_grad(rep.grad, "soft", s, labels, cfg, t)


def test_final_blank_gradient():
    rng = np.random.default_rng(15)
    x, labels = normalized(rng, (3, 2, 3)), [2]
    cfg = LossConfig(model_kind="rnnt", final_blank=True, alpha_ent=0.2)
    rep = entropy_regularized_loss(x, labels, cfg, want_grad=True)
    _check_grad(rep.grad, "entropy", x, labels, cfg)
