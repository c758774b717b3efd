"""Vectorised semiring law checks on random carrier elements.

Each law is evaluated on ``trials`` random triples at once and compared in
the probability domain (via ``Semiring.to_linear``) with relative tolerance.
Counting values are compared exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .semirings import Semiring, SemiringId, SemiringLike, all_semirings, get_semiring

LAWS = (
    "plus_commutative",
    "times_commutative",
    "plus_associative",
    "times_associative",
    "left_distributive",
    "right_distributive",
    "plus_identity",
    "times_identity",
    "annihilator",
    "no_nan",
)


@dataclass
class AxiomReport:
    semiring: str
    trials: int
    failures: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not any(self.failures.values())


def _logprobs(rng: np.random.Generator, n: int, edge_rate: float) -> np.ndarray:
    """Uniform on [-30, 0] with a share of exact endpoints (``-inf`` and ``0``)."""
    x = rng.uniform(-30.0, 0.0, n)
    u = rng.random(n)
    x[u < edge_rate] = -np.inf
    x[(u >= edge_rate) & (u < 2 * edge_rate)] = 0.0
    return x


def random_values(sr: Semiring, n: int, rng: np.random.Generator, source: str = "lifted",
                  edge_rate: float = 0.05) -> np.ndarray:
    """``n`` random elements as an ``(arity, n)`` table.

    ``source="lifted"`` lifts random log-probabilities (edge weights);
    ``source="carrier"`` draws arbitrary carrier elements instead (wider
    ranges, independent components).  Counting always uses random integers
    since every lifted counting weight is 1.
    """
    sid = sr.id
    if sid is SemiringId.COUNTING:
        out = np.empty((1, n), dtype=object)
        out[0] = [int(v) for v in rng.integers(0, 10**6, n)]
        return out
    if source == "lifted":
        logp = _logprobs(rng, n, edge_rate)
        logq = _logprobs(rng, n, edge_rate) if sr.needs_teacher else None
        return sr.lift(logp, logq)
    if source != "carrier":
        raise ValueError(f"unknown source {source!r}")
    if sid is SemiringId.PROBABILITY:
        v = rng.uniform(0, 3, (1, n))
        v[rng.random((1, n)) < edge_rate] = 0.0
        return v
    if sid is SemiringId.ENTROPY:
        # nonpositive second components keep sums and products free of cancellation
        v = np.stack([rng.uniform(0, 3, n), rng.uniform(-3, 0, n)])
        v[rng.random(v.shape) < edge_rate] = 0.0
        return v
    lo, hi = (-10.0, 10.0) if sid is SemiringId.TROPICAL else (-8.0, 2.0)
    v = rng.uniform(lo, hi, (sr.arity, n))
    v[rng.random(v.shape) < edge_rate] = -np.inf
    return v


def _close(sr: Semiring, a, b, rtol: float) -> np.ndarray:
    if sr.id is SemiringId.COUNTING:
        return np.all(a == b, axis=0)
    la, lb = sr.to_linear(a), sr.to_linear(b)
    return np.all(np.isclose(la, lb, rtol=rtol, atol=0.0), axis=0)


def check_axioms(semiring: SemiringLike, trials: int = 10_000, seed: int = 0,
                 rtol: float = 1e-9, source: str = "lifted") -> AxiomReport:
    sr = get_semiring(semiring)
    rng = np.random.default_rng(seed)
    a, b, c = (random_values(sr, trials, rng, source) for _ in range(3))
    P, M = sr.plus, sr.times
    zero, one = sr.zero(trials), sr.one(trials)
    pairs = {
        "plus_commutative": (P(a, b), P(b, a)),
        "times_commutative": (M(a, b), M(b, a)),
        "plus_associative": (P(P(a, b), c), P(a, P(b, c))),
        "times_associative": (M(M(a, b), c), M(a, M(b, c))),
        "left_distributive": (M(a, P(b, c)), P(M(a, b), M(a, c))),
        "right_distributive": (M(P(a, b), c), P(M(a, c), M(b, c))),
        "plus_identity": (P(a, zero), a),
        "times_identity": (M(a, one), a),
        "annihilator": (M(a, zero), zero),
    }
    failures = {}
    for law in LAWS[:-1]:
        x, y = pairs[law]
        ok = _close(sr, x, y, rtol)
        if law in ("plus_identity", "times_identity", "annihilator"):
            # the mirrored form of each identity law
            x2 = {"plus_identity": P(zero, a), "times_identity": M(one, a),
                  "annihilator": M(zero, a)}[law]
            ok = ok & _close(sr, x2, y, rtol)
        failures[law] = int(np.sum(~ok))
    if sr.id is SemiringId.COUNTING:
        failures["no_nan"] = 0
    else:
        produced = [v for pair in pairs.values() for v in pair]
        failures["no_nan"] = int(np.sum(np.any([np.isnan(v).any(axis=0) for v in produced], axis=0)))
    return AxiomReport(sr.id.value, trials, failures)


def check_all(trials: int = 10_000, seed: int = 0, rtol: float = 1e-9,
              source: str = "lifted") -> list[AxiomReport]:
    return [check_axioms(sr, trials, seed + i, rtol, source) for i, sr in enumerate(all_semirings())]
