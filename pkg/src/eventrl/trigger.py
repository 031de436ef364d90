"""Transmission rules: when does an agent send its gradient to the server."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "KINDS",
    "TriggerPolicy",
    "GainEstimate",
    "threshold",
    "oracle_gain",
    "estimated_gain_eq17",
    "estimated_gain_exact_quadratic",
    "decide",
]

KINDS = ("oracle", "eq17", "exact_quadratic", "random", "always", "never")
GAIN_KINDS = ("oracle", "eq17", "exact_quadratic")


@dataclass(frozen=True)
class TriggerPolicy:
    """Decision rule plus its threshold schedule.

    The threshold at iteration k is ``lam_eff / rho**(N-1-k)`` where
    ``lam_eff = lam / N`` if ``divide_by_N`` else ``lam``.
    """

    kind: str = "oracle"
    lam: float = 0.0
    rho: float = 1.0
    N: int = 1
    divide_by_N: bool = True
    p: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown trigger kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")

    @property
    def needs_gain(self) -> bool:
        return self.kind in GAIN_KINDS

    def threshold(self, k: int) -> float:
        return threshold(k, self)

    def schedule(self) -> np.ndarray:
        k = np.arange(self.N)
        lam = self.lam / self.N if self.divide_by_N else self.lam
        return lam / self.rho ** (self.N - 1 - k)


@dataclass(frozen=True)
class GainEstimate:
    value: float
    method: str

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"non-finite gain {self.value}")


def threshold(k: int, policy: TriggerPolicy) -> float:
    if not 0 <= k < policy.N:
        raise IndexError(f"iteration {k} outside [0, {policy.N})")
    lam = policy.lam / policy.N if policy.divide_by_N else policy.lam
    return lam / policy.rho ** (policy.N - 1 - k)


def _vec(g):
    return np.asarray(getattr(g, "g", g), dtype=float)


def oracle_gain(w, g, epsilon, exact_objective) -> GainEstimate:
    """J(w - eps g) - J(w) with the true objective."""
    w = np.asarray(w, dtype=float)
    g = _vec(g)
    return GainEstimate(float(exact_objective(w - epsilon * g) - exact_objective(w)), "oracle")


def _moment(tuples, basis):
    x = getattr(tuples, "x", None)
    if x is None:
        tuples = list(tuples)
        if not tuples:
            raise ValueError("empty tuple list")
        x = np.asarray([t.x for t in tuples])
    if len(x) == 0:
        raise ValueError("empty tuple list")
    F = basis.transform(x)
    return F.T @ F / len(F)


def eq17_gain_from_moment(g, moment, epsilon) -> float:
    g = _vec(g)
    return float(-(g @ g) + 0.5 * epsilon * (g @ moment @ g))


def exact_quadratic_gain_from_moment(g, moment, epsilon) -> float:
    g = _vec(g)
    return float(-epsilon * (g @ g) + epsilon * epsilon * (g @ moment @ g))


def estimated_gain_eq17(g, tuples, basis, epsilon) -> GainEstimate:
    """-g'[I - (eps/2) (1/T) sum phi phi'] g, using the batch that produced g."""
    return GainEstimate(eq17_gain_from_moment(g, _moment(tuples, basis), epsilon), "eq17")


def estimated_gain_exact_quadratic(g, tuples, basis, epsilon) -> GainEstimate:
    """Second-order gain with the data plug-ins carried through:
    -eps g'g + eps^2 g' [(1/T) sum phi phi'] g."""
    return GainEstimate(exact_quadratic_gain_from_moment(g, _moment(tuples, basis), epsilon), "exact_quadratic")


def decide(policy: TriggerPolicy, k: int, gain=None, rng=None) -> int:
    """alpha in {0, 1}. Gain rules transmit iff gain <= -threshold(k)."""
    kind = policy.kind
    if kind == "always":
        return 1
    if kind == "never":
        return 0
    if kind == "random":
        if rng is None:
            raise ValueError("random trigger needs an rng")
        return int(rng.random() < policy.p)
    if gain is None:
        raise ValueError(f"{kind} trigger needs a gain estimate")
    value = getattr(gain, "value", gain)
    return int(value <= -threshold(k, policy))
