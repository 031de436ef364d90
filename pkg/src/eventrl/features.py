"""Fixed feature maps and their second-moment matrix E_d[phi phi^T]."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .mdp import GridWorld, LinearGaussian, make_rng

__all__ = [
    "IndicatorBasis",
    "PolynomialBasis2",
    "SecondMomentSummary",
    "indicator_basis",
    "polynomial_basis_deg2",
    "second_moment",
    "summarize",
]

PSD_TOL = 1e-9


class IndicatorBasis(TransformerMixin, BaseEstimator):
    """One-hot features over a finite state space: phi(s) = e_s."""

    def __init__(self, num_states=9):
        self.num_states = num_states

    @property
    def n_features(self) -> int:
        return self.num_states

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        s = np.asarray(X)
        if s.dtype.kind not in "iu":
            if not np.all(np.mod(s, 1) == 0):
                raise ValueError("indicator features need integer state indices")
            s = s.astype(np.int64)
        if s.size and (s.min() < 0 or s.max() >= self.num_states):
            raise ValueError(f"state index out of range [0, {self.num_states})")
        out = np.zeros(s.shape + (self.num_states,))
        np.put_along_axis(out, s[..., None], 1.0, axis=-1)
        return out

    def exact_phi(self, env) -> np.ndarray:
        if not isinstance(env, GridWorld) or env.n_states != self.num_states:
            raise ValueError("indicator basis needs a finite environment with a matching state count")
        return np.diag(env.state_weights())


_POWERS = np.array([[2, 0], [0, 2], [1, 1], [1, 0], [0, 1], [0, 0]])


class PolynomialBasis2(TransformerMixin, BaseEstimator):
    """Monomials up to degree 2 in two variables, ordered
    [x1^2, x2^2, x1 x2, x1, x2, 1]."""

    powers = _POWERS

    @property
    def n_features(self) -> int:
        return 6

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 2:
            check_array(X, ensure_min_samples=0)
        if X.shape[-1] != 2:
            raise ValueError(f"expected 2-dimensional states, got trailing shape {X.shape[-1]}")
        x1, x2 = X[..., 0], X[..., 1]
        return np.stack([x1 * x1, x2 * x2, x1 * x2, x1, x2, np.ones_like(x1)], axis=-1)

    def exact_phi(self, env) -> np.ndarray:
        # E[x1^a x2^b] = 1 / ((a+1)(b+1)) under uniform d on [0, 1]^2
        if not isinstance(env, LinearGaussian) or env.dim != 2:
            raise ValueError("polynomial basis needs a 2-dimensional continuous environment")
        tot = _POWERS[:, None, :] + _POWERS[None, :, :]
        return 1.0 / np.prod(tot + 1, axis=-1)

    @staticmethod
    def quadratic_form(w):
        """(M, l, const) with w'phi(x) = x'Mx + l'x + const."""
        w = np.asarray(w, dtype=float)
        M = np.array([[w[0], 0.5 * w[2]], [0.5 * w[2], w[1]]])
        return M, w[3:5].copy(), float(w[5])


def indicator_basis(num_states: int) -> IndicatorBasis:
    if num_states < 1:
        raise ValueError("num_states must be >= 1")
    return IndicatorBasis(int(num_states))


def polynomial_basis_deg2() -> PolynomialBasis2:
    return PolynomialBasis2()


@dataclass(frozen=True)
class SecondMomentSummary:
    Phi: np.ndarray
    eigenvalues: np.ndarray  # ascending

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def positive_definite(self) -> bool:
        return self.lambda_min > 0.0


def summarize(Phi) -> SecondMomentSummary:
    Phi = np.asarray(Phi, dtype=float)
    Phi = 0.5 * (Phi + Phi.T)
    eig = np.linalg.eigvalsh(Phi)
    if eig[0] < -PSD_TOL:
        raise ValueError(
            f"second-moment matrix is indefinite (smallest eigenvalue {eig[0]:.3g}); "
            "basis and environment do not match"
        )
    return SecondMomentSummary(Phi, eig)


def second_moment(basis, env, mode="exact", sample_count=100_000, seed=0) -> SecondMomentSummary:
    """Phi = E_d[phi phi^T] with its spectrum.

    ``mode="exact"`` uses the closed form; ``mode="monte_carlo"`` averages
    phi phi^T over ``sample_count`` draws from d.
    """
    if mode == "exact":
        return summarize(basis.exact_phi(env))
    if mode != "monte_carlo":
        raise ValueError(f"unknown mode {mode!r}")
    rng = make_rng(seed)
    F = basis.transform(env.sample_states(rng, sample_count))
    return summarize(F.T @ F / sample_count)
