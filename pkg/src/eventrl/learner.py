"""Linear value-function fitting by distributed SGD with triggered uploads.

The per-iteration problem is

    minimize_w  J(w) = E_d[(V_updated(x) - w' phi(x))^2],
    V_updated(x) = c(x) + gamma E[V_current(x_plus) | x],

solved by a server that averages whatever gradients its agents choose to
send.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import trigger as trig
from .features import PolynomialBasis2
from .mdp import GridWorld, LinearGaussian, TupleBatch, exact_bellman_target, make_rng, sample_batch

__all__ = [
    "TabularValue",
    "LinearValue",
    "StochasticGradient",
    "HyperParams",
    "QuadraticObjective",
    "RunRecord",
    "DivergenceError",
    "AssumptionViolation",
    "objective_exact",
    "optimal_weights",
    "stochastic_gradient",
    "server_update",
    "run_inner_loop",
    "run_outer_loop",
    "random_value_function",
]

DIVERGENCE_NORM = 1e12
QUAD_RES = 512


class DivergenceError(RuntimeError):
    pass


class AssumptionViolation(ValueError):
    pass


@dataclass(frozen=True)
class TabularValue:
    values: np.ndarray

    def __call__(self, states):
        return np.asarray(self.values)[np.asarray(states)]


@dataclass(frozen=True)
class LinearValue:
    basis: object
    weights: np.ndarray

    def __call__(self, x):
        return self.basis.transform(x) @ self.weights

    def quadratic_form(self):
        if not isinstance(self.basis, PolynomialBasis2):
            raise TypeError("quadratic form only defined for the degree-2 polynomial basis")
        return self.basis.quadratic_form(self.weights)


def random_value_function(env, basis, rng):
    """Initial guess V_current: U[0,1] table on a grid, U[0,1] weights otherwise."""
    if isinstance(env, GridWorld):
        return TabularValue(rng.random(env.n_states))
    return LinearValue(basis, rng.random(basis.n_features))


@dataclass(frozen=True)
class StochasticGradient:
    g: np.ndarray
    agent_id: int = 0
    k: int = 0

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.g, dtype=dtype)


@dataclass(frozen=True)
class HyperParams:
    epsilon: float = 1.0
    T: int = 10
    N: int = 50
    m: int = 2
    lam: float = 0.0
    rho: float = 1.0
    projection_bound: float | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        for name in ("T", "N", "m"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not 0 < self.rho <= 1:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if self.projection_bound is not None and not self.projection_bound > 0:
            raise ValueError("projection_bound must be positive or None")


def _design(env, basis, quad_res):
    """Integration nodes, weights and features for E_d over the state space."""
    if isinstance(env, GridWorld):
        states = np.arange(env.n_states)
        p = env.state_weights()
    elif isinstance(env, LinearGaussian):
        h = (np.arange(quad_res) + 0.5) / quad_res
        g1, g2 = np.meshgrid(h, h, indexing="ij")
        states = np.column_stack([g1.ravel(), g2.ravel()])
        p = np.full(len(states), 1.0 / len(states))
    else:
        raise TypeError(f"no exact objective for {type(env).__name__}")
    return states, p, basis.transform(states)


def objective_exact(w, env, basis, v_current, quad_res: int = QUAD_RES) -> float:
    """J(w) by direct summation of squared residuals over d (finite sum or
    midpoint quadrature on [0,1]^2)."""
    states, p, F = _design(env, basis, quad_res)
    resid = exact_bellman_target(env, v_current, states) - F @ np.asarray(w, dtype=float)
    return float(p @ (resid * resid))


@dataclass(frozen=True)
class QuadraticObjective:
    """J(w) = J* + (w - w*)' Phi (w - w*), precomputed from the model.

    ``Phi`` and ``w_star`` come from the same integration rule as
    :func:`objective_exact`, so both agree to rounding.
    """

    Phi: np.ndarray
    b: np.ndarray
    w_star: np.ndarray
    j_star: float

    @classmethod
    def build(cls, env, basis, v_current, quad_res: int = QUAD_RES) -> "QuadraticObjective":
        states, p, F = _design(env, basis, quad_res)
        y = exact_bellman_target(env, v_current, states)
        Phi = (F * p[:, None]).T @ F
        Phi = 0.5 * (Phi + Phi.T)
        b = F.T @ (p * y)
        w_star = _solve_normal(Phi, b)
        resid = y - F @ w_star
        return cls(Phi, b, w_star, float(p @ (resid * resid)))

    def __call__(self, w) -> float:
        d = np.asarray(w, dtype=float) - self.w_star
        return self.j_star + float(d @ self.Phi @ d)

    def gradient(self, w) -> np.ndarray:
        return 2.0 * self.Phi @ (np.asarray(w, dtype=float) - self.w_star)


def _solve_normal(Phi, b):
    eig_min = np.linalg.eigvalsh(Phi)[0]
    if eig_min <= 1e-14 * max(1.0, np.abs(Phi).max()):
        raise AssumptionViolation(f"E_d[phi phi'] is singular (smallest eigenvalue {eig_min:.3g})")
    return scipy.linalg.solve(Phi, b, assume_a="pos")


def optimal_weights(env, basis, v_current, quad_res: int = QUAD_RES) -> np.ndarray:
    """w* = Phi^{-1} E_d[phi V_updated]."""
    return QuadraticObjective.build(env, basis, v_current, quad_res).w_star


def _targets(batch, v_current, gamma):
    return batch.c + gamma * np.asarray(v_current(batch.x_plus), dtype=float)


def stochastic_gradient(w, tuples, basis, v_current, gamma, agent_id: int = 0, k: int = 0) -> StochasticGradient:
    """(1/T) sum_t phi(x_t) (w' phi(x_t) - c_t - gamma V_current(x_plus_t))."""
    batch = tuples if isinstance(tuples, TupleBatch) else TupleBatch.from_tuples(tuples)
    if len(batch) == 0:
        raise ValueError("empty tuple list")
    F = basis.transform(batch.x)
    resid = F @ np.asarray(w, dtype=float) - _targets(batch, v_current, gamma)
    return StochasticGradient(F.T @ resid / len(batch), agent_id, k)


def server_update(w, received, epsilon, m: int | None = None, projection_bound=None) -> np.ndarray:
    """Average of the received gradients; unchanged weights if none arrived."""
    w = np.asarray(w, dtype=float)
    if m is not None and len(received) > m:
        raise ValueError(f"received {len(received)} gradients from {m} agents")
    if len(received) == 0:
        out = w.copy()
    else:
        G = np.stack([np.asarray(getattr(g, "g", g), dtype=float) for g in received])
        out = w - (epsilon / len(received)) * G.sum(axis=0)
    if projection_bound is not None:
        nrm = np.linalg.norm(out)
        if nrm > projection_bound:
            out *= projection_bound / nrm
    return out


@dataclass
class RunRecord:
    """Per-iteration log of one trial.

    ``alpha`` and ``gains`` have shape (N, m); ``loss``, ``dist`` and
    ``weights`` are indexed 0..N (value at w_0 through w_N). ``gains`` is NaN
    for rules that do not estimate a gain.
    """

    alpha: np.ndarray
    gains: np.ndarray
    loss: np.ndarray
    dist: np.ndarray
    weights: np.ndarray
    w_star: np.ndarray
    j_star: float
    seed: object = None
    extra: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.alpha.shape[0]

    @property
    def m(self) -> int:
        return self.alpha.shape[1]

    @property
    def comm_rate(self) -> float:
        return float(self.alpha.sum()) / self.alpha.size

    @property
    def final_weights(self) -> np.ndarray:
        return self.weights[-1]

    @property
    def final_loss(self) -> float:
        return float(self.loss[-1])

    def rows(self):
        """(k, alpha bits, gains, ||w_k - w*||, J(w_k)) for k = 0..N-1."""
        for k in range(self.N):
            yield k, self.alpha[k], self.gains[k], float(self.dist[k]), float(self.loss[k])


@dataclass(frozen=True)
class AgentData:
    """Sufficient statistics of each agent's batches: the gradient at w is
    ``moment[k] @ w - target[k]``."""

    moment: np.ndarray  # (N, n, n)
    target: np.ndarray  # (N, n)


def agent_data(env, basis, v_current, T, N, rng, chunk: int = 256) -> AgentData:
    n = basis.n_features
    moment = np.empty((N, n, n))
    target = np.empty((N, n))
    for lo in range(0, N, chunk):
        hi = min(N, lo + chunk)
        batch = sample_batch(env, (hi - lo) * T, rng)
        F = basis.transform(batch.x).reshape(hi - lo, T, n)
        y = _targets(batch, v_current, env.gamma).reshape(hi - lo, T)
        moment[lo:hi] = np.einsum("kti,ktj->kij", F, F) / T
        target[lo:hi] = np.einsum("kti,kt->ki", F, y) / T
    return AgentData(moment, target)


def _gain(kind, w, g, moment, epsilon, objective, j_w):
    if kind == "oracle":
        return objective(w - epsilon * g) - j_w
    if kind == "eq17":
        return trig.eq17_gain_from_moment(g, moment, epsilon)
    return trig.exact_quadratic_gain_from_moment(g, moment, epsilon)


def run_inner_loop(
    env,
    basis,
    v_current,
    hyper: HyperParams,
    trigger: trig.TriggerPolicy,
    rng_seed=0,
    *,
    w0=None,
    objective: QuadraticObjective | None = None,
    data: list[AgentData] | None = None,
) -> RunRecord:
    """N server iterations of broadcast / local gradient / trigger / update.

    Agent ``i`` draws its data from stream ``(rng_seed, 0, i)`` and its coin
    flips (random trigger) from ``(rng_seed, 1, i)``, so results do not depend
    on agent evaluation order and agent ``i`` sees the same data whatever ``m``
    is.
    """
    if trigger.N != hyper.N:
        raise ValueError(f"trigger schedule length {trigger.N} != hyper.N {hyper.N}")
    N, m, eps = hyper.N, hyper.m, hyper.epsilon
    if objective is None:
        objective = QuadraticObjective.build(env, basis, v_current)
    if data is None:
        data = [agent_data(env, basis, v_current, hyper.T, N, make_rng(rng_seed, 0, i)) for i in range(m)]
    coins = [make_rng(rng_seed, 1, i) for i in range(m)] if trigger.kind == "random" else None
    n = basis.n_features
    w = np.zeros(n) if w0 is None else np.array(w0, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"w0 must have shape ({n},), got {w.shape}")
    sched = trigger.schedule()
    kind = trigger.kind

    alpha = np.zeros((N, m), dtype=np.int8)
    gains = np.full((N, m), np.nan)
    weights = np.empty((N + 1, n))
    loss = np.empty(N + 1)
    weights[0] = w
    loss[0] = objective(w)
    for k in range(N):
        j_w = loss[k]
        received = []
        for i in range(m):
            moment = data[i].moment[k]
            g = moment @ w - data[i].target[k]
            if kind == "always":
                a = 1
            elif kind == "never":
                a = 0
            elif kind == "random":
                a = int(coins[i].random() < trigger.p)
            else:
                gain = _gain(kind, w, g, moment, eps, objective, j_w)
                gains[k, i] = gain
                a = int(gain <= -sched[k])
            if a:
                alpha[k, i] = 1
                received.append(g)
        if received:
            w = server_update(w, received, eps, projection_bound=hyper.projection_bound)
        if not np.all(np.isfinite(w)) or np.linalg.norm(w) > DIVERGENCE_NORM:
            raise DivergenceError(
                f"weights diverged at iteration {k} (|w| = {np.linalg.norm(w):.3g}); "
                f"check epsilon={eps} against the spectrum of E_d[phi phi']"
            )
        weights[k + 1] = w
        loss[k + 1] = objective(w)
    dist = np.linalg.norm(weights - objective.w_star, axis=1)
    return RunRecord(alpha, gains, loss, dist, weights, objective.w_star, objective.j_star, seed=rng_seed)


def run_outer_loop(
    env,
    basis,
    hyper: HyperParams,
    trigger: trig.TriggerPolicy,
    outer_iterations: int = 1,
    rng_seed=0,
    *,
    v_init=None,
    exact_inner: bool = False,
):
    """Approximate value iteration: refit, then substitute V_current <- w_N' phi.

    Returns the sequence of fitted value functions (one per outer iteration).
    ``exact_inner`` replaces the SGD inner loop by the exact minimiser w*.
    """
    if outer_iterations < 1:
        raise ValueError("outer_iterations must be >= 1")
    v_current = v_init if v_init is not None else random_value_function(env, basis, make_rng(rng_seed, 2))
    out = []
    for it in range(outer_iterations):
        if exact_inner:
            w = optimal_weights(env, basis, v_current)
        else:
            w = run_inner_loop(env, basis, v_current, hyper, trigger, make_rng_seed(rng_seed, it)).final_weights
        v_current = LinearValue(basis, w)
        out.append(v_current)
    return out


def make_rng_seed(root, *key):
    """Child seed sequence for ``key`` under ``root`` (usable as rng_seed)."""
    if isinstance(root, np.random.SeedSequence):
        return np.random.SeedSequence(root.entropy, spawn_key=tuple(root.spawn_key) + tuple(key))
    return np.random.SeedSequence(int(root), spawn_key=tuple(int(k) for k in key))
