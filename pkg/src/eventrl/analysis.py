"""Numerical checks of the step-size/decay assumptions, the performance
bound, and the key inequality behind it.

Step-size convention. The agents' gradient (batch average of
phi * TD-residual) has mean Phi (w - w*), which is half the true gradient
2 Phi (w - w*). A server step ``w - eps g`` is therefore a step of size
``eps / 2`` along an unbiased gradient, and that is the step size the bound
is stated in. ``check_assumptions(..., gradient="eq5")`` applies the
halving; ``gradient="unbiased"`` evaluates the conditions at ``eps`` as
given.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import SecondMomentSummary, summarize
from .learner import (
    AssumptionViolation,
    HyperParams,
    QuadraticObjective,
    RunRecord,
    agent_data,
    make_rng_seed,
    run_inner_loop,
)
from .mdp import make_rng
from .trigger import TriggerPolicy

__all__ = [
    "AssumptionReport",
    "BoundReport",
    "InequalityReport",
    "theorem_step",
    "min_rho",
    "check_assumptions",
    "estimate_gradient_covariance",
    "bound_rhs",
    "theorem_bound_check",
    "check_key_inequality",
    "performance_metric",
]

RHO_TOL = 1e-12


def theorem_step(epsilon: float, gradient: str = "eq5") -> float:
    if gradient == "eq5":
        return 0.5 * epsilon
    if gradient == "unbiased":
        return epsilon
    raise ValueError(f"unknown gradient convention {gradient!r}")


def _eigs(phi):
    if isinstance(phi, SecondMomentSummary):
        return phi.eigenvalues
    phi = np.asarray(phi, dtype=float)
    return summarize(phi).eigenvalues if phi.ndim == 2 else np.sort(phi)


def min_rho(phi, epsilon: float, gradient: str = "eq5") -> float:
    """Smallest decay rate allowed: max_i (1 - 2 eps' lambda_i)^2."""
    e = theorem_step(epsilon, gradient)
    return float(np.max((1.0 - 2.0 * e * _eigs(phi)) ** 2))


@dataclass(frozen=True)
class AssumptionReport:
    phi_min_eig: float
    lambda_max: float
    epsilon: float
    theorem_epsilon: float
    margins: np.ndarray  # |1 - 2 eps' lambda_i|
    epsilon_ok: bool
    rho: float
    rho_min_allowed: float
    rho_ok: bool
    sufficient_condition: bool  # eps' < 1/lambda_max, i.e. eps < 2/lambda_max in eq5 terms

    @property
    def phi_ok(self) -> bool:
        return self.phi_min_eig > 0

    @property
    def ok(self) -> bool:
        return self.phi_ok and self.epsilon_ok and self.rho_ok

    def failures(self) -> list[str]:
        out = []
        if not self.phi_ok:
            out.append(f"E_d[phi phi'] not positive definite (min eigenvalue {self.phi_min_eig:.3g})")
        if not self.epsilon_ok:
            out.append(f"step size too large: max |1 - 2 eps lambda_i| = {self.margins.max():.6g} >= 1")
        if not self.rho_ok:
            out.append(f"rho = {self.rho:.6g} below the allowed minimum {self.rho_min_allowed:.6g}")
        return out


def check_assumptions(phi, epsilon: float, rho: float, gradient: str = "unbiased") -> AssumptionReport:
    """Positive definiteness, |1 - 2 eps lambda_i| < 1 for all i, and
    rho >= max_i (1 - 2 eps lambda_i)^2. ``phi`` is a summary, a matrix, or
    a list of eigenvalues."""
    eig = _eigs(phi)
    e = theorem_step(epsilon, gradient)
    margins = np.abs(1.0 - 2.0 * e * eig)
    rho_min = float(np.max((1.0 - 2.0 * e * eig) ** 2))
    lam_max = float(eig[-1])
    return AssumptionReport(
        phi_min_eig=float(eig[0]),
        lambda_max=lam_max,
        epsilon=float(epsilon),
        theorem_epsilon=e,
        margins=margins,
        epsilon_ok=bool(np.all(margins < 1.0)),
        rho=float(rho),
        rho_min_allowed=rho_min,
        rho_ok=bool(rho >= rho_min - RHO_TOL),
        sufficient_condition=bool(lam_max > 0 and e < 1.0 / lam_max),
    )


def estimate_gradient_covariance(env, basis, v_current, w, T: int, batches: int = 20_000, seed=0) -> np.ndarray:
    """Sample covariance of the agents' stochastic gradient at fixed ``w``."""
    if batches < 2:
        raise ValueError("need at least 2 batches")
    d = agent_data(env, basis, v_current, T, batches, make_rng(seed))
    g = d.moment @ np.asarray(w, dtype=float) - d.target
    G = np.cov(g, rowvar=False, ddof=1).reshape(len(w), len(w))
    return 0.5 * (G + G.T)


def _geometric(rho, N):
    if abs(1.0 - rho) < 1e-12:
        return float(N)
    return (1.0 - rho**N) / (1.0 - rho)


def bound_rhs(lam, j_star, j0, rho, N, epsilon, Phi, G) -> float:
    """lam + J* + rho^N (J(w_0) - J*) + (1 - rho^N)/(1 - rho) eps^2 Tr(Phi G)."""
    return float(lam + j_star + rho**N * (j0 - j_star) + _geometric(rho, N) * epsilon**2 * np.trace(Phi @ G))


@dataclass
class BoundReport:
    lam: float
    lhs_estimate: float
    lhs_stderr: float
    rhs_value: float
    trials: int
    G_estimate: np.ndarray
    comm_rate: float
    final_loss: float
    assumptions: AssumptionReport | None = None

    @property
    def passed(self) -> bool:
        return self.lhs_estimate <= self.rhs_value + 2.0 * self.lhs_stderr


def theorem_bound_check(
    env,
    basis,
    v_current,
    hyper: HyperParams,
    trials: int = 2000,
    seed=0,
    *,
    w0=None,
    G_mode: str = "w_star",
    G_batches: int = 20_000,
    waive: bool = False,
    objective: QuadraticObjective | None = None,
) -> BoundReport:
    """Monte Carlo LHS of the performance bound against its right-hand side.

    Runs ``trials`` inner loops with the oracle rule and the lam/N threshold.
    ``G_mode="w_star"`` estimates G at w*; ``"path_max"`` takes the largest
    Tr(Phi G) over G estimated at w_0, w* and the mean iterates of the
    first trial.
    """
    if hyper.m != 2:
        raise ValueError("the bound is stated for two agents")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    objective = objective or QuadraticObjective.build(env, basis, v_current)
    report = check_assumptions(objective.Phi, hyper.epsilon, hyper.rho, gradient="eq5")
    if not report.ok and not waive:
        raise AssumptionViolation("; ".join(report.failures()))
    n = basis.n_features
    w0 = np.zeros(n) if w0 is None else np.asarray(w0, dtype=float)
    policy = TriggerPolicy("oracle", hyper.lam, hyper.rho, hyper.N, divide_by_N=True)

    records = [
        run_inner_loop(env, basis, v_current, hyper, policy, make_rng_seed(seed, 0, t), w0=w0, objective=objective)
        for t in range(trials)
    ]
    lhs = np.array([hyper.lam * r.comm_rate + r.final_loss for r in records])

    g_seed = make_rng_seed(seed, 1)
    G = estimate_gradient_covariance(env, basis, v_current, objective.w_star, hyper.T, G_batches, g_seed)
    if G_mode == "path_max":
        path = np.mean([r.weights for r in records[: min(50, trials)]], axis=0)
        pts = [w0, path[len(path) // 2], path[-1]]
        for j, w in enumerate(pts):
            Gj = estimate_gradient_covariance(env, basis, v_current, w, hyper.T, G_batches, make_rng_seed(seed, 2, j))
            if np.trace(objective.Phi @ Gj) > np.trace(objective.Phi @ G):
                G = Gj
    elif G_mode != "w_star":
        raise ValueError(f"unknown G_mode {G_mode!r}")

    rhs = bound_rhs(hyper.lam, objective.j_star, objective(w0), hyper.rho, hyper.N, hyper.epsilon, objective.Phi, G)
    return BoundReport(
        lam=hyper.lam,
        lhs_estimate=float(lhs.mean()),
        lhs_stderr=float(lhs.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0,
        rhs_value=rhs,
        trials=trials,
        G_estimate=G,
        comm_rate=float(np.mean([r.comm_rate for r in records])),
        final_loss=float(np.mean([r.final_loss for r in records])),
        assumptions=report,
    )


@dataclass
class InequalityReport:
    """E[alpha J(w - eps g)] vs E[alpha] E[J(w - eps g)] at several iterates."""

    threshold: float
    draws: int
    points: np.ndarray  # (P, n) iterates
    lhs: np.ndarray  # E[alpha J']
    rhs: np.ndarray  # E[alpha] E[J']
    stderr: np.ndarray  # of lhs - rhs
    transmit_prob: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def passed_each(self) -> np.ndarray:
        return self.lhs <= self.rhs + 2.0 * self.stderr

    @property
    def passed(self) -> bool:
        return bool(np.all(self.passed_each))


def check_key_inequality(
    env,
    basis,
    v_current,
    hyper: HyperParams,
    points: int = 20,
    draws: int = 100_000,
    seed=0,
    *,
    threshold: float | None = None,
    spread: float = 0.1,
    objective: QuadraticObjective | None = None,
    chunk: int = 20_000,
) -> InequalityReport:
    """Monte Carlo test of E[alpha J(w-eps g) | w] <= E[alpha | w] E[J(w-eps g) | w].

    alpha is the oracle indicator of J(w - eps g) <= J(w) - threshold, where
    ``threshold`` defaults to the last-iteration value lam/N. Iterates are
    w* + spread * (standard normal).
    """
    objective = objective or QuadraticObjective.build(env, basis, v_current)
    thr = hyper.lam / hyper.N if threshold is None else float(threshold)
    n, eps = basis.n_features, hyper.epsilon
    rng_w = make_rng(make_rng_seed(seed, 0))
    W = objective.w_star + spread * rng_w.standard_normal((points, n))
    lhs, rhs, se, p = (np.empty(points) for _ in range(4))
    for j, w in enumerate(W):
        rng = make_rng(make_rng_seed(seed, 1, j))
        jn = np.empty(draws)
        for lo in range(0, draws, chunk):
            hi = min(draws, lo + chunk)
            d = agent_data(env, basis, v_current, hyper.T, hi - lo, rng)
            g = d.moment @ w - d.target
            diff = (w - eps * g) - objective.w_star
            jn[lo:hi] = objective.j_star + np.einsum("ki,ij,kj->k", diff, objective.Phi, diff)
        a = (jn - objective(w) <= -thr).astype(float)
        pa, mj = a.mean(), jn.mean()
        lhs[j] = np.mean(a * jn)
        rhs[j] = pa * mj
        psi = a * jn - pa * jn - mj * a  # influence of the plug-in covariance
        se[j] = psi.std(ddof=1) / np.sqrt(draws)
        p[j] = pa
    return InequalityReport(thr, draws, W, lhs, rhs, se, p)


def performance_metric(records: list[RunRecord], lam: float) -> tuple[float, float]:
    """Mean and standard error over trials of lam * comm_rate + J(w_N)."""
    if not records:
        raise ValueError("no records")
    vals = np.array([lam * r.comm_rate + r.final_loss for r in records])
    se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return float(vals.mean()), se
