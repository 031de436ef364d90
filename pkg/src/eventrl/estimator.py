"""Scikit-learn style wrapper around one event-triggered inner loop."""
from __future__ import annotations

from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .analysis import min_rho
from .features import indicator_basis, polynomial_basis_deg2, second_moment
from .learner import HyperParams, QuadraticObjective, random_value_function, run_inner_loop
from .mdp import GridWorld, make_rng
from .trigger import TriggerPolicy

RHO_MARGIN = 1e-6


class EventTriggeredVFA(BaseEstimator, RegressorMixin):
    """Fit linear value-function weights with m agents and a transmit rule.

    ``fit(env, v_current)`` runs N server iterations against the Bellman
    targets of ``v_current`` (a random initial value function when omitted).
    ``predict(X)`` evaluates the fitted value function at states ``X``.
    ``rho="auto"`` picks the smallest admissible decay rate plus 1e-6.
    """

    def __init__(self, epsilon=1.0, T=10, N=50, n_agents=2, trigger="oracle", lam=0.0, rho="auto",
                 divide_by_N=True, p=0.5, projection_bound=None, w0=None, random_state=None):
        self.epsilon = epsilon
        self.T = T
        self.N = N
        self.n_agents = n_agents
        self.trigger = trigger
        self.lam = lam
        self.rho = rho
        self.divide_by_N = divide_by_N
        self.p = p
        self.projection_bound = projection_bound
        self.w0 = w0
        self.random_state = random_state

    def _basis(self, env):
        return indicator_basis(env.n_states) if isinstance(env, GridWorld) else polynomial_basis_deg2()

    def fit(self, env, v_current=None):
        basis = self._basis(env)
        seed = 0 if self.random_state is None else self.random_state
        if v_current is None:
            v_current = random_value_function(env, basis, make_rng(seed, 99))
        rho = self.rho
        if rho == "auto":
            rho = min(1.0, min_rho(second_moment(basis, env), self.epsilon, "eq5") + RHO_MARGIN)
        hyper = HyperParams(self.epsilon, self.T, self.N, self.n_agents, self.lam, float(rho), self.projection_bound)
        policy = TriggerPolicy(self.trigger, self.lam, float(rho), self.N, self.divide_by_N, self.p)
        objective = QuadraticObjective.build(env, basis, v_current)
        rec = run_inner_loop(env, basis, v_current, hyper, policy, seed, w0=self.w0, objective=objective)
        self.basis_ = basis
        self.record_ = rec
        self.coef_ = rec.final_weights.copy()
        self.w_star_ = objective.w_star
        self.comm_rate_ = rec.comm_rate
        self.rho_ = float(rho)
        self.n_features_in_ = basis.n_features
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return self.basis_.transform(X) @ self.coef_
