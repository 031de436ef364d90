"""Environments: a stochastic grid world and a linear-Gaussian system.

Both expose the same small surface used by the learner:

* ``sample_states(rng, size)``   draw x ~ d
* ``step(rng, x)``               draw x_plus under the fixed policy
* ``cost(x)``                    stage cost c(x, pi(x))

plus the exact model access needed by the oracle and analysis code.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

__all__ = [
    "StateSpaceKind",
    "DataTuple",
    "TupleBatch",
    "GridWorld",
    "LinearGaussian",
    "make_gridworld",
    "make_linear_gaussian",
    "sample_tuples",
    "sample_batch",
    "exact_bellman_target",
    "make_rng",
]

_ROW_TOL = 1e-12
_PSD_TOL = 1e-12


@dataclass(frozen=True)
class StateSpaceKind:
    finite: bool
    size: int  # state count when finite, dimension otherwise

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("state space size must be >= 1")

    @classmethod
    def Finite(cls, count: int) -> "StateSpaceKind":
        return cls(True, int(count))

    @classmethod
    def Continuous(cls, dimension: int) -> "StateSpaceKind":
        return cls(False, int(dimension))


class DataTuple(NamedTuple):
    x: object
    c: float
    x_plus: object


@dataclass(frozen=True)
class TupleBatch:
    """Column-oriented batch of transitions; ``len(batch) == T``."""

    x: np.ndarray
    c: np.ndarray
    x_plus: np.ndarray

    def __len__(self):
        return len(self.c)

    def tuples(self) -> list[DataTuple]:
        return [DataTuple(x, float(c), xp) for x, c, xp in zip(self.x, self.c, self.x_plus)]

    @classmethod
    def from_tuples(cls, tuples) -> "TupleBatch":
        tuples = list(tuples)
        if not tuples:
            raise ValueError("empty tuple list")
        x = np.asarray([t.x for t in tuples])
        c = np.asarray([t.c for t in tuples], dtype=float)
        xp = np.asarray([t.x_plus for t in tuples])
        return cls(x, c, xp)


def make_rng(seed, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``.

    Streams for different keys are independent and do not depend on the
    order in which they are created.
    """
    if isinstance(seed, np.random.SeedSequence):
        ss = np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(key))
    else:
        ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


# actions: up, down, left, right
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
_RIGHT = 3


@dataclass(frozen=True, eq=False)
class GridWorld:
    """Grid exploration task with expected time-to-goal as the value.

    States are numbered row-major from the top-left cell. The evaluated
    policy picks one of the four moves uniformly at random; moves into the
    boundary leave the agent in place, and on the top row a "right" move
    fails (agent stays) with probability ``slip_prob``.
    """

    rows: int
    cols: int
    goal: int
    slip_prob: float
    gamma: float = 1.0
    P: np.ndarray = field(init=False, repr=False)
    costs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        P = _grid_kernel(self.rows, self.cols, self.goal, self.slip_prob)
        costs = np.ones(self.rows * self.cols)
        costs[self.goal] = 0.0
        P.setflags(write=False)
        costs.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "_cdf", np.cumsum(P, axis=1))

    @property
    def kind(self) -> StateSpaceKind:
        return StateSpaceKind.Finite(self.n_states)

    @property
    def n_states(self) -> int:
        return self.rows * self.cols

    def state_weights(self) -> np.ndarray:
        """Probability mass of d on each state (uniform)."""
        return np.full(self.n_states, 1.0 / self.n_states)

    def sample_states(self, rng, size):
        return rng.integers(0, self.n_states, size=size)

    def step(self, rng, x):
        x = np.asarray(x)
        u = rng.random(x.shape)
        nxt = (u[..., None] >= self._cdf[x]).sum(axis=-1)
        # guard against cumulative sums landing a hair under 1
        return np.minimum(nxt, self.n_states - 1)

    def cost(self, x):
        return self.costs[np.asarray(x)]

    def hitting_times(self) -> np.ndarray:
        """Expected steps to the goal, from a dense solve of (I - P_nn) v = 1."""
        keep = np.arange(self.n_states) != self.goal
        v = np.zeros(self.n_states)
        if keep.any():
            Pnn = self.P[np.ix_(keep, keep)]
            v[keep] = np.linalg.solve(np.eye(keep.sum()) - Pnn, self.costs[keep])
        return v


def _grid_kernel(rows, cols, goal, slip):
    n = rows * cols
    P = np.zeros((n, n))
    for s in range(n):
        if s == goal:
            P[s, s] = 1.0
            continue
        r, c = divmod(s, cols)
        for a, (dr, dc) in enumerate(_MOVES):
            rr, cc = r + dr, c + dc
            target = rr * cols + cc if (0 <= rr < rows and 0 <= cc < cols) else s
            if a == _RIGHT and r == 0:
                P[s, target] += 0.25 * (1.0 - slip)
                P[s, s] += 0.25 * slip
            else:
                P[s, target] += 0.25
    return P


def make_gridworld(rows: int = 3, cols: int = 3, goal: int | None = None, slip_prob: float = 0.5) -> GridWorld:
    """Build the grid task; ``goal`` defaults to the top-right cell."""
    if rows < 1 or cols < 1:
        raise ValueError(f"grid dimensions must be positive, got {rows}x{cols}")
    if goal is None:
        goal = cols - 1
    if not 0 <= goal < rows * cols:
        raise ValueError(f"goal {goal} is not a cell of a {rows}x{cols} grid")
    if not 0.0 <= slip_prob <= 1.0:
        raise ValueError(f"slip_prob must lie in [0, 1], got {slip_prob}")
    env = GridWorld(int(rows), int(cols), int(goal), float(slip_prob))
    assert np.allclose(env.P.sum(axis=1), 1.0, atol=_ROW_TOL, rtol=0)
    return env


@dataclass(frozen=True, eq=False)
class LinearGaussian:
    """x_plus = A x + noise, quadratic cost, states sampled uniformly on [0, 1]^2."""

    A: np.ndarray
    noise_cov: np.ndarray
    gamma: float
    _noise_factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        vals, vecs = np.linalg.eigh(self.noise_cov)
        object.__setattr__(self, "_noise_factor", vecs * np.sqrt(np.clip(vals, 0.0, None)))

    @property
    def kind(self) -> StateSpaceKind:
        return StateSpaceKind.Continuous(self.A.shape[0])

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def sample_states(self, rng, size):
        return rng.random((size, self.dim))

    def step(self, rng, x):
        x = np.asarray(x, dtype=float)
        xi = rng.standard_normal(x.shape)
        return x @ self.A.T + xi @ self._noise_factor.T

    def cost(self, x):
        x = np.asarray(x, dtype=float)
        return np.sum(x * x, axis=-1)


def make_linear_gaussian(A, noise_cov, gamma: float = 0.9) -> LinearGaussian:
    A = np.array(A, dtype=float)
    S = np.array(noise_cov, dtype=float)
    if np.ndim(noise_cov) == 0:
        S = float(noise_cov) * np.eye(A.shape[0])
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if S.shape != A.shape:
        raise ValueError(f"noise_cov shape {S.shape} does not match A {A.shape}")
    if not np.allclose(S, S.T, atol=_PSD_TOL):
        raise ValueError("noise_cov must be symmetric")
    if np.linalg.eigvalsh(S).min() < -1e-10:
        raise ValueError("noise_cov must be positive semidefinite")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    A.setflags(write=False)
    S.setflags(write=False)
    return LinearGaussian(A, S, float(gamma))


def sample_batch(env, count: int, rng) -> TupleBatch:
    if count < 1:
        raise ValueError("count must be >= 1")
    x = env.sample_states(rng, count)
    xp = env.step(rng, x)
    return TupleBatch(x, np.asarray(env.cost(x), dtype=float), xp)


def sample_tuples(env, count: int, rng_seed) -> list[DataTuple]:
    """``count`` i.i.d. transitions with x ~ d, reproducible from the seed."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else make_rng(rng_seed)
    return sample_batch(env, count, rng).tuples()


def exact_bellman_target(env, v_current, x):
    """c(x) + gamma E[V_current(x_plus) | x], computed from the model.

    Vectorised over ``x``. For the linear-Gaussian system ``v_current`` must
    be a degree-2 polynomial expansion, so the Gaussian expectation has the
    closed form (Ax)'M(Ax) + tr(M Sigma) + l'(Ax) + const.
    """
    if isinstance(env, GridWorld):
        x = np.asarray(x)
        v_next = np.asarray(v_current(np.arange(env.n_states)), dtype=float)
        return env.costs[x] + env.gamma * (env.P[x] @ v_next)
    if isinstance(env, LinearGaussian):
        quad = getattr(v_current, "quadratic_form", None)
        if quad is None:
            raise TypeError("continuous Bellman target needs a degree-2 polynomial value function")
        M, lin, const = quad()
        x = np.asarray(x, dtype=float)
        ax = x @ env.A.T
        cont = np.einsum("...i,ij,...j->...", ax, M, ax) + np.trace(M @ env.noise_cov) + ax @ lin + const
        return env.cost(x) + env.gamma * cont
    raise TypeError(f"no exact model for {type(env).__name__}")
