import numpy as np
import pytest

from eventrl.features import indicator_basis, polynomial_basis_deg2
from eventrl.learner import LinearValue, QuadraticObjective, TabularValue
from eventrl.mdp import make_gridworld, make_linear_gaussian

REFERENCE_A = [[0.8, -0.2], [0.1, 1.0]]


@pytest.fixture(scope="session")
def grid():
    return make_gridworld(3, 3, goal=2, slip_prob=0.5)


@pytest.fixture(scope="session")
def ibasis():
    return indicator_basis(9)


@pytest.fixture(scope="session")
def v_zero():
    return TabularValue(np.zeros(9))


@pytest.fixture(scope="session")
def v_rand():
    return TabularValue(np.random.default_rng(7).random(9))


@pytest.fixture(scope="session")
def grid_obj(grid, ibasis, v_rand):
    return QuadraticObjective.build(grid, ibasis, v_rand)


@pytest.fixture(scope="session")
def lq():
    return make_linear_gaussian(REFERENCE_A, 0.1, 0.9)


@pytest.fixture(scope="session")
def pbasis():
    return polynomial_basis_deg2()


@pytest.fixture(scope="session")
def v_poly(pbasis):
    return LinearValue(pbasis, np.random.default_rng(3).random(6))


def grid_kernel_by_hand(rows, cols, goal, slip):
    """Independent transition matrix: enumerate (state, move, outcome)."""
    n = rows * cols
    P = np.zeros((n, n))
    for r in range(rows):
        for c in range(cols):
            s = r * cols + c
            if s == goal:
                P[s, s] = 1
                continue
            for name, (dr, dc) in {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}.items():
                r2 = min(max(r + dr, 0), rows - 1)
                c2 = min(max(c + dc, 0), cols - 1)
                t = r2 * cols + c2
                if name == "right" and r == 0:
                    P[s, t] += 0.25 * (1 - slip)
                    P[s, s] += 0.25 * slip
                else:
                    P[s, t] += 0.25
    return P
