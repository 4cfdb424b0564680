import numpy as np
import pytest

from sbmdp import IntervalModel


def two_state_example(gamma: float = 0.9) -> IntervalModel:
    """The two-state example: state 0 chooses a or b, state 1 returns to state 0."""
    rows = [
        [[(0, 0.0, 0.5, 1.0), (1, 0.0, 0.5, 1.0)], [(0, 1.0, 1.0, 1.0)]],  # action a
        [[(0, 0.3, 0.4, 0.5), (1, 0.5, 0.6, 0.7)], [(0, 1.0, 1.0, 1.0)]],  # action b
    ]
    r = np.array([[1.0, 0.0], [1.0, 0.0]])
    return IntervalModel.from_rows(2, 2, rows, r, r, r, gamma)


def random_model(rng: np.random.Generator, n: int, m: int, gamma: float = 0.9,
                 density: float = 0.7, reward_width: float = 0.5) -> IntervalModel:
    """Random feasible interval model with sparse rows and interval rewards."""
    p_lo = np.zeros((m, n, n))
    p_hi = np.zeros((m, n, n))
    p_av = np.zeros((m, n, n))
    for a in range(m):
        for s in range(n):
            support = rng.random(n) < density
            support[rng.integers(n)] = True
            k = int(support.sum())
            nominal = np.zeros(n)
            nominal[support] = rng.dirichlet(np.ones(k))
            down = rng.random(n) * 0.2 * nominal
            up = rng.random(n) * 0.2
            p_av[a, s] = nominal
            p_lo[a, s] = np.where(support, nominal - down, 0.0)
            p_hi[a, s] = np.where(support, np.minimum(1.0, nominal + up), 0.0)
    r_av = rng.uniform(1.0, 10.0, (m, n))
    width = rng.uniform(0.0, reward_width, (m, n))
    return IntervalModel.from_dense(p_lo, p_hi, r_av - width, r_av + width, gamma,
                                    p_avg=p_av, r_avg=r_av)


@pytest.fixture
def example():
    return two_state_example()
