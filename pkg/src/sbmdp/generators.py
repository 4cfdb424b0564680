"""Seeded generators for the queue, grid and tour-guide benchmark families."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np

from .core import IntervalModel, ModelError

OFF, NOOP, ON = 0, 1, 2
QUEUE_ACTIONS = ("switch-one-off", "no-op", "switch-one-on")


def widen_with_noise(p_nominal, sd: float, rng: np.random.Generator):
    """Interval bounds around a stochastic matrix by half-normal perturbations.

    Returns ``(lower, upper)``; ``p_nominal`` stays the average. Structural
    zeros keep the interval ``[0, 0]``.
    """
    p = np.asarray(p_nominal, dtype=float)
    if sd < 0:
        raise ValueError("noise sd must be non-negative")
    down = np.abs(rng.normal(0.0, sd, p.shape)) if sd > 0 else np.zeros_like(p)
    up = np.abs(rng.normal(0.0, sd, p.shape)) if sd > 0 else np.zeros_like(p)
    zero = p == 0
    lower = np.where(zero, 0.0, np.clip(p - down, 0.0, p))
    upper = np.where(zero, 0.0, np.clip(p + up, p, 1.0))
    # sum(lower) <= 1 <= sum(upper) holds up to round-off; pull lower toward p if not
    over = lower.sum(axis=-1, keepdims=True) - 1.0
    gap = p - lower
    shrink = np.where(over > 0, np.minimum(1.0, over / np.maximum(gap.sum(-1, keepdims=True),
                                                                  1e-300)), 0.0)
    lower = lower + gap * shrink
    return lower, upper


# queue ---------------------------------------------------------------------

@dataclass(frozen=True)
class QueueConfig:
    m: int = 2
    c: int = 3
    p: float = 0.3
    q: float = 0.2
    nu: float = 0.1
    omega1: float = 1.0
    omega2: float = 0.8
    omega3: float = 0.1
    noise_sd: float = 0.05
    rng_seed: int = 0
    gamma: float = 0.9
    shared_noise: bool = False  # True: one noise draw per post-switch configuration

    def __post_init__(self):
        if self.m < 0 or self.c < 1:
            raise ValueError("need m >= 0 and c >= 1")
        for name in ("p", "q", "nu"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.p + self.c * max(self.q, self.nu) > 1 + 1e-12:
            raise ValueError("p + c*max(q, nu) must not exceed 1")
        if min(self.omega1, self.omega2, self.omega3) <= 0:
            raise ValueError("energy weights must be positive")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")


class QueueStates:
    """Bijection between ``(i, j, k, l)`` queue states and indices."""

    def __init__(self, m: int, c: int):
        self.m, self.c = m, c
        self.states = [(i, j, k, c - j - k) for i in range(m + 1)
                       for j in range(c + 1) for k in range(c + 1 - j)]
        self._index = {s: idx for idx, s in enumerate(self.states)}

    def __len__(self) -> int:
        return len(self.states)

    def encode(self, i: int, j: int, k: int, l: int) -> int:
        return self._index[(i, j, k, l)]

    def decode(self, idx: int) -> tuple[int, int, int, int]:
        return self.states[idx]


def queue_state_count(m: int, c: int) -> int:
    return (m + 1) * (c + 2) * (c + 1) // 2


def _switch(state, action):
    i, j, k, l = state
    if action == ON and l > 0:
        return i, j, k + 1, l - 1
    if action == OFF and j > min(i, j):
        return i, j - 1, k, l + 1
    return state


def _slot_row(cfg: QueueConfig, space: QueueStates, state) -> dict[int, float]:
    i, j, k, l = state
    row: dict[int, float] = {}

    def add(target, prob):
        if prob > 0:
            idx = space.encode(*target)
            row[idx] = row.get(idx, 0.0) + prob

    arrive = cfg.p if i < cfg.m else 0.0
    serve = min(i, j) * cfg.q
    started = k * cfg.nu
    add((i + 1, j, k, l), arrive)
    add((i - 1, j, k, l), serve)
    add((i, j + 1, k - 1, l), started)
    add(state, 1.0 - arrive - serve - started)
    return row


def gen_queue(cfg: QueueConfig) -> IntervalModel:
    """Multi-server queue with servers switched on/off one at a time.

    Rewards ``(m - i) / (j*w1 + k*w2 + l*w3)`` depend on the state only. By
    default every (state, action) row gets its own noise draw. With
    ``shared_noise`` the noise is drawn once per post-switch configuration, so
    actions that do the same thing in a state stay exact duplicates.
    """
    space = QueueStates(cfg.m, cfg.c)
    n = len(space)
    rng = np.random.default_rng(cfg.rng_seed)
    nominal = np.zeros((n, n))
    for idx, st in enumerate(space.states):
        for col, prob in _slot_row(cfg, space, st).items():
            nominal[idx, col] = prob
    rows = []
    for a in (OFF, NOOP, ON):
        post = [space.encode(*_switch(st, a)) for st in space.states]
        nom_a = nominal[post]
        if cfg.shared_noise:
            if a == OFF:
                lower, upper = widen_with_noise(nominal, cfg.noise_sd, rng)
            lo_a, hi_a = lower[post], upper[post]
        else:
            lo_a, hi_a = widen_with_noise(nom_a, cfg.noise_sd, rng)
        rows.append([[(int(c), lo_a[s, c], nom_a[s, c], hi_a[s, c])
                      for c in np.flatnonzero(nom_a[s])] for s in range(n)])
    reward = np.array([(cfg.m - i) / (j * cfg.omega1 + k * cfg.omega2 + l * cfg.omega3)
                       for i, j, k, l in space.states])
    r = np.tile(reward, (3, 1))
    return IntervalModel.from_rows(n, 3, rows, r, r, r, cfg.gamma)


# grid ------------------------------------------------------------------------

@dataclass(frozen=True)
class GridConfig:
    n_rows: int = 5
    m_cols: int = 5
    reward_mean: float = 100.0
    reward_var: float = 20.0
    alpha_match: float = 10.0
    alpha_other: float = 1.0
    noise_sd: float = 0.05
    rng_seed: int = 0
    gamma: float = 0.9

    def __post_init__(self):
        if self.n_rows < 1 or self.m_cols < 1:
            raise ValueError("grid needs at least one row and one column")
        if self.alpha_match <= 0 or self.alpha_other <= 0:
            raise ValueError("Dirichlet concentrations must be positive")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")


def grid_alpha(cfg: GridConfig, action: int) -> np.ndarray:
    alpha = np.full(cfg.m_cols, cfg.alpha_other)
    alpha[action] = cfg.alpha_match
    return alpha


def gen_grid(cfg: GridConfig) -> IntervalModel:
    """Layered grid: action ``a`` moves one row down, preferring column ``a``."""
    rng = np.random.default_rng(cfg.rng_seed)
    nr, mc = cfg.n_rows, cfg.m_cols
    n = nr * mc
    rewards = np.maximum(rng.normal(cfg.reward_mean, math.sqrt(cfg.reward_var), (mc, n)), 0.0)
    rows = []
    for a in range(mc):
        alpha = grid_alpha(cfg, a)
        nominal = rng.dirichlet(alpha, size=n)
        lower, upper = widen_with_noise(nominal, cfg.noise_sd, rng)
        per_state = []
        for s in range(n):
            nxt = min(nr - 1, s // mc + 1)
            per_state.append([(nxt * mc + col, lower[s, col], nominal[s, col], upper[s, col])
                              for col in range(mc) if nominal[s, col] > 0])
        rows.append(per_state)
    return IntervalModel.from_rows(n, mc, rows, rewards, rewards, rewards, cfg.gamma)


# tour guide ----------------------------------------------------------------

@dataclass(frozen=True)
class AntgConfig:
    n: int = 10
    gamma: float = 0.9
    diagonal: Literal["nw", "se"] = "nw"

    def __post_init__(self):
        if self.n < 10:
            raise ValueError("tour-guide grid needs n >= 10")
        if self.diagonal not in ("nw", "se"):
            raise ValueError("diagonal must be 'nw' or 'se'")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")


def antg_weight(n: int, i: int, j: int) -> tuple[float, float]:
    """Weight interval of cell ``(i, j)``: (1, 1), (2, 2) or (3, 4)."""
    mu = (n - 1) / 2
    di, dj = abs(i - mu), abs(j - mu)
    if di > n / 5 or dj > n / 5:
        return 1.0, 1.0
    if n / 10 < di <= n / 5 or n / 10 < dj <= n / 5:
        return 2.0, 2.0
    return 3.0, 4.0


def antg_moves(cfg: AntgConfig, i: int, j: int) -> tuple[tuple[int, int], tuple[int, int]]:
    """Destinations of the two actions at ``(i, j)``, clamped to the grid."""
    top = cfg.n - 1
    ne = (min(top, i + 1), min(top, j + 1))
    nw = (min(top, i + 1), max(0, j - 1))
    se = (max(0, i - 1), min(top, j + 1))
    if i > j or (i == j and cfg.diagonal == "nw"):
        return ne, nw
    return ne, se


def gen_antg(cfg: AntgConfig) -> IntervalModel:
    """Museum tour-guide grid with uncertain weights and moves in the middle."""
    n = cfg.n
    size = n * n
    idx = lambda cell: cell[0] * n + cell[1]
    rows = [[], []]
    r_lo = np.zeros((2, size))
    r_hi = np.zeros((2, size))
    for i in range(n):
        for j in range(n):
            lo, hi = antg_weight(n, i, j)
            s = i * n + j
            r_lo[:, s], r_hi[:, s] = lo, hi
            moves = antg_moves(cfg, i, j)
            uncertain = lo != hi
            for a in range(2):
                main, other = idx(moves[a]), idx(moves[1 - a])
                if not uncertain or main == other:
                    rows[a].append([(main, 1.0, 1.0, 1.0)])
                else:
                    rows[a].append([(main, 0.8, 0.8, 1.0), (other, 0.0, 0.2, 0.2)])
    r_avg = (r_lo + r_hi) / 2
    return IntervalModel.from_rows(size, 2, rows, r_lo, r_avg, r_hi, cfg.gamma)


def config_dict(cfg) -> dict:
    return asdict(cfg)
