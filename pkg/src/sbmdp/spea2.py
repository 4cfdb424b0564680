"""SPEA2 baseline over pure policies with value triples as objectives."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .core import DOMINANCE_TOL, FrontierSet, IntervalModel, as_policy, po_filter
from .pareto import PolicyCache
from .robust import Evaluator, SolveConfig, optimal_avg, optimal_lower, optimal_upper

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvoConfig:
    population_size: int = 100
    archive_size: int = 50_000
    time_limit_seconds: float = 1000.0
    rng_seed: int = 0
    k_density: int | None = None  # None: sqrt of the current population + archive size
    max_generations: int | None = None
    fill_to: int | None = None  # archive fill-up target; None: population_size
    warm_start: bool = True  # seed the population with the three single-objective optima

    def __post_init__(self):
        if self.population_size < 1 or self.archive_size < 1:
            raise ValueError("population and archive sizes must be >= 1")
        if self.k_density is not None and self.k_density < 1:
            raise ValueError("k_density must be >= 1")
        if self.max_generations is not None and self.max_generations < 1:
            raise ValueError("max_generations must be >= 1")


def mutate(pi, model: IntervalModel, rng: np.random.Generator) -> np.ndarray:
    """Resample each state's action uniformly with probability ``1/n``."""
    pi = np.array(pi, dtype=np.int64)
    n = pi.size
    hit = rng.random(n) < 1.0 / n
    pi[hit] = rng.integers(0, model.n_actions, size=int(hit.sum()))
    return as_policy(pi)


def crossover(p1, p2, rng: np.random.Generator) -> np.ndarray:
    """Uniform crossover: each state takes either parent's action with probability 1/2."""
    p1, p2 = np.asarray(p1), np.asarray(p2)
    if p1.shape != p2.shape:
        raise ValueError("parents have different lengths")
    return as_policy(np.where(rng.random(p1.size) < 0.5, p1, p2))


def _dominance_matrix(V: np.ndarray, tol: float) -> np.ndarray:
    """``dom[i, j]`` is True when individual ``i`` strictly dominates ``j``."""
    K = len(V)
    dom = np.zeros((K, K), dtype=bool)
    step = max(1, 2_000_000 // max(1, K * V.shape[1]))
    for start in range(0, K, step):
        blk = V[start:start + step, None, :]
        ge = np.all(blk >= V[None, :, :] - tol, axis=2)
        gt = np.any(blk > V[None, :, :] + tol, axis=2)
        dom[start:start + step] = ge & gt
    return dom


def spea2_fitness(V: np.ndarray, k: int | None = None, tol: float = DOMINANCE_TOL):
    """Raw fitness plus density for maximized objective rows ``V``.

    Returns ``(fitness, distances)``; non-dominated rows have fitness < 1.
    """
    K = len(V)
    dom = _dominance_matrix(V, tol)
    strength = dom.sum(axis=1)
    raw = dom.T.astype(np.int64) @ strength
    dist = cdist(V, V)
    if K > 1:
        kk = k if k is not None else int(math.sqrt(K))
        kk = min(max(kk, 1), K - 1)
        sigma = np.sort(dist, axis=1)[:, kk]  # column 0 is the point itself
    else:
        sigma = np.zeros(K)
    return raw + 1.0 / (sigma + 2.0), dist


def _truncate(idx: np.ndarray, dist: np.ndarray, size: int) -> np.ndarray:
    """Drop the individual closest to its neighbours until ``size`` remain."""
    keep = list(idx)
    while len(keep) > size:
        sub = dist[np.ix_(keep, keep)].copy()
        np.fill_diagonal(sub, np.inf)
        ordered = np.sort(sub, axis=1)
        # lexicographic minimum of sorted neighbour distances
        victim = np.lexsort(ordered.T[::-1])[0]
        keep.pop(int(victim))
    return np.asarray(keep, dtype=np.int64)


def environmental_selection(fitness: np.ndarray, dist: np.ndarray, archive_size: int,
                            fill_to: int) -> np.ndarray:
    """Indices of the next archive: non-dominated first, truncated or filled."""
    nondom = np.flatnonzero(fitness < 1.0)
    if len(nondom) > archive_size:
        return _truncate(nondom, dist, archive_size)
    target = min(fill_to, archive_size)
    if len(nondom) < target:
        dominated = np.flatnonzero(fitness >= 1.0)
        extra = dominated[np.argsort(fitness[dominated], kind="stable")][:target - len(nondom)]
        return np.concatenate([nondom, extra])
    return nondom


def spea2_run(model: IntervalModel, cfg: EvoConfig | None = None,
              solve_cfg: SolveConfig | None = None,
              evaluator: Evaluator | None = None) -> FrontierSet:
    """Evolve pure policies until the time or generation limit; return the archive front."""
    cfg = cfg or EvoConfig()
    ev = evaluator or Evaluator(model, solve_cfg)
    cache = PolicyCache(ev)
    rng = np.random.default_rng(cfg.rng_seed)
    n, m = model.n_states, model.n_actions
    N = cfg.population_size
    fill_to = cfg.fill_to if cfg.fill_to is not None else N
    t0 = time.perf_counter()

    population = []
    if cfg.warm_start:
        population += [optimal_lower(model, evaluator=ev)[0], optimal_avg(model, evaluator=ev)[0],
                       optimal_upper(model, evaluator=ev)[0]]
    while len(population) < N:
        population.append(as_policy(rng.integers(0, m, size=n)))
    archive: list[np.ndarray] = []
    generation = 0
    while True:
        generation += 1
        union, seen = [], set()
        for pi in population + archive:
            key = pi.tobytes()
            if key not in seen:
                seen.add(key)
                union.append(pi)
        values = cache.get_many(union)
        V = np.array([v.vector for v in values])
        fitness, dist = spea2_fitness(V, cfg.k_density)
        chosen = environmental_selection(fitness, dist, cfg.archive_size, fill_to)
        archive = [union[i] for i in chosen]
        arch_fit = fitness[chosen]
        elapsed = time.perf_counter() - t0
        if (cfg.max_generations is not None and generation >= cfg.max_generations) or (
                cfg.max_generations is None and elapsed >= cfg.time_limit_seconds):
            break
        # binary tournament on the archive, then crossover and mutation
        a = rng.integers(0, len(archive), size=(N, 2))
        b = rng.integers(0, len(archive), size=(N, 2))
        pick = lambda pair: pair[0] if arch_fit[pair[0]] <= arch_fit[pair[1]] else pair[1]
        population = [mutate(crossover(archive[pick(a[i])], archive[pick(b[i])], rng), model, rng)
                      for i in range(N)]
    result = po_filter((pi, cache.get(pi)) for pi in archive)
    result.eval_count = len(cache)
    result.info["generations"] = generation
    log.debug("spea2: %d generations, %d evaluated, front %d", generation, len(cache), len(result))
    return result
