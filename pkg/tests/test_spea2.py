import numpy as np
import pytest

from conftest import random_model
from sbmdp import Evaluator, hamming
from sbmdp.core import policy_key
from sbmdp.metrics import coverage
from sbmdp.pareto import pareto_exact
from sbmdp.spea2 import (EvoConfig, _truncate, crossover, environmental_selection, mutate,
                         spea2_fitness, spea2_run)


def test_mutate_single_action_is_identity():
    model = random_model(np.random.default_rng(0), 5, 1)
    rng = np.random.default_rng(1)
    for _ in range(50):
        assert mutate(np.zeros(5, dtype=int), model, rng).tolist() == [0] * 5


def test_mutate_single_state_resamples_uniformly():
    model = random_model(np.random.default_rng(0), 1, 4)
    rng = np.random.default_rng(2)
    counts = np.bincount([mutate([0], model, rng)[0] for _ in range(4000)], minlength=4)
    assert np.all(np.abs(counts / 4000 - 0.25) < 0.03)


def test_mutate_changes_about_one_state():
    m = 3
    model = random_model(np.random.default_rng(0), 20, m, density=0.2)
    rng = np.random.default_rng(3)
    pi = rng.integers(0, m, 20)
    mean = np.mean([hamming(pi, mutate(pi, model, rng)) for _ in range(10000)])
    assert 0.85 * (1 - 1 / m) <= mean <= 1.15 * (1 - 1 / m)


def test_crossover_properties():
    rng = np.random.default_rng(4)
    same = np.array([2, 0, 1])
    assert crossover(same, same, rng).tolist() == same.tolist()
    ones = [crossover([0, 0, 0, 0], [1, 1, 1, 1], rng).sum() for _ in range(10000)]
    assert abs(np.mean(ones) - 2) <= 0.1
    p1, p2 = rng.integers(0, 3, 12), rng.integers(0, 3, 12)
    for _ in range(100):
        child = crossover(p1, p2, rng)
        assert hamming(child, p1) + hamming(child, p2) == hamming(p1, p2)
    with pytest.raises(ValueError):
        crossover([0, 1], [0, 1, 1], rng)


def test_fitness_hand_example():
    V = np.array([[2.0, 2.0], [1.0, 1.0], [0.0, 0.0], [3.0, -1.0]])
    fitness, _ = spea2_fitness(V, k=1)
    raw = np.floor(fitness)
    # strengths: 2 (dominates rows 1, 2), 1, 0, 0
    assert raw.tolist() == [0.0, 2.0, 3.0, 0.0]
    assert np.all(fitness[[0, 3]] < 1) and np.all(fitness[[1, 2]] >= 1)


def test_fitness_random_nondominated_below_one():
    rng = np.random.default_rng(5)
    V = rng.integers(0, 5, (60, 4)).astype(float)
    fitness, _ = spea2_fitness(V)
    for i in range(len(V)):
        dominated = any(np.all(V[j] >= V[i]) and np.any(V[j] > V[i]) for j in range(len(V)))
        assert (fitness[i] >= 1) == dominated


def test_truncation_removes_most_crowded():
    V = np.array([[0.0, 0.0], [0.0, 0.1], [5.0, 5.0]])
    _, dist = spea2_fitness(V)
    keep = _truncate(np.arange(3), dist, 2)
    assert keep.tolist() == [0, 2]


def test_environmental_selection_keeps_nondominated_first():
    rng = np.random.default_rng(6)
    V = rng.normal(size=(40, 3))
    fitness, dist = spea2_fitness(V)
    nondom = set(np.flatnonzero(fitness < 1))
    chosen = environmental_selection(fitness, dist, archive_size=100, fill_to=len(nondom) + 5)
    assert nondom <= set(chosen.tolist()) and len(chosen) == len(nondom) + 5
    extra = [i for i in chosen if i not in nondom]
    rest = [i for i in range(40) if i not in nondom and i not in extra]
    assert max(fitness[extra]) <= min(fitness[rest])
    small = environmental_selection(fitness, dist, archive_size=2, fill_to=2)
    assert len(small) == 2 and set(small.tolist()) <= nondom


def test_config_validation():
    with pytest.raises(ValueError):
        EvoConfig(population_size=0)
    with pytest.raises(ValueError):
        EvoConfig(k_density=0)
    with pytest.raises(ValueError):
        EvoConfig(max_generations=0)


def test_single_action_model_gives_singleton():
    model = random_model(np.random.default_rng(0), 4, 1)
    front = spea2_run(model, EvoConfig(population_size=10, max_generations=5))
    assert len(front) == 1


def test_finds_example_frontier(example):
    front = spea2_run(example, EvoConfig(population_size=20, time_limit_seconds=1.0))
    rep = coverage(front, pareto_exact(example))
    assert rep.c_xy == 1.0 and rep.c_yx == 1.0


def test_seeded_runs_are_reproducible():
    model = random_model(np.random.default_rng(8), 8, 3)
    cfg = EvoConfig(population_size=30, max_generations=15, rng_seed=9)
    a, b = spea2_run(model, cfg), spea2_run(model, cfg)
    assert [policy_key(p) for p in a.policies] == [policy_key(p) for p in b.policies]
    assert a.info["generations"] == 15
    assert np.array_equal(a.objective_matrix(), b.objective_matrix())


def test_warm_start_includes_optimal_policies(example):
    front = spea2_run(example, EvoConfig(population_size=5, max_generations=1))
    assert coverage(front, pareto_exact(example)).c_xy == 1.0


def test_random_start_skips_optimal_policies():
    model = random_model(np.random.default_rng(12), 6, 3)
    cfg = EvoConfig(population_size=4, max_generations=1, warm_start=False)
    ev = Evaluator(model)
    spea2_run(model, cfg, evaluator=ev)
    assert ev.n_evals == 4
