import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_model, two_state_example
from oracles import all_policies, value_iteration, vertex_extremum
from sbmdp import (ConvergenceError, Evaluator, IntervalModel, ModelError, SolveConfig,
                   eval_policy, extremize_row, optimal_avg, optimal_lower, optimal_upper)
from sbmdp.robust import RowExtremizer, greedy_policy


def random_box(rng, n):
    lo = rng.random(n) * rng.random() / n
    hi = lo + rng.random(n) * (1.0 - lo)
    if hi.sum() < 1.0:
        hi = np.minimum(1.0, hi + (1.0 - hi.sum()) / n + 1e-3)
    return lo, hi


# inner extremization ----------------------------------------------------------

def test_point_box():
    row = np.array([0.2, 0.3, 0.5])
    p, val = extremize_row(row, row, np.array([1.0, 2.0, 3.0]), "min")
    assert np.array_equal(p, row)
    assert val == pytest.approx(0.2 + 0.6 + 1.5, abs=1e-15)


def test_unit_box_max_stays():
    p, val = extremize_row([0, 0], [1, 1], np.array([10.0, 9.0]), "max")
    assert p.tolist() == [1.0, 0.0] and val == 10.0


def test_three_state_box_both_senses():
    lo, hi, v = [0.1, 0.2, 0.3], [0.5, 0.6, 0.7], np.array([1.0, 2.0, 3.0])
    p, val = extremize_row(lo, hi, v, "min")
    assert np.allclose(p, [0.5, 0.2, 0.3], atol=1e-15) and val == pytest.approx(1.8, abs=1e-12)
    p, val = extremize_row(lo, hi, v, "max")
    assert np.allclose(p, [0.1, 0.2, 0.7], atol=1e-15) and val == pytest.approx(2.6, abs=1e-12)


def test_ties_go_to_lower_index():
    p, _ = extremize_row([0, 0, 0], [1, 1, 1], np.array([1.0, 1.0, 1.0]), "max")
    assert p.tolist() == [1.0, 0.0, 0.0]
    p, _ = extremize_row([0, 0, 0], [1, 1, 1], np.array([2.0, 1.0, 1.0]), "min")
    assert p.tolist() == [0.0, 1.0, 0.0]


def test_infeasible_box_rejected():
    with pytest.raises(ModelError):
        extremize_row([0.6, 0.6], [0.7, 0.7], np.zeros(2), "min")
    with pytest.raises(ModelError):
        extremize_row([0.0, 0.0], [0.4, 0.4], np.zeros(2), "max")
    with pytest.raises(ValueError):
        extremize_row([0.0, 0.0], [1.0, 1.0], np.zeros(2), "sideways")


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_matches_vertex_enumeration(seed, n):
    rng = np.random.default_rng(seed)
    lo, hi = random_box(rng, n)
    v = rng.normal(size=n) * 10
    for sense in ("min", "max"):
        p, val = extremize_row(lo, hi, v, sense)
        assert abs(p.sum() - 1.0) <= 1e-12
        assert np.all(p >= lo - 1e-15) and np.all(p <= hi + 1e-15)
        assert val == pytest.approx(vertex_extremum(lo, hi, v, sense), abs=1e-12)


def test_bounds_random_rows_inside_box():
    rng = np.random.default_rng(7)
    lo, hi = random_box(rng, 5)
    v = rng.normal(size=5)
    vmin = extremize_row(lo, hi, v, "min")[1]
    vmax = extremize_row(lo, hi, v, "max")[1]
    for _ in range(1000):
        # random convex combination of two extreme rows stays inside the box
        w = rng.random()
        p = w * extremize_row(lo, hi, rng.normal(size=5), "min")[0] + \
            (1 - w) * extremize_row(lo, hi, rng.normal(size=5), "max")[0]
        assert vmin - 1e-12 <= p @ v <= vmax + 1e-12


def test_row_extremizer_matches_single_rows():
    model = random_model(np.random.default_rng(11), 6, 3, density=0.5)
    ext = RowExtremizer(model.indptr, model.indices, model.p_lower_data, model.p_upper_data)
    v = np.random.default_rng(12).normal(size=6)
    for sense in ("min", "max"):
        values, data = ext(v, sense, with_rows=True)
        for k in range(model.n_actions * model.n_states):
            a, s = divmod(k, model.n_states)
            lo, hi = model.p_lower[a, s], model.p_upper[a, s]
            assert values[k] == pytest.approx(extremize_row(lo, hi, v, sense)[1], abs=1e-12)
        rows = np.array([4, 0, 17])
        sub = ext(v, sense, rows)
        assert np.allclose(sub, values[rows], rtol=0, atol=0)


# evaluation -------------------------------------------------------------------------

def test_golden_values(example):
    va = eval_policy(example, [0, 0])
    vb = eval_policy(example, [1, 1])
    assert va.at(0) == pytest.approx((5.2632, 6.8966, 10.000), abs=1e-3)
    assert vb.at(0) == pytest.approx((6.1350, 6.4935, 6.8966), abs=1e-3)


def test_single_absorbing_state():
    r, gamma = 2.5, 0.8
    p = np.ones((1, 1, 1))
    model = IntervalModel.from_dense(p, p, [[r]], [[r]], gamma)
    v = eval_policy(model, [0])
    assert v.at(0) == pytest.approx((r / (1 - gamma),) * 3, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_dense_sparse_and_iterative_paths_agree(seed):
    model = random_model(np.random.default_rng(seed), 7, 3)
    pi = np.random.default_rng(seed + 100).integers(0, 3, 7)
    dense = Evaluator(model, dense=True).evaluate(pi)
    sparse = Evaluator(model, dense=False).evaluate(pi)
    krylov = Evaluator(model, SolveConfig(linear_solver="iterative"), dense=False).evaluate(pi)
    assert np.allclose(dense.vector, sparse.vector, atol=1e-10, rtol=0)
    assert np.allclose(dense.vector, krylov.vector, atol=1e-7, rtol=0)


@pytest.mark.parametrize("seed", range(10))
def test_values_are_ordered_and_fixed_points(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 6, 3)
    ev = Evaluator(model)
    pi = rng.integers(0, 3, 6)
    v = ev.evaluate(pi)
    assert v.is_ordered(1e-9)
    st_ = np.arange(6)
    eps = ev.cfg.epsilon
    for kind, vec in (("lower", v.lower), ("avg", v.avg), ("upper", v.upper)):
        backup = ev.q_values(vec, kind)[pi, st_]
        assert np.abs(backup - vec).max() <= 2 * eps


@pytest.mark.parametrize("seed", range(10))
def test_widening_is_monotone(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 5, 2)
    pi = rng.integers(0, 2, 5)
    wide_lo = model.p_lower * rng.uniform(0.5, 1.0, model.p_lower.shape)
    wide_hi = np.minimum(1.0, model.p_upper + (model.p_upper > 0) * rng.uniform(0, 0.1))
    wider = IntervalModel.from_dense(wide_lo, wide_hi, model.r_lower, model.r_upper,
                                     model.gamma, p_avg=model.p_avg, r_avg=model.r_avg)
    v, w = eval_policy(model, pi), eval_policy(wider, pi)
    assert np.all(w.lower <= v.lower + 1e-9)
    assert np.all(w.upper >= v.upper - 1e-9)


def test_iteration_cap_reports_residual(example):
    with pytest.raises(ConvergenceError) as info:
        optimal_lower(example, SolveConfig(max_iters=2))
    assert info.value.residual > 0


def test_solve_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(epsilon=0)
    with pytest.raises(ValueError):
        SolveConfig(max_iters=0)
    with pytest.raises(ValueError):
        SolveConfig(linear_solver="magic")
    assert SolveConfig().use_direct(2000) and not SolveConfig().use_direct(2001)


# optimal policies ---------------------------------------------------------------------

def test_optimal_policies_on_example(example):
    pi, v = optimal_lower(example)
    assert pi[0] == 1 and v[0] == pytest.approx(6.1350, abs=1e-3)
    pi, v = optimal_upper(example)
    assert pi[0] == 0 and v[0] == pytest.approx(10.000, abs=1e-3)
    pi, v = optimal_avg(example)
    assert pi[0] == 0 and v[0] == pytest.approx(6.8966, abs=1e-3)


def test_greedy_policy_prefers_smallest_action():
    q = np.array([[1.0, 2.0], [1.0, 3.0], [0.5, 3.0]])
    assert greedy_policy(q).tolist() == [0, 1]


@pytest.mark.parametrize("seed", range(5))
def test_point_model_matches_value_iteration(seed):
    rng = np.random.default_rng(seed)
    base = random_model(rng, 5, 3, reward_width=0.0)
    p = base.p_avg
    point = IntervalModel.from_dense(p, p, base.r_avg, base.r_avg, 0.9)
    v_star, q = value_iteration(p, base.r_avg, 0.9)
    for solver in (optimal_lower, optimal_avg, optimal_upper):
        pi, v = solver(point)
        assert np.allclose(v, v_star, atol=1e-8)
        assert np.all(q[pi, np.arange(5)] >= v_star - 1e-8)


def test_single_action_model():
    model = random_model(np.random.default_rng(0), 4, 1)
    for solver in (optimal_lower, optimal_avg, optimal_upper):
        assert solver(model)[0].tolist() == [0, 0, 0, 0]


@pytest.mark.parametrize("seed", range(8))
def test_optimal_values_dominate_every_policy(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 4, 2)
    ev = Evaluator(model)
    values = ev.evaluate_many(list(all_policies(4, 2)))
    for kind, solver in (("lower", optimal_lower), ("avg", optimal_avg),
                         ("upper", optimal_upper)):
        _, best = solver(model)
        for v in values:
            assert np.all(getattr(v, kind) <= best + 1e-9)
    # average objective: the optimum is attained by some enumerated policy
    _, best_avg = optimal_avg(model)
    assert min(np.abs(v.avg - best_avg).max() for v in values) <= 1e-9


def test_two_state_example_optimal_values_are_pareto_extremes():
    model = two_state_example()
    _, lo = optimal_lower(model)
    _, up = optimal_upper(model)
    assert lo[0] < up[0]
