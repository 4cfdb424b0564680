"""Slow, independent reference implementations used as test oracles."""

import itertools

import numpy as np

from sbmdp import Evaluator, po_filter


def box_vertices(lower, upper, tol=1e-12):
    """All vertices of ``{p : lower <= p <= upper, sum(p) = 1}``.

    A vertex has every coordinate at a bound except at most one, which the
    sum constraint then fixes.
    """
    n = len(lower)
    out = []
    for free in range(n):
        others = [i for i in range(n) if i != free]
        for choice in itertools.product((0, 1), repeat=n - 1):
            p = np.zeros(n)
            for i, c in zip(others, choice):
                p[i] = upper[i] if c else lower[i]
            p[free] = 1.0 - p[others].sum()
            if lower[free] - tol <= p[free] <= upper[free] + tol:
                out.append(p)
    return out


def vertex_extremum(lower, upper, v, sense):
    values = [float(p @ v) for p in box_vertices(lower, upper)]
    return min(values) if sense == "min" else max(values)


def all_policies(n, m):
    for actions in itertools.product(range(m), repeat=n):
        yield np.array(actions, dtype=np.int64)


def brute_force_frontier(model):
    """PO filter over every pure policy of ``model``."""
    ev = Evaluator(model)
    pis = list(all_policies(model.n_states, model.n_actions))
    return po_filter(zip(pis, ev.evaluate_many(pis)))


def value_iteration(P, r, gamma, tol=1e-13, max_iters=100_000):
    """Plain discounted value iteration on a point MDP: ``P`` is (m, n, n), ``r`` is (m, n)."""
    v = np.zeros(P.shape[1])
    for _ in range(max_iters):
        q = r + gamma * np.einsum("asj,j->as", P, v)
        new = q.max(axis=0)
        if np.abs(new - v).max() < tol:
            return new, q
        v = new
    raise RuntimeError("oracle value iteration did not converge")
