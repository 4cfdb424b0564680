"""Exact and gradient-guided search for Pareto-optimal pure policies."""

from __future__ import annotations

import heapq
import itertools
import logging
import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import (FrontierSet, IntervalModel, ValueTriple, as_policy, neighbors, policy_key)
from .robust import Evaluator, SolveConfig, optimal_avg, optimal_lower, optimal_upper

log = logging.getLogger(__name__)

# a gradient component counts as positive above STRICT_TOL and as non-negative above
# -NONNEG_TOL; the margins keep solver round-off from faking a dominance
STRICT_TOL = 1e-8
NONNEG_TOL = 1e-11


class Gradient(NamedTuple):
    lower: float
    avg: float
    upper: float

    def dominates_zero(self) -> bool:
        g = np.array(self)
        return bool(np.all(g >= -NONNEG_TOL) and np.any(g > STRICT_TOL))


@dataclass(frozen=True)
class SearchBudget:
    max_policies: int = 50_000
    wall_clock_limit: float | None = None

    def __post_init__(self):
        if self.max_policies < 3:
            raise ValueError("max_policies must be >= 3")


class PolicyCache:
    """Memoized evaluations keyed by the action array."""

    def __init__(self, evaluator: Evaluator):
        self.evaluator = evaluator
        self._values: dict[bytes, ValueTriple] = {}

    def __len__(self) -> int:
        return len(self._values)

    def __contains__(self, pi) -> bool:
        return policy_key(pi) in self._values

    def get(self, pi) -> ValueTriple:
        key = policy_key(pi)
        if key not in self._values:
            self._values[key] = self.evaluator.evaluate(pi)
        return self._values[key]

    def get_many(self, pis) -> list[ValueTriple]:
        keys = [policy_key(p) for p in pis]
        missing, seen = [], set()
        for k, p in zip(keys, pis):
            if k not in self._values and k not in seen:
                seen.add(k)
                missing.append(p)
        if missing:
            for p, v in zip(missing, self.evaluator.evaluate_many(missing)):
                self._values[policy_key(p)] = v
        return [self._values[k] for k in keys]


def gradient_table(ev: Evaluator, pi, v: ValueTriple) -> np.ndarray:
    """``(3, m, n)`` one-step improvements for every (action, state) switch."""
    return np.stack([ev.q_values(v.lower, "lower") - v.lower,
                     ev.q_values(v.avg, "avg") - v.avg,
                     ev.q_values(v.upper, "upper") - v.upper])


def gradient(model: IntervalModel, pi, v: ValueTriple, s: int, a: int,
             cfg: SolveConfig | None = None, evaluator: Evaluator | None = None) -> Gradient:
    """Three-component gain of switching ``pi`` to action ``a`` in state ``s``."""
    pi = as_policy(pi, model)
    if a == pi[s]:
        return Gradient(0.0, 0.0, 0.0)
    ev = evaluator or Evaluator(model, cfg)
    g = gradient_table(ev, pi, v)[:, a, s]
    return Gradient(float(g[0]), float(g[1]), float(g[2]))


def _improving_mask(G: np.ndarray, pi: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """``(m, n)`` mask of switches whose gradient strictly dominates zero."""
    m, n = G.shape[1:]
    mask = np.all(G >= -NONNEG_TOL, axis=0) & np.any(G > STRICT_TOL, axis=0) & allowed
    mask[pi, np.arange(n)] = False
    return mask


def _allowed_mask(model: IntervalModel, collapse: bool) -> np.ndarray:
    if not collapse:
        return np.ones((model.n_actions, model.n_states), dtype=bool)
    return (model.equivalent_actions == np.arange(model.n_actions)).T


def popt(model: IntervalModel, pi, v: ValueTriple, cfg: SolveConfig | None = None,
         evaluator: Evaluator | None = None, collapse: bool = False) -> np.ndarray:
    """Switch every state to its smallest action whose gradient strictly dominates zero."""
    pi = as_policy(pi, model)
    ev = evaluator or Evaluator(model, cfg)
    G = gradient_table(ev, pi, v)
    mask = _improving_mask(G, pi, _allowed_mask(model, collapse))
    has = mask.any(axis=0)
    out = np.where(has, np.argmax(mask, axis=0), pi)
    return as_policy(out)


def _budget_hit(cache: PolicyCache, budget: SearchBudget, t0: float) -> bool:
    if len(cache) >= budget.max_policies:
        return True
    return budget.wall_clock_limit is not None and time.perf_counter() - t0 > budget.wall_clock_limit


def pareto_exact(model: IntervalModel, cfg: SolveConfig | None = None, start=None,
                 budget: SearchBudget | None = None, collapse: bool = True,
                 evaluator: Evaluator | None = None) -> FrontierSet:
    """Breadth expansion over non-dominated distance-1 moves for ``n`` rounds.

    A neighbour joins the next round unless its parent strictly dominates it.
    With ``collapse`` only the lowest-index action of each group of duplicate
    actions is used, which removes value-identical copies from the result.
    """
    ev = evaluator or Evaluator(model, cfg)
    budget = budget or SearchBudget(max_policies=10 ** 12)
    cache = PolicyCache(ev)
    t0 = time.perf_counter()
    if start is None:
        start = np.zeros(model.n_states, dtype=np.int64)
    start = as_policy(model.canonical(start) if collapse else start, model)
    frontier = FrontierSet()
    frontier.insert(start, cache.get(start))
    current = {policy_key(start): start}
    for round_ in range(model.n_states):
        children = {}
        for parent in current.values():
            cand = [nb for _, _, nb in neighbors(parent, model, distinct_only=collapse)]
            if not cand:
                continue
            if len(cache) + len(cand) > budget.max_policies or _budget_hit(cache, budget, t0):
                frontier.truncated = True
                break
            vals = cache.get_many(cand)
            pv = cache.get(parent).vector
            mat = np.array([v.vector for v in vals])
            tol = frontier.tol
            parent_wins = np.all(pv >= mat - tol, axis=1) & np.any(pv > mat + tol, axis=1)
            for nb, v, lost in zip(cand, vals, parent_wins):
                if not lost:
                    children.setdefault(policy_key(nb), nb)
        for nb in children.values():
            frontier.insert(nb, cache.get(nb))
        log.debug("exact round %d: %d candidates, frontier %d, evaluated %d",
                  round_ + 1, len(children), len(frontier), len(cache))
        current = children
        if frontier.truncated or not current:
            break
    frontier.eval_count = len(cache)
    return frontier


def _local_optimum(ev: Evaluator, cache: PolicyCache, pi, allowed, budget, t0):
    """Iterate evaluation and ``popt`` until the policy stops changing.

    Returns ``(policy, value, gradient table or None, truncated)``.
    """
    while True:
        v = cache.get(pi)
        if _budget_hit(cache, budget, t0):
            return pi, v, None, True
        G = gradient_table(ev, pi, v)
        mask = _improving_mask(G, pi, allowed)
        has = mask.any(axis=0)
        if not has.any():
            return pi, v, G, False
        pi = as_policy(np.where(has, np.argmax(mask, axis=0), pi))


class _SwitchQueue:
    """Positive-gradient switches of one frontier policy, best first per component.

    Ties keep (state, action) scan order. Explored policies stay explored, so
    each component's cursor only moves forward.
    """

    def __init__(self, pi, G: np.ndarray, allowed: np.ndarray, order: int):
        m, n = G.shape[1:]
        self.pi = pi
        self.key = policy_key(pi)
        self.order = order
        self.m = m
        cand = allowed.copy()
        cand[pi, np.arange(n)] = False
        self.ranked = []
        for c in range(3):
            flat = G[c].T.reshape(-1)
            idx = np.flatnonzero((G[c] > STRICT_TOL).T.reshape(-1) & cand.T.reshape(-1))
            order = np.argsort(-flat[idx], kind="stable")
            self.ranked.append((idx[order], flat[idx][order]))
        self.cursor = [0, 0, 0]

    def head(self, c: int, cache: PolicyCache):
        """Best unexplored switch for component ``c`` as ``(gain, policy)``, or None."""
        idx, gains = self.ranked[c]
        j = self.cursor[c]
        while j < idx.size:
            s, a = divmod(int(idx[j]), self.m)
            flipped = self.pi.copy()
            flipped[s] = a
            if flipped not in cache:
                self.cursor[c] = j
                return float(gains[j]), flipped
            j += 1
        self.cursor[c] = j
        return None


def pareto_heuristic(model: IntervalModel, cfg: SolveConfig | None = None,
                     budget: SearchBudget | None = None, collapse: bool = True,
                     evaluator: Evaluator | None = None,
                     stop_on_stall: bool = False) -> FrontierSet:
    """Gradient-guided walk from the worst-, average- and best-case optimal policies.

    Each pass takes, for each of the three value components, the unexplored
    switch with the largest positive gradient over the current frontier, then
    climbs to a local optimum with ``popt``. Stops when no unexplored switch
    has a positive component or when the budget is spent. With
    ``stop_on_stall`` it also stops after the first pass that leaves the
    frontier unchanged, which is much faster but can miss frontier policies.
    """
    ev = evaluator or Evaluator(model, cfg)
    budget = budget or SearchBudget()
    cache = PolicyCache(ev)
    t0 = time.perf_counter()
    allowed = _allowed_mask(model, collapse)

    starts = [optimal_lower(model, evaluator=ev)[0], optimal_avg(model, evaluator=ev)[0],
              optimal_upper(model, evaluator=ev)[0]]
    frontier = FrontierSet()
    for pi in starts:
        pi = as_policy(model.canonical(pi) if collapse else pi)
        frontier.insert(pi, cache.get(pi))

    # per component a heap of (-gain, insertion order, policy key) over frontier members;
    # stale entries (removed members, explored heads) are dropped or refreshed on access
    queues: dict[bytes, _SwitchQueue] = {}
    heaps: tuple[list, list, list] = ([], [], [])
    counter = itertools.count()

    def enqueue(pi, G):
        q = _SwitchQueue(pi, G, allowed, next(counter))
        queues[q.key] = q
        for c in range(3):
            head = q.head(c, cache)
            if head is not None:
                heapq.heappush(heaps[c], (-head[0], q.order, q.key))

    def best_switch(c):
        heap = heaps[c]
        while heap:
            neg_gain, order, key = heap[0]
            q = queues.get(key)
            if q is None or q.pi not in frontier:
                heapq.heappop(heap)
                queues.pop(key, None)
                continue
            head = q.head(c, cache)
            if head is None:
                heapq.heappop(heap)
            elif head[0] != -neg_gain:
                heapq.heapreplace(heap, (-head[0], order, key))
            else:
                return head
        return None

    for pi, v in frontier:
        enqueue(pi, gradient_table(ev, pi, v))
    while True:
        if _budget_hit(cache, budget, t0):
            frontier.truncated = True
            break
        best = [best_switch(c) for c in range(3)]
        if all(b is None for b in best):
            break
        changed = False
        truncated = False
        for c in range(3):
            if best[c] is None:
                continue
            pi_new, v_new, G, truncated = _local_optimum(ev, cache, as_policy(best[c][1]),
                                                         allowed, budget, t0)
            if frontier.insert(pi_new, v_new):
                changed = True
                if G is not None:
                    enqueue(pi_new, G)
            if truncated:
                break
        if truncated:
            frontier.truncated = True
            break
        if stop_on_stall and not changed:
            break
    frontier.eval_count = len(cache)
    log.debug("heuristic: frontier %d, evaluated %d", len(frontier), len(cache))
    return frontier
