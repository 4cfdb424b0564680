"""Interval MDP data model, pure policies, value triples and dominance.

Transition bounds are stored as one stacked sparse row pattern of shape
``(n_actions * n_states, n_states)``; row ``a * n + s`` is the (state ``s``,
action ``a``) box. Small models additionally expose dense ``(m, n, n)`` views.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

DOMINANCE_TOL = 1e-9
ROW_SUM_TOL = 1e-12
DENSE_LIMIT = 1_000_000  # n_actions * n_states**2 above this -> sparse kernels only


class ModelError(ValueError):
    """Raised when interval bounds cannot describe a valid model."""


@dataclass(frozen=True, eq=False)
class IntervalModel:
    """Stochastic bounded-parameter MDP.

    Parameters
    ----------
    n_states, n_actions : int
    indptr, indices : ndarray
        CSR pattern of the stacked ``(m*n, n)`` transition rows.
    p_lower_data, p_avg_data, p_upper_data : ndarray
        Entry values on that pattern.
    r_lower, r_avg, r_upper : ndarray, shape (m, n)
    gamma : float
    """

    n_states: int
    n_actions: int
    indptr: np.ndarray
    indices: np.ndarray
    p_lower_data: np.ndarray
    p_avg_data: np.ndarray
    p_upper_data: np.ndarray
    r_lower: np.ndarray
    r_avg: np.ndarray
    r_upper: np.ndarray
    gamma: float

    def __post_init__(self):
        for name in ("indptr", "indices", "p_lower_data", "p_avg_data", "p_upper_data",
                     "r_lower", "r_avg", "r_upper"):
            arr = getattr(self, name)
            arr.setflags(write=False)
        if self.indptr.shape != (self.n_states * self.n_actions + 1,):
            raise ModelError("indptr length does not match n_states * n_actions + 1")
        for name in ("r_lower", "r_avg", "r_upper"):
            if getattr(self, name).shape != (self.n_actions, self.n_states):
                raise ModelError(f"{name} must have shape (n_actions, n_states)")

    # construction -------------------------------------------------------

    @classmethod
    def from_dense(cls, p_lower, p_upper, r_lower, r_upper, gamma, p_avg=None, r_avg=None):
        """Build a model from ``(m, n, n)`` bound arrays and ``(m, n)`` rewards.

        Missing averages default to :func:`midpoint_average`.
        """
        p_lower = np.asarray(p_lower, dtype=float)
        p_upper = np.asarray(p_upper, dtype=float)
        r_lower = np.asarray(r_lower, dtype=float)
        r_upper = np.asarray(r_upper, dtype=float)
        if p_lower.ndim != 3 or p_lower.shape[1] != p_lower.shape[2]:
            raise ModelError("transition bounds must have shape (m, n, n)")
        if p_avg is None or r_avg is None:
            mp, mr = midpoint_average(p_lower, p_upper, r_lower, r_upper)
            p_avg = mp if p_avg is None else p_avg
            r_avg = mr if r_avg is None else r_avg
        p_avg = np.asarray(p_avg, dtype=float)
        m, n, _ = p_lower.shape
        support = (p_lower != 0) | (p_upper != 0) | (p_avg != 0)
        pattern = sp.csr_matrix(support.reshape(m * n, n).astype(np.int8))
        pattern.sort_indices()
        rows = np.repeat(np.arange(m * n), np.diff(pattern.indptr))
        cols = pattern.indices
        flat = lambda arr: arr.reshape(m * n, n)[rows, cols].copy()
        return cls(n, m, pattern.indptr.astype(np.int64), cols.astype(np.int64),
                   flat(p_lower), flat(p_avg), flat(p_upper),
                   r_lower.copy(), np.asarray(r_avg, dtype=float).copy(), r_upper.copy(),
                   float(gamma))

    @classmethod
    def from_rows(cls, n_states, n_actions, rows, r_lower, r_avg, r_upper, gamma):
        """Build from per-(action, state) sparse rows.

        ``rows[a][s]`` is a sequence of ``(col, lower, avg, upper)`` tuples.
        """
        indptr = [0]
        indices, lo, av, hi = [], [], [], []
        for a in range(n_actions):
            for s in range(n_states):
                entries = sorted(rows[a][s], key=lambda e: e[0])
                cols = [int(e[0]) for e in entries]
                if len(set(cols)) != len(cols):
                    raise ModelError(f"duplicate column in row (action={a}, state={s})")
                for col, l, v, u in entries:
                    indices.append(int(col))
                    lo.append(l)
                    av.append(v)
                    hi.append(u)
                indptr.append(len(indices))
        return cls(n_states, n_actions, np.asarray(indptr, dtype=np.int64),
                   np.asarray(indices, dtype=np.int64), np.asarray(lo, dtype=float),
                   np.asarray(av, dtype=float), np.asarray(hi, dtype=float),
                   np.asarray(r_lower, dtype=float).reshape(n_actions, n_states).copy(),
                   np.asarray(r_avg, dtype=float).reshape(n_actions, n_states).copy(),
                   np.asarray(r_upper, dtype=float).reshape(n_actions, n_states).copy(),
                   float(gamma))

    # views -----------------------------------------------------------------

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    @property
    def is_dense_friendly(self) -> bool:
        return self.n_actions * self.n_states ** 2 <= DENSE_LIMIT

    def _csr(self, data) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr),
                             shape=(self.n_actions * self.n_states, self.n_states))

    @cached_property
    def csr_lower(self) -> sp.csr_matrix:
        return self._csr(self.p_lower_data)

    @cached_property
    def csr_avg(self) -> sp.csr_matrix:
        return self._csr(self.p_avg_data)

    @cached_property
    def csr_upper(self) -> sp.csr_matrix:
        return self._csr(self.p_upper_data)

    def _dense(self, data) -> np.ndarray:
        out = self._csr(data).toarray().reshape(self.n_actions, self.n_states, self.n_states)
        out.setflags(write=False)
        return out

    @cached_property
    def p_lower(self) -> np.ndarray:
        return self._dense(self.p_lower_data)

    @cached_property
    def p_avg(self) -> np.ndarray:
        return self._dense(self.p_avg_data)

    @cached_property
    def p_upper(self) -> np.ndarray:
        return self._dense(self.p_upper_data)

    def row(self, state: int, action: int):
        """Return ``(cols, lower, avg, upper)`` of one transition row."""
        k = action * self.n_states + state
        sl = slice(self.indptr[k], self.indptr[k + 1])
        return (self.indices[sl], self.p_lower_data[sl], self.p_avg_data[sl],
                self.p_upper_data[sl])

    @cached_property
    def equivalent_actions(self) -> np.ndarray:
        """``(n, m)`` array mapping each action to its lowest-index duplicate.

        Two actions are duplicates in a state when their rewards and all three
        transition rows coincide exactly; swapping them never changes a value.
        """
        n, m = self.n_states, self.n_actions
        canon = np.tile(np.arange(m), (n, 1))
        for s in range(n):
            seen = {}
            for a in range(m):
                cols, lo, av, hi = self.row(s, a)
                key = (cols.tobytes(), lo.tobytes(), av.tobytes(), hi.tobytes(),
                       self.r_lower[a, s], self.r_avg[a, s], self.r_upper[a, s])
                canon[s, a] = seen.setdefault(key, a)
        canon.setflags(write=False)
        return canon

    @cached_property
    def distinct_actions(self) -> tuple[np.ndarray, ...]:
        """Per state, the sorted actions that are their own representative."""
        canon = self.equivalent_actions
        return tuple(np.flatnonzero(canon[s] == np.arange(self.n_actions))
                     for s in range(self.n_states))

    def canonical(self, actions) -> np.ndarray:
        actions = np.asarray(actions)
        return self.equivalent_actions[np.arange(self.n_states), actions]

    def multiplicity(self, actions) -> int:
        """Number of policies that only differ from ``actions`` by duplicate swaps."""
        canon = self.equivalent_actions
        chosen = canon[np.arange(self.n_states), np.asarray(actions)]
        sizes = (canon == chosen[:, None]).sum(axis=1)
        return math.prod(int(k) for k in sizes)

    # serialization -----------------------------------------------------------

    def to_dict(self) -> dict:
        out_actions = []
        n = self.n_states
        for a in range(self.n_actions):
            rows = {"p_lower": [], "p_avg": [], "p_upper": []}
            for s in range(n):
                cols, lo, av, hi = self.row(s, a)
                rows["p_lower"].append([[int(c), float(x)] for c, x in zip(cols, lo)])
                rows["p_avg"].append([[int(c), float(x)] for c, x in zip(cols, av)])
                rows["p_upper"].append([[int(c), float(x)] for c, x in zip(cols, hi)])
            rows["r_lower"] = [float(x) for x in self.r_lower[a]]
            rows["r_avg"] = [float(x) for x in self.r_avg[a]]
            rows["r_upper"] = [float(x) for x in self.r_upper[a]]
            out_actions.append(rows)
        return {"n_states": n, "n_actions": self.n_actions, "gamma": self.gamma,
                "actions": out_actions}

    @classmethod
    def from_dict(cls, data: dict) -> "IntervalModel":
        n, m = int(data["n_states"]), int(data["n_actions"])
        if len(data["actions"]) != m:
            raise ModelError("actions list length does not match n_actions")
        rows = []
        for a, act in enumerate(data["actions"]):
            per_state = []
            for s in range(n):
                merged: dict[int, list[float]] = {}
                for slot, key in enumerate(("p_lower", "p_avg", "p_upper")):
                    for col, val in act[key][s]:
                        merged.setdefault(int(col), [0.0, 0.0, 0.0])[slot] = float(val)
                per_state.append([(c, *vals) for c, vals in merged.items()])
            rows.append(per_state)
        r = lambda key: np.array([act[key] for act in data["actions"]], dtype=float)
        return cls.from_rows(n, m, rows, r("r_lower"), r("r_avg"), r("r_upper"),
                             float(data["gamma"]))

    def dumps(self) -> str:
        # repr() of a Python float is the shortest string that round-trips (<= 17 digits)
        return json.dumps(self.to_dict(), separators=(",", ":"))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def load(cls, path) -> "IntervalModel":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def same_as(self, other: "IntervalModel") -> bool:
        return (self.n_states == other.n_states and self.n_actions == other.n_actions
                and self.gamma == other.gamma
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("indptr", "indices", "p_lower_data", "p_avg_data",
                                  "p_upper_data", "r_lower", "r_avg", "r_upper")))


def validate(model: IntervalModel, tol: float = ROW_SUM_TOL) -> list[str]:
    """List every violated model invariant; an empty list means valid."""
    problems = []
    if not 0.0 < model.gamma < 1.0:
        problems.append(f"gamma={model.gamma} not in (0, 1)")
    n, m = model.n_states, model.n_actions
    if model.indices.size and (model.indices.min() < 0 or model.indices.max() >= n):
        problems.append("transition column index out of range")
    lo, av, hi = model.p_lower_data, model.p_avg_data, model.p_upper_data
    row_of = np.repeat(np.arange(m * n), np.diff(model.indptr))
    for label, bad in (("p_lower < 0", lo < 0), ("p_lower > p_avg", lo > av),
                       ("p_avg > p_upper", av > hi), ("p_upper > 1", hi > 1),
                       ("non-finite probability", ~np.isfinite(lo + av + hi))):
        for k in np.flatnonzero(bad):
            a, s = divmod(int(row_of[k]), n)
            problems.append(f"{label} at action={a} state={s} col={int(model.indices[k])}")
    sums = lambda data: np.add.reduceat(np.append(data, 0.0), model.indptr[:-1]) * (
        np.diff(model.indptr) > 0)
    s_lo, s_av, s_hi = sums(lo), sums(av), sums(hi)
    for k in range(m * n):
        a, s = divmod(k, n)
        if s_lo[k] > 1 + tol:
            problems.append(f"p_lower row sum {s_lo[k]:.6g} > 1 at action={a} state={s}")
        if s_hi[k] < 1 - tol:
            problems.append(f"p_upper row sum {s_hi[k]:.6g} < 1 at action={a} state={s}")
        if abs(s_av[k] - 1) > tol:
            problems.append(f"p_avg row sum {s_av[k]:.17g} != 1 at action={a} state={s}")
    for label, bad in (("r_lower < 0", model.r_lower < 0),
                       ("r_lower > r_avg", model.r_lower > model.r_avg),
                       ("r_avg > r_upper", model.r_avg > model.r_upper),
                       ("non-finite reward",
                        ~np.isfinite(model.r_lower + model.r_avg + model.r_upper))):
        for a, s in zip(*np.nonzero(bad)):
            problems.append(f"{label} at action={int(a)} state={int(s)}")
    return problems


def _repair_row(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    if lo.sum() > 1 + ROW_SUM_TOL or hi.sum() < 1 - ROW_SUM_TOL or np.any(lo > hi):
        raise ModelError("no stochastic vector fits the interval box")
    row = (lo + hi) / 2
    total = row.sum()
    if total > 0:
        row = np.clip(row / total, lo, hi)
    excess = row.sum() - 1.0
    # move the excess proportionally to each entry's room; stays inside the box
    room = (row - lo) if excess > 0 else (hi - row)
    if room.sum() > 0:
        row = row - excess * room / room.sum()
    row = np.clip(row, lo, hi)
    excess = row.sum() - 1.0
    room = (row - lo) if excess > 0 else (hi - row)
    k = int(np.argmax(room))
    row[k] = min(max(row[k] - excess, lo[k]), hi[k])
    return row


def midpoint_average(p_lower, p_upper, r_lower, r_upper):
    """Default average model: rescaled interval midpoints, clamped into the box.

    Returns ``(p_avg, r_avg)`` with the same shapes as the inputs.
    """
    p_lower = np.asarray(p_lower, dtype=float)
    p_upper = np.asarray(p_upper, dtype=float)
    p_avg = np.empty_like(p_lower)
    flat_lo = p_lower.reshape(-1, p_lower.shape[-1])
    flat_hi = p_upper.reshape(-1, p_upper.shape[-1])
    out = p_avg.reshape(-1, p_lower.shape[-1])
    for k in range(flat_lo.shape[0]):
        out[k] = _repair_row(flat_lo[k], flat_hi[k])
    r_avg = (np.asarray(r_lower, dtype=float) + np.asarray(r_upper, dtype=float)) / 2
    return p_avg, r_avg


# policies --------------------------------------------------------------------

def as_policy(actions, model: IntervalModel | None = None) -> np.ndarray:
    """Return a read-only int policy array, checked against ``model`` if given."""
    pi = np.array(actions, dtype=np.int64).reshape(-1)
    if model is not None:
        if pi.size != model.n_states:
            raise ValueError(f"policy has {pi.size} entries, model has {model.n_states} states")
        if pi.size and (pi.min() < 0 or pi.max() >= model.n_actions):
            raise ValueError("policy contains an invalid action index")
    pi.setflags(write=False)
    return pi


def policy_key(pi) -> bytes:
    return np.asarray(pi, dtype=np.int64).tobytes()


def hamming(p1, p2) -> int:
    p1, p2 = np.asarray(p1), np.asarray(p2)
    if p1.shape != p2.shape:
        raise ValueError("policies have different lengths")
    return int(np.count_nonzero(p1 != p2))


def neighbors(pi, model: IntervalModel, distinct_only: bool = False
              ) -> Iterator[tuple[int, int, np.ndarray]]:
    """Yield ``(state, action, policy)`` for every policy at Hamming distance 1.

    Order is ascending in state, then action. With ``distinct_only`` only
    actions that are not duplicates of a lower-index action are used.
    """
    pi = np.asarray(pi)
    for s in range(model.n_states):
        candidates = model.distinct_actions[s] if distinct_only else range(model.n_actions)
        for a in candidates:
            if a == pi[s]:
                continue
            nxt = pi.copy()
            nxt[s] = a
            nxt.setflags(write=False)
            yield s, int(a), nxt


# values and dominance --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ValueTriple:
    """Per-state worst-case, average and best-case discounted values."""

    lower: np.ndarray
    avg: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if not (self.lower.shape == self.avg.shape == self.upper.shape) or self.lower.ndim != 1:
            raise ValueError("lower, avg and upper must be vectors of equal length")
        for arr in (self.lower, self.avg, self.upper):
            arr.setflags(write=False)

    @property
    def n_states(self) -> int:
        return int(self.lower.size)

    @cached_property
    def vector(self) -> np.ndarray:
        vec = np.concatenate([self.lower, self.avg, self.upper])
        vec.setflags(write=False)
        return vec

    @classmethod
    def from_vector(cls, vec) -> "ValueTriple":
        vec = np.asarray(vec, dtype=float)
        lo, av, hi = np.split(vec.copy(), 3)
        return cls(lo, av, hi)

    def is_ordered(self, tol: float = DOMINANCE_TOL) -> bool:
        return bool(np.all(self.lower <= self.avg + tol) and np.all(self.avg <= self.upper + tol))

    def at(self, state: int) -> tuple[float, float, float]:
        return float(self.lower[state]), float(self.avg[state]), float(self.upper[state])


class Dominance(enum.Enum):
    STRICTLY_DOMINATES = "strictly-dominates"
    EQUAL = "equal"
    DOMINATED = "dominated"
    INCOMPARABLE = "incomparable"


def _vec(v) -> np.ndarray:
    return v.vector if isinstance(v, ValueTriple) else np.asarray(v, dtype=float)


def dominates(v1, v2, tol: float = DOMINANCE_TOL) -> Dominance:
    """Compare two value triples (or flat objective vectors) componentwise."""
    a, b = _vec(v1), _vec(v2)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    ge = bool(np.all(a >= b - tol))
    le = bool(np.all(a <= b + tol))
    if ge and le:
        return Dominance.EQUAL
    if ge:
        return Dominance.STRICTLY_DOMINATES
    if le:
        return Dominance.DOMINATED
    return Dominance.INCOMPARABLE


def strictly_dominates(v1, v2, tol: float = DOMINANCE_TOL) -> bool:
    return dominates(v1, v2, tol) is Dominance.STRICTLY_DOMINATES


@dataclass
class FrontierSet:
    """Mutually non-dominated ``(policy, ValueTriple)`` pairs.

    Insertion keeps the set equal to ``PO`` of everything ever inserted.
    Value-equal entries with different policies are all kept.
    """

    tol: float = DOMINANCE_TOL
    truncated: bool = False
    eval_count: int = 0
    info: dict = field(default_factory=dict)
    _policies: list = field(default_factory=list)
    _values: list = field(default_factory=list)
    _keys: dict = field(default_factory=dict)
    _matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._policies)

    def __iter__(self) -> Iterator[tuple[np.ndarray, ValueTriple]]:
        return iter(list(zip(self._policies, self._values)))

    def __contains__(self, pi) -> bool:
        return policy_key(pi) in self._keys

    @property
    def policies(self) -> list[np.ndarray]:
        return list(self._policies)

    @property
    def values(self) -> list[ValueTriple]:
        return list(self._values)

    def objective_matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = (np.array([v.vector for v in self._values])
                            if self._values else np.empty((0, 0)))
        return self._matrix

    def insert(self, pi, value: ValueTriple) -> bool:
        """Add ``(pi, value)`` unless a member strictly dominates it.

        Members strictly dominated by the newcomer are removed. Returns True
        when the set changed.
        """
        key = policy_key(pi)
        if key in self._keys:
            return False
        vec = value.vector
        mat = self.objective_matrix()
        if len(self._values):
            ge = np.all(mat >= vec - self.tol, axis=1)
            gt = np.any(mat > vec + self.tol, axis=1)
            if np.any(ge & gt):
                return False
            le = np.all(mat <= vec + self.tol, axis=1)
            lt = np.any(mat < vec - self.tol, axis=1)
            beaten = np.flatnonzero(le & lt)
            if beaten.size:
                keep = np.ones(len(self._values), dtype=bool)
                keep[beaten] = False
                self._policies = [p for p, k in zip(self._policies, keep) if k]
                self._values = [v for v, k in zip(self._values, keep) if k]
                self._keys = {policy_key(p): i for i, p in enumerate(self._policies)}
                mat = mat[keep]
        self._keys[key] = len(self._policies)
        self._policies.append(as_policy(pi))
        self._values.append(value)
        self._matrix = np.vstack([mat.reshape(-1, vec.size), vec[None, :]])
        return True

    def update(self, entries: Iterable[tuple[Sequence[int], ValueTriple]]) -> bool:
        changed = False
        for pi, v in entries:
            changed |= self.insert(pi, v)
        return changed

    def value_of(self, pi) -> ValueTriple:
        return self._values[self._keys[policy_key(pi)]]

    def unique_values(self) -> list[ValueTriple]:
        """One representative per numerically equal value triple."""
        reps: list[ValueTriple] = []
        for v in self._values:
            if not any(dominates(v, r, self.tol) is Dominance.EQUAL for r in reps):
                reps.append(v)
        return reps

    def is_mutually_nondominated(self) -> bool:
        mat = self.objective_matrix()
        for i in range(len(self._values)):
            ge = np.all(mat >= mat[i] - self.tol, axis=1)
            gt = np.any(mat > mat[i] + self.tol, axis=1)
            if np.any(ge & gt):
                return False
        return True

    def sorted_entries(self) -> list[tuple[np.ndarray, ValueTriple]]:
        order = sorted(range(len(self)), key=lambda i: tuple(self._policies[i]))
        return [(self._policies[i], self._values[i]) for i in order]


def po_filter(entries: Iterable[tuple[Sequence[int], ValueTriple]],
              tol: float = DOMINANCE_TOL) -> FrontierSet:
    """Keep exactly the entries not strictly dominated by another entry."""
    entries = list(entries)
    # descending objective sum first: dominators tend to arrive before the dominated
    order = sorted(range(len(entries)), key=lambda i: -float(entries[i][1].vector.sum()))
    out = FrontierSet(tol=tol)
    for i in order:
        out.insert(*entries[i])
    return out
