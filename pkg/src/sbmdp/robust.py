"""Inner extremization over interval rows, policy evaluation and optimal policies."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import IntervalModel, ValueTriple, as_policy, ModelError

log = logging.getLogger(__name__)

Sense = Literal["min", "max"]
Kind = Literal["lower", "avg", "upper"]
KINDS: tuple[Kind, ...] = ("lower", "avg", "upper")
_SENSE = {"lower": "min", "upper": "max"}

DIRECT_LIMIT = 2000


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class SolveConfig:
    epsilon: float = 1e-8
    max_iters: int = 100_000
    linear_solver: Literal["auto", "direct", "iterative"] = "auto"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.linear_solver not in ("auto", "direct", "iterative"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")

    def use_direct(self, n: int) -> bool:
        if self.linear_solver == "auto":
            return n <= DIRECT_LIMIT
        return self.linear_solver == "direct"


# inner extremization ---------------------------------------------------------

def _order(v: np.ndarray, sense: Sense) -> np.ndarray:
    # stable sort keeps ascending state index among ties in both senses
    return np.argsort(v if sense == "min" else -v, axis=-1, kind="stable")


def extremize_rows(lower, upper, v, sense: Sense):
    """Vectorized greedy extremization of ``p @ v`` over interval boxes.

    ``lower``/``upper`` have shape ``(..., k, n)``; ``v`` has shape ``(..., n)``
    and is shared by the ``k`` rows of its batch. Mass above the lower bounds
    goes to the cheapest (``min``) or richest (``max``) successors first.

    Returns ``(rows, values)`` with shapes ``(..., k, n)`` and ``(..., k)``.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    v = np.asarray(v, dtype=float)
    order = _order(v, sense)[..., None, :]
    lo_s = np.take_along_axis(lower, order, axis=-1)
    width = np.take_along_axis(upper, order, axis=-1) - lo_s
    slack = 1.0 - lower.sum(axis=-1, keepdims=True)
    before = np.cumsum(width, axis=-1) - width
    alloc = np.clip(slack - before, 0.0, width)
    rows = lower.copy()
    np.put_along_axis(rows, np.broadcast_to(order, rows.shape), lo_s + alloc, axis=-1)
    values = np.einsum("...kn,...n->...k", rows, v)
    return rows, values


def extremize_row(lower, upper, v, sense: Sense):
    """Stochastic row inside ``[lower, upper]`` minimizing or maximizing ``p @ v``.

    Returns ``(row, value)``. Raises :class:`ModelError` for an infeasible box.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if sense not in ("min", "max"):
        raise ValueError(f"sense must be 'min' or 'max', got {sense!r}")
    if (lower.shape != upper.shape or np.any(lower < 0) or np.any(lower > upper)
            or np.any(upper > 1) or lower.sum() > 1 + 1e-12 or upper.sum() < 1 - 1e-12):
        raise ModelError("infeasible interval box")
    rows, values = extremize_rows(lower[None, :], upper[None, :], v, sense)
    return rows[0], float(values[0])


class RowExtremizer:
    """Greedy extremization for many sparse rows sharing one value vector.

    Rows are grouped by their number of stored entries so each group is a
    dense ``(rows, k)`` block and sorting happens per row on ``k`` entries.
    """

    def __init__(self, indptr, indices, lower, upper):
        indptr = np.asarray(indptr, dtype=np.int64)
        lengths = np.diff(indptr)
        self.n_rows = lengths.size
        self.lengths = lengths
        self.group_of = np.full(self.n_rows, -1, dtype=np.int64)
        self.slot_of = np.zeros(self.n_rows, dtype=np.int64)
        self.groups = []
        for k in np.unique(lengths[lengths > 0]):
            rows = np.flatnonzero(lengths == k)
            pos = indptr[rows][:, None] + np.arange(k)
            lo = np.asarray(lower, dtype=float)[pos]
            width = np.asarray(upper, dtype=float)[pos] - lo
            self.group_of[rows] = len(self.groups)
            self.slot_of[rows] = np.arange(rows.size)
            self.groups.append((rows, np.asarray(indices)[pos], lo, width, 1.0 - lo.sum(axis=1)))

    def __call__(self, v, sense: Sense, rows=None, with_rows: bool = False):
        """Extremized ``p @ v`` for ``rows`` (default: all rows, in order).

        With ``with_rows`` also returns the chosen probabilities, laid out as
        the CSR data of the selected rows.
        """
        v = np.asarray(v, dtype=float)
        sign = 1.0 if sense == "min" else -1.0
        if rows is None:
            rows = np.arange(self.n_rows)
        rows = np.asarray(rows, dtype=np.int64)
        values = np.zeros(rows.size)
        data = offsets = None
        if with_rows:
            offsets = np.concatenate([[0], np.cumsum(self.lengths[rows])])
            data = np.empty(offsets[-1])
        gid = self.group_of[rows]
        for g, (_, cols, lo, width, slack) in enumerate(self.groups):
            where = np.flatnonzero(gid == g)
            if where.size == 0:
                continue
            slots = self.slot_of[rows[where]]
            vals = v[cols[slots]]
            # stable per-row sort; columns are ascending so ties go to the lower state
            order = np.argsort(sign * vals, axis=1, kind="stable")
            w = np.take_along_axis(width[slots], order, axis=1)
            before = np.cumsum(w, axis=1) - w
            alloc = np.clip(slack[slots, None] - before, 0.0, w)
            p = lo[slots].copy()
            np.put_along_axis(p, order, np.take_along_axis(p, order, axis=1) + alloc, axis=1)
            values[where] = np.einsum("ij,ij->i", p, vals)
            if with_rows:
                data[offsets[where][:, None] + np.arange(p.shape[1])] = p
        return (values, data) if with_rows else values


# evaluation ------------------------------------------------------------------

class Evaluator:
    """Policy evaluation bound to one model; counts evaluated policies.

    Dense kernels (batched over policies) are used when the model is small
    enough, sparse CSR kernels otherwise.
    """

    def __init__(self, model: IntervalModel, cfg: SolveConfig | None = None,
                 dense: bool | None = None):
        self.model = model
        self.cfg = cfg or SolveConfig()
        self.dense = model.is_dense_friendly if dense is None else dense
        self.n_evals = 0
        n = model.n_states
        self._states = np.arange(n)
        self._rewards = {"lower": model.r_lower, "avg": model.r_avg, "upper": model.r_upper}
        self._extremizer = RowExtremizer(model.indptr, model.indices, model.p_lower_data,
                                         model.p_upper_data)
        if self.dense:
            self._L, self._A, self._U = model.p_lower, model.p_avg, model.p_upper

    # one-step backups over every (action, state) row

    def expected_next(self, v, kind: Kind) -> np.ndarray:
        """``(m, n)`` array of extremized (or average) ``p @ v`` per row."""
        m, n = self.model.n_actions, self.model.n_states
        v = np.asarray(v, dtype=float)
        if kind == "avg":
            out = self.model.csr_avg @ v
        else:
            out = self._extremizer(v, _SENSE[kind])
        return np.asarray(out).reshape(m, n)

    def q_values(self, v, kind: Kind) -> np.ndarray:
        return self._rewards[kind] + self.model.gamma * self.expected_next(v, kind)

    # linear solves

    def _solve_sparse(self, P: sp.csr_matrix, r: np.ndarray, x0=None) -> np.ndarray:
        n = r.size
        M = (sp.identity(n, format="csr") - self.model.gamma * P).tocsc()
        if self.cfg.use_direct(n):
            return np.atleast_1d(spla.spsolve(M, r))
        diag = M.diagonal()
        precond = spla.LinearOperator((n, n), matvec=lambda x: x / diag)
        x, info = spla.gmres(M, r, x0=x0, M=precond, rtol=self.cfg.epsilon * 1e-3,
                             atol=0.0, restart=min(n, 50), maxiter=self.cfg.max_iters)
        if info != 0:
            raise ConvergenceError("GMRES did not converge", float(np.abs(M @ x - r).max()))
        return x

    # single policy, sparse path

    def _robust_sparse(self, rows, pattern: sp.csr_matrix, r, v0, sense: Sense):
        v = v0
        prev = None
        for it in range(self.cfg.max_iters):
            _, data = self._extremizer(v, sense, rows, with_rows=True)
            if prev is not None and np.array_equal(data, prev):
                return v
            P = sp.csr_matrix((data, pattern.indices, pattern.indptr), shape=pattern.shape)
            v_new = self._solve_sparse(P, r, x0=v)
            change = float(np.abs(v_new - v).max())
            v, prev = v_new, data
            if change <= 1e-13 * max(1.0, float(np.abs(v).max())):
                return v
        raise ConvergenceError("robust evaluation hit the iteration cap", change)

    def _evaluate_sparse(self, pi, kinds=KINDS) -> dict:
        model = self.model
        rows = pi * model.n_states + self._states
        lens = self._extremizer.lengths[rows]
        indptr = np.concatenate([[0], np.cumsum(lens)])
        pos = np.repeat(model.indptr[rows] - indptr[:-1], lens) + np.arange(indptr[-1])
        av = sp.csr_matrix((model.p_avg_data[pos], model.indices[pos], indptr),
                           shape=(model.n_states, model.n_states))
        r = {k: self._rewards[k][pi, self._states] for k in KINDS}
        v_avg = self._solve_sparse(av, r["avg"])
        out = {"avg": v_avg}
        if "lower" in kinds:
            out["lower"] = self._robust_sparse(rows, av, r["lower"], v_avg, "min")
        if "upper" in kinds:
            out["upper"] = self._robust_sparse(rows, av, r["upper"], v_avg, "max")
        return out

    # batched dense path

    def _robust_dense(self, Lp, Up, r, v0, sense: Sense):
        B, n = r.shape
        eye = np.eye(n)
        v = v0.copy()
        prev = np.full(Lp.shape, np.nan)
        active = np.ones(B, dtype=bool)
        for it in range(self.cfg.max_iters):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                return v
            rows, _ = extremize_rows(Lp[idx], Up[idx], v[idx], sense)
            same = np.all(rows == prev[idx], axis=(1, 2))
            prev[idx] = rows
            active[idx[same]] = False
            idx, rows = idx[~same], rows[~same]
            if idx.size == 0:
                return v
            v_new = np.linalg.solve(eye - self.model.gamma * rows, r[idx][..., None])[..., 0]
            change = np.abs(v_new - v[idx]).max(axis=1)
            v[idx] = v_new
            scale = np.maximum(1.0, np.abs(v_new).max(axis=1))
            active[idx[change <= 1e-13 * scale]] = False
        raise ConvergenceError("robust evaluation hit the iteration cap", float(change.max()))

    def _evaluate_dense(self, pis: np.ndarray, kinds=KINDS) -> dict:
        n = self.model.n_states
        st = self._states
        Ap = self._A[pis, st]
        r = {k: self._rewards[k][pis, st] for k in KINDS}
        eye = np.eye(n)
        v_avg = np.linalg.solve(eye - self.model.gamma * Ap, r["avg"][..., None])[..., 0]
        out = {"avg": v_avg}
        if "lower" in kinds or "upper" in kinds:
            Lp, Up = self._L[pis, st], self._U[pis, st]
            if "lower" in kinds:
                out["lower"] = self._robust_dense(Lp, Up, r["lower"], v_avg, "min")
            if "upper" in kinds:
                out["upper"] = self._robust_dense(Lp, Up, r["upper"], v_avg, "max")
        return out

    # public

    def component(self, pi, kind: Kind) -> np.ndarray:
        pi = as_policy(pi, self.model)
        if self.dense:
            return self._evaluate_dense(pi[None, :], (kind,))[kind][0]
        return self._evaluate_sparse(pi, (kind,))[kind]

    def evaluate(self, pi) -> ValueTriple:
        return self.evaluate_many([pi])[0]

    def evaluate_many(self, policies, chunk: int = 256) -> list[ValueTriple]:
        pis = np.array([as_policy(p, self.model) for p in policies], dtype=np.int64)
        pis = pis.reshape(-1, self.model.n_states)
        self.n_evals += len(pis)
        out: list[ValueTriple] = []
        if not self.dense:
            for pi in pis:
                res = self._evaluate_sparse(pi)
                out.append(ValueTriple(res["lower"], res["avg"], res["upper"]))
            return out
        for start in range(0, len(pis), chunk):
            res = self._evaluate_dense(pis[start:start + chunk])
            out.extend(ValueTriple(lo, av, hi) for lo, av, hi in
                       zip(res["lower"], res["avg"], res["upper"]))
        return out


def eval_policy(model: IntervalModel, pi, cfg: SolveConfig | None = None) -> ValueTriple:
    """Worst-case, average and best-case value vectors of a pure policy."""
    return Evaluator(model, cfg).evaluate(pi)


# optimal single-objective policies --------------------------------------------

def greedy_policy(q: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Lexicographically smallest maximizing action per state (columns = states)."""
    best = q.max(axis=0)
    tol = rtol * np.maximum(1.0, np.abs(best))
    return np.argmax(q >= best - tol, axis=0)


def _optimal(model: IntervalModel, kind: Kind, cfg: SolveConfig | None,
             evaluator: Evaluator | None = None):
    ev = evaluator or Evaluator(model, cfg)
    cfg = ev.cfg
    gamma = model.gamma
    threshold = cfg.epsilon * (1 - gamma) / (2 * gamma)
    v = np.zeros(model.n_states)
    change = np.inf
    for _ in range(cfg.max_iters):
        q = ev.q_values(v, kind)
        v_new = q.max(axis=0)
        change = float(np.abs(v_new - v).max())
        v = v_new
        if change <= threshold:
            break
    else:
        raise ConvergenceError(f"{kind} value iteration hit the iteration cap", change)
    pi = greedy_policy(ev.q_values(v, kind))
    # policy-iteration polish: value iteration only approximates near-ties
    st = np.arange(model.n_states)
    for _ in range(cfg.max_iters):
        v = ev.component(pi, kind)
        q = ev.q_values(v, kind)
        current = q[pi, st]
        tol = 1e-12 * np.maximum(1.0, np.abs(current))
        improve = q.max(axis=0) > current + tol
        if not improve.any():
            break
        pi = np.where(improve, greedy_policy(q), pi)
    pi = as_policy(greedy_policy(q, rtol=1e-12))
    return pi, ev.component(pi, kind)


def optimal_lower(model: IntervalModel, cfg: SolveConfig | None = None, evaluator=None):
    """Robust policy maximizing the worst-case value; returns ``(policy, v_lower)``."""
    return _optimal(model, "lower", cfg, evaluator)


def optimal_upper(model: IntervalModel, cfg: SolveConfig | None = None, evaluator=None):
    """Optimistic policy maximizing the best-case value; returns ``(policy, v_upper)``."""
    return _optimal(model, "upper", cfg, evaluator)


def optimal_avg(model: IntervalModel, cfg: SolveConfig | None = None, evaluator=None):
    """Optimal policy of the average MDP; returns ``(policy, v_avg)``."""
    return _optimal(model, "avg", cfg, evaluator)
