"""Coverage between frontiers and summary statistics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .core import DOMINANCE_TOL, FrontierSet, ValueTriple

COVERAGE_COLUMNS = ("instance_id", "algo_x", "algo_y", "c_xy", "c_yx", "size_x", "size_y",
                    "t_x", "t_y")


@dataclass
class CoverageReport:
    c_xy: float
    c_yx: float
    size_x: int
    size_y: int
    covered_y: np.ndarray = field(repr=False)  # per y: covered by some x
    covered_x: np.ndarray = field(repr=False)  # per x: covered by some y


def _as_matrix(values) -> np.ndarray:
    if isinstance(values, FrontierSet):
        values = values.values
    rows = [v.vector if isinstance(v, ValueTriple) else np.asarray(v, dtype=float)
            for v in values]
    return np.array(rows, dtype=float)


def _covered(X: np.ndarray, Y: np.ndarray, tol: float) -> np.ndarray:
    if X.size == 0:
        return np.zeros(len(Y), dtype=bool)
    out = np.empty(len(Y), dtype=bool)
    for start in range(0, len(Y), 512):
        block = Y[start:start + 512]
        out[start:start + 512] = np.any(
            np.all(X[None, :, :] >= block[:, None, :] - tol, axis=2), axis=1)
    return out


def coverage(X, Y, tol: float = DOMINANCE_TOL) -> CoverageReport:
    """Fraction of ``Y`` weakly covered by ``X`` (and the converse).

    ``X`` and ``Y`` are frontiers or sequences of value triples / flat vectors.
    """
    Xm, Ym = _as_matrix(X), _as_matrix(Y)
    if len(Ym) == 0:
        raise ValueError("coverage needs a non-empty Y")
    cov_y = _covered(Xm, Ym, tol)
    cov_x = _covered(Ym, Xm, tol) if len(Xm) else np.zeros(0, dtype=bool)
    c_yx = float(cov_x.mean()) if len(Xm) else 0.0
    return CoverageReport(float(cov_y.mean()), c_yx, len(Xm), len(Ym), cov_y, cov_x)


def frontier_stats(frontier: FrontierSet, wall_time: float) -> dict:
    """Sizes, timing and per-objective maxima of a frontier."""
    mat = frontier.objective_matrix()
    count = len(frontier)
    return {
        "policy_count": count,
        "value_count": len(frontier.unique_values()),
        "eval_count": int(frontier.eval_count),
        "time_seconds": float(wall_time),
        "seconds_per_policy": float(wall_time / count) if count else 0.0,
        "truncated": bool(frontier.truncated),
        "extremes": mat.max(axis=0).tolist() if count else [],
    }


def coverage_csv(rows, header: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(COVERAGE_COLUMNS)
    for row in rows:
        writer.writerow([row[c] for c in COVERAGE_COLUMNS])
    return buf.getvalue()
