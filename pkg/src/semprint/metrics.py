"""Distances between fingerprints and matrix post-processing.

The primary distance is the exact 2-Wasserstein between two uniform
empirical measures on the simplex. For equal sample counts the optimum is
attained at a permutation, so it reduces to a linear assignment on the
squared-Euclidean cost matrix, solved exactly. Unequal counts (legal after
a tolerated partial probe) fall back to the exact transportation LP on
rational uniform weights. Assigned costs are accumulated with ``math.fsum``
so the value is bit-identical under sample reordering and argument swap.

Jensen-Shannon divergence (base 2, between mean categorical distributions)
ships as the comparison baseline.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

from .probe import Fingerprint

__all__ = [
    "MetricError",
    "DegenerateColumnError",
    "DistanceMatrix",
    "wasserstein2",
    "jsd",
    "distance_matrix",
    "normalize_columns",
    "average_matrices",
    "write_matrix_csv",
    "write_matrix_json",
    "read_matrix_json",
]

COST_FLOOR = 1e-18
SYMMETRY_ATOL = 1e-9


class MetricError(ValueError):
    pass


class DegenerateColumnError(MetricError):
    """A column's max distance to the base models is zero."""

    def __init__(self, column_id: str):
        self.column_id = column_id
        super().__init__(
            f"column '{column_id}' has zero max distance to the base models;"
            " cannot normalize"
        )


def _sample_matrix(fp: Fingerprint) -> np.ndarray:
    return np.asarray([s.probs for s in fp.samples], dtype=float)


def _cost_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    cost = np.einsum("ijk,ijk->ij", diff, diff)
    cost[cost < COST_FLOOR] = 0.0
    return cost


def wasserstein2(a: Fingerprint, b: Fingerprint) -> float:
    """Exact W2 between the uniform empirical measures of two fingerprints.

    Equal N: optimal assignment (Jonker-Volgenant class solver); the value
    is sqrt(mean of matched squared Euclidean costs). Unequal N: exact
    transportation LP with weights 1/N_a and 1/N_b.
    """
    if not a.samples or not b.samples:
        raise MetricError("fingerprints must be nonempty")
    if a.k != b.k:
        raise MetricError(f"dimension mismatch: K={a.k} vs K={b.k}")
    xa, xb = _sample_matrix(a), _sample_matrix(b)
    cost = _cost_matrix(xa, xb)
    if len(xa) == len(xb):
        rows, cols = linear_sum_assignment(cost)
        total = math.fsum(cost[rows, cols])
        return math.sqrt(max(total / len(xa), 0.0))
    return math.sqrt(max(_transport_cost(cost), 0.0))


def _transport_cost(cost: np.ndarray) -> float:
    """Minimum expected cost over couplings of two uniform measures."""
    n, m = cost.shape
    a = np.full(n, 1.0 / n)
    b = np.full(m, 1.0 / m)
    # Equality constraints: row sums = a, column sums = b (drop one
    # redundant row constraint for numerical rank).
    n_vars = n * m
    rows = []
    rhs = []
    for i in range(n):
        coef = np.zeros(n_vars)
        coef[i * m : (i + 1) * m] = 1.0
        rows.append(coef)
        rhs.append(a[i])
    for j in range(m):
        coef = np.zeros(n_vars)
        coef[j::m] = 1.0
        rows.append(coef)
        rhs.append(b[j])
    res = linprog(
        cost.ravel(),
        A_eq=np.asarray(rows[:-1]),
        b_eq=np.asarray(rhs[:-1]),
        bounds=(0, None),
        method="highs",
    )
    if not res.success:
        raise MetricError(f"transportation LP failed: {res.message}")
    return float(res.fun)


def _mean_distribution(fp: Fingerprint) -> np.ndarray:
    return _sample_matrix(fp).mean(axis=0)


def jsd(a: Fingerprint, b: Fingerprint) -> float:
    """Jensen-Shannon divergence (base-2 logs) between the fingerprints'
    mean categorical distributions. Bounded in [0, 1]."""
    if a.k != b.k:
        raise MetricError(f"dimension mismatch: K={a.k} vs K={b.k}")
    p = _mean_distribution(a)
    q = _mean_distribution(b)
    m = 0.5 * (p + q)

    def kl(x: np.ndarray) -> float:
        return math.fsum(
            xi * math.log2(xi / mi) for xi, mi in zip(x, m) if xi > 0.0
        )

    value = 0.5 * kl(p) + 0.5 * kl(q)
    return min(max(value, 0.0), 1.0)


_METRICS = {"w2": wasserstein2, "jsd": jsd}


@dataclass(eq=False)
class DistanceMatrix:
    """Square distance matrix over an ordered model id list."""

    ids: tuple[str, ...]
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ids = tuple(self.ids)
        self.values = np.asarray(self.values, dtype=float)
        m = len(self.ids)
        if self.values.shape != (m, m):
            raise MetricError(
                f"matrix shape {self.values.shape} does not match {m} ids"
            )
        if not np.isfinite(self.values).all():
            raise MetricError("matrix entries must be finite")
        if (self.values < 0).any():
            raise MetricError("matrix entries must be nonnegative")
        if (np.diag(self.values) != 0).any():
            raise MetricError("matrix diagonal must be zero")
        if not self.metadata.get("normalized", False):
            if np.abs(self.values - self.values.T).max() > SYMMETRY_ATOL:
                raise MetricError("matrix must be symmetric before normalization")

    def index(self, model_id: str) -> int:
        try:
            return self.ids.index(model_id)
        except ValueError:
            raise MetricError(f"unknown model id '{model_id}'")

    def entry(self, row_id: str, col_id: str) -> float:
        return float(self.values[self.index(row_id), self.index(col_id)])


def distance_matrix(
    fingerprints: Mapping[str, Fingerprint],
    metric: str = "w2",
    ids: Sequence[str] | None = None,
) -> DistanceMatrix:
    """Pairwise distances between models' fingerprints for one prompt."""
    if metric not in _METRICS:
        raise MetricError(f"unknown metric '{metric}' (expected w2 or jsd)")
    fn = _METRICS[metric]
    order = tuple(ids) if ids is not None else tuple(fingerprints.keys())
    missing = [mid for mid in order if mid not in fingerprints]
    if missing:
        raise MetricError(f"missing fingerprints for models: {missing}")
    m = len(order)
    values = np.zeros((m, m))
    unequal = False
    for i in range(m):
        for j in range(i + 1, m):
            fa, fb = fingerprints[order[i]], fingerprints[order[j]]
            if fa.n != fb.n:
                unequal = True
            d = fn(fa, fb)
            values[i, j] = values[j, i] = d
    meta = {"metric": metric}
    if unequal:
        meta["unequal_n"] = True
    return DistanceMatrix(ids=order, values=values, metadata=meta)


def normalize_columns(
    mat: DistanceMatrix, base_ids: Sequence[str]
) -> DistanceMatrix:
    """Divide each column by that model's max distance to the base models.

    Base rows then span [0, 1] per column; non-base rows may exceed 1 and
    the result is generally asymmetric.
    """
    base_rows = [mat.index(b) for b in base_ids]
    if not base_rows:
        raise MetricError("base_ids must be nonempty")
    values = mat.values.copy()
    for j, col_id in enumerate(mat.ids):
        norm = values[base_rows, j].max()
        if norm <= 0.0:
            raise DegenerateColumnError(col_id)
        values[:, j] /= norm
    meta = dict(mat.metadata)
    meta.update({"normalized": True, "base_ids": list(base_ids)})
    return DistanceMatrix(ids=mat.ids, values=values, metadata=meta)


def average_matrices(mats: Sequence[DistanceMatrix]) -> DistanceMatrix:
    """Element-wise mean of matrices sharing one id ordering."""
    if not mats:
        raise MetricError("cannot average an empty matrix list")
    ids = mats[0].ids
    for m in mats[1:]:
        if m.ids != ids:
            raise MetricError("matrices have mismatched id orderings")
    stack = np.stack([m.values for m in mats])
    meta = {"averaged_over": len(mats)}
    if any(m.metadata.get("normalized") for m in mats):
        meta["normalized"] = True
    return DistanceMatrix(ids=ids, values=stack.mean(axis=0), metadata=meta)


# --------------------------------------------------------------------------
# Exports


def write_matrix_csv(mat: DistanceMatrix, path: str | Path) -> None:
    """Header row/column of model ids; entries at 6 decimals."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_id", *mat.ids])
        for i, row_id in enumerate(mat.ids):
            writer.writerow([row_id, *(f"{v:.6f}" for v in mat.values[i])])


def write_matrix_json(mat: DistanceMatrix, path: str | Path) -> None:
    """Full-precision export for downstream tooling."""
    doc = {
        "ids": list(mat.ids),
        "values": [[float(v) for v in row] for row in mat.values],
        "metadata": mat.metadata,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def read_matrix_json(path: str | Path) -> DistanceMatrix:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return DistanceMatrix(
        ids=tuple(doc["ids"]),
        values=np.asarray(doc["values"], dtype=float),
        metadata=doc.get("metadata", {}),
    )
