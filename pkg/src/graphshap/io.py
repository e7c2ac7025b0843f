"""CSV readers and writers for matrices, partitions and attributions."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from graphshap.evaluation import ranking
from graphshap.game import Attribution, Method
from graphshap.graph import CommunityPartition


class CSVFormatError(ValueError):
    pass


def fmt(v: float) -> str:
    if math.isnan(v):
        return "nan"
    return format(float(v), ".17g")


def _rows(path) -> list[list[str]]:
    with open(path, newline="") as fh:
        return [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]


def _number(path, r: int, c: int, cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise CSVFormatError(f"{path}: row {r}, column {c}: not a number: {cell!r}") from None


def read_matrix(path) -> np.ndarray:
    """Square matrix from header-less rows of comma-separated reals."""
    rows = _rows(path)
    n = len(rows)
    if n == 0:
        raise CSVFormatError(f"{path}: empty matrix")
    out = np.empty((n, n))
    for r, row in enumerate(rows, start=1):
        if len(row) != n:
            raise CSVFormatError(f"{path}: row {r} has {len(row)} columns, expected {n}")
        for c, cell in enumerate(row, start=1):
            out[r - 1, c - 1] = _number(path, r, c, cell)
    return out


def write_matrix(path, m: np.ndarray, integer: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(m).tolist():
            w.writerow([str(int(v)) for v in row] if integer else [fmt(v) for v in row])


def read_partition(path) -> CommunityPartition:
    """Rows of ``node_id,community_id``; an optional header row is skipped."""
    rows = _rows(path)
    if rows and not rows[0][0].strip().lstrip("-").isdigit():
        rows = rows[1:]
    pairs = {}
    for r, row in enumerate(rows, start=1):
        if len(row) != 2:
            raise CSVFormatError(f"{path}: row {r} has {len(row)} columns, expected 2")
        try:
            node, comm = int(row[0]), int(row[1])
        except ValueError:
            raise CSVFormatError(f"{path}: row {r}: node and community ids must be integers") from None
        if node in pairs:
            raise CSVFormatError(f"{path}: row {r}: node {node} listed twice")
        pairs[node] = comm
    if sorted(pairs) != list(range(len(pairs))):
        raise CSVFormatError(f"{path}: node ids must cover 0..n-1")
    return CommunityPartition(np.array([pairs[i] for i in range(len(pairs))]))


def write_partition(path, partition: CommunityPartition) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "community_id"])
        for i, c in enumerate(partition.labels.tolist()):
            w.writerow([i, c])


def write_attribution(path, a: Attribution) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature_id", "phi", "computed", "method"])
        for i, (v, ok) in enumerate(zip(a.phi.tolist(), a.computed.tolist())):
            w.writerow([i, fmt(v), int(ok), a.method.value])


def read_attribution(path) -> Attribution:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"feature_id", "phi"} <= set(reader.fieldnames):
            raise CSVFormatError(f"{path}: expected columns feature_id,phi")
        rows = list(reader)
    if not rows:
        raise CSVFormatError(f"{path}: no attribution rows")
    phi = np.empty(len(rows))
    computed = np.ones(len(rows), dtype=bool)
    for r, row in enumerate(rows, start=2):
        i = int(row["feature_id"])
        if i != r - 2:
            raise CSVFormatError(f"{path}: row {r}: feature ids must be 0..n-1 in order")
        phi[i] = _number(path, r, 2, row["phi"])
        if "computed" in row:
            computed[i] = row["computed"] == "1"
    method = Method(rows[0].get("method") or Method.EXACT.value)
    return Attribution(phi=phi, method=method, computed=computed)


def write_plot_data(path, raw: Attribution, normalized: Attribution) -> None:
    """``feature_id, phi, normalized_phi, rank`` with rank 1 the strongest."""
    rank = {f: k + 1 for k, f in enumerate(ranking(raw.phi))}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature_id", "phi", "normalized_phi", "rank"])
        for i, (v, nv) in enumerate(zip(raw.phi.tolist(), normalized.phi.tolist())):
            w.writerow([i, fmt(v), fmt(nv), rank[i]])


def read_vector(path) -> np.ndarray:
    """Reals from one row or one column."""
    rows = _rows(path)
    vals = [(r, c, cell) for r, row in enumerate(rows, start=1) for c, cell in enumerate(row, start=1)]
    return np.array([_number(path, r, c, cell) for r, c, cell in vals])


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
