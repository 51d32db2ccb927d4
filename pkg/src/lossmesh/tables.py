"""Rectangular result tables with reproducible CSV round-trips.

CSV files carry ``#``-prefixed metadata lines (package version, config hash,
seed) above the header row; numeric cells are written with shortest
round-trip ``repr``, so re-running the same config reproduces byte-identical
rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["ResultTable", "compare_report", "AlignmentError"]


class AlignmentError(ValueError):
    """Tables cannot be joined on the requested key columns."""


@dataclass
class ResultTable:
    """Named float columns plus string metadata."""

    columns: tuple
    rows: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = tuple(str(c) for c in self.columns)
        rows = np.asarray(self.rows, dtype=float)
        if rows.size == 0:
            rows = rows.reshape(0, len(self.columns))
        if rows.ndim != 2 or rows.shape[1] != len(self.columns):
            raise ValueError("rows must be rectangular and match the columns")
        self.rows = rows

    def column(self, name: str) -> np.ndarray:
        try:
            return self.rows[:, self.columns.index(name)]
        except ValueError:
            raise KeyError(f"no column {name!r} in {self.columns}") from None

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"# {k}: {v}" for k, v in sorted(self.metadata.items())]
        lines.append(",".join(self.columns))
        for row in self.rows:
            lines.append(",".join(repr(float(v)) for v in row))
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def read_csv(cls, path) -> "ResultTable":
        metadata = {}
        header = None
        rows = []
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                metadata[key.strip()] = value.strip()
            elif header is None:
                header = [c.strip() for c in line.split(",")]
            else:
                rows.append([float(v) for v in line.split(",")])
        if header is None:
            raise ValueError(f"{path}: no header row")
        return cls(tuple(header), np.asarray(rows, dtype=float), metadata)


def compare_report(model: ResultTable, estimate: ResultTable, key_columns,
                   abs_tol: float, *, value_column: str = "value",
                   se_column: str | None = "se") -> ResultTable:
    """Row-wise comparison of a model table against an estimate table.

    Rows are aligned on ``key_columns``; a row passes when
    ``|model - estimate| <= max(abs_tol, 3 * se)``.  The returned table holds
    the keys, both values, the gap, the applied tolerance, and a 0/1 verdict;
    ``metadata["aggregate"]`` is ``"pass"`` only if every row passes.

    Raises
    ------
    AlignmentError
        If the key sets of the two tables do not intersect.
    """
    key_columns = tuple(key_columns)

    def keyed(table):
        keys = np.stack([table.column(k) for k in key_columns], axis=1)
        return {tuple(row): i for i, row in enumerate(keys)}

    model_idx = keyed(model)
    est_idx = keyed(estimate)
    shared = [k for k in model_idx if k in est_idx]
    if not shared:
        raise AlignmentError(f"no shared keys on {key_columns}")
    se = (
        estimate.column(se_column)
        if se_column and se_column in estimate.columns
        else np.zeros(estimate.rows.shape[0])
    )
    out = []
    all_pass = True
    for key in shared:
        mv = model.column(value_column)[model_idx[key]]
        ev = estimate.column(value_column)[est_idx[key]]
        tol = max(abs_tol, 3.0 * se[est_idx[key]])
        ok = abs(mv - ev) <= tol
        all_pass &= bool(ok)
        out.append(list(key) + [mv, ev, abs(mv - ev), tol, float(ok)])
    table = ResultTable(
        key_columns + ("model", "estimate", "abs_diff", "tolerance", "pass"),
        np.asarray(out),
        {"aggregate": "pass" if all_pass else "fail"},
    )
    return table
