"""Plain-text readers and writers for matrices, labels and reports.

Formats are MatrixMarket coordinate (sparse interchange every single-cell
toolchain can export) and headered CSV (dense, carries cell/gene ids).
Values are written with 17 significant digits so every float64 round-trips
exactly. Parsers reject anything that would construct an invalid
expression matrix and report the offending line.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .model import ExpressionMatrix, ScfpError


class ParseError(ScfpError):
    """Malformed input file; carries the 1-based line number."""

    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


@dataclass(frozen=True)
class DatasetBundle:
    matrix: ExpressionMatrix
    labels: Optional[list[str]]
    source_path: str


_MTX_HEADER_FIELDS = ("real", "integer")


def read_matrix_market(path) -> ExpressionMatrix:
    """Parse MatrixMarket coordinate format into the dense model.

    Accepts `real general` and `integer general` banners, 1-based indices,
    % comments; duplicate coordinates are summed. Negative or non-finite
    values are rejected, as are out-of-bounds indices.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines:
        raise ParseError(path, 1, "empty file")
    banner = lines[0].split()
    if (
        len(banner) != 5
        or banner[0] != "%%MatrixMarket"
        or banner[1].lower() != "matrix"
        or banner[2].lower() != "coordinate"
        or banner[3].lower() not in _MTX_HEADER_FIELDS
        or banner[4].lower() != "general"
    ):
        raise ParseError(
            path, 1,
            "expected banner '%%MatrixMarket matrix coordinate real|integer general'",
        )

    size_line = None
    entries_start = 0
    for lineno, line in enumerate(lines[1:], start=2):
        stripped = line.strip()
        if not stripped or stripped.startswith("%"):
            continue
        size_line = (lineno, stripped)
        entries_start = lineno
        break
    if size_line is None:
        raise ParseError(path, len(lines), "missing size line")

    lineno, stripped = size_line
    parts = stripped.split()
    if len(parts) != 3:
        raise ParseError(path, lineno, f"size line must be 'rows cols nnz', got {stripped!r}")
    try:
        n_rows, n_cols, n_entries = (int(p) for p in parts)
    except ValueError:
        raise ParseError(path, lineno, f"non-integer size line {stripped!r}") from None
    if n_rows < 1 or n_cols < 1 or n_entries < 0:
        raise ParseError(path, lineno, f"invalid dimensions {stripped!r}")

    values = np.zeros((n_rows, n_cols), dtype=np.float64)
    seen = 0
    for lineno, line in enumerate(lines[entries_start:], start=entries_start + 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("%"):
            continue
        parts = stripped.split()
        if len(parts) != 3:
            raise ParseError(path, lineno, f"entry must be 'row col value', got {stripped!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
            v = float(parts[2])
        except ValueError:
            raise ParseError(path, lineno, f"malformed entry {stripped!r}") from None
        if not (1 <= i <= n_rows and 1 <= j <= n_cols):
            raise ParseError(
                path, lineno, f"index ({i},{j}) outside declared {n_rows}x{n_cols}"
            )
        if not math.isfinite(v):
            raise ParseError(path, lineno, f"non-finite value {parts[2]!r}")
        if v < 0:
            raise ParseError(path, lineno, f"negative value {parts[2]!r}")
        values[i - 1, j - 1] += v
        seen += 1
    if seen != n_entries:
        raise ParseError(
            path, len(lines), f"declared {n_entries} entries but found {seen}"
        )
    return ExpressionMatrix(values)


def read_csv_matrix(path, orientation: str = "cells-as-rows") -> ExpressionMatrix:
    """Parse a headered CSV table; optionally transpose so cells are rows."""
    if orientation not in ("cells-as-rows", "genes-as-rows"):
        raise ValueError(f"unknown orientation {orientation!r}")
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty file") from None
        col_ids = [c.strip() for c in header[1:]]
        if not col_ids:
            raise ParseError(path, 1, "header must name at least one data column")
        row_ids: list[str] = []
        rows: list[list[float]] = []
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise ParseError(
                    path, lineno,
                    f"expected {len(header)} fields, got {len(record)}",
                )
            row_ids.append(record[0].strip())
            parsed = []
            for col, cell in enumerate(record[1:], start=2):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(
                        path, lineno, f"non-numeric value {cell!r} in column {col}"
                    ) from None
                if not math.isfinite(v):
                    raise ParseError(path, lineno, f"non-finite value in column {col}")
                if v < 0:
                    raise ParseError(path, lineno, f"negative value in column {col}")
                parsed.append(v)
            rows.append(parsed)
    if not rows:
        raise ParseError(path, 2, "no data rows")
    values = np.array(rows, dtype=np.float64)
    if orientation == "genes-as-rows":
        return ExpressionMatrix(values.T, cell_ids=col_ids, gene_ids=row_ids)
    return ExpressionMatrix(values, cell_ids=row_ids, gene_ids=col_ids)


def write_matrix(matrix: ExpressionMatrix, path, fmt: str = "mtx") -> None:
    """Write mtx (nonzeros only) or csv (dense, with ids); 17-digit values."""
    path = Path(path)
    if fmt == "mtx":
        rows, cols = np.nonzero(matrix.values)
        with open(path, "w", encoding="utf-8") as handle:
            handle.write("%%MatrixMarket matrix coordinate real general\n")
            handle.write(f"{matrix.n_cells} {matrix.n_genes} {rows.size}\n")
            for i, j in zip(rows, cols):
                handle.write(f"{i + 1} {j + 1} {matrix.values[i, j]:.17g}\n")
    elif fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["cell_id", *matrix.gene_ids])
            for i, cell_id in enumerate(matrix.cell_ids):
                writer.writerow([cell_id, *(f"{v:.17g}" for v in matrix.values[i])])
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")


def read_matrix(path, fmt: Optional[str] = None, orientation: str = "cells-as-rows") -> ExpressionMatrix:
    """Dispatch on explicit format or file extension (.mtx / .csv)."""
    path = Path(path)
    if fmt is None:
        suffix = path.suffix.lower()
        if suffix == ".mtx":
            fmt = "mtx"
        elif suffix == ".csv":
            fmt = "csv"
        else:
            raise ScfpError(
                f"cannot infer format of {path} (expected .mtx or .csv); pass it explicitly"
            )
    if fmt == "mtx":
        return read_matrix_market(path)
    if fmt == "csv":
        return read_csv_matrix(path, orientation=orientation)
    raise ValueError(f"unknown matrix format {fmt!r}")


def read_labels(path, cell_ids: Optional[Sequence[str]] = None) -> list[str]:
    """One label per line, or two-column `cell_id,label` joined to cell order."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as handle:
        lines = [line.rstrip("\n") for line in handle]
    lines = [line for line in lines if line.strip()]
    if not lines:
        raise ParseError(path, 1, "no labels found")
    two_column = all(line.count(",") == 1 for line in lines)
    if not two_column:
        return [line.strip() for line in lines]
    pairs = [tuple(part.strip() for part in line.split(",")) for line in lines]
    if cell_ids is None:
        return [label for _, label in pairs]
    by_id = {}
    for lineno, (cid, label) in enumerate(pairs, start=1):
        if cid in by_id:
            raise ParseError(path, lineno, f"duplicate cell id {cid!r}")
        by_id[cid] = label
    unknown = [cid for cid in by_id if cid not in set(cell_ids)]
    if unknown:
        raise ScfpError(f"labels file {path} names unknown cell ids: {unknown[:5]}")
    missing = [cid for cid in cell_ids if cid not in by_id]
    if missing:
        raise ScfpError(f"labels file {path} is missing cell ids: {missing[:5]}")
    return [by_id[cid] for cid in cell_ids]


def write_labels(labels: Sequence, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for label in labels:
            handle.write(f"{label}\n")


def write_report(entries: dict, path) -> None:
    """Key-value report, one `key: value` line each; floats at 17 digits."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(format_report(entries))


def format_report(entries: dict) -> str:
    lines = []
    for key, value in entries.items():
        if value is None:
            rendered = "not_evaluated"
        elif isinstance(value, float):
            rendered = repr(value)  # shortest form that round-trips exactly
        else:
            rendered = str(value)
        lines.append(f"{key}: {rendered}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict[str, str]:
    """Inverse of format_report, values kept as strings."""
    entries: dict[str, str] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(":")
        entries[key.strip()] = value.strip()
    return entries


def load_bundle(
    matrix_path,
    labels_path=None,
    fmt: Optional[str] = None,
    orientation: str = "cells-as-rows",
) -> DatasetBundle:
    matrix = read_matrix(matrix_path, fmt=fmt, orientation=orientation)
    labels = None
    if labels_path is not None:
        labels = read_labels(labels_path, cell_ids=matrix.cell_ids)
        if len(labels) != matrix.n_cells:
            raise ScfpError(
                f"{len(labels)} labels for {matrix.n_cells} cells in {matrix_path}"
            )
    return DatasetBundle(matrix=matrix, labels=labels, source_path=str(matrix_path))
