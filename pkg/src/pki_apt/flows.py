"""Flow-record CSV ingestion: parse, strip node identifiers, sanitize."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import BinaryIO

import numpy as np

from .errors import (
    AllColumnsDropped,
    DuplicateColumn,
    EmptyInput,
    EncodingError,
    MalformedRow,
    MissingLabelColumn,
    RowCountMismatch,
    UnparseableCell,
)

log = logging.getLogger(__name__)

DEFAULT_IDENTIFIER_COLUMNS = (
    "Flow ID",
    "Src IP",
    "Dst IP",
    "Src Port",
    "Dst Port",
    "Protocol",
    "Timestamp",
)
DEFAULT_LABEL_COLUMN = "Label"


def _norm(name: str) -> str:
    return name.strip().casefold()


@dataclass
class RawFlowTable:
    column_names: list[str]
    rows: list[list[str]]

    @property
    def row_count(self) -> int:
        return len(self.rows)

    def column_index(self, name: str) -> int | None:
        key = _norm(name)
        for i, c in enumerate(self.column_names):
            if _norm(c) == key:
                return i
        return None


@dataclass(frozen=True)
class IdentifierDropList:
    """Column names to remove, matched case-insensitively after trimming."""

    patterns: tuple[str, ...] = DEFAULT_IDENTIFIER_COLUMNS

    def matches(self, name: str) -> bool:
        key = _norm(name)
        return any(_norm(p) == key for p in self.patterns)


class InfinityAction(str, Enum):
    REPLACE_WITH_COLUMN_MAX_FINITE = "replace_with_column_max_finite"
    DROP_ROW = "drop_row"


class NanAction(str, Enum):
    REPLACE_WITH_ZERO = "replace_with_zero"
    DROP_ROW = "drop_row"


@dataclass(frozen=True)
class SanitizePolicy:
    infinity_action: InfinityAction = InfinityAction.REPLACE_WITH_COLUMN_MAX_FINITE
    nan_action: NanAction = NanAction.REPLACE_WITH_ZERO

    def to_dict(self) -> dict:
        return {"infinity_action": self.infinity_action.value, "nan_action": self.nan_action.value}

    @classmethod
    def from_dict(cls, d: dict) -> "SanitizePolicy":
        return cls(InfinityAction(d["infinity_action"]), NanAction(d["nan_action"]))


@dataclass
class FeatureTable:
    feature_names: list[str]
    values: np.ndarray
    labels: list[str]
    provenance: dict = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureTable):
            return NotImplemented
        return (
            self.feature_names == other.feature_names
            and self.labels == other.labels
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
        )


def _read_bytes(source) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read()
    return source.read()


def parse_flow_csv(source: bytes | BinaryIO | str | os.PathLike, has_header: bool = True) -> RawFlowTable:
    """Parse an RFC-4180 CSV into a :class:`RawFlowTable`.

    ``source`` may be raw bytes, a binary stream, or a path. Without a header
    the columns are named ``c0, c1, ...`` from the first row's width.
    Repeated header names (CICFlowMeter emits ``Fwd Header Length`` twice)
    get ``.1``, ``.2`` suffixes.
    """
    data = _read_bytes(source)
    try:
        text = data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise EncodingError(f"input is not valid UTF-8: {exc}") from exc

    reader = csv.reader(io.StringIO(text, newline=""), strict=True)
    records: list[tuple[int, list[str]]] = []
    try:
        for rec in reader:
            if not rec:
                continue
            records.append((reader.line_num, rec))
    except csv.Error as exc:
        raise MalformedRow(reader.line_num, -1, -1) from exc

    if not records:
        raise EmptyInput("no header line" if has_header else "no rows")

    if has_header:
        _, header = records[0]
        body = records[1:]
        names = _dedupe([h.strip() for h in header])
    else:
        body = records
        names = [f"c{i}" for i in range(len(records[0][1]))]

    width = len(names)
    rows = []
    for line, rec in body:
        if len(rec) != width:
            raise MalformedRow(line, width, len(rec))
        rows.append(rec)
    return RawFlowTable(names, rows)


def _dedupe(names: list[str]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for name in names:
        key = _norm(name)
        if key in seen:
            seen[key] += 1
            new = f"{name}.{seen[key]}"
            if _norm(new) in seen:
                raise DuplicateColumn(f"cannot disambiguate repeated column {name!r}")
            log.warning("repeated column %r renamed to %r", name, new)
            seen[_norm(new)] = 0
            out.append(new)
        else:
            seen[key] = 0
            out.append(name)
    return out


def _take_columns(raw: RawFlowTable, keep: list[int]) -> RawFlowTable:
    return RawFlowTable(
        [raw.column_names[i] for i in keep],
        [[row[i] for i in keep] for row in raw.rows],
    )


def strip_identifiers(raw: RawFlowTable, drop: IdentifierDropList = IdentifierDropList()) -> RawFlowTable:
    keep = [i for i, c in enumerate(raw.column_names) if not drop.matches(c)]
    return _take_columns(raw, keep)


def drop_identifier_columns(
    raw: RawFlowTable,
    drop: IdentifierDropList = IdentifierDropList(),
    label_column: str = DEFAULT_LABEL_COLUMN,
) -> tuple[RawFlowTable, list[str]]:
    """Remove identifier columns and split off the label column."""
    li = raw.column_index(label_column)
    if li is None:
        raise MissingLabelColumn(f"label column {label_column!r} not found")
    labels = [row[li].strip() for row in raw.rows]
    keep = [i for i, c in enumerate(raw.column_names) if i != li and not drop.matches(c)]
    if not keep:
        raise AllColumnsDropped("no feature columns survive identifier removal")
    kept = set(keep)
    dropped = [c for i, c in enumerate(raw.column_names) if i != li and i not in kept]
    log.info("dropped identifier columns: %s", dropped)
    return _take_columns(raw, keep), labels


def _parse_column(cells: list[str], name: str, row_offset: int = 0) -> np.ndarray:
    try:
        return np.array([float(c) for c in cells], dtype=np.float64)
    except ValueError:
        pass
    out = np.empty(len(cells))
    for i, c in enumerate(cells):
        try:
            out[i] = float(c)
        except ValueError:
            raise UnparseableCell(c, i + row_offset, name) from None
    return out


def sanitize_values(
    table: RawFlowTable,
    labels: list[str],
    policy: SanitizePolicy = SanitizePolicy(),
) -> tuple[FeatureTable, dict[str, dict[str, int]]]:
    """Convert cells to finite floats.

    Returns the table and a provenance mapping
    ``{column: {"replaced": int, "dropped": int}}`` where ``dropped`` counts
    non-finite cells in that column whose row was removed.
    """
    if len(labels) != table.row_count:
        raise RowCountMismatch(f"{len(labels)} labels for {table.row_count} rows")
    n, d = table.row_count, len(table.column_names)
    x = np.empty((n, d))
    for j, name in enumerate(table.column_names):
        x[:, j] = _parse_column([row[j] for row in table.rows], name)

    is_nan = np.isnan(x)
    is_inf = np.isinf(x)
    drop = np.zeros(n, dtype=bool)
    if policy.nan_action is NanAction.DROP_ROW:
        drop |= is_nan.any(axis=1)
    if policy.infinity_action is InfinityAction.DROP_ROW:
        drop |= is_inf.any(axis=1)

    prov = {}
    for j, name in enumerate(table.column_names):
        bad = is_nan[:, j] | is_inf[:, j]
        prov[name] = {"replaced": int((bad & ~drop).sum()), "dropped": int((bad & drop).sum())}

    keep = ~drop
    x = x[keep]
    is_nan, is_inf = is_nan[keep], is_inf[keep]
    if policy.nan_action is NanAction.REPLACE_WITH_ZERO:
        x[is_nan] = 0.0
    if policy.infinity_action is InfinityAction.REPLACE_WITH_COLUMN_MAX_FINITE:
        for j in np.flatnonzero(is_inf.any(axis=0)):
            col = x[:, j]
            finite = col[np.isfinite(col)]
            hi = finite.max() if finite.size else 0.0
            lo = finite.min() if finite.size else 0.0
            col[np.isposinf(col)] = hi
            # -inf is mirrored onto the finite minimum
            col[np.isneginf(col)] = lo

    kept_labels = [lab for lab, k in zip(labels, keep) if k]
    ft = FeatureTable(list(table.column_names), x, kept_labels, provenance=prov)
    return ft, prov


def load_feature_table(
    source,
    drop: IdentifierDropList = IdentifierDropList(),
    label_column: str = DEFAULT_LABEL_COLUMN,
    policy: SanitizePolicy = SanitizePolicy(),
) -> FeatureTable:
    """parse -> drop identifiers -> sanitize, in one call."""
    raw = parse_flow_csv(source, has_header=True)
    raw, labels = drop_identifier_columns(raw, drop, label_column)
    table, _ = sanitize_values(raw, labels, policy)
    return table


def _fmt(v: float) -> str:
    if math.isfinite(v) and v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def write_feature_csv(table: FeatureTable, dest, label_column: str = DEFAULT_LABEL_COLUMN) -> None:
    """Write a table in the same CSV layout the parser reads (label last)."""
    own = isinstance(dest, (str, os.PathLike))
    fh = open(dest, "w", newline="", encoding="utf-8") if own else dest
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(table.feature_names) + [label_column])
        for row, lab in zip(table.values, table.labels):
            w.writerow([_fmt(v) for v in row] + [lab])
    finally:
        if own:
            fh.close()


def feature_table_to_bytes(table: FeatureTable, label_column: str = DEFAULT_LABEL_COLUMN) -> bytes:
    buf = io.StringIO()
    write_feature_csv(table, buf, label_column)
    return buf.getvalue().encode("utf-8")
