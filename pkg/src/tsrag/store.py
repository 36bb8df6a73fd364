"""Line-delimited JSON store for univariate series, plus CSV ingestion.

Every line of a store file is one JSON object with exactly six keys, written
in a fixed order: domain_category, item_id, start, end, freq, target. Floats
are serialized with the shortest representation that round-trips, so writing
and re-reading a store is bit-exact. The conventional file extension is
``.crb.jsonl``.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import DataError
from .series import RawSeries, interpolate_missing

STORE_KEYS = ("domain_category", "item_id", "start", "end", "freq", "target")
STORE_EXTENSION = ".crb.jsonl"

_TIMESTAMP_HEADERS = {"date", "time", "timestamp", "datetime", "ds"}
_MISSING_MARKERS = {"", "nan"}


@dataclass
class StoreRecord:
    """One stored series: identity, span metadata, and the numeric target."""

    domain_category: str
    item_id: str
    start: str
    end: str
    freq: str
    target: np.ndarray

    def __post_init__(self) -> None:
        for name in ("domain_category", "item_id", "start", "end", "freq"):
            if not isinstance(getattr(self, name), str):
                raise DataError(f"record field {name!r} must be a string")
        if not self.domain_category or not self.item_id:
            raise DataError("domain_category and item_id must be non-empty")
        arr = np.asarray(self.target, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise DataError(f"record {self.item_id!r}: target must be a non-empty 1-D list")
        if not np.isfinite(arr).all():
            raise DataError(f"record {self.item_id!r}: target must contain only finite numbers")
        self.target = arr

    @property
    def key(self) -> tuple[str, str]:
        return (self.domain_category, self.item_id)

    def to_series(self) -> RawSeries:
        return RawSeries(
            item_id=self.item_id,
            domain=self.domain_category,
            values=self.target.copy(),
            start=self.start,
            freq=self.freq,
        )


def _check_unique(records: list[StoreRecord]) -> None:
    seen: set[tuple[str, str]] = set()
    for rec in records:
        if rec.key in seen:
            raise DataError(
                f"duplicate record key (domain_category={rec.domain_category!r}, "
                f"item_id={rec.item_id!r})"
            )
        seen.add(rec.key)


def write_store(records: list[StoreRecord], path: str | Path) -> None:
    """Write records as line-delimited JSON with the canonical key order."""
    _check_unique(records)
    path = Path(path)
    lines = []
    for rec in records:
        obj = {
            "domain_category": rec.domain_category,
            "item_id": rec.item_id,
            "start": rec.start,
            "end": rec.end,
            "freq": rec.freq,
            "target": [float(v) for v in rec.target],
        }
        lines.append(json.dumps(obj, separators=(",", ":"), allow_nan=False))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write store {path}: {exc}") from exc


def read_store(path: str | Path) -> list[StoreRecord]:
    """Read a store file, validating structure line by line.

    Errors name the offending key and 1-based line number. Duplicate
    (domain_category, item_id) pairs are rejected.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read store {path}: {exc}") from exc
    records: list[StoreRecord] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed record: {exc.msg}") from exc
        if not isinstance(obj, dict):
            raise DataError(f"{path}:{lineno}: record must be a JSON object")
        for key in STORE_KEYS:
            if key not in obj:
                raise DataError(f"{path}:{lineno}: missing key {key!r}")
        for key in obj:
            if key not in STORE_KEYS:
                raise DataError(f"{path}:{lineno}: unknown key {key!r}")
        target = obj["target"]
        if (
            not isinstance(target, list)
            or not target
            or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in target)
        ):
            raise DataError(f"{path}:{lineno}: key 'target' must be a non-empty list of numbers")
        try:
            records.append(
                StoreRecord(
                    domain_category=obj["domain_category"],
                    item_id=obj["item_id"],
                    start=obj["start"],
                    end=obj["end"],
                    freq=obj["freq"],
                    target=np.asarray(target, dtype=np.float64),
                )
            )
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    _check_unique(records)
    return records


_FREQ_PATTERNS: list[tuple[re.Pattern[str], float]] = [
    (re.compile(r"^daily$", re.I), 86400.0),
    (re.compile(r"^weekly$", re.I), 7 * 86400.0),
    (re.compile(r"^hourly$", re.I), 3600.0),
    (re.compile(r"^half[ _-]?hourly$", re.I), 1800.0),
]
_FREQ_UNIT = re.compile(r"^(\d+(?:\.\d+)?)\s*(min|minute|minutes|sec|second|seconds|h|hour|hours)$", re.I)

_DATE_FORMATS = ("%Y%m%d", "%Y-%m-%d", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S")


def _freq_seconds(freq: str) -> float | None:
    for pat, seconds in _FREQ_PATTERNS:
        if pat.match(freq.strip()):
            return seconds
    m = _FREQ_UNIT.match(freq.strip())
    if m:
        value = float(m.group(1))
        unit = m.group(2).lower()
        if unit.startswith("min"):
            return value * 60.0
        if unit.startswith("sec"):
            return value
        return value * 3600.0
    return None


def compute_end(start: str, freq: str, n_points: int) -> str | None:
    """End timestamp implied by a regular sampling interval, if computable.

    Returns ``start + (n_points - 1) * freq`` formatted like ``start``, or
    None when the start string or the freq is not a recognized regular form.
    """
    seconds = _freq_seconds(freq)
    if seconds is None or n_points < 1:
        return None
    for fmt in _DATE_FORMATS:
        try:
            begin = datetime.strptime(start, fmt)
        except ValueError:
            continue
        return (begin + timedelta(seconds=seconds * (n_points - 1))).strftime(fmt)
    return None


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in _MISSING_MARKERS


def _parse_cell(cell: str) -> float:
    return float(cell.strip())


def ingest_csv(
    path: str | Path,
    domain: str,
    freq: str = "-",
) -> list[StoreRecord]:
    """Convert one CSV file into store records, one per value column.

    The first row is the header. An optional leading timestamp column is
    detected by name (date/time/timestamp/datetime/ds) or by non-numeric
    content; when present its first and last values become start/end,
    otherwise start="0" and end is the last integer index. Empty or "nan"
    cells are missing and are filled by linear interpolation. Any other
    non-numeric cell is an error naming its row and column.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read CSV {path}: {exc}") from exc
    rows = [row for row in rows if row]  # csv yields [] for blank lines
    if len(rows) < 2:
        raise DataError(f"{path}: CSV needs a header row and at least one data row")
    header, data = rows[0], rows[1:]
    ncols = len(header)
    for i, row in enumerate(data, start=2):
        if len(row) != ncols:
            raise DataError(f"{path}: row {i} has {len(row)} cells, expected {ncols}")

    has_timestamp = header[0].strip().lower() in _TIMESTAMP_HEADERS
    if not has_timestamp and ncols > 1:
        for row in data:
            cell = row[0]
            if _is_missing(cell):
                continue
            try:
                _parse_cell(cell)
            except ValueError:
                has_timestamp = True
                break

    first_value_col = 1 if has_timestamp else 0
    if first_value_col >= ncols:
        raise DataError(f"{path}: no value columns found")

    stem = path.name
    for suffix in (".csv", ".CSV"):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]

    if has_timestamp:
        start = data[0][0].strip()
        end = data[-1][0].strip()
    else:
        start = "0"
        end = compute_end(start, freq, len(data)) or str(len(data) - 1)

    records = []
    for j in range(first_value_col, ncols):
        column = np.empty(len(data), dtype=np.float64)
        for i, row in enumerate(data):
            cell = row[j]
            if _is_missing(cell):
                column[i] = np.nan
                continue
            try:
                column[i] = _parse_cell(cell)
            except ValueError:
                name = header[j].strip() or f"#{j}"
                raise DataError(
                    f"{path}: non-numeric value {cell.strip()!r} at row {i + 2}, "
                    f"column {name!r}"
                ) from None
        try:
            repaired = interpolate_missing(column)
        except DataError:
            name = header[j].strip() or f"#{j}"
            raise DataError(f"{path}: column {name!r} has no present values") from None
        records.append(
            StoreRecord(
                domain_category=domain,
                item_id=f"{stem}_{j - first_value_col}",
                start=start,
                end=end,
                freq=freq,
                target=repaired,
            )
        )
    return records
