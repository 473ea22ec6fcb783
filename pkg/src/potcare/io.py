"""Strict data ingestion and deterministic serialization.

The daily CSV schema is ``date,visits,positives,negatives,<covariate...>``:
ISO-8601 dates strictly increasing, integer counts, float covariates with
empty cells meaning missing. Parsing is strict and per-row: a bad row is
rejected with its line number and reason, the run continues, and the whole
ingest aborts only past a 10% rejection cap. Hospital exports are messy;
silent coercion is how wrong risk numbers are born.

JSON artifacts are written with sorted keys and exact float repr so that
identical inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import datetime
import json
import math
from dataclasses import dataclass

import numpy as np

from .pot import DailySeries

__all__ = [
    "IngestError",
    "IngestReport",
    "ingest",
    "write_series_csv",
    "read_table",
    "write_csv",
    "dump_json",
    "load_json",
    "to_jsonable",
]

REQUIRED_COLUMNS = ("date", "visits", "positives", "negatives")
REJECTION_CAP = 0.10


class IngestError(ValueError):
    """Unreadable file, bad header, or rejection rate past the cap."""


@dataclass(frozen=True)
class IngestReport:
    rows_read: int
    rows_accepted: int
    rejected: tuple[tuple[int, str], ...]
    missing_counts: dict[str, int]
    date_range: tuple[str, str] | None
    n_date_gaps: int

    @property
    def rows_rejected(self):
        return len(self.rejected)

    def to_dict(self):
        return {
            "rows_read": self.rows_read,
            "rows_accepted": self.rows_accepted,
            "rows_rejected": self.rows_rejected,
            "rejected": [{"line": line, "reason": reason} for line, reason in self.rejected],
            "missing_counts": dict(sorted(self.missing_counts.items())),
            "date_range": list(self.date_range) if self.date_range else None,
            "n_date_gaps": self.n_date_gaps,
        }


def _parse_count(text, column):
    text = text.strip()
    if not text:
        raise ValueError(f"{column} is empty")
    try:
        value = int(text)
    except ValueError:
        raise ValueError(f"{column} is not an integer: {text!r}") from None
    if value < 0:
        raise ValueError(f"{column} is negative: {value}")
    return value


def _parse_covariate(text, column):
    text = text.strip()
    if not text:
        return math.nan
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"{column} is not numeric: {text!r}") from None
    if not math.isfinite(value):
        raise ValueError(f"{column} is not finite: {text!r}")
    return value


def ingest(path):
    """Read and validate a daily series CSV.

    Returns
    -------
    (DailySeries, IngestReport)

    Raises
    ------
    IngestError
        If the file is unreadable, the header does not start with the four
        required columns, or more than 10% of the rows are rejected.
    """
    try:
        with open(path, newline="") as handle:
            reader = csv.reader(handle)
            try:
                header = next(reader)
            except StopIteration:
                raise IngestError(f"{path}: empty file, header required") from None
            rows = list(reader)
    except OSError as err:
        raise IngestError(f"cannot read {path}: {err}") from None
    header = [h.strip() for h in header]
    if tuple(header[:4]) != REQUIRED_COLUMNS:
        raise IngestError(
            f"{path}: header must start with {','.join(REQUIRED_COLUMNS)}, got {header[:4]}")
    covariate_names = header[4:]
    if len(set(covariate_names)) != len(covariate_names):
        raise IngestError(f"{path}: duplicate covariate columns")

    accepted = {"date": [], "visits": [], "positives": [], "negatives": []}
    cov_values = {name: [] for name in covariate_names}
    rejected = []
    last_date = None
    n_gaps = 0
    for offset, row in enumerate(rows):
        line_no = offset + 2  # header is line 1
        if len(row) != len(header):
            rejected.append((line_no, f"expected {len(header)} fields, got {len(row)}"))
            continue
        try:
            date = datetime.date.fromisoformat(row[0].strip())
        except ValueError:
            rejected.append((line_no, f"bad date: {row[0]!r}"))
            continue
        if last_date is not None:
            if date == last_date:
                rejected.append((line_no, f"duplicate date {date.isoformat()}"))
                continue
            if date < last_date:
                rejected.append((line_no, f"out-of-order date {date.isoformat()}"))
                continue
        try:
            counts = [_parse_count(row[i], header[i]) for i in (1, 2, 3)]
            covs = [_parse_covariate(row[4 + j], name)
                    for j, name in enumerate(covariate_names)]
        except ValueError as err:
            rejected.append((line_no, str(err)))
            continue
        if last_date is not None and (date - last_date).days > 1:
            n_gaps += 1
        last_date = date
        accepted["date"].append(date.isoformat())
        accepted["visits"].append(counts[0])
        accepted["positives"].append(counts[1])
        accepted["negatives"].append(counts[2])
        for name, value in zip(covariate_names, covs):
            cov_values[name].append(value)

    rows_read = len(rows)
    report = IngestReport(
        rows_read=rows_read,
        rows_accepted=len(accepted["date"]),
        rejected=tuple(rejected),
        missing_counts={name: int(np.sum(np.isnan(vals))) if vals else 0
                        for name, vals in cov_values.items()},
        date_range=((accepted["date"][0], accepted["date"][-1])
                    if accepted["date"] else None),
        n_date_gaps=n_gaps,
    )
    if rows_read and len(rejected) / rows_read > REJECTION_CAP:
        raise IngestError(
            f"{path}: {len(rejected)}/{rows_read} rows rejected, past the "
            f"{REJECTION_CAP:.0%} cap; first: line {rejected[0][0]}: {rejected[0][1]}")
    if not accepted["date"]:
        raise IngestError(f"{path}: no valid rows")
    series = DailySeries(
        dates=tuple(accepted["date"]),
        visits=np.array(accepted["visits"], dtype=np.int64),
        positives=np.array(accepted["positives"], dtype=np.int64),
        negatives=np.array(accepted["negatives"], dtype=np.int64),
        covariates={name: np.array(vals, dtype=float)
                    for name, vals in cov_values.items()},
    )
    return series, report


def _format_cell(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def write_series_csv(series, path):
    """Serialize a daily series back to the ingest schema (exact round trip)."""
    names = list(series.covariates)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(list(REQUIRED_COLUMNS) + names)
        for i in range(len(series)):
            row = [series.dates[i], int(series.visits[i]), int(series.positives[i]),
                   int(series.negatives[i])]
            row += [_format_cell(series.covariates[n][i]) for n in names]
            writer.writerow(row)


def write_csv(path, header, rows):
    """Write a plain table with deterministic float formatting."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


def read_table(path):
    """Read a CSV into (header, list of row dicts of raw strings)."""
    try:
        with open(path, newline="") as handle:
            reader = csv.reader(handle)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                return [], []
            rows = [dict(zip(header, row)) for row in reader]
    except OSError as err:
        raise IngestError(f"cannot read {path}: {err}") from None
    return header, rows


def to_jsonable(obj):
    """Recursively convert numpy containers/scalars for JSON dumping."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return None
        return value
    return obj


def dump_json(path, obj):
    """Deterministic JSON: sorted keys, indent 2, trailing newline."""
    with open(path, "w") as handle:
        json.dump(to_jsonable(obj), handle, sort_keys=True, indent=2)
        handle.write("\n")


def load_json(path):
    try:
        with open(path) as handle:
            return json.load(handle)
    except OSError as err:
        raise IngestError(f"cannot read {path}: {err}") from None
    except json.JSONDecodeError as err:
        raise IngestError(f"{path}: invalid JSON: {err}") from None
