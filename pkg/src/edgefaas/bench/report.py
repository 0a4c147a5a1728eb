"""Bench reports and their CSV/JSON serialization.

Floats are written with ``repr`` so a report re-reads to the identical
values, and identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import EdgeFaasError
from .stats import summarize

COLUMNS = ("test", "scenario", "param", "n", "mean", "min", "max", "std", "p25", "p50", "p75")
STAT_FIELDS = COLUMNS[4:]


class IoError(EdgeFaasError):
    pass


@dataclass
class BenchReport:
    test: str
    scenario: str
    param: str
    n: int
    mean: float
    min: float
    max: float
    std: float
    p25: float
    p50: float
    p75: float
    samples: list[float] = field(default_factory=list, repr=False, compare=False)
    meta: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_samples(cls, test: str, scenario: str, param: str, samples, meta: dict | None = None) -> "BenchReport":
        samples = [float(s) for s in samples]
        s = summarize(samples)
        return cls(test, scenario, param, len(samples), s.mean, s.min, s.max, s.std,
                   s.p25, s.p50, s.p75, samples, dict(meta or {}))

    def row(self) -> dict:
        return {c: getattr(self, c) for c in COLUMNS}


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def render_csv(reports: list[BenchReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in reports:
        writer.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
    return buf.getvalue()


def render_json(reports: list[BenchReport]) -> str:
    rows = [{**r.row(), "meta": r.meta} for r in reports]
    return json.dumps(rows, indent=2, sort_keys=True) + "\n"


def emit_report(reports: list[BenchReport], format: str, path) -> None:
    if not reports:
        raise ValueError("nothing to report")
    if format == "csv":
        text = render_csv(reports)
    elif format == "json":
        text = render_json(reports)
    else:
        raise ValueError(f"unknown report format {format!r}")
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise IoError(f"cannot write report to {path}: {exc}") from exc


def _from_row(row: dict, meta: dict | None = None) -> BenchReport:
    return BenchReport(
        str(row["test"]), str(row["scenario"]), str(row["param"]), int(row["n"]),
        *(float(row[c]) for c in STAT_FIELDS), meta=dict(meta or {}),
    )


def parse_csv(text: str) -> list[BenchReport]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != COLUMNS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    return [_from_row(row) for row in reader]


def parse_json(text: str) -> list[BenchReport]:
    return [_from_row(row, row.get("meta")) for row in json.loads(text)]


def read_report(path) -> list[BenchReport]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return parse_json(text) if str(path).endswith(".json") else parse_csv(text)
