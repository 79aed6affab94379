"""Per-instance result rows, CSV persistence, and summary tables."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .docio import fmt17
from .validation import ParseError, require

CSV_COLUMNS = ("experiment", "method", "instance_id", "length", "feasible", "wall_ms")


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    method: str
    instance_id: str
    length: float
    feasible: bool
    wall_ms: float

    def __post_init__(self):
        require(self.length >= 0.0, "length must be >= 0")
        require(self.wall_ms >= 0.0, "wall time must be >= 0")


def write_results_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([row.experiment, row.method, row.instance_id,
                         fmt17(row.length), int(row.feasible), fmt17(row.wall_ms)])
    return buf.getvalue()


def read_results_csv(text: str) -> list:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty results file") from None
    if tuple(header) != CSV_COLUMNS:
        raise ParseError(f"unexpected header {header!r}", field="header")
    rows = []
    for lineno, record in enumerate(reader, start=2):
        if not record:
            continue
        if len(record) != len(CSV_COLUMNS):
            raise ParseError(f"line {lineno}: expected {len(CSV_COLUMNS)} fields, "
                             f"got {len(record)}")
        try:
            rows.append(ResultRow(record[0], record[1], record[2],
                                  float(record[3]), bool(int(record[4])),
                                  float(record[5])))
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
    return rows


@dataclass(frozen=True)
class MethodSummary:
    experiment: str
    method: str
    count: int
    feasible_count: int
    mean_length: float  # over feasible instances only
    std_length: float
    mean_wall_s: float  # over all instances

    @property
    def infeasible_count(self) -> int:
        return self.count - self.feasible_count


def summarize(rows) -> list:
    """Per (experiment, method) statistics; infeasible rows are counted but
    excluded from the length mean/std."""
    require(len(rows) > 0, "no result rows to summarize")
    groups: dict[tuple, list] = {}
    for row in rows:
        groups.setdefault((row.experiment, row.method), []).append(row)
    summaries = []
    for (experiment, method) in sorted(groups):
        group = groups[(experiment, method)]
        lengths = np.array([r.length for r in group if r.feasible])
        walls = np.array([r.wall_ms for r in group])
        summaries.append(MethodSummary(
            experiment=experiment,
            method=method,
            count=len(group),
            feasible_count=int(len(lengths)),
            mean_length=float(lengths.mean()) if len(lengths) else float("nan"),
            std_length=float(lengths.std()) if len(lengths) else float("nan"),
            mean_wall_s=float(walls.mean() / 1000.0),
        ))
    return summaries


def summary_table(summaries) -> str:
    """Markdown table: mean/std tour length and mean seconds per method."""
    require(len(summaries) > 0, "no summaries to tabulate")
    lines = [
        "| experiment | method | instances | infeasible | mean length | std length | mean time (s) |",
        "|---|---|---|---|---|---|---|",
    ]
    for s in summaries:
        mean = "n/a" if np.isnan(s.mean_length) else f"{s.mean_length:.3f}"
        std = "n/a" if np.isnan(s.std_length) else f"{s.std_length:.3f}"
        lines.append(f"| {s.experiment} | {s.method} | {s.count} | {s.infeasible_count}"
                     f" | {mean} | {std} | {s.mean_wall_s:.3f} |")
    return "\n".join(lines) + "\n"


def merge_results(texts) -> list:
    """Union rows from several CSV documents; a (experiment, method) group
    may come from only one document."""
    require(len(texts) > 0, "nothing to merge")
    seen: dict[tuple, int] = {}
    merged = []
    for doc_index, text in enumerate(texts):
        rows = read_results_csv(text)
        for key in {(r.experiment, r.method) for r in rows}:
            if key in seen and seen[key] != doc_index:
                raise ParseError(
                    f"method {key[1]!r} for experiment {key[0]!r} appears in "
                    f"more than one results file", field="method")
            seen[key] = doc_index
        merged.extend(rows)
    return merged
