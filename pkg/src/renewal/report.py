"""Aggregation of per-record method results into CSV and Markdown tables.

Tables report the mean per-metric improvement rate as percentages, grouped by
method, by scenario, or by morphology stratum. Group rows always appear in a
canonical order and empty groups are emitted with count 0 and blank cells, so
two runs over the same results produce identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .pipeline import METHODS, MORPHOLOGY_BUCKETS, MethodResult, bucket_morphology
from .prompts import METRICS, SCENARIO_IDS

GROUPINGS = ("method", "scenario", "morphology")

# scenario and morphology breakdowns compare records, not prompt strategies,
# so they default to the model-guided method's results only
_BO_ONLY_GROUPINGS = ("scenario", "morphology")


def _group_order(group_by: str) -> tuple[str, ...]:
    if group_by == "method":
        return METHODS
    if group_by == "scenario":
        return SCENARIO_IDS
    if group_by == "morphology":
        return tuple(b.label for b in MORPHOLOGY_BUCKETS)
    raise ValueError(f"group_by must be one of {GROUPINGS}, got {group_by!r}")


def _group_key(result: MethodResult, group_by: str) -> str:
    if group_by == "method":
        return result.method
    if group_by == "scenario":
        return result.scenario
    return bucket_morphology(result.hw_ratio).label


@dataclass(frozen=True)
class ReportRow:
    """One group's mean improvement rates (as fractions; None when no result
    in the group carries a defined rate for that metric)."""

    group: str
    count: int
    means: dict[str, float | None]

    def cells(self) -> list[str]:
        out = [self.group, str(self.count)]
        for metric in METRICS:
            value = self.means[metric]
            out.append("" if value is None else f"{value * 100:.2f}%")
        return out


@dataclass(frozen=True)
class ReportTable:
    group_by: str
    rows: tuple[ReportRow, ...]

    def to_csv(self) -> str:
        header = [self.group_by, "count", *METRICS]
        lines = [",".join(header)]
        lines.extend(",".join(row.cells()) for row in self.rows)
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        header = [self.group_by, "count", *METRICS]
        lines = [
            "| " + " | ".join(header) + " |",
            "|" + "|".join([" --- "] * len(header)) + "|",
        ]
        for row in self.rows:
            lines.append("| " + " | ".join(c or " " for c in row.cells()) + " |")
        return "\n".join(lines) + "\n"


def aggregate(results: list[MethodResult], group_by: str) -> ReportTable:
    """Mean per-metric improvement rate for every group, in canonical order.

    Means average the defined rates only; a sort by (record id, method,
    variant) beforehand makes the summation order, and therefore the emitted
    float, independent of how results were collected.
    """
    order = _group_order(group_by)
    if not results:
        raise ValueError("no results to aggregate")
    ordered = sorted(results, key=lambda r: (r.record_id, r.method, r.variant or "", r.trigger or ""))
    rows = []
    for label in order:
        members = [r for r in ordered if _group_key(r, group_by) == label]
        means: dict[str, float | None] = {}
        for metric in METRICS:
            values = [r.rates[metric] for r in members if r.rates.get(metric) is not None]
            means[metric] = sum(values) / len(values) if values else None
        rows.append(ReportRow(group=label, count=len(members), means=means))
    return ReportTable(group_by=group_by, rows=tuple(rows))


def filter_for_grouping(results: list[MethodResult], group_by: str) -> list[MethodResult]:
    """The default slice of results each report variant aggregates."""
    if group_by in _BO_ONLY_GROUPINGS:
        return [r for r in results if r.method == "BO"]
    return list(results)


def emit_reports(
    results: list[MethodResult],
    out_dir: str | Path,
    groupings: tuple[str, ...] = GROUPINGS,
) -> dict[str, tuple[Path, Path]]:
    """Write CSV and Markdown tables for the requested groupings.

    Returns {grouping: (csv path, markdown path)}. Groupings whose filtered
    slice is empty are skipped rather than failing the run.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, tuple[Path, Path]] = {}
    for group_by in groupings:
        subset = filter_for_grouping(results, group_by)
        if not subset:
            continue
        table = aggregate(subset, group_by)
        csv_path = out_dir / f"{group_by}.csv"
        md_path = out_dir / f"{group_by}.md"
        csv_path.write_text(table.to_csv(), encoding="utf-8")
        md_path.write_text(table.to_markdown(), encoding="utf-8")
        written[group_by] = (csv_path, md_path)
    return written
