"""Per-scenario count comparison between counting methods and ground truth."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

from crowdmap.errors import ValidationError

METHODS = ("density-map", "detect-then-count")
METHOD_TITLES = {"density-map": "Density map", "detect-then-count": "Detect-then-count"}


@dataclass(frozen=True)
class CountRecord:
    scenario: str
    method: str
    estimated: float
    ground_truth: int

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(
                f"scenario {self.scenario!r}: unknown method {self.method!r} "
                f"(expected one of {', '.join(METHODS)})"
            )
        if not (math.isfinite(self.estimated) and self.estimated >= 0):
            raise ValidationError(
                f"scenario {self.scenario!r}: estimated count must be finite and >= 0"
            )
        if self.ground_truth < 0:
            raise ValidationError(f"scenario {self.scenario!r}: negative ground truth")


@dataclass(frozen=True)
class ReportRow:
    scenario: str
    estimated: dict[str, float]
    ground_truth: int
    abs_error: dict[str, float]


@dataclass(frozen=True)
class ScenarioReport:
    methods: tuple[str, ...]
    rows: tuple[ReportRow, ...]
    summary: dict[str, dict[str, float]]

    def to_dict(self) -> dict:
        return {
            "methods": list(self.methods),
            "rows": [asdict(r) for r in self.rows],
            "summary": self.summary,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> ScenarioReport:
        rows = tuple(
            ReportRow(r["scenario"], dict(r["estimated"]), int(r["ground_truth"]), dict(r["abs_error"]))
            for r in doc["rows"]
        )
        return cls(tuple(doc["methods"]), rows, {k: dict(v) for k, v in doc["summary"].items()})


def mae(errors: Sequence[float]) -> float:
    if len(errors) == 0:
        raise ValidationError("MAE of an empty error list is undefined")
    return sum(abs(e) for e in errors) / len(errors)


def rmse(errors: Sequence[float]) -> float:
    if len(errors) == 0:
        raise ValidationError("RMSE of an empty error list is undefined")
    return math.sqrt(sum(e * e for e in errors) / len(errors))


def build_report(records: Iterable[CountRecord]) -> ScenarioReport:
    """Group records by scenario and compute per-method errors.

    Every scenario must carry the same set of methods, each at most once,
    and all records of a scenario must agree on the ground truth. Rows come
    out sorted by scenario name, so the input order never matters.
    """
    by_scenario: dict[str, dict[str, CountRecord]] = {}
    for rec in records:
        slot = by_scenario.setdefault(rec.scenario, {})
        if rec.method in slot:
            raise ValidationError(f"duplicate record for ({rec.scenario!r}, {rec.method!r})")
        slot[rec.method] = rec
    if not by_scenario:
        raise ValidationError("no count records to report")

    method_sets = {frozenset(slot) for slot in by_scenario.values()}
    if len(method_sets) != 1:
        raise ValidationError("all scenarios must report the same set of methods")
    methods = tuple(m for m in METHODS if m in next(iter(method_sets)))

    rows = []
    for scenario in sorted(by_scenario):
        slot = by_scenario[scenario]
        truths = {rec.ground_truth for rec in slot.values()}
        if len(truths) != 1:
            raise ValidationError(f"scenario {scenario!r}: methods disagree on ground truth {sorted(truths)}")
        gt = truths.pop()
        rows.append(
            ReportRow(
                scenario=scenario,
                estimated={m: float(slot[m].estimated) for m in methods},
                ground_truth=gt,
                abs_error={m: abs(float(slot[m].estimated) - gt) for m in methods},
            )
        )
    summary = {
        m: {"mae": mae([r.abs_error[m] for r in rows]), "rmse": rmse([r.abs_error[m] for r in rows])}
        for m in methods
    }
    return ScenarioReport(methods, tuple(rows), summary)


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def _fmt(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def render_markdown(report: ScenarioReport) -> str:
    """Markdown table laid out like the usual count-comparison table.

    Estimated counts are rounded to whole people; errors and summary
    statistics are computed from the unrounded values.
    """
    titles = [METHOD_TITLES[m] for m in report.methods]
    header = ["Video", *titles, "Ground Truth", *(f"AE {t}" for t in titles)]
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join("---" for _ in header) + "|",
    ]
    for row in report.rows:
        cells = [
            row.scenario,
            *(str(_round_half_up(row.estimated[m])) for m in report.methods),
            str(row.ground_truth),
            *(_fmt(row.abs_error[m]) for m in report.methods),
        ]
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("")
    lines.append("| Metric | " + " | ".join(titles) + " |")
    lines.append("|---|" + "|".join("---" for _ in titles) + "|")
    lines.append("| MAE | " + " | ".join(_fmt(report.summary[m]["mae"]) for m in report.methods) + " |")
    lines.append(
        "| RMSE (supplementary) | "
        + " | ".join(_fmt(report.summary[m]["rmse"]) for m in report.methods)
        + " |"
    )
    return "\n".join(lines) + "\n"


def load_count_records(path: str | Path) -> list[CountRecord]:
    """Read ``scenario,method,estimated,ground_truth`` CSV rows."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"counts file not found: {path}")
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"scenario", "method", "estimated", "ground_truth"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValidationError(f"{path}: header must contain {', '.join(sorted(required))}")
        for lineno, raw in enumerate(reader, start=2):
            if not (raw["ground_truth"] or "").strip():
                raise ValidationError(f"{path}:{lineno}: missing ground truth")
            try:
                records.append(
                    CountRecord(
                        scenario=raw["scenario"].strip(),
                        method=raw["method"].strip(),
                        estimated=float(raw["estimated"]),
                        ground_truth=int(raw["ground_truth"]),
                    )
                )
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return records
