"""Evaluation harness: the pass@1 metric family over a frozen test split.

Per generation: strip wrapping, run the circuit, check structural exact match
and BLEU against the reference. Aggregates:

  sc             syntactically valid YAML (L1)
  schema_pass    L1 and L2
  semantic_pass  L1, L2 and L3
  policy_pass    L1, L2 and L4
  full_pass      all four levels
  em             structural exact match rate
  bleu_mean      mean auxiliary BLEU

The headline failure breakdown attributes each failing example to its lowest
failing level exactly once, so the per-level counts sum to the number of
failing examples.
"""
from __future__ import annotations

import json
import math
import resource
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from k8sdistill.bleu import bleu_aux
from k8sdistill.circuit import FailureDetail, ValidationReport, run_circuit
from k8sdistill.context import ContextModel
from k8sdistill.corpus import Corpus
from k8sdistill.manifest import ManifestSyntaxError, canonicalize, parse_package, \
    strip_llm_wrapping, structural_exact_match

__all__ = [
    "EvalMode", "GenerationOutcome", "EvalRun", "ResourceStats",
    "evaluate_outputs", "aggregate_outcomes", "analyze_failures",
    "render_report", "render_series", "resource_probe", "per_token_stats",
    "read_generations",
]

LEVELS = ("L1", "L2", "L3", "L4")

MISSING_OUTPUT = "missing-output"


@dataclass(frozen=True)
class EvalMode:
    prompt_style: str = "std"
    max_new_tokens: int = 512
    temperature: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.prompt_style not in ("std", "strict"):
            raise ValueError(f"unknown prompt style {self.prompt_style!r}")
        if self.max_new_tokens <= 0:
            raise ValueError("max_new_tokens must be positive")

    def __str__(self) -> str:
        return f"{self.prompt_style}, {self.max_new_tokens}"

    def to_json(self) -> dict:
        return {"prompt_style": self.prompt_style,
                "max_new_tokens": self.max_new_tokens,
                "temperature": self.temperature, "seed": self.seed}

    @classmethod
    def from_json(cls, data: dict) -> "EvalMode":
        return cls(**data)


@dataclass(frozen=True)
class GenerationOutcome:
    example_id: str
    family: str
    output_text: str
    report: ValidationReport
    em: bool
    bleu: float
    tokens: int | None = None
    elapsed_ms: float | None = None

    def to_json(self) -> dict:
        return {"example_id": self.example_id, "family": self.family,
                "output_text": self.output_text,
                "report": self.report.to_json(), "em": self.em,
                "bleu": self.bleu, "tokens": self.tokens,
                "elapsed_ms": self.elapsed_ms}

    @classmethod
    def from_json(cls, data: dict) -> "GenerationOutcome":
        return cls(example_id=data["example_id"], family=data["family"],
                   output_text=data["output_text"],
                   report=ValidationReport.from_json(data["report"]),
                   em=data["em"], bleu=data["bleu"],
                   tokens=data.get("tokens"), elapsed_ms=data.get("elapsed_ms"))


@dataclass(frozen=True)
class ResourceStats:
    scope: str
    wall_s: float = 0.0
    peak_rss_mb: float = 0.0
    per_token: dict | None = None

    def to_json(self) -> dict:
        return {"scope": self.scope, "wall_s": self.wall_s,
                "peak_rss_mb": self.peak_rss_mb, "per_token": self.per_token}


@dataclass(frozen=True)
class EvalRun:
    label: str
    mode: EvalMode
    outcomes: tuple[GenerationOutcome, ...]
    aggregates: dict
    breakdown: dict
    resource: ResourceStats | None = None

    def to_json(self) -> dict:
        return {"label": self.label, "mode": self.mode.to_json(),
                "outcomes": [o.to_json() for o in self.outcomes],
                "aggregates": self.aggregates, "breakdown": self.breakdown,
                "resource": self.resource.to_json() if self.resource else None}

    @classmethod
    def from_json(cls, data: dict) -> "EvalRun":
        res = data.get("resource")
        return cls(label=data["label"], mode=EvalMode.from_json(data["mode"]),
                   outcomes=tuple(GenerationOutcome.from_json(o)
                                  for o in data["outcomes"]),
                   aggregates=data["aggregates"], breakdown=data["breakdown"],
                   resource=ResourceStats(**res) if res else None)


class _Phase:
    def __init__(self, scope: str):
        self.scope = scope
        self.stats: ResourceStats | None = None


@contextmanager
def resource_probe(scope: str = "phase"):
    """Measure wall time and peak resident memory around a pipeline phase.

    Peak RSS is process-wide (ru_maxrss), reported in MB; it never decreases
    across phases within one process.
    """
    phase = _Phase(scope)
    started = time.perf_counter()
    try:
        yield phase
    finally:
        rss_kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        phase.stats = ResourceStats(scope=scope,
                                    wall_s=time.perf_counter() - started,
                                    peak_rss_mb=rss_kb / 1024.0)


def per_token_stats(timings: list[tuple[int, float]]) -> dict | None:
    """Mean and p95 of per-example ms/token; None without timing metadata."""
    rates = [elapsed_ms / tokens for tokens, elapsed_ms in timings
             if tokens and tokens > 0]
    if not rates:
        return None
    ordered = sorted(rates)
    index = max(0, math.ceil(0.95 * len(ordered)) - 1)
    return {"mean_ms_per_token": sum(ordered) / len(ordered),
            "p95_ms_per_token": ordered[index]}


def aggregate_outcomes(outcomes: list[GenerationOutcome],
                       ) -> tuple[dict, dict]:
    """Reduce outcomes into the aggregate table and the level breakdown."""
    total = len(outcomes)
    if total == 0:
        return ({name: 0.0 for name in ("sc", "schema_pass", "semantic_pass",
                                        "policy_pass", "full_pass", "em",
                                        "bleu_mean")} | {"total": 0},
                {level: 0 for level in LEVELS})
    counts = {"sc": 0, "schema_pass": 0, "semantic_pass": 0,
              "policy_pass": 0, "full_pass": 0, "em": 0}
    breakdown = {level: 0 for level in LEVELS}
    bleu_sum = 0.0
    for outcome in outcomes:
        report = outcome.report
        counts["sc"] += report.l1_pass
        counts["schema_pass"] += report.l1_pass and report.l2_pass
        counts["semantic_pass"] += (report.l1_pass and report.l2_pass
                                    and report.l3_pass)
        counts["policy_pass"] += (report.l1_pass and report.l2_pass
                                  and report.l4_pass)
        counts["full_pass"] += report.overall
        counts["em"] += outcome.em
        bleu_sum += outcome.bleu
        lowest = report.lowest_failing_level()
        if lowest is not None:
            breakdown[lowest] += 1
    aggregates = {name: value / total for name, value in counts.items()}
    aggregates["bleu_mean"] = bleu_sum / total
    aggregates["total"] = total
    return aggregates, breakdown


def read_generations(path: str | Path) -> dict[str, dict]:
    """Load a generations JSONL file into id -> payload.

    Rows hold {id, output, optional tokens, optional elapsed_ms, optional
    mode}; duplicate ids are an error.
    """
    out: dict[str, dict] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            data = json.loads(line)
            if data.get("record") == "header":
                continue
            example_id = data["id"]
            if example_id in out:
                raise ValueError(f"duplicate generation id {example_id!r} "
                                 f"at line {number}")
            out[example_id] = data
    return out


def _bleu_reference_text(text: str) -> str:
    try:
        return canonicalize(parse_package(text))
    except ManifestSyntaxError:
        return text


def evaluate_outputs(test_split: Corpus,
                     generations: dict[str, dict],
                     mode: EvalMode,
                     cm: ContextModel,
                     label: str = "run") -> EvalRun:
    """Score one generation per test example and aggregate.

    A missing generation counts as an L1 failure flagged "missing-output";
    the denominator is always the split size.
    """
    outcomes = []
    with resource_probe(f"eval:{label}") as phase:
        for record in sorted(test_split.records, key=lambda r: r.id):
            payload = generations.get(record.id)
            if payload is None or not str(payload.get("output", "")).strip():
                report = ValidationReport(
                    l1_pass=False, l2_pass=False, l3_pass=False, l4_pass=False,
                    failures=(FailureDetail("L1", MISSING_OUTPUT, "",
                                            "no generation for this id"),))
                outcomes.append(GenerationOutcome(
                    example_id=record.id, family=record.family,
                    output_text="", report=report, em=False, bleu=0.0))
                continue
            output = str(payload["output"])
            stripped = strip_llm_wrapping(output)
            report = run_circuit(stripped, cm)
            outcomes.append(GenerationOutcome(
                example_id=record.id,
                family=record.family,
                output_text=stripped,
                report=report,
                em=structural_exact_match(stripped, record.yaml),
                bleu=bleu_aux(_bleu_reference_text(stripped),
                              _bleu_reference_text(record.yaml)),
                tokens=payload.get("tokens"),
                elapsed_ms=payload.get("elapsed_ms"),
            ))
    aggregates, breakdown = aggregate_outcomes(outcomes)
    timings = [(o.tokens, o.elapsed_ms) for o in outcomes
               if o.tokens is not None and o.elapsed_ms is not None]
    stats = phase.stats
    if stats is not None:
        stats = ResourceStats(scope=stats.scope, wall_s=stats.wall_s,
                              peak_rss_mb=stats.peak_rss_mb,
                              per_token=per_token_stats(timings))
    return EvalRun(label=label, mode=mode, outcomes=tuple(outcomes),
                   aggregates=aggregates, breakdown=breakdown, resource=stats)


def analyze_failures(run: EvalRun, exemplars_per_cell: int = 5) -> list[dict]:
    """Family x level x rule_id cells over failing outcomes.

    Each failing outcome lands in exactly one cell: its lowest failing level
    and the first failure detail recorded at that level. Cells carry the most
    frequent offending field names for correction planning.
    """
    cells: dict[tuple[str, str, str], dict] = {}
    for outcome in run.outcomes:
        level = outcome.report.lowest_failing_level()
        if level is None:
            continue
        details = [f for f in outcome.report.failures if f.level == level]
        rule_id = details[0].rule_id if details else "unknown"
        key = (outcome.family, level, rule_id)
        cell = cells.setdefault(key, {"family": outcome.family, "level": level,
                                      "rule_id": rule_id, "count": 0,
                                      "exemplar_ids": [], "_fields": {}})
        cell["count"] += 1
        if len(cell["exemplar_ids"]) < exemplars_per_cell:
            cell["exemplar_ids"].append(outcome.example_id)
        for detail in details:
            fieldname = _last_field(detail.path)
            if fieldname:
                cell["_fields"][fieldname] = cell["_fields"].get(fieldname, 0) + 1
    out = []
    for cell in cells.values():
        fields = sorted(cell.pop("_fields").items(),
                        key=lambda item: (-item[1], item[0]))
        cell["fields"] = [name for name, _ in fields[:3]]
        out.append(cell)
    out.sort(key=lambda c: (-c["count"], c["family"], c["level"], c["rule_id"]))
    return out


def _last_field(path: str) -> str | None:
    segments = [s.split("[")[0] for s in path.split(".") if s]
    for segment in reversed(segments):
        if segment and not segment.startswith("doc["):
            return segment
    return None


def _pass_cell(run: EvalRun) -> str:
    total = run.aggregates.get("total", len(run.outcomes))
    passing = round(run.aggregates["full_pass"] * total)
    return f"{passing}/{total} = {100.0 * run.aggregates['full_pass']:.1f}%"


def render_report(runs: list[EvalRun], fmt: str = "markdown") -> str:
    """Trajectory table over one or more runs (markdown or tsv)."""
    if not runs:
        raise ValueError("render_report needs at least one run")
    header = ["Run", "Mode", "full-pass", "L1", "L2", "L3", "L4", "BLEU"]
    rows = []
    for run in runs:
        rows.append([
            run.label, str(run.mode), _pass_cell(run),
            str(run.breakdown.get("L1", 0)), str(run.breakdown.get("L2", 0)),
            str(run.breakdown.get("L3", 0)), str(run.breakdown.get("L4", 0)),
            f"{run.aggregates['bleu_mean']:.2f}",
        ])
    if fmt == "tsv":
        lines = ["\t".join(header)] + ["\t".join(row) for row in rows]
        return "\n".join(lines) + "\n"
    widths = [max(len(header[i]), *(len(row[i]) for row in rows))
              for i in range(len(header))]
    def fmt_row(cells):
        return "| " + " | ".join(cell.ljust(widths[i])
                                 for i, cell in enumerate(cells)) + " |"
    lines = [fmt_row(header),
             "|" + "|".join("-" * (w + 2) for w in widths) + "|"]
    lines.extend(fmt_row(row) for row in rows)
    return "\n".join(lines) + "\n"


def render_series(runs: list[EvalRun]) -> str:
    """Plot-series CSV (run, metric, value) for external plotting."""
    lines = ["run,metric,value"]
    for run in runs:
        for metric in ("sc", "schema_pass", "semantic_pass", "policy_pass",
                       "full_pass", "em"):
            lines.append(f"{run.label},{metric},"
                         f"{100.0 * run.aggregates[metric]:.1f}")
        lines.append(f"{run.label},bleu_mean,"
                     f"{run.aggregates['bleu_mean']:.2f}")
        for level in LEVELS:
            lines.append(f"{run.label},fail_{level},"
                         f"{run.breakdown.get(level, 0)}")
    return "\n".join(lines) + "\n"
