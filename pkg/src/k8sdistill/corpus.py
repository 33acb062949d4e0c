"""Corpus-level orchestration: planning, filtering, dedup, split, persistence.

File format: JSONL. The first line is a header record carrying provenance
(plan digest, creation timestamp, tool version); each following line is one
record with fields {id, instruction, context, yaml, source, family,
complexity, digest, report}. Candidate files (pre-filter) carry the task and
teacher metadata instead of digest/report.

The split shuffle is pinned bit-exactly so any implementation reproduces it:
records are sorted by id, then shuffled by a Fisher-Yates pass driven by
SplitMix64 seeded with the split seed (j = next_u64() % (i + 1), swapping
positions i and j for i = n-1 .. 1), then sliced into train / validation /
test / leftover.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from k8sdistill import __version__
from k8sdistill.circuit import ValidationReport, run_circuit
from k8sdistill.context import FAMILIES, ContextModel
from k8sdistill.manifest import ManifestSyntaxError, content_hash, parse_package
from k8sdistill.pods import WORKLOAD_KINDS
from k8sdistill.teacher import SYNTHETIC_DIRECT, CandidateRecord, GenerationTask

__all__ = [
    "Corpus", "CorpusRecord", "SplitSpec", "CorpusReadError",
    "stratified_plan", "filter_corpus", "deduplicate", "split",
    "write_corpus", "read_corpus", "write_candidates", "read_candidates",
    "correction_plan", "complexity_bucket", "freeze_marker", "splitmix64",
]

# Kinds that participate in the cross-resource rules; two or more of them in
# one package marks it complex regardless of document count.
RULE_BEARING_KINDS = frozenset(
    WORKLOAD_KINDS) | {"Service", "HorizontalPodAutoscaler"}

_FAMILY_SLUGS = {
    "RBAC": "rbac", "StatefulSet": "sts", "CronJob": "cron",
    "Ingress": "ing", "NetworkPolicy": "netpol", "HPA": "hpa",
    "ConfigMap/Secret": "cfg", "composite": "stack",
}

_BASE_CONSTRAINTS = (
    "do not run privileged containers or share host namespaces",
    "pin every image to an explicit tag",
)


class CorpusReadError(Exception):
    """A corpus/candidates file could not be parsed; carries the line number."""

    def __init__(self, path, line_number: int, message: str):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


@dataclass(frozen=True)
class CorpusRecord:
    id: str
    instruction: str
    context: str
    yaml: str
    source: str
    family: str
    complexity: str
    digest: str | None
    report: ValidationReport

    def to_json(self) -> dict:
        return {"id": self.id, "instruction": self.instruction,
                "context": self.context, "yaml": self.yaml,
                "source": self.source, "family": self.family,
                "complexity": self.complexity, "digest": self.digest,
                "report": self.report.to_json()}

    @classmethod
    def from_json(cls, data: dict) -> "CorpusRecord":
        return cls(id=data["id"], instruction=data["instruction"],
                   context=data["context"], yaml=data["yaml"],
                   source=data["source"], family=data["family"],
                   complexity=data["complexity"], digest=data.get("digest"),
                   report=ValidationReport.from_json(data["report"]))


@dataclass(frozen=True)
class Corpus:
    records: tuple[CorpusRecord, ...]
    provenance: dict

    def __post_init__(self):
        ids = [record.id for record in self.records]
        if len(ids) != len(set(ids)):
            raise ValueError("corpus record ids must be unique")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass(frozen=True)
class SplitSpec:
    train_size: int
    validation_size: int
    test_size: int
    seed: int
    stratified: bool = False

    def __post_init__(self):
        for size in (self.train_size, self.validation_size, self.test_size):
            if size <= 0:
                raise ValueError("split sizes must be positive")

    @property
    def total(self) -> int:
        return self.train_size + self.validation_size + self.test_size


def _now_iso() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        return datetime.fromtimestamp(int(epoch), tz=timezone.utc).isoformat()
    return datetime.now(tz=timezone.utc).isoformat()


def make_provenance(plan_digest: str = "", created: str | None = None) -> dict:
    return {"plan_digest": plan_digest,
            "created": created if created is not None else _now_iso(),
            "tool_version": __version__}


_MASK64 = (1 << 64) - 1


def splitmix64(seed: int):
    """Infinite stream of SplitMix64 outputs (the reference algorithm)."""
    state = seed & _MASK64
    while True:
        state = (state + 0x9E3779B97F4A7C15) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        yield z ^ (z >> 31)


def stratified_plan(targets: dict[str, int],
                    complexity_mix: tuple[str, ...] = ("simple", "medium",
                                                       "complex"),
                    kubernetes_version: str = "1.30.0",
                    extra_constraints: tuple[str, ...] = (),
                    ) -> list[GenerationTask]:
    """Expand per-family counts into a deterministic ordered task list.

    Complexity levels rotate round-robin within each family. Every task gets
    a unique name stem so teacher outputs diversify deterministically.
    """
    if not targets:
        raise ValueError("targets must name at least one family")
    for family in targets:
        if family not in FAMILIES:
            raise ValueError(f"unknown resource family {family!r}")
    tasks = []
    for family, count in targets.items():
        if count < 0:
            raise ValueError(f"negative count for {family!r}")
        slug = _FAMILY_SLUGS[family]
        for seq in range(count):
            constraints = _BASE_CONSTRAINTS + extra_constraints + (
                f"use the name stem '{slug}-{seq:05d}'",)
            tasks.append(GenerationTask(
                stream=SYNTHETIC_DIRECT,
                family=family,
                constraints=constraints,
                kubernetes_version=kubernetes_version,
                complexity=complexity_mix[seq % len(complexity_mix)],
            ))
    return tasks


def plan_digest(tasks: list[GenerationTask]) -> str:
    payload = json.dumps([task.to_json() for task in tasks], sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def complexity_bucket(yaml_text: str) -> str:
    """Observed complexity label: simple = 1 document, medium = 2-3,
    complex = >= 4 documents or >= 2 rule-bearing kinds."""
    pkg = parse_package(yaml_text)
    kinds = {doc.gvk.kind for doc in pkg} & RULE_BEARING_KINDS
    if len(pkg) >= 4 or len(kinds) >= 2:
        return "complex"
    if len(pkg) >= 2:
        return "medium"
    return "simple"


def filter_corpus(candidates: list[CandidateRecord], cm: ContextModel,
                  provenance: dict | None = None,
                  ) -> tuple[Corpus, list[CorpusRecord]]:
    """Partition candidates through the circuit into admitted and rejected."""
    admitted, rejected = [], []
    for candidate in candidates:
        report = run_circuit(candidate.artifact_text, cm)
        digest = None
        complexity = candidate.task.complexity
        if report.l1_pass:
            pkg = parse_package(candidate.artifact_text)
            digest = content_hash(pkg)
            complexity = complexity_bucket(candidate.artifact_text)
        record = CorpusRecord(
            id=candidate.id,
            instruction=candidate.instruction,
            context=candidate.context_fragment,
            yaml=candidate.artifact_text,
            source=candidate.source,
            family=candidate.task.family,
            complexity=complexity,
            digest=digest,
            report=report,
        )
        (admitted if report.overall else rejected).append(record)
    return Corpus(tuple(admitted), provenance or make_provenance()), rejected


def deduplicate(corpus: Corpus) -> Corpus:
    """Keep the first record (by id order) per canonical digest."""
    seen = set()
    kept = []
    for record in sorted(corpus.records, key=lambda r: r.id):
        if record.digest is None:
            raise ValueError(f"record {record.id} has no canonical digest")
        if record.digest in seen:
            continue
        seen.add(record.digest)
        kept.append(record)
    return Corpus(tuple(kept), dict(corpus.provenance))


def freeze_marker(corpus: Corpus) -> str:
    """Digest of the ordered id list; pins a split against mutation."""
    payload = "\n".join(record.id for record in corpus.records) + "\n"
    return hashlib.sha256(payload.encode()).hexdigest()


def split(corpus: Corpus, spec: SplitSpec) -> dict[str, Corpus]:
    """Deterministic split into train/validation/test plus leftover pool."""
    if spec.total > len(corpus):
        raise ValueError(
            f"split sizes {spec.train_size}/{spec.validation_size}/"
            f"{spec.test_size} exceed corpus size {len(corpus)}")
    records = sorted(corpus.records, key=lambda r: r.id)
    stream = splitmix64(spec.seed)
    for i in range(len(records) - 1, 0, -1):
        j = next(stream) % (i + 1)
        records[i], records[j] = records[j], records[i]
    bounds = {
        "train": (0, spec.train_size),
        "validation": (spec.train_size, spec.train_size + spec.validation_size),
        "test": (spec.train_size + spec.validation_size, spec.total),
        "pool": (spec.total, len(records)),
    }
    out = {}
    for name, (lo, hi) in bounds.items():
        provenance = dict(corpus.provenance)
        provenance["split"] = name
        provenance["seed"] = spec.seed
        out[name] = Corpus(tuple(records[lo:hi]), provenance)
    digests = [set(filter(None, (r.digest for r in out[name])))
               for name in ("train", "validation", "test")]
    for i in range(len(digests)):
        for j in range(i + 1, len(digests)):
            if digests[i] & digests[j]:
                raise ValueError("split leaked a canonical digest across "
                                 "subsets; deduplicate before splitting")
    return out


def _write_jsonl(path: Path, header: dict, rows: list[dict]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, ensure_ascii=False, sort_keys=True) + "\n")
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def _read_jsonl(path: Path) -> tuple[dict, list[tuple[int, dict]]]:
    header = None
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusReadError(path, number, f"malformed JSON: {exc}")
            if number == 1:
                if not isinstance(data, dict) or data.get("record") != "header":
                    raise CorpusReadError(path, 1, "missing header record")
                header = data
            else:
                rows.append((number, data))
    if header is None:
        raise CorpusReadError(path, 1, "empty file (no header record)")
    return header, rows


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    header = {"record": "header", **corpus.provenance}
    _write_jsonl(Path(path), header, [r.to_json() for r in corpus.records])


def read_corpus(path: str | Path) -> Corpus:
    header, rows = _read_jsonl(Path(path))
    records = []
    for number, data in rows:
        try:
            records.append(CorpusRecord.from_json(data))
        except (KeyError, TypeError) as exc:
            raise CorpusReadError(path, number, f"bad record: {exc}")
    provenance = {k: v for k, v in header.items() if k != "record"}
    return Corpus(tuple(records), provenance)


def write_candidates(candidates: list[CandidateRecord], path: str | Path,
                     provenance: dict | None = None) -> None:
    header = {"record": "header", **(provenance or make_provenance())}
    rows = []
    for candidate in candidates:
        rows.append({
            "id": candidate.id,
            "instruction": candidate.instruction,
            "context": candidate.context_fragment,
            "yaml": candidate.artifact_text,
            "source": candidate.source,
            "family": candidate.task.family,
            "complexity": candidate.task.complexity,
            "task": candidate.task.to_json(),
            "teacher": {"model": candidate.teacher_meta.model,
                        "latency_ms": candidate.teacher_meta.latency_ms,
                        "attempts": candidate.teacher_meta.attempts},
        })
    _write_jsonl(Path(path), header, rows)


def read_candidates(path: str | Path) -> tuple[list[CandidateRecord], dict]:
    from k8sdistill.teacher import TeacherMeta

    header, rows = _read_jsonl(Path(path))
    candidates = []
    for number, data in rows:
        try:
            teacher = data.get("teacher") or {}
            candidates.append(CandidateRecord(
                id=data["id"],
                instruction=data["instruction"],
                context_fragment=data["context"],
                artifact_text=data["yaml"],
                source=data["source"],
                task=GenerationTask.from_json(data["task"]),
                teacher_meta=TeacherMeta(
                    model=teacher.get("model", "unknown"),
                    latency_ms=teacher.get("latency_ms", 0),
                    attempts=teacher.get("attempts", 1)),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusReadError(path, number, f"bad candidate: {exc}")
    provenance = {k: v for k, v in header.items() if k != "record"}
    return candidates, provenance


def correction_plan(breakdown: list[dict], total: int,
                    kubernetes_version: str = "1.30.0",
                    ) -> list[GenerationTask]:
    """Build a replenishment plan weighted toward the worst failure cells.

    `breakdown` rows come from failure analysis: {family, level, rule_id,
    count, fields}. Task counts are allocated proportionally to cell counts
    (largest remainder), and each task carries a constraint naming the rule
    and, when known, the offending field.
    """
    cells = [cell for cell in breakdown if cell.get("count", 0) > 0
             and cell.get("family") in FAMILIES]
    if not cells or total <= 0:
        return []
    cells = sorted(cells, key=lambda c: (-c["count"], c["family"],
                                         c["level"], c["rule_id"]))
    weight_sum = sum(cell["count"] for cell in cells)
    shares = [cell["count"] * total / weight_sum for cell in cells]
    counts = [int(share) for share in shares]
    remainders = sorted(range(len(cells)),
                        key=lambda i: (-(shares[i] - counts[i]), i))
    for index in remainders[:total - sum(counts)]:
        counts[index] += 1
    tasks = []
    for cell, count in zip(cells, counts):
        fields = cell.get("fields") or []
        focus = f" around {', '.join(fields)}" if fields else ""
        constraint = (f"avoid the {cell['level']} {cell['rule_id']} "
                      f"error{focus} seen in earlier batches")
        slug = _FAMILY_SLUGS[cell["family"]]
        for seq in range(count):
            tasks.append(GenerationTask(
                stream=SYNTHETIC_DIRECT,
                family=cell["family"],
                constraints=_BASE_CONSTRAINTS + (
                    constraint,
                    f"use the name stem '{slug}-fix-{seq:05d}'"),
                kubernetes_version=kubernetes_version,
                complexity=("simple", "medium", "complex")[seq % 3],
            ))
    return tasks
