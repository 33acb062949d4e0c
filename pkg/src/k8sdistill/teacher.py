"""Pair assembly against a chat-completion teacher endpoint.

Two streams: synthetic_direct (the teacher writes the YAML for a task we
describe) and real_reverse (we hold real YAML, the teacher writes only the
instruction). The client is endpoint-agnostic: any chat-completion style HTTP
endpoint works, and tests inject a local transport instead of the network.

All prompts are deterministic for a fixed task and template version. Replies
are stripped of Markdown fences before they enter a candidate record.
"""
from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import requests

from k8sdistill.context import FAMILIES, ContextModel
from k8sdistill.manifest import ManifestSyntaxError, canonicalize, parse_package, \
    strip_llm_wrapping

__all__ = [
    "GenerationTask", "CandidateRecord", "TeacherMeta", "EndpointConfig",
    "GenerationError", "TransientTeacherError",
    "build_direct_prompt", "build_reverse_prompt", "render_instruction",
    "build_context_fragment", "generate_candidate", "generate_batch",
    "RateLimiter", "TEMPLATE_VERSION",
]

TEMPLATE_VERSION = "v1"

SYNTHETIC_DIRECT = "synthetic_direct"
REAL_REVERSE = "real_reverse"
STREAMS = (SYNTHETIC_DIRECT, REAL_REVERSE)
COMPLEXITIES = ("simple", "medium", "complex")

API_KEY_ENV = "TEACHER_API_KEY"


class GenerationError(Exception):
    """A task could not produce a candidate (re-queueable)."""


class TransientTeacherError(Exception):
    """Retryable transport or rate-limit failure."""


@dataclass(frozen=True)
class GenerationTask:
    stream: str
    family: str
    constraints: tuple[str, ...]
    kubernetes_version: str
    complexity: str
    source_yaml: str | None = None

    def __post_init__(self):
        if self.stream not in STREAMS:
            raise ValueError(f"unknown stream {self.stream!r}")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown resource family {self.family!r}")
        if self.complexity not in COMPLEXITIES:
            raise ValueError(f"unknown complexity {self.complexity!r}")
        if self.stream == REAL_REVERSE:
            if not self.source_yaml:
                raise ValueError("real_reverse tasks require source_yaml")
            parse_package(self.source_yaml)  # must be syntactically valid

    def to_json(self) -> dict:
        return {"stream": self.stream, "family": self.family,
                "constraints": list(self.constraints),
                "kubernetes_version": self.kubernetes_version,
                "complexity": self.complexity,
                "source_yaml": self.source_yaml}

    @classmethod
    def from_json(cls, data: dict) -> "GenerationTask":
        return cls(stream=data["stream"], family=data["family"],
                   constraints=tuple(data["constraints"]),
                   kubernetes_version=data["kubernetes_version"],
                   complexity=data["complexity"],
                   source_yaml=data.get("source_yaml"))


@dataclass(frozen=True)
class TeacherMeta:
    model: str
    latency_ms: int
    attempts: int


@dataclass(frozen=True)
class CandidateRecord:
    id: str
    instruction: str
    context_fragment: str
    artifact_text: str
    source: str
    task: GenerationTask
    teacher_meta: TeacherMeta


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = "http://localhost:8080/v1"
    model: str = "deepseek-v4-flash"
    timeout_s: float = 120.0
    max_retries: int = 3
    backoff_s: float = 2.0
    concurrency: int = 4
    rate_per_minute: int = 60
    reply_cap_bytes: int = 512 * 1024

    def api_key(self) -> str | None:
        return os.environ.get(API_KEY_ENV)


_ONLY_YAML = ("Return only YAML. Do not use Markdown code fences and do not "
              "add any text before or after the YAML.")
_STRICT_EXTRA = ("Any explanation outside YAML is prohibited. The reply must "
                 "start with 'apiVersion:' or '---'.")


def render_instruction(task: GenerationTask) -> str:
    """The natural-language instruction stored with a synthetic_direct pair."""
    lines = [f"Create a {task.complexity} Kubernetes manifest package for the "
             f"{task.family} resource family (Kubernetes "
             f"{task.kubernetes_version})."]
    for constraint in task.constraints:
        lines.append(f"Requirement: {constraint}.")
    return " ".join(lines)


def build_direct_prompt(task: GenerationTask, strict: bool = False) -> str:
    """Prompt asking the teacher to write the YAML itself."""
    if task.stream != SYNTHETIC_DIRECT:
        raise ValueError("direct prompts are only built for synthetic_direct tasks")
    parts = [
        f"[template {TEMPLATE_VERSION}]",
        f"You write Kubernetes manifests for schema version "
        f"{task.kubernetes_version}.",
        f"Target resource family: {task.family}.",
        f"Complexity: {task.complexity}.",
    ]
    if task.constraints:
        parts.append("Constraints:")
        parts.extend(f"- {constraint}" for constraint in task.constraints)
    parts.append(_ONLY_YAML)
    if strict:
        parts.append(_STRICT_EXTRA)
    return "\n".join(parts)


def build_reverse_prompt(task: GenerationTask) -> str:
    """Prompt asking the teacher for one instruction matching existing YAML."""
    if task.stream != REAL_REVERSE:
        raise ValueError("reverse prompts are only built for real_reverse tasks")
    return "\n".join([
        f"[template {TEMPLATE_VERSION}]",
        "Below is a Kubernetes YAML package. Write exactly one natural-language "
        "instruction that could have produced it. Reply with the instruction "
        "only; do not include any YAML.",
        "--- BEGIN YAML ---",
        task.source_yaml or "",
        "--- END YAML ---",
    ])


def build_context_fragment(task: GenerationTask, cm: ContextModel) -> str:
    """Deterministic context-model slice handed to the student beside x."""
    gvks = cm.gvks_for_family(task.family)
    lines = [f"kubernetes: {cm.kubernetes_version}",
             "allowed-kinds: " + ", ".join(str(gvk) for gvk in gvks)]
    kinds = {gvk.kind for gvk in gvks}
    chains = [f"{name}: " + " -> ".join(chain)
              for name, chain in sorted(cm.compositions.items())
              if kinds.intersection(chain)]
    if chains:
        lines.append("compositions: " + "; ".join(chains))
    for constraint in task.constraints:
        lines.append(f"constraint: {constraint}")
    return "\n".join(lines)


class RateLimiter:
    """Simple sliding-window limiter shared across worker threads."""

    def __init__(self, per_minute: int, clock: Callable[[], float] = time.monotonic,
                 sleeper: Callable[[float], None] = time.sleep):
        self.per_minute = max(1, per_minute)
        self._clock = clock
        self._sleeper = sleeper
        self._stamps: list[float] = []
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._stamps = [t for t in self._stamps if now - t < 60.0]
                if len(self._stamps) < self.per_minute:
                    self._stamps.append(now)
                    return
                wait = 60.0 - (now - self._stamps[0])
            self._sleeper(max(wait, 0.01))


def _now_iso() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        return datetime.fromtimestamp(int(epoch), tz=timezone.utc).isoformat()
    return datetime.now(tz=timezone.utc).isoformat()


class AuditLog:
    """Append-only JSONL log of every teacher request and reply."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def write(self, **fields) -> None:
        row = {"ts": _now_iso(), **fields}
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def http_transport(config: EndpointConfig) -> Callable[[str, GenerationTask], str]:
    """Default transport: POST to a chat-completions endpoint."""

    def call(prompt: str, task: GenerationTask) -> str:
        headers = {"Content-Type": "application/json"}
        key = config.api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            response = requests.post(
                f"{config.base_url.rstrip('/')}/chat/completions",
                json={"model": config.model,
                      "messages": [{"role": "user", "content": prompt}]},
                headers=headers, timeout=config.timeout_s)
        except requests.RequestException as exc:
            raise TransientTeacherError(str(exc)) from exc
        if response.status_code in (429, 500, 502, 503, 504):
            raise TransientTeacherError(f"HTTP {response.status_code}")
        if response.status_code != 200:
            raise GenerationError(f"HTTP {response.status_code}: {response.text[:200]}")
        body = response.json()
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GenerationError(f"malformed teacher reply: {exc}") from exc

    return call


def generate_candidate(task: GenerationTask,
                       config: EndpointConfig,
                       candidate_id: str,
                       cm: ContextModel,
                       transport: Callable[[str, GenerationTask], str] | None = None,
                       audit: AuditLog | None = None,
                       limiter: RateLimiter | None = None,
                       sleeper: Callable[[float], None] = time.sleep,
                       strict_prompt: bool = False) -> CandidateRecord:
    """Run one task against the teacher, with retries and stripping.

    Raises GenerationError when the task cannot yield a candidate after the
    configured retries; the task itself stays re-queueable.
    """
    if task.stream == SYNTHETIC_DIRECT:
        prompt = build_direct_prompt(task, strict=strict_prompt)
    else:
        prompt = build_reverse_prompt(task)
    call = transport if transport is not None else http_transport(config)

    attempts = 0
    started = time.monotonic()
    last_error = "no attempts made"
    while attempts <= config.max_retries:
        attempts += 1
        if limiter is not None:
            limiter.acquire()
        if audit is not None:
            audit.write(event="request", candidate_id=candidate_id,
                        attempt=attempts, model=config.model, prompt=prompt)
        try:
            reply = call(prompt, task)
        except TransientTeacherError as exc:
            last_error = str(exc)
            if audit is not None:
                audit.write(event="retry", candidate_id=candidate_id,
                            attempt=attempts, error=last_error)
            if attempts <= config.max_retries:
                sleeper(config.backoff_s * (2 ** (attempts - 1)))
            continue
        if len(reply.encode("utf-8")) > config.reply_cap_bytes:
            raise GenerationError(
                f"reply exceeds {config.reply_cap_bytes} byte cap")
        latency_ms = int((time.monotonic() - started) * 1000)
        if audit is not None:
            audit.write(event="reply", candidate_id=candidate_id,
                        attempt=attempts, latency_ms=latency_ms, reply=reply)
        return _materialize(task, candidate_id, reply, cm,
                            TeacherMeta(config.model, latency_ms, attempts))
    raise GenerationError(f"teacher unavailable after {attempts} attempts: "
                          f"{last_error}")


def _materialize(task: GenerationTask, candidate_id: str, reply: str,
                 cm: ContextModel, meta: TeacherMeta) -> CandidateRecord:
    if task.stream == SYNTHETIC_DIRECT:
        instruction = render_instruction(task)
        artifact = strip_llm_wrapping(reply)
        if not artifact:
            raise GenerationError("empty artifact after stripping")
    else:
        instruction = reply.strip()
        if not instruction:
            raise GenerationError("empty instruction reply")
        # Stream asymmetry: the artifact is the normalized source, never
        # teacher text.
        artifact = canonicalize(parse_package(task.source_yaml or ""))
    return CandidateRecord(
        id=candidate_id,
        instruction=instruction,
        context_fragment=build_context_fragment(task, cm),
        artifact_text=artifact,
        source=task.stream,
        task=task,
        teacher_meta=meta,
    )


def generate_batch(tasks: list[GenerationTask],
                   config: EndpointConfig,
                   cm: ContextModel,
                   transport: Callable[[str, GenerationTask], str] | None = None,
                   audit: AuditLog | None = None,
                   sleeper: Callable[[float], None] = time.sleep,
                   strict_prompt: bool = False,
                   ) -> tuple[list[CandidateRecord], list[tuple[GenerationTask, str]]]:
    """Run a task list under the worker pool; output order follows task order.

    Returns (candidates, failed task+reason pairs). Candidate ids are assigned
    from the task sequence, so identity never depends on completion order.
    """
    from concurrent.futures import ThreadPoolExecutor

    limiter = RateLimiter(config.rate_per_minute, sleeper=sleeper)
    ids = [f"cand-{index:05d}" for index in range(len(tasks))]

    def run_one(pair):
        index, task = pair
        return generate_candidate(task, config, ids[index], cm,
                                  transport=transport, audit=audit,
                                  limiter=limiter, sleeper=sleeper,
                                  strict_prompt=strict_prompt)

    candidates: list[CandidateRecord] = []
    failures: list[tuple[GenerationTask, str]] = []
    with ThreadPoolExecutor(max_workers=max(1, config.concurrency)) as pool:
        results = pool.map(lambda p: _capture(run_one, p), enumerate(tasks))
        for task, outcome in zip(tasks, results):
            if isinstance(outcome, CandidateRecord):
                candidates.append(outcome)
            else:
                failures.append((task, outcome))
    return candidates, failures


def _capture(fn, arg):
    try:
        return fn(arg)
    except GenerationError as exc:
        return str(exc)
