"""Operator CLI: generate -> validate -> distill -> eval -> diag.

Exit codes: 0 success, 1 gated validation failure, 2 configuration or input
error, 3 test-set freeze violation.

Configuration comes from an optional TOML file plus environment overrides of
the form K8SDISTILL_<SECTION>_<KEY>; flags win over both. All outputs land
under the --out directory.
"""
from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from k8sdistill import __version__
from k8sdistill.circuit import run_circuit
from k8sdistill.context import FAMILIES, default_context_model
from k8sdistill.corpus import (
    CorpusReadError, SplitSpec, correction_plan, deduplicate, filter_corpus,
    freeze_marker, make_provenance, plan_digest, read_candidates, read_corpus,
    split, stratified_plan, write_candidates, write_corpus,
)
from k8sdistill.drift import DEFAULT_RARE_THRESHOLD, FeatureVector, \
    drift_report, feature_vector
from k8sdistill.metrics import EvalMode, analyze_failures, evaluate_outputs, \
    read_generations, render_report, render_series
from k8sdistill.mocks import MockTeacher
from k8sdistill.schema import SchemaStoreError
from k8sdistill.teacher import API_KEY_ENV, AuditLog, EndpointConfig, \
    GenerationTask, generate_batch

EXIT_OK = 0
EXIT_GATE = 1
EXIT_CONFIG = 2
EXIT_FREEZE = 3

DEFAULTS = {
    "schema": {"cache_path": "", "kubernetes_version": "1.30.0"},
    "teacher": {"base_url": "http://localhost:8080/v1",
                "model": "deepseek-v4-flash", "concurrency": 4,
                "rate_per_minute": 60, "max_retries": 3, "backoff_s": 2.0,
                "timeout_s": 120.0},
    "split": {"train": 1200, "validation": 100, "test": 200, "seed": 20240501},
    "eval": {"prompt_style": "std", "max_new_tokens": 512,
             "temperature": 0.0, "seed": 0},
    "mock": {"defect_rate": 0.0},
}


def load_config(path: str | None) -> dict:
    config = {section: dict(values) for section, values in DEFAULTS.items()}
    if path:
        try:
            with open(path, "rb") as fh:
                loaded = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise click.ClickException(f"cannot read config {path}: {exc}")
        for section, values in loaded.items():
            config.setdefault(section, {}).update(values)
    for section, values in config.items():
        for key in list(values):
            env = os.environ.get(f"K8SDISTILL_{section.upper()}_{key.upper()}")
            if env is not None:
                current = values[key]
                if isinstance(current, bool):
                    values[key] = env.lower() in ("1", "true", "yes")
                elif isinstance(current, int):
                    values[key] = int(env)
                elif isinstance(current, float):
                    values[key] = float(env)
                else:
                    values[key] = env
    return config


def _context_model(config: dict):
    cache = config["schema"]["cache_path"] or None
    if cache and not Path(cache).is_dir():
        raise SchemaStoreError(f"schema cache path does not exist: {cache}")
    return default_context_model(schema_cache=cache)


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
@click.version_option(version=__version__)
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="TOML configuration file.")
@click.pass_context
def main(ctx, config_path):
    """Corpus distillation and verification for Kubernetes manifests."""
    ctx.ensure_object(dict)
    try:
        ctx.obj["config"] = load_config(config_path)
    except click.ClickException as exc:
        _fail(EXIT_CONFIG, exc.message)


def _parse_targets(text: str) -> dict[str, int]:
    targets = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        family, _, count = part.partition("=")
        if family not in FAMILIES:
            raise ValueError(f"unknown family {family!r}; known: "
                             f"{', '.join(sorted(FAMILIES))}")
        targets[family] = int(count)
    if not targets:
        raise ValueError("no targets given")
    return targets


@main.command()
@click.option("--targets", default=None,
              help="Per-family counts, e.g. 'Ingress=10,HPA=5'.")
@click.option("--plan", "plan_path", type=click.Path(exists=True), default=None,
              help="JSONL task plan (one task per line).")
@click.option("--from-failures", "failures_path", type=click.Path(exists=True),
              default=None, help="Failure analysis JSON to build a correction "
                                 "plan from (use with --count).")
@click.option("--count", default=200, show_default=True,
              help="Task count for a correction plan.")
@click.option("--mock", is_flag=True, help="Use the offline mock teacher.")
@click.option("--strict-prompt", is_flag=True,
              help="Use the strict prompt template.")
@click.option("--out", "out_dir", type=click.Path(), default="out",
              show_default=True)
@click.pass_context
def generate(ctx, targets, plan_path, failures_path, count, mock,
             strict_prompt, out_dir):
    """Stage 1: assemble candidate pairs via the teacher endpoint."""
    config = ctx.obj["config"]
    version = config["schema"]["kubernetes_version"]
    try:
        cm = _context_model(config)
        if plan_path:
            tasks = []
            with open(plan_path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        data = json.loads(line)
                        if data.get("record") == "header":
                            continue
                        tasks.append(GenerationTask.from_json(data))
        elif failures_path:
            breakdown = json.loads(Path(failures_path).read_text())
            tasks = correction_plan(breakdown, count, version)
        elif targets:
            tasks = stratified_plan(_parse_targets(targets),
                                    kubernetes_version=version)
        else:
            raise ValueError("one of --targets, --plan or --from-failures "
                             "is required")
    except (ValueError, json.JSONDecodeError, SchemaStoreError, KeyError) as exc:
        _fail(EXIT_CONFIG, str(exc))

    if not mock and not os.environ.get(API_KEY_ENV):
        _fail(EXIT_CONFIG, f"{API_KEY_ENV} is not set (or pass --mock)")

    endpoint = EndpointConfig(
        base_url=config["teacher"]["base_url"],
        model="mock-teacher" if mock else config["teacher"]["model"],
        concurrency=int(config["teacher"]["concurrency"]),
        # The offline mock needs no throttling.
        rate_per_minute=10 ** 9 if mock
        else int(config["teacher"]["rate_per_minute"]),
        max_retries=int(config["teacher"]["max_retries"]),
        backoff_s=float(config["teacher"]["backoff_s"]),
        timeout_s=float(config["teacher"]["timeout_s"]),
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    audit = AuditLog(out / "audit.jsonl")
    transport = MockTeacher(float(config["mock"]["defect_rate"])) if mock else None
    candidates, failures = generate_batch(
        tasks, endpoint, cm, transport=transport, audit=audit,
        strict_prompt=strict_prompt)
    provenance = make_provenance(plan_digest(tasks))
    write_candidates(candidates, out / "candidates.jsonl", provenance)
    click.echo(f"generated {len(candidates)} candidates "
               f"({len(failures)} failed tasks) -> {out / 'candidates.jsonl'}")
    if candidates:
        sys.exit(EXIT_OK)
    _fail(EXIT_GATE, "all generation tasks failed")


def _iter_validate_inputs(paths):
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            yield from sorted(p for p in path.rglob("*")
                              if p.suffix in (".yaml", ".yml"))
        else:
            yield path


@main.command()
@click.argument("inputs", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--gate", is_flag=True,
              help="Exit 1 unless every input passes the circuit.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write reports JSONL here.")
@click.pass_context
def validate(ctx, inputs, gate, out_path):
    """Stage 2: run the L1-L4 circuit over YAML files or candidate JSONL."""
    config = ctx.obj["config"]
    try:
        cm = _context_model(config)
    except SchemaStoreError as exc:
        _fail(EXIT_CONFIG, str(exc))
    reports = []
    counts = {"L1": 0, "L2": 0, "L3": 0, "L4": 0}
    total = passed = 0
    try:
        for path in _iter_validate_inputs(inputs):
            if path.suffix == ".jsonl":
                candidates, _ = read_candidates(path)
                items = [(f"{path.name}:{c.id}", c.artifact_text)
                         for c in candidates]
            else:
                items = [(str(path), path.read_text(encoding="utf-8"))]
            for name, text in items:
                report = run_circuit(text, cm)
                total += 1
                passed += report.overall
                lowest = report.lowest_failing_level()
                if lowest:
                    counts[lowest] += 1
                reports.append({"input": name, **report.to_json()})
    except (OSError, CorpusReadError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            for row in reports:
                fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True)
                         + "\n")
    click.echo(f"validated {total}: {passed} pass, "
               + ", ".join(f"{level} {counts[level]}" for level in counts))
    if gate and passed < total:
        sys.exit(EXIT_GATE)
    sys.exit(EXIT_OK)


@main.command()
@click.argument("candidates_path", type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), default="out",
              show_default=True)
@click.option("--train", "train_size", type=int, default=None)
@click.option("--validation", "validation_size", type=int, default=None)
@click.option("--test", "test_size", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
def distill(ctx, candidates_path, out_dir, train_size, validation_size,
            test_size, seed):
    """Stages 2-3 prep: filter, canonicalize, dedup, and split candidates."""
    config = ctx.obj["config"]
    split_cfg = config["split"]
    spec_args = dict(
        train_size=train_size if train_size is not None
        else int(split_cfg["train"]),
        validation_size=validation_size if validation_size is not None
        else int(split_cfg["validation"]),
        test_size=test_size if test_size is not None
        else int(split_cfg["test"]),
        seed=seed if seed is not None else int(split_cfg["seed"]),
    )
    try:
        cm = _context_model(config)
        candidates, provenance = read_candidates(candidates_path)
        spec = SplitSpec(**spec_args)
    except (SchemaStoreError, CorpusReadError, ValueError) as exc:
        _fail(EXIT_CONFIG, str(exc))

    admitted, rejected = filter_corpus(candidates, cm, provenance)
    deduped = deduplicate(admitted)
    try:
        parts = split(deduped, spec)
    except ValueError as exc:
        _fail(EXIT_CONFIG, str(exc))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("train", "validation", "test", "pool"):
        write_corpus(parts[name], out / f"{name}.jsonl")
    marker = freeze_marker(parts["test"])
    (out / "test.freeze").write_text(marker + "\n", encoding="utf-8")
    stats = {
        "candidates": len(candidates),
        "admitted": len(admitted),
        "rejected": len(rejected),
        "admission_rate": len(admitted) / len(candidates) if candidates else 0.0,
        "deduplicated": len(deduped),
        "dedup_rate": 1 - len(deduped) / len(admitted) if len(admitted) else 0.0,
        "sizes": {name: len(parts[name])
                  for name in ("train", "validation", "test", "pool")},
        "test_freeze": marker,
        "seed": spec.seed,
    }
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True)
                                    + "\n", encoding="utf-8")
    click.echo(f"admitted {stats['admitted']}/{stats['candidates']}, "
               f"dedup -> {stats['deduplicated']}, split "
               f"{stats['sizes']['train']}/{stats['sizes']['validation']}/"
               f"{stats['sizes']['test']} (+{stats['sizes']['pool']} pool)")
    sys.exit(EXIT_OK)


@main.command(name="eval")
@click.option("--test", "test_path", type=click.Path(exists=True),
              required=True, help="Frozen test corpus JSONL.")
@click.option("--generations", "generations_path", type=click.Path(exists=True),
              required=True, help="Generations JSONL ({id, output, ...}).")
@click.option("--freeze", "freeze_path", type=click.Path(), default=None,
              help="Freeze marker file (default: test.freeze next to --test).")
@click.option("--label", default="run", show_default=True)
@click.option("--prompt-style", default=None,
              type=click.Choice(["std", "strict"]))
@click.option("--max-new-tokens", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), default="out",
              show_default=True)
@click.pass_context
def eval_cmd(ctx, test_path, generations_path, freeze_path, label,
             prompt_style, max_new_tokens, out_dir):
    """Score generations against the frozen test split."""
    config = ctx.obj["config"]
    try:
        cm = _context_model(config)
        test_corpus = read_corpus(test_path)
        generations = read_generations(generations_path)
    except (SchemaStoreError, CorpusReadError, ValueError,
            json.JSONDecodeError) as exc:
        _fail(EXIT_CONFIG, str(exc))

    marker_path = Path(freeze_path) if freeze_path \
        else Path(test_path).parent / "test.freeze"
    if not marker_path.is_file():
        _fail(EXIT_CONFIG, f"freeze marker not found: {marker_path}")
    expected = marker_path.read_text(encoding="utf-8").strip()
    actual = freeze_marker(test_corpus)
    if actual != expected:
        _fail(EXIT_FREEZE, "test corpus does not match its freeze marker "
                           f"({actual[:12]} != {expected[:12]}); refusing to "
                           "evaluate a mutated test set")

    mode = EvalMode(
        prompt_style=prompt_style or config["eval"]["prompt_style"],
        max_new_tokens=max_new_tokens or int(config["eval"]["max_new_tokens"]),
        temperature=float(config["eval"]["temperature"]),
        seed=int(config["eval"]["seed"]),
    )
    run = evaluate_outputs(test_corpus, generations, mode, cm, label=label)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{label}.run.json").write_text(
        json.dumps(run.to_json(), ensure_ascii=False, sort_keys=True) + "\n",
        encoding="utf-8")
    runs = [run]
    history = out / "runs.jsonl"
    existing = []
    if history.is_file():
        with history.open(encoding="utf-8") as fh:
            from k8sdistill.metrics import EvalRun
            existing = [EvalRun.from_json(json.loads(line))
                        for line in fh if line.strip()]
    with history.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(run.to_json(), ensure_ascii=False, sort_keys=True)
                 + "\n")
    runs = existing + runs
    (out / "report.md").write_text(render_report(runs), encoding="utf-8")
    (out / "series.csv").write_text(render_series(runs), encoding="utf-8")
    (out / f"{label}.failures.json").write_text(
        json.dumps(analyze_failures(run), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    click.echo(render_report(runs))
    sys.exit(EXIT_OK)


@main.command()
@click.argument("corpus_path", type=click.Path(exists=True))
@click.option("--reference", "reference_path", type=click.Path(exists=True),
              default=None, help="Reference feature-vector JSON.")
@click.option("--threshold", type=float, default=DEFAULT_RARE_THRESHOLD,
              show_default=True, help="Rare-class probability threshold.")
@click.option("--save-vector", "vector_out", type=click.Path(), default=None,
              help="Write the corpus feature vector here.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the drift report JSON here.")
@click.pass_context
def diag(ctx, corpus_path, reference_path, threshold, vector_out, out_path):
    """Representativeness diagnostics against a reference slice."""
    try:
        corpus = read_corpus(corpus_path)
        vec = feature_vector(corpus)
    except CorpusReadError as exc:
        _fail(EXIT_CONFIG, str(exc))
    if vector_out:
        vec.save(vector_out)
        click.echo(f"feature vector -> {vector_out}")
    if reference_path is None:
        if not vector_out:
            _fail(EXIT_CONFIG, "nothing to do: pass --reference and/or "
                               "--save-vector")
        sys.exit(EXIT_OK)
    try:
        reference = FeatureVector.load(reference_path)
        report = drift_report(vec, reference, threshold)
    except (ValueError, json.JSONDecodeError, KeyError) as exc:
        _fail(EXIT_CONFIG, f"malformed reference vector: {exc}")
    text = json.dumps(report, indent=2, sort_keys=True)
    if out_path:
        Path(out_path).write_text(text + "\n", encoding="utf-8")
    click.echo(text)
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
