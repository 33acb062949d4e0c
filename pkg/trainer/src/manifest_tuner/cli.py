"""CLI: train an adapter on a distilled corpus, then generate test outputs."""
from __future__ import annotations

import json
import sys

import click

from manifest_tuner import __version__
from manifest_tuner.data import CorpusFormatError
from manifest_tuner.training import TARGET_PROJECTIONS, TrainConfig, \
    train_adapter


@click.group()
@click.version_option(version=__version__)
def main():
    """Adapter fine-tuning bridge for distilled manifest corpora."""


@main.command()
@click.option("--corpus", required=True, type=click.Path(exists=True),
              help="Training corpus JSONL (train split).")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Adapter output directory.")
@click.option("--base-model", default=TrainConfig.base_model,
              show_default=True)
@click.option("--rank", default=TrainConfig.rank, show_default=True)
@click.option("--alpha", default=TrainConfig.alpha, show_default=True)
@click.option("--targets", default=",".join(TARGET_PROJECTIONS),
              show_default=True, help="Comma-separated projection names.")
@click.option("--micro-batch-size", default=TrainConfig.micro_batch_size,
              show_default=True)
@click.option("--grad-accum-steps", default=TrainConfig.grad_accum_steps,
              show_default=True)
@click.option("--epochs", default=TrainConfig.epochs, show_default=True)
@click.option("--learning-rate", default=TrainConfig.learning_rate,
              show_default=True)
@click.option("--seed", default=TrainConfig.seed, show_default=True)
@click.option("--prompt-style", default=TrainConfig.prompt_style,
              type=click.Choice(["std", "strict"]), show_default=True)
@click.option("--max-new-tokens", default=TrainConfig.max_new_tokens,
              show_default=True)
@click.option("--max-steps", default=None, type=int,
              help="Stop after this many optimizer updates.")
def train(corpus, out_dir, base_model, rank, alpha, targets, micro_batch_size,
          grad_accum_steps, epochs, learning_rate, seed, prompt_style,
          max_new_tokens, max_steps):
    """Fine-tune LoRA adapters on a train-split corpus file."""
    config = TrainConfig(
        base_model=base_model, rank=rank, alpha=alpha,
        target_modules=tuple(t.strip() for t in targets.split(",") if t.strip()),
        micro_batch_size=micro_batch_size, grad_accum_steps=grad_accum_steps,
        epochs=epochs, learning_rate=learning_rate, seed=seed,
        prompt_style=prompt_style, max_new_tokens=max_new_tokens)
    try:
        summary = train_adapter(corpus, out_dir, config, max_steps=max_steps)
    except (CorpusFormatError, RuntimeError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(json.dumps(summary, indent=2))


@main.command()
@click.option("--adapter", "adapter_dir", required=True,
              type=click.Path(exists=True))
@click.option("--test", "test_path", required=True,
              type=click.Path(exists=True), help="Frozen test corpus JSONL.")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Generations JSONL destination.")
@click.option("--prompt-style", default=None,
              type=click.Choice(["std", "strict"]))
@click.option("--max-new-tokens", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.option("--timeout-s", default=None, type=float,
              help="Per-example generation budget.")
def generate(adapter_dir, test_path, out_path, prompt_style, max_new_tokens,
             seed, timeout_s):
    """Generate one output per test example into a generations JSONL."""
    from manifest_tuner.generation import generate_test_outputs

    try:
        summary = generate_test_outputs(
            adapter_dir, test_path, out_path, prompt_style=prompt_style,
            max_new_tokens=max_new_tokens, seed=seed, timeout_s=timeout_s)
    except (CorpusFormatError, RuntimeError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
