"""Adapter fine-tuning: negative log-likelihood on artifact tokens only.

The instruction and context fragment condition the model; only the YAML
target (and its end-of-turn token) contributes gradient. Base weights are
frozen before the first step, and the whole run happens in fp32 so it works
on a plain CPU.
"""
from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn

from manifest_tuner import __version__
from manifest_tuner.data import IGNORE_INDEX, TrainRecord, encode_example, \
    read_records
from manifest_tuner.lora import adapter_parameters, base_checksum, \
    inject_adapters, save_adapter
from manifest_tuner.models import DEFAULT_BASE_MODEL, build_model_and_tokenizer

TARGET_PROJECTIONS = ("q_proj", "k_proj", "v_proj", "o_proj",
                      "gate_proj", "up_proj", "down_proj")


@dataclass(frozen=True)
class TrainConfig:
    base_model: str = DEFAULT_BASE_MODEL
    rank: int = 4
    alpha: float = 8.0
    target_modules: tuple[str, ...] = TARGET_PROJECTIONS
    optimizer: str = "adamw"
    micro_batch_size: int = 1
    grad_accum_steps: int = 4
    epochs: int = 1
    seed: int = 20240501
    learning_rate: float = 2e-4
    prompt_style: str = "std"
    max_new_tokens: int = 512

    def metadata(self) -> dict:
        return {
            "base_model": self.base_model,
            "rank": self.rank,
            "alpha": self.alpha,
            "target_modules": list(self.target_modules),
            "optimizer": self.optimizer,
            "micro_batch_size": self.micro_batch_size,
            "grad_accum_steps": self.grad_accum_steps,
            "epochs": self.epochs,
            "seed": self.seed,
            "learning_rate": self.learning_rate,
            "prompt_style": self.prompt_style,
            "max_new_tokens": self.max_new_tokens,
            "tool_version": __version__,
        }


def _make_optimizer(config: TrainConfig, params) -> torch.optim.Optimizer:
    if config.optimizer != "adamw":
        raise ValueError(f"unsupported optimizer {config.optimizer!r}")
    return torch.optim.AdamW(params, lr=config.learning_rate)


def example_loss(model: nn.Module, input_ids: list[int],
                 labels: list[int]) -> torch.Tensor:
    ids = torch.tensor([input_ids], dtype=torch.long)
    target = torch.tensor([labels], dtype=torch.long)
    return model(input_ids=ids, labels=target).loss


def per_position_losses(model: nn.Module, input_ids: list[int],
                        labels: list[int]) -> list[float]:
    """Unreduced next-token losses, aligned to label positions 1..n-1."""
    ids = torch.tensor([input_ids], dtype=torch.long)
    with torch.no_grad():
        logits = model(input_ids=ids).logits[0, :-1]
    targets = torch.tensor(labels[1:], dtype=torch.long)
    losses = nn.functional.cross_entropy(logits, targets,
                                         ignore_index=IGNORE_INDEX,
                                         reduction="none")
    return losses.tolist()


def train_adapter(corpus_path: str | Path, out_dir: str | Path,
                  config: TrainConfig = TrainConfig(),
                  max_steps: int | None = None) -> dict:
    """Fine-tune adapters over a corpus file; save the adapter and loss curve.

    A step is one optimizer update; gradients accumulate over
    grad_accum_steps micro-batches of micro_batch_size examples.
    """
    records = read_records(corpus_path)
    model, tokenizer = build_model_and_tokenizer(config.base_model,
                                                 config.seed)
    inject_adapters(model, config.target_modules, config.rank, config.alpha)
    checksum_before = base_checksum(model)
    optimizer = _make_optimizer(config, adapter_parameters(model))

    encoded = [encode_example(tokenizer, record, config.prompt_style)
               for record in records]
    order = list(range(len(encoded)))
    rng = random.Random(config.seed)
    torch.manual_seed(config.seed)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    curve_path = out / "loss-curve.jsonl"
    steps_done = 0
    losses = []
    model.train()
    # max_steps overrides the epoch budget: cycle passes until it is reached.
    epochs = itertools.count() if max_steps is not None \
        else range(max(1, config.epochs))
    with curve_path.open("w", encoding="utf-8") as curve:
        for epoch in epochs:
            rng.shuffle(order)
            cursor = 0
            while cursor < len(order):
                if max_steps is not None and steps_done >= max_steps:
                    break
                optimizer.zero_grad()
                accum_loss = 0.0
                micro_batches = 0
                for _ in range(config.grad_accum_steps):
                    batch = order[cursor:cursor + config.micro_batch_size]
                    if not batch:
                        break
                    cursor += len(batch)
                    for index in batch:
                        input_ids, labels = encoded[index]
                        try:
                            loss = example_loss(model, input_ids, labels)
                        except RuntimeError as exc:
                            if "out of memory" in str(exc).lower():
                                raise RuntimeError(
                                    "out of memory during training: reduce "
                                    "micro_batch_size/grad_accum_steps or "
                                    "use a smaller base model") from exc
                            raise
                        (loss / config.grad_accum_steps).backward()
                        accum_loss += float(loss.detach())
                        micro_batches += 1
                if micro_batches == 0:
                    break
                optimizer.step()
                steps_done += 1
                mean_loss = accum_loss / micro_batches
                losses.append(mean_loss)
                curve.write(json.dumps({"step": steps_done, "epoch": epoch,
                                        "loss": mean_loss}) + "\n")
            if max_steps is not None and steps_done >= max_steps:
                break

    checksum_after = base_checksum(model)
    metadata = config.metadata()
    metadata.update({
        "steps": steps_done,
        "records": len(records),
        "base_checksum": checksum_after,
    })
    save_adapter(model, out, metadata)
    return {
        "steps": steps_done,
        "first_loss": losses[0] if losses else None,
        "last_loss": losses[-1] if losses else None,
        "base_checksum_before": checksum_before,
        "base_checksum_after": checksum_after,
        "adapter_dir": str(out),
    }
