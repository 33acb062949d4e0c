"""Minimal LoRA adapters over torch Linear layers.

Each targeted projection gets a frozen base weight plus a trainable low-rank
update: y = Wx + (alpha / r) * B A x, with A kaiming-initialized and B zeroed
so the adapter starts as the identity perturbation. Only adapter parameters
train; base weights stay frozen and byte-identical.
"""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import torch
from torch import nn

ADAPTER_WEIGHTS = "adapter.pt"
ADAPTER_CONFIG = "adapter-config.json"


class LoraLinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int, alpha: float):
        super().__init__()
        self.base = base
        self.rank = rank
        self.alpha = alpha
        self.scaling = alpha / rank
        self.lora_a = nn.Parameter(torch.zeros(rank, base.in_features))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.kaiming_uniform_(self.lora_a, a=math.sqrt(5))

    def forward(self, x):
        return self.base(x) + (x @ self.lora_a.T @ self.lora_b.T) * self.scaling


def inject_adapters(model: nn.Module, target_modules: tuple[str, ...],
                    rank: int, alpha: float) -> int:
    """Freeze the model and wrap every targeted Linear; returns the count."""
    for param in model.parameters():
        param.requires_grad = False
    replaced = 0
    for name, module in list(model.named_modules()):
        for child_name, child in list(module.named_children()):
            if child_name in target_modules and isinstance(child, nn.Linear):
                setattr(module, child_name, LoraLinear(child, rank, alpha))
                replaced += 1
    if replaced == 0:
        raise ValueError(f"no target modules {target_modules} found in model")
    return replaced


def adapter_parameters(model: nn.Module):
    return [p for n, p in model.named_parameters() if "lora_" in n]


def adapter_state_dict(model: nn.Module) -> dict:
    return {n: p.detach().clone() for n, p in model.named_parameters()
            if "lora_" in n}


def base_checksum(model: nn.Module) -> str:
    """SHA-256 over all non-adapter weights, in name order."""
    digest = hashlib.sha256()
    for name, param in sorted(model.named_parameters()):
        if "lora_" in name:
            continue
        digest.update(name.encode())
        digest.update(param.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def save_adapter(model: nn.Module, out_dir: str | Path, metadata: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.save(adapter_state_dict(model), out / ADAPTER_WEIGHTS)
    (out / ADAPTER_CONFIG).write_text(
        json.dumps(metadata, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")


def load_adapter(model: nn.Module, adapter_dir: str | Path) -> dict:
    """Inject adapters per the saved config and load their weights."""
    adapter_dir = Path(adapter_dir)
    metadata = json.loads((adapter_dir / ADAPTER_CONFIG).read_text())
    inject_adapters(model, tuple(metadata["target_modules"]),
                    metadata["rank"], metadata["alpha"])
    state = torch.load(adapter_dir / ADAPTER_WEIGHTS, weights_only=True)
    missing = model.load_state_dict(state, strict=False).missing_keys
    lora_missing = [k for k in missing if "lora_" in k]
    if lora_missing:
        raise ValueError(f"adapter weights incomplete: {lora_missing[:3]}")
    return metadata
