"""Model resolution: real checkpoints by id, or self-contained toy models.

Identifiers of the form "toy:<width>" build a randomly initialized
Qwen2-architecture model sized for CPU smoke runs, paired with the built-in
byte tokenizer. Anything else resolves through transformers from_pretrained
(requires the checkpoint to be available locally or downloadable).
"""
from __future__ import annotations

import torch

from manifest_tuner.tokenizer import EOS_ID, PAD_ID, VOCAB_SIZE, ByteTokenizer

DEFAULT_BASE_MODEL = "Qwen/Qwen2.5-Coder-1.5B-Instruct"

_TOY_SIZES = {"small": (64, 128, 2, 4, 2), "medium": (128, 256, 4, 4, 2)}


def is_toy(model_id: str) -> bool:
    return model_id.startswith("toy:")


def build_model_and_tokenizer(model_id: str, seed: int):
    if is_toy(model_id):
        from transformers import Qwen2Config, Qwen2ForCausalLM

        size = model_id.split(":", 1)[1] or "small"
        if size not in _TOY_SIZES:
            raise ValueError(f"unknown toy size {size!r}; "
                             f"choose from {sorted(_TOY_SIZES)}")
        hidden, intermediate, layers, heads, kv_heads = _TOY_SIZES[size]
        config = Qwen2Config(
            vocab_size=VOCAB_SIZE,
            hidden_size=hidden,
            intermediate_size=intermediate,
            num_hidden_layers=layers,
            num_attention_heads=heads,
            num_key_value_heads=kv_heads,
            max_position_embeddings=4096,
            tie_word_embeddings=True,
            pad_token_id=PAD_ID,
            eos_token_id=EOS_ID,
        )
        torch.manual_seed(seed)
        model = Qwen2ForCausalLM(config)
        model = model.to(torch.float32)
        return model, ByteTokenizer()

    from transformers import AutoModelForCausalLM, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(model_id)
        model = AutoModelForCausalLM.from_pretrained(model_id,
                                                     torch_dtype=torch.float32)
    except OSError as exc:
        raise RuntimeError(
            f"cannot load {model_id!r}: checkpoint unavailable in this "
            "environment (use a local path, or a toy:* id for offline "
            "smoke runs)") from exc
    return model, tokenizer
