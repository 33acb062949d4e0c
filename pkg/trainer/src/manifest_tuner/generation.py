"""Greedy generation over a test corpus, emitting the evaluation contract.

Output rows: {id, output, tokens, elapsed_ms, mode}, one JSON object per
line, directly consumable by the evaluation harness. Decoding is greedy with
a fixed seed, so outputs are identical across runs. Examples that exceed the
per-example time budget are logged and emitted with an empty output (they
become missing-output syntax failures downstream).
"""
from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import torch

from manifest_tuner.data import encode_prompt, read_records
from manifest_tuner.lora import load_adapter
from manifest_tuner.models import build_model_and_tokenizer
from manifest_tuner.tokenizer import ByteTokenizer

logger = logging.getLogger(__name__)


def generate_test_outputs(adapter_dir: str | Path,
                          test_corpus_path: str | Path,
                          out_path: str | Path,
                          prompt_style: str | None = None,
                          max_new_tokens: int | None = None,
                          seed: int | None = None,
                          timeout_s: float | None = None) -> dict:
    """Generate one output per test record; returns run metadata."""
    adapter_dir = Path(adapter_dir)
    metadata = json.loads((adapter_dir / "adapter-config.json").read_text())
    style = prompt_style or metadata.get("prompt_style", "std")
    budget = max_new_tokens or metadata.get("max_new_tokens", 512)
    run_seed = seed if seed is not None else metadata.get("seed", 0)

    model, tokenizer = build_model_and_tokenizer(metadata["base_model"],
                                                 metadata["seed"])
    load_adapter(model, adapter_dir)
    model.eval()
    torch.manual_seed(run_seed)

    records = read_records(test_corpus_path)
    mode = {"prompt_style": style, "max_new_tokens": budget, "seed": run_seed}
    timeouts = 0
    rows = []
    for record in records:
        prompt_ids = encode_prompt(tokenizer, record.instruction,
                                   record.context, style)
        ids = torch.tensor([prompt_ids], dtype=torch.long)
        started = time.perf_counter()
        with torch.no_grad():
            generated = model.generate(
                ids,
                attention_mask=torch.ones_like(ids),
                max_new_tokens=budget,
                do_sample=False,
                pad_token_id=_pad_id(tokenizer),
                eos_token_id=_eos_id(tokenizer),
            )
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        new_ids = generated[0, ids.shape[1]:].tolist()
        if _eos_id(tokenizer) in new_ids:
            new_ids = new_ids[:new_ids.index(_eos_id(tokenizer))]
        output = tokenizer.decode(new_ids)
        if timeout_s is not None and elapsed_ms > timeout_s * 1000.0:
            logger.warning("generation for %s exceeded %.1fs; emitting "
                           "empty output", record.id, timeout_s)
            output = ""
            timeouts += 1
        rows.append({"id": record.id, "output": output,
                     "tokens": len(new_ids), "elapsed_ms": elapsed_ms,
                     "mode": mode})
    out_path = Path(out_path)
    with out_path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return {"generations": len(rows), "timeouts": timeouts, "mode": mode,
            "out": str(out_path)}


def _pad_id(tokenizer) -> int:
    if isinstance(tokenizer, ByteTokenizer):
        return tokenizer.pad_id
    return tokenizer.pad_token_id or tokenizer.eos_token_id


def _eos_id(tokenizer) -> int:
    if isinstance(tokenizer, ByteTokenizer):
        return tokenizer.eos_id
    return tokenizer.eos_token_id
