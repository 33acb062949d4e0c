"""Trainer-bridge smoke: loss masking, adapter-only training, generation."""
import json
import time
from pathlib import Path

import pytest
import torch

from manifest_tuner.data import (
    IGNORE_INDEX, CorpusFormatError, encode_example, read_records,
)
from manifest_tuner.lora import base_checksum, inject_adapters, load_adapter
from manifest_tuner.models import build_model_and_tokenizer
from manifest_tuner.tokenizer import ASSISTANT_ID, EOS_ID, USER_ID, ByteTokenizer
from manifest_tuner.training import TARGET_PROJECTIONS, TrainConfig, \
    example_loss, per_position_losses, train_adapter

TOY_MODEL = "toy:small"

TOY_YAMLS = [
    "apiVersion: v1\nkind: ConfigMap\nmetadata:\n  name: cfg-{i}\ndata:\n  K: v{i}\n",
    "apiVersion: v1\nkind: Secret\nmetadata:\n  name: sec-{i}\ntype: Opaque\n",
]


def write_toy_corpus(path: Path, count: int = 8) -> Path:
    rows = [{"record": "header", "plan_digest": "toy", "created": "1970",
             "tool_version": "test"}]
    for i in range(count):
        template = TOY_YAMLS[i % len(TOY_YAMLS)]
        rows.append({
            "id": f"toy-{i:04d}",
            "instruction": f"Create manifest number {i}.",
            "context": "kubernetes: 1.30.0",
            "yaml": template.format(i=i),
            "source": "synthetic_direct",
            "family": "ConfigMap/Secret",
            "complexity": "simple",
        })
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


@pytest.fixture()
def toy_corpus(tmp_path):
    return write_toy_corpus(tmp_path / "train.jsonl")


def toy_config(**overrides):
    defaults = dict(base_model=TOY_MODEL, grad_accum_steps=1, epochs=100,
                    seed=7, learning_rate=1e-3)
    defaults.update(overrides)
    return TrainConfig(**defaults)


class TestData:
    def test_read_records_skips_header(self, toy_corpus):
        records = read_records(toy_corpus)
        assert len(records) == 8
        assert records[0].id == "toy-0000"

    def test_missing_yaml_field_reports_line(self, tmp_path):
        path = tmp_path / "broken.jsonl"
        path.write_text('{"record": "header"}\n'
                        '{"id": "a", "instruction": "x", "context": ""}\n')
        with pytest.raises(CorpusFormatError) as exc:
            read_records(path)
        assert exc.value.line_number == 2
        assert "yaml" in str(exc.value)

    def test_encoding_layout(self):
        tok = ByteTokenizer()
        from manifest_tuner.data import TrainRecord
        record = TrainRecord(id="t", instruction="Do it.", context="ctx",
                             yaml="a: 1\n")
        input_ids, labels = encode_example(tok, record)
        assert input_ids[0] == USER_ID
        assert ASSISTANT_ID in input_ids
        assert input_ids[-1] == EOS_ID
        boundary = input_ids.index(ASSISTANT_ID) + 1
        assert all(l == IGNORE_INDEX for l in labels[:boundary])
        assert labels[boundary:] == input_ids[boundary:]

    def test_strict_style_appends_prohibition(self):
        tok = ByteTokenizer()
        from manifest_tuner.data import TrainRecord
        record = TrainRecord(id="t", instruction="Do it.", context="",
                             yaml="a: 1\n")
        std_ids, _ = encode_example(tok, record, "std")
        strict_ids, _ = encode_example(tok, record, "strict")
        assert len(strict_ids) > len(std_ids)
        assert "prohibited" in tok.decode(strict_ids)


class TestLossMasking:
    def test_conditioning_positions_carry_no_loss(self):
        model, tok = build_model_and_tokenizer(TOY_MODEL, seed=3)
        from manifest_tuner.data import TrainRecord
        record = TrainRecord(id="t", instruction="Write the config map.",
                             context="kubernetes: 1.30.0",
                             yaml="apiVersion: v1\nkind: ConfigMap\n")
        input_ids, labels = encode_example(tok, record)
        losses = per_position_losses(model, input_ids, labels)
        masked = [loss for loss, label in zip(losses, labels[1:])
                  if label == IGNORE_INDEX]
        active = [loss for loss, label in zip(losses, labels[1:])
                  if label != IGNORE_INDEX]
        assert sum(masked) == 0.0  # zeroing artifact tokens zeroes the total
        assert sum(active) > 0.0
        total = example_loss(model, input_ids, labels).detach()
        assert float(total) == pytest.approx(sum(active) / len(active),
                                             rel=1e-5)


class TestAdapterTraining:
    def test_smoke_30_steps_decreases_same_batch_loss(self, toy_corpus,
                                                      tmp_path):
        started = time.perf_counter()
        config = toy_config()
        model, tok = build_model_and_tokenizer(TOY_MODEL, seed=config.seed)
        records = read_records(toy_corpus)
        batch = [encode_example(tok, r) for r in records]

        # Loss on the fixed batch with fresh (identity-at-init) adapters.
        probe = build_model_and_tokenizer(TOY_MODEL, seed=config.seed)[0]
        inject_adapters(probe, config.target_modules, config.rank,
                        config.alpha)
        with torch.no_grad():
            before = sum(float(example_loss(probe, i, l))
                         for i, l in batch) / len(batch)

        summary = train_adapter(toy_corpus, tmp_path / "adapter",
                                config, max_steps=30)
        assert summary["steps"] == 30

        trained = build_model_and_tokenizer(TOY_MODEL, seed=config.seed)[0]
        load_adapter(trained, tmp_path / "adapter")
        with torch.no_grad():
            after = sum(float(example_loss(trained, i, l))
                        for i, l in batch) / len(batch)
        assert after < before  # strict decrease on the same batch
        assert time.perf_counter() - started < 600  # CPU budget
        print(f"\nSECONDARY ACCEPTANCE PASS: 30-step smoke "
              f"(loss {before:.3f} -> {after:.3f}, "
              f"{time.perf_counter() - started:.0f}s < 600s)")

    def test_adapter_metadata_records_rank_and_alpha(self, toy_corpus,
                                                     tmp_path):
        train_adapter(toy_corpus, tmp_path / "adapter", toy_config(),
                      max_steps=2)
        metadata = json.loads(
            (tmp_path / "adapter" / "adapter-config.json").read_text())
        assert metadata["rank"] == 4
        assert metadata["alpha"] == 8.0
        assert metadata["target_modules"] == list(TARGET_PROJECTIONS)
        assert metadata["optimizer"] == "adamw"
        assert metadata["micro_batch_size"] == 1

    def test_base_weights_unchanged(self, toy_corpus, tmp_path):
        config = toy_config()
        reference = build_model_and_tokenizer(TOY_MODEL, seed=config.seed)[0]
        inject_adapters(reference, config.target_modules, config.rank,
                        config.alpha)
        untouched = base_checksum(reference)
        summary = train_adapter(toy_corpus, tmp_path / "adapter", config,
                                max_steps=10)
        assert summary["base_checksum_before"] == untouched
        assert summary["base_checksum_after"] == untouched

    def test_loss_curve_written(self, toy_corpus, tmp_path):
        train_adapter(toy_corpus, tmp_path / "adapter", toy_config(),
                      max_steps=5)
        lines = (tmp_path / "adapter" / "loss-curve.jsonl").read_text() \
            .splitlines()
        assert len(lines) == 5
        row = json.loads(lines[0])
        assert row["step"] == 1 and row["loss"] > 0

    def test_only_adapters_train(self):
        model, _ = build_model_and_tokenizer(TOY_MODEL, seed=1)
        count = inject_adapters(model, TARGET_PROJECTIONS, 4, 8.0)
        assert count == 2 * len(TARGET_PROJECTIONS)  # two layers in toy:small
        trainable = {n for n, p in model.named_parameters() if p.requires_grad}
        assert trainable
        assert all("lora_" in name for name in trainable)


class TestGeneration:
    def test_contract_and_mode_metadata(self, toy_corpus, tmp_path):
        from manifest_tuner.generation import generate_test_outputs
        train_adapter(toy_corpus, tmp_path / "adapter",
                      toy_config(prompt_style="strict", max_new_tokens=768),
                      max_steps=2)
        summary = generate_test_outputs(
            tmp_path / "adapter", toy_corpus, tmp_path / "gens.jsonl",
            max_new_tokens=24)
        assert summary["generations"] == 8
        assert summary["mode"]["prompt_style"] == "strict"
        rows = [json.loads(line) for line in
                (tmp_path / "gens.jsonl").read_text().splitlines()]
        assert {row["id"] for row in rows} == {f"toy-{i:04d}"
                                               for i in range(8)}
        for row in rows:
            assert set(row) == {"id", "output", "tokens", "elapsed_ms",
                                "mode"}
            assert row["tokens"] <= 24

    def test_mode_token_budgets(self, toy_corpus, tmp_path):
        from manifest_tuner.generation import generate_test_outputs
        train_adapter(toy_corpus, tmp_path / "a-std",
                      toy_config(prompt_style="std", max_new_tokens=512),
                      max_steps=1)
        summary = generate_test_outputs(tmp_path / "a-std", toy_corpus,
                                        tmp_path / "g1.jsonl",
                                        max_new_tokens=8)
        assert summary["mode"]["max_new_tokens"] == 8
        metadata = json.loads(
            (tmp_path / "a-std" / "adapter-config.json").read_text())
        assert metadata["max_new_tokens"] == 512
        train_adapter(toy_corpus, tmp_path / "a-strict",
                      toy_config(prompt_style="strict", max_new_tokens=768),
                      max_steps=1)
        metadata = json.loads(
            (tmp_path / "a-strict" / "adapter-config.json").read_text())
        assert metadata["max_new_tokens"] == 768

    def test_deterministic_outputs(self, toy_corpus, tmp_path):
        from manifest_tuner.generation import generate_test_outputs
        train_adapter(toy_corpus, tmp_path / "adapter", toy_config(),
                      max_steps=2)
        for name in ("g1.jsonl", "g2.jsonl"):
            generate_test_outputs(tmp_path / "adapter", toy_corpus,
                                  tmp_path / name, max_new_tokens=16, seed=5)
        first = [json.loads(l)["output"] for l in
                 (tmp_path / "g1.jsonl").read_text().splitlines()]
        second = [json.loads(l)["output"] for l in
                  (tmp_path / "g2.jsonl").read_text().splitlines()]
        assert first == second

    def test_timeout_emits_empty_output(self, toy_corpus, tmp_path):
        from manifest_tuner.generation import generate_test_outputs
        train_adapter(toy_corpus, tmp_path / "adapter", toy_config(),
                      max_steps=1)
        summary = generate_test_outputs(tmp_path / "adapter", toy_corpus,
                                        tmp_path / "gens.jsonl",
                                        max_new_tokens=8, timeout_s=0.0)
        assert summary["timeouts"] == 8
        rows = [json.loads(line) for line in
                (tmp_path / "gens.jsonl").read_text().splitlines()]
        assert all(row["output"] == "" for row in rows)
