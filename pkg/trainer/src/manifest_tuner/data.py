"""Corpus JSONL reading and chat-template encoding with loss masking.

The corpus file contract matches the distillation pipeline's output: the
first line is a header record, each following line holds at least
{id, instruction, context, yaml}. The instruction and context fragment are
conditioning only; the loss covers the artifact tokens (plus end-of-turn).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from manifest_tuner.tokenizer import ASSISTANT_ID, EOS_ID, USER_ID, ByteTokenizer

IGNORE_INDEX = -100

STRICT_SUFFIX = ("Return only YAML. Explanations or Markdown outside YAML "
                 "are prohibited.")


class CorpusFormatError(Exception):
    def __init__(self, path, line_number: int, message: str):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


@dataclass(frozen=True)
class TrainRecord:
    id: str
    instruction: str
    context: str
    yaml: str


def read_records(path: str | Path) -> list[TrainRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(path, number, f"malformed JSON: {exc}")
            if data.get("record") == "header":
                continue
            for field in ("id", "instruction", "yaml"):
                if field not in data:
                    raise CorpusFormatError(path, number,
                                            f"record lacks {field!r} field")
            records.append(TrainRecord(
                id=data["id"], instruction=data["instruction"],
                context=data.get("context", ""), yaml=data["yaml"]))
    if not records:
        raise CorpusFormatError(path, 1, "no records in corpus file")
    return records


def user_turn(instruction: str, context: str, prompt_style: str) -> str:
    text = instruction if not context else f"{instruction}\n\n{context}"
    if prompt_style == "strict":
        text = f"{text}\n\n{STRICT_SUFFIX}"
    return text


def encode_prompt(tok, instruction: str, context: str,
                  prompt_style: str) -> list[int]:
    turn = user_turn(instruction, context, prompt_style)
    if isinstance(tok, ByteTokenizer):
        return [USER_ID] + tok.encode(turn) + [ASSISTANT_ID]
    # HF tokenizer: mark the scaffold in text form.
    return tok.encode(f"<|user|>\n{turn}\n<|assistant|>\n",
                      add_special_tokens=False)


def _eos_id(tok) -> int:
    return EOS_ID if isinstance(tok, ByteTokenizer) else tok.eos_token_id


def encode_example(tok, record: TrainRecord, prompt_style: str = "std",
                   ) -> tuple[list[int], list[int]]:
    """(input_ids, labels): conditioning positions carry IGNORE_INDEX."""
    prompt = encode_prompt(tok, record.instruction, record.context,
                           prompt_style)
    if isinstance(tok, ByteTokenizer):
        target = tok.encode(record.yaml) + [EOS_ID]
    else:
        target = tok.encode(record.yaml, add_special_tokens=False) \
            + [_eos_id(tok)]
    input_ids = prompt + target
    labels = [IGNORE_INDEX] * len(prompt) + list(target)
    return input_ids, labels
