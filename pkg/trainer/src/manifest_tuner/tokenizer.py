"""Byte-level tokenizer for the self-contained toy models.

Ids 0..255 are raw UTF-8 bytes; the specials mark the chat scaffold. Real
checkpoints bring their own tokenizer; this one exists so training and
generation run offline on randomly initialized models.
"""
from __future__ import annotations

PAD_ID = 256
USER_ID = 257
ASSISTANT_ID = 258
EOS_ID = 259

VOCAB_SIZE = 264  # 256 bytes + 4 specials, padded to a multiple of 8


class ByteTokenizer:
    pad_id = PAD_ID
    user_id = USER_ID
    assistant_id = ASSISTANT_ID
    eos_id = EOS_ID
    vocab_size = VOCAB_SIZE

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, ids: list[int]) -> str:
        return bytes(i for i in ids if i < 256).decode("utf-8",
                                                       errors="replace")
