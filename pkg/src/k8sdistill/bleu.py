"""Auxiliary BLEU scorer for canonical YAML text.

BLEU-4 with add-one smoothing on the n>1 precisions and the standard brevity
penalty. Tokenization splits on whitespace and YAML punctuation; the intended
inputs are canonical texts, so scores are deterministic across formatting.
Scores are reported on a 0..100 scale. This is a reference-only text metric:
it is insensitive to schema or semantic errors by construction.
"""
from __future__ import annotations

import math
import re
from collections import Counter

__all__ = ["bleu_aux", "tokenize"]

_SPLIT = re.compile(r"[\s:\-{}\[\],]+")


def tokenize(text: str) -> list[str]:
    return [token for token in _SPLIT.split(text) if token]


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_aux(candidate: str, reference: str) -> float:
    """BLEU-4 of candidate against a single reference, in [0, 100]."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand and not ref:
        return 100.0  # two empty texts are identical
    if not cand or not ref:
        return 0.0

    log_sum = 0.0
    for n in range(1, 5):
        cand_counts = _ngrams(cand, n)
        matches = sum(min(count, _ngrams(ref, n)[gram])
                      for gram, count in cand_counts.items())
        total = sum(cand_counts.values())
        if n == 1:
            if matches == 0:
                return 0.0
            precision = matches / total
        else:
            precision = (matches + 1) / (total + 1)
        log_sum += 0.25 * math.log(precision)

    c, r = len(cand), len(ref)
    brevity = 1.0 if c > r else math.exp(1 - r / c)
    return 100.0 * brevity * math.exp(log_sum)
