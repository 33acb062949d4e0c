"""Distribution-drift diagnostics between a corpus and a reference slice.

A feature vector holds four normalized distributions: GVKs over all
documents, resource families over records, unordered kind pairs within
multi-document packages, and complexity labels. Divergence is measured with
base-2 Jensen-Shannon divergence (range [0, 1]) and total variation
distance, plus rare-class coverage over the GVK distribution.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

from k8sdistill.corpus import Corpus
from k8sdistill.manifest import parse_package

__all__ = ["FeatureVector", "feature_vector", "jsd", "tvd",
           "rare_class_coverage", "drift_report"]

_TOLERANCE = 1e-9

DEFAULT_RARE_THRESHOLD = 0.02


def _validate(dist: dict, name: str) -> None:
    if not dist:
        return
    if any(p < 0 for p in dist.values()):
        raise ValueError(f"{name} has negative probabilities")
    total = math.fsum(dist.values())
    if abs(total - 1.0) > _TOLERANCE:
        raise ValueError(f"{name} is not normalized (sums to {total!r})")


def jsd(p: dict, q: dict) -> float:
    """Base-2 Jensen-Shannon divergence over the unioned support.

    0 iff p == q, exactly 1 for disjoint supports. Zero-probability terms
    contribute nothing (0 * log 0 = 0).
    """
    _validate(p, "p")
    _validate(q, "q")
    if not p and not q:
        return 0.0
    if bool(p) != bool(q):
        raise ValueError("cannot compare an empty distribution with a "
                         "non-empty one")
    terms = []
    for key in p.keys() | q.keys():
        pi = p.get(key, 0.0)
        qi = q.get(key, 0.0)
        m = pi + qi
        if pi > 0:
            terms.append(0.5 * pi * math.log2(2.0 * pi / m))
        if qi > 0:
            terms.append(0.5 * qi * math.log2(2.0 * qi / m))
    # fsum is exactly rounded, so the result is independent of term order
    # and jsd stays bit-for-bit symmetric.
    return min(max(math.fsum(terms), 0.0), 1.0)


def tvd(p: dict, q: dict) -> float:
    """Total variation distance: half the L1 distance over the union."""
    _validate(p, "p")
    _validate(q, "q")
    if not p and not q:
        return 0.0
    if bool(p) != bool(q):
        raise ValueError("cannot compare an empty distribution with a "
                         "non-empty one")
    return 0.5 * math.fsum(abs(p.get(key, 0.0) - q.get(key, 0.0))
                           for key in p.keys() | q.keys())


@dataclass(frozen=True)
class FeatureVector:
    gvk_dist: dict = field(default_factory=dict)
    family_dist: dict = field(default_factory=dict)
    cooccurrence_dist: dict = field(default_factory=dict)
    complexity_dist: dict = field(default_factory=dict)

    def __post_init__(self):
        _validate(self.gvk_dist, "gvk_dist")
        _validate(self.family_dist, "family_dist")
        _validate(self.cooccurrence_dist, "cooccurrence_dist")
        _validate(self.complexity_dist, "complexity_dist")

    def to_json(self) -> dict:
        return {"gvk": self.gvk_dist, "family": self.family_dist,
                "cooccurrence": self.cooccurrence_dist,
                "complexity": self.complexity_dist}

    @classmethod
    def from_json(cls, data: dict) -> "FeatureVector":
        return cls(gvk_dist=dict(data.get("gvk", {})),
                   family_dist=dict(data.get("family", {})),
                   cooccurrence_dist=dict(data.get("cooccurrence", {})),
                   complexity_dist=dict(data.get("complexity", {})))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2,
                                         sort_keys=True) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FeatureVector":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _normalize(counts: dict) -> dict:
    total = sum(counts.values())
    if total == 0:
        return {}
    return {key: value / total for key, value in sorted(counts.items())}


def feature_vector(corpus: Corpus) -> FeatureVector:
    """Count-normalized distributions over one corpus (empty corpus -> empty)."""
    gvk_counts: dict[str, int] = {}
    family_counts: dict[str, int] = {}
    pair_counts: dict[str, int] = {}
    complexity_counts: dict[str, int] = {}
    for record in corpus:
        family_counts[record.family] = family_counts.get(record.family, 0) + 1
        complexity_counts[record.complexity] = \
            complexity_counts.get(record.complexity, 0) + 1
        pkg = parse_package(record.yaml)
        kinds = []
        for doc in pkg:
            key = str(doc.gvk)
            gvk_counts[key] = gvk_counts.get(key, 0) + 1
            kinds.append(doc.gvk.kind)
        for a, b in combinations(sorted(set(kinds)), 2):
            pair = f"{a}+{b}"
            pair_counts[pair] = pair_counts.get(pair, 0) + 1
    return FeatureVector(
        gvk_dist=_normalize(gvk_counts),
        family_dist=_normalize(family_counts),
        cooccurrence_dist=_normalize(pair_counts),
        complexity_dist=_normalize(complexity_counts),
    )


def rare_class_coverage(corpus_vec: FeatureVector,
                        reference_vec: FeatureVector,
                        threshold: float = DEFAULT_RARE_THRESHOLD) -> float:
    """Fraction of rare reference GVK classes the corpus covers.

    Rare means 0 < reference probability < threshold. With no rare classes
    the coverage is vacuously 1.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    rare = [key for key, prob in reference_vec.gvk_dist.items()
            if 0 < prob < threshold]
    if not rare:
        return 1.0
    covered = sum(1 for key in rare if corpus_vec.gvk_dist.get(key, 0) > 0)
    return covered / len(rare)


def drift_report(corpus_vec: FeatureVector, reference_vec: FeatureVector,
                 threshold: float = DEFAULT_RARE_THRESHOLD) -> dict:
    """JSD and TVD for each distribution plus rare-class coverage."""
    pairs = {
        "gvk": (corpus_vec.gvk_dist, reference_vec.gvk_dist),
        "family": (corpus_vec.family_dist, reference_vec.family_dist),
        "cooccurrence": (corpus_vec.cooccurrence_dist,
                         reference_vec.cooccurrence_dist),
        "complexity": (corpus_vec.complexity_dist,
                       reference_vec.complexity_dist),
    }
    report: dict = {"jsd": {}, "tvd": {}}
    for name, (p, q) in pairs.items():
        if bool(p) != bool(q):
            # One side lacks the feature entirely: maximal divergence.
            report["jsd"][name] = 1.0
            report["tvd"][name] = 1.0
        else:
            report["jsd"][name] = jsd(p, q)
            report["tvd"][name] = tvd(p, q)
    report["rare_class_coverage"] = rare_class_coverage(
        corpus_vec, reference_vec, threshold)
    report["threshold"] = threshold
    return report
