"""Semantic cross-resource rules (the deliberately limited L3 set).

R1  Service selectors must select something the package actually deploys:
    spec.selector must be a subset of at least one same-namespace workload's
    pod-template labels. Skipped when the package has no workload, or for
    selector-less Services.
R2  Every HorizontalPodAutoscaler's scaleTargetRef must resolve to a document
    in the same package (kind + name + namespace, and apiVersion when given).

Rules whose preconditions are absent are skipped, never failed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from k8sdistill.manifest import ManifestPackage
from k8sdistill.pods import WORKLOAD_KINDS, effective_namespace, pod_template_labels

__all__ = ["Rule", "RULES", "RuleViolation", "apply_rules"]


@dataclass(frozen=True)
class RuleViolation:
    rule_id: str
    path: str
    message: str


@dataclass(frozen=True)
class Rule:
    rule_id: str
    description: str
    check: Callable[[ManifestPackage], list[RuleViolation]]


def _check_service_selectors(pkg: ManifestPackage) -> list[RuleViolation]:
    workloads = [doc for doc in pkg if doc.gvk.kind in WORKLOAD_KINDS]
    if not workloads:
        return []
    violations = []
    for index, doc in enumerate(pkg):
        if doc.gvk.kind != "Service" or doc.gvk.group:
            continue
        spec = doc.tree.get("spec")
        selector = spec.get("selector") if isinstance(spec, dict) else None
        if not isinstance(selector, dict) or not selector:
            continue  # selector-less Service (manual endpoints, ExternalName)
        namespace = effective_namespace(doc.tree)
        matched = False
        for workload in workloads:
            if effective_namespace(workload.tree) != namespace:
                continue
            labels = pod_template_labels(workload.tree)
            if labels and all(labels.get(k) == v for k, v in selector.items()):
                matched = True
                break
        if not matched:
            violations.append(RuleViolation(
                "R1", f"doc[{index}].spec.selector",
                f"Service {doc.name!r} selector {selector} matches no "
                f"workload pod-template labels in namespace {namespace!r}"))
    return violations


def _check_hpa_targets(pkg: ManifestPackage) -> list[RuleViolation]:
    violations = []
    for index, doc in enumerate(pkg):
        if doc.gvk.kind != "HorizontalPodAutoscaler":
            continue
        spec = doc.tree.get("spec")
        ref = spec.get("scaleTargetRef") if isinstance(spec, dict) else None
        if not isinstance(ref, dict):
            continue  # malformed ref is L2's concern
        kind, name = ref.get("kind"), ref.get("name")
        if not isinstance(kind, str) or not isinstance(name, str):
            continue
        api_version = ref.get("apiVersion")
        namespace = effective_namespace(doc.tree)
        resolved = any(
            target.gvk.kind == kind
            and target.name == name
            and effective_namespace(target.tree) == namespace
            and (not isinstance(api_version, str)
                 or target.gvk.api_version == api_version)
            for target in pkg)
        if not resolved:
            violations.append(RuleViolation(
                "R2", f"doc[{index}].spec.scaleTargetRef",
                f"HPA {doc.name!r} targets {kind} {name!r} which is not "
                "present in the package"))
    return violations


RULES: dict[str, Rule] = {
    "R1": Rule("R1", "Service selector must match workload pod-template labels",
               _check_service_selectors),
    "R2": Rule("R2", "HPA scaleTargetRef must resolve within the package",
               _check_hpa_targets),
}


def apply_rules(pkg: ManifestPackage,
                rule_ids: tuple[str, ...] | None = None) -> list[RuleViolation]:
    """Run the registered rules (all by default) in catalog order."""
    selected = RULES if rule_ids is None else {
        rid: RULES[rid] for rid in rule_ids}
    violations: list[RuleViolation] = []
    for rule in selected.values():
        violations.extend(rule.check(pkg))
    return violations
