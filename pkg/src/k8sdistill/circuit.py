"""The four-level verification circuit deciding corpus admission.

L1 syntax, L2 strict schema, L3 semantic cross-resource rules, L4 critical
security policies. L1 failure short-circuits the rest; L2-L4 all run when L1
passes so reports can attribute failures to multiple levels. The aggregate
admission flag is the conjunction of the four level flags; warnings never
affect it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from k8sdistill.context import ContextModel
from k8sdistill.manifest import ManifestPackage, ManifestSyntaxError, parse_package
from k8sdistill.policies import apply_policies
from k8sdistill.rules import apply_rules
from k8sdistill.schema import validate_tree

__all__ = ["FailureDetail", "ValidationReport", "validate_l1", "validate_l2",
           "validate_l3_lite", "validate_l4", "run_circuit"]

SCHEMA_NOT_FOUND = "schema-not-found"


@dataclass(frozen=True)
class FailureDetail:
    level: str
    rule_id: str
    path: str
    message: str

    def to_json(self) -> dict:
        return {"level": self.level, "rule_id": self.rule_id,
                "path": self.path, "message": self.message}

    @classmethod
    def from_json(cls, data: dict) -> "FailureDetail":
        return cls(level=data["level"], rule_id=data["rule_id"],
                   path=data["path"], message=data["message"])


@dataclass(frozen=True)
class ValidationReport:
    l1_pass: bool
    l2_pass: bool
    l3_pass: bool
    l4_pass: bool
    failures: tuple[FailureDetail, ...] = ()
    warnings: tuple[FailureDetail, ...] = ()

    @property
    def overall(self) -> bool:
        return self.l1_pass and self.l2_pass and self.l3_pass and self.l4_pass

    def lowest_failing_level(self) -> str | None:
        for level, flag in (("L1", self.l1_pass), ("L2", self.l2_pass),
                            ("L3", self.l3_pass), ("L4", self.l4_pass)):
            if not flag:
                return level
        return None

    def to_json(self) -> dict:
        return {
            "l1_pass": self.l1_pass, "l2_pass": self.l2_pass,
            "l3_pass": self.l3_pass, "l4_pass": self.l4_pass,
            "overall": self.overall,
            "failures": [f.to_json() for f in self.failures],
            "warnings": [w.to_json() for w in self.warnings],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ValidationReport":
        return cls(
            l1_pass=data["l1_pass"], l2_pass=data["l2_pass"],
            l3_pass=data["l3_pass"], l4_pass=data["l4_pass"],
            failures=tuple(FailureDetail.from_json(f) for f in data["failures"]),
            warnings=tuple(FailureDetail.from_json(w) for w in data["warnings"]),
        )


def validate_l1(text: str) -> tuple[ManifestPackage | None, list[FailureDetail]]:
    """Syntax level: parse or report one reason-coded failure."""
    try:
        return parse_package(text), []
    except ManifestSyntaxError as exc:
        where = ""
        if exc.line is not None:
            where = f"line {exc.line}, column {exc.column}"
        return None, [FailureDetail("L1", exc.code, where, exc.message)]


def validate_l2(pkg: ManifestPackage, cm: ContextModel) -> list[FailureDetail]:
    """Schema level: strict validation against the local cache."""
    store = cm.schemas
    details = []
    for index, doc in enumerate(pkg):
        schema = store.schema_for(doc.gvk)
        if schema is None:
            details.append(FailureDetail(
                "L2", SCHEMA_NOT_FOUND, f"doc[{index}]",
                f"no schema for {doc.gvk} in cache "
                f"(Kubernetes {store.kubernetes_version})"))
            continue
        for violation in validate_tree(doc.tree, schema):
            prefix = f"doc[{index}]"
            path = f"{prefix}.{violation.path}" if violation.path else prefix
            details.append(FailureDetail("L2", violation.code, path,
                                         violation.message))
    return details


def validate_l3_lite(pkg: ManifestPackage,
                     rule_ids: tuple[str, ...] | None = None,
                     ) -> list[FailureDetail]:
    """Semantic level: the registered cross-resource rule set."""
    return [FailureDetail("L3", v.rule_id, v.path, v.message)
            for v in apply_rules(pkg, rule_ids)]


def validate_l4(pkg: ManifestPackage, cm: ContextModel,
                ) -> tuple[list[FailureDetail], list[FailureDetail]]:
    """Policy level: (critical findings, warnings)."""
    critical, warnings = apply_policies(pkg, cm.critical_policies)
    return (
        [FailureDetail("L4", f.policy_id, f.path, f.message) for f in critical],
        [FailureDetail("L4", w.policy_id, w.path, w.message) for w in warnings],
    )


def run_circuit(text: str, cm: ContextModel) -> ValidationReport:
    """Execute L1 through L4 over one artifact text.

    Configuration errors (unreadable schema cache) propagate; validation
    failures never raise.
    """
    pkg, l1_failures = validate_l1(text)
    if pkg is None:
        return ValidationReport(l1_pass=False, l2_pass=False, l3_pass=False,
                                l4_pass=False, failures=tuple(l1_failures))
    l2_failures = validate_l2(pkg, cm)
    l3_failures = validate_l3_lite(pkg, cm.semantic_rules)
    l4_failures, l4_warnings = validate_l4(pkg, cm)
    return ValidationReport(
        l1_pass=True,
        l2_pass=not l2_failures,
        l3_pass=not l3_failures,
        l4_pass=not l4_failures,
        failures=tuple(l2_failures + l3_failures + l4_failures),
        warnings=tuple(l4_warnings),
    )
