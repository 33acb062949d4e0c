import json
from pathlib import Path

import pytest

from k8sdistill.circuit import run_circuit
from k8sdistill.context import default_context_model

GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def cm():
    return default_context_model()


@pytest.fixture(scope="session")
def golden_labels():
    return json.loads((GOLDEN_DIR / "labels.json").read_text(encoding="utf-8"))


def golden_text(name: str) -> str:
    return (GOLDEN_DIR / name).read_text(encoding="utf-8")


def check_golden_case(name: str, expected: dict, cm) -> list[str]:
    """Run the circuit over one golden file; return human-readable mismatches."""
    report = run_circuit(golden_text(name), cm)
    problems = []
    got = {"l1": report.l1_pass, "l2": report.l2_pass,
           "l3": report.l3_pass, "l4": report.l4_pass,
           "overall": report.overall}
    for key, want in got.items():
        if expected[key] != want:
            problems.append(f"{name}: {key} expected {expected[key]}, got {want}")
    for level, codes in expected["codes"].items():
        present = {f.rule_id for f in report.failures if f.level == level}
        missing = set(codes) - present
        if missing:
            problems.append(f"{name}: {level} missing codes {sorted(missing)}, "
                            f"saw {sorted(present)}")
    warn_ids = {w.rule_id for w in report.warnings}
    missing_warns = set(expected["warnings"]) - warn_ids
    if missing_warns:
        problems.append(f"{name}: missing warnings {sorted(missing_warns)}")
    return problems
