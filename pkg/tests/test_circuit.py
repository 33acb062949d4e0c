"""L1-L4 circuit behavior, golden corpus labels, and the L2 schema oracle."""
import json

import pytest

from conftest import GOLDEN_DIR, check_golden_case, golden_text
from k8sdistill.circuit import (
    ValidationReport, run_circuit, validate_l1, validate_l2, validate_l3_lite,
    validate_l4,
)
from k8sdistill.context import default_context_model
from k8sdistill.manifest import canonicalize, parse_package
from k8sdistill.schema import SchemaStore, SchemaStoreError, load_store


class TestGoldenCorpus:
    def test_corpus_is_large_enough(self, golden_labels):
        assert len(golden_labels) >= 40

    def test_all_labels_match(self, golden_labels, cm):
        problems = []
        for name, expected in sorted(golden_labels.items()):
            problems.extend(check_golden_case(name, expected, cm))
        assert not problems, "\n".join(problems)

    def test_l2_labels_match_independent_validator(self, golden_labels, cm):
        """Cross-check the L2 labels with the jsonschema library as the
        offline strict-schema oracle over the same cache."""
        jsonschema = pytest.importorskip("jsonschema")
        store = cm.schemas
        checked = 0
        for name, expected in sorted(golden_labels.items()):
            if not expected["l1"]:
                continue
            pkg = parse_package(golden_text(name))
            oracle_pass = True
            for doc in pkg:
                schema = store.schema_for(doc.gvk)
                if schema is None:
                    oracle_pass = False
                    continue
                validator = jsonschema.Draft7Validator(schema)
                if any(True for _ in validator.iter_errors(doc.tree)):
                    oracle_pass = False
            assert oracle_pass == expected["l2"], \
                f"{name}: oracle says l2={oracle_pass}"
            checked += 1
        assert checked >= 30


class TestL1:
    def test_pass_returns_package(self):
        pkg, details = validate_l1("apiVersion: v1\nkind: ConfigMap\n"
                                   "metadata:\n  name: c")
        assert pkg is not None and details == []

    @pytest.mark.parametrize("text,code", [
        ("apiVersion: v1\nkind: C\nmetadata:\n\tname: x", "bad-indent"),
        ("Sure thing!\napiVersion: v1\nkind: C\nmetadata: {name: x}",
         "prose-outside-yaml"),
        ("[1, 2]", "non-mapping-root"),
        ("apiVersion: v1\nmetadata: {name: x}", "missing-apiversion-kind"),
        ("a: 1\na: 2\napiVersion: v1\nkind: C", "duplicate-key"),
        ("", "empty"),
    ])
    def test_reason_codes(self, text, code):
        pkg, details = validate_l1(text)
        assert pkg is None
        assert len(details) == 1
        assert details[0].level == "L1"
        assert details[0].rule_id == code


class TestL2:
    def test_deployment_missing_selector(self, cm):
        pkg = parse_package(golden_text("l2_deployment_missing_selector.yaml"))
        details = validate_l2(pkg, cm)
        assert any(d.rule_id == "required-field" and "selector" in d.path
                   for d in details)

    def test_unknown_gvk_fails_schema_not_found(self, cm):
        pkg = parse_package("apiVersion: custom.io/v9\nkind: Gadget\n"
                            "metadata:\n  name: g")
        details = validate_l2(pkg, cm)
        assert [d.rule_id for d in details] == ["schema-not-found"]

    def test_missing_cache_is_configuration_error(self, tmp_path):
        with pytest.raises(SchemaStoreError):
            SchemaStore.load(tmp_path / "nowhere")

    def test_unreadable_manifest_is_configuration_error(self, tmp_path):
        (tmp_path / "cache-manifest.json").write_text("{not json")
        with pytest.raises(SchemaStoreError):
            SchemaStore.load(tmp_path)


class TestL3:
    def test_selector_subset_passes(self, cm):
        # Pod template carries more labels than the selector asks for.
        pkg = parse_package(golden_text("valid_deployment_service.yaml"))
        assert validate_l3_lite(pkg) == []

    def test_selector_mismatch_fails_r1(self):
        pkg = parse_package(golden_text("l3_service_selector_mismatch.yaml"))
        details = validate_l3_lite(pkg)
        assert [d.rule_id for d in details] == ["R1"]

    def test_no_workload_skips_r1(self):
        pkg = parse_package("apiVersion: v1\nkind: Service\nmetadata:\n"
                            "  name: s\nspec:\n  selector:\n    app: ghost\n"
                            "  ports:\n  - port: 80")
        assert validate_l3_lite(pkg) == []

    def test_dangling_hpa_fails_r2(self):
        pkg = parse_package(golden_text("l3_hpa_dangling_target.yaml"))
        details = validate_l3_lite(pkg)
        assert [d.rule_id for d in details] == ["R2"]

    def test_resolving_hpa_passes(self, cm):
        pkg = parse_package(golden_text("valid_hpa_deployment.yaml"))
        assert validate_l3_lite(pkg) == []

    def test_rule_subset_selection(self):
        pkg = parse_package(golden_text("l3_service_selector_mismatch.yaml"))
        assert validate_l3_lite(pkg, rule_ids=("R2",)) == []


class TestL4:
    @pytest.mark.parametrize("name,policy", [
        ("l4_privileged.yaml", "P01"),
        ("l4_hostnetwork.yaml", "P02"),
        ("l4_hostpath.yaml", "P03"),
        ("l4_sys_admin.yaml", "P04"),
        ("l4_cluster_admin_default_sa.yaml", "P05"),
    ])
    def test_critical_policies(self, cm, name, policy):
        pkg = parse_package(golden_text(name))
        critical, _ = validate_l4(pkg, cm)
        assert policy in {d.rule_id for d in critical}

    def test_latest_tag_is_warning_only(self, cm):
        pkg = parse_package(golden_text("valid_warnings_latest.yaml"))
        critical, warnings = validate_l4(pkg, cm)
        assert critical == []
        assert "W02" in {w.rule_id for w in warnings}


class TestRunCircuit:
    def test_l1_short_circuit(self, cm):
        report = run_circuit("::: not yaml :::", cm)
        assert not report.l1_pass and not report.overall
        assert len(report.failures) == 1
        assert report.failures[0].level == "L1"
        assert not report.l2_pass and not report.l3_pass and not report.l4_pass
        assert report.warnings == ()

    def test_policy_only_failure(self, cm):
        report = run_circuit(golden_text("l4_hostpath.yaml"), cm)
        assert report.l1_pass and report.l2_pass and report.l3_pass
        assert not report.l4_pass and not report.overall

    def test_overall_is_conjunction(self, cm, golden_labels):
        for name in golden_labels:
            report = run_circuit(golden_text(name), cm)
            assert report.overall == (report.l1_pass and report.l2_pass
                                      and report.l3_pass and report.l4_pass)

    def test_deterministic_serialized_report(self, cm):
        text = golden_text("multi_l2_l4.yaml")
        first = json.dumps(run_circuit(text, cm).to_json(), sort_keys=True)
        second = json.dumps(run_circuit(text, cm).to_json(), sort_keys=True)
        assert first == second

    def test_canonical_invariance_of_level_flags(self, cm, golden_labels):
        for name, expected in golden_labels.items():
            if not expected["l1"]:
                continue
            text = golden_text(name)
            direct = run_circuit(text, cm)
            canonical = run_circuit(canonicalize(parse_package(text)), cm)
            assert (direct.l1_pass, direct.l2_pass, direct.l3_pass,
                    direct.l4_pass) == \
                   (canonical.l1_pass, canonical.l2_pass, canonical.l3_pass,
                    canonical.l4_pass), name

    def test_warnings_never_flip_overall(self, cm, golden_labels):
        for name in golden_labels:
            report = run_circuit(golden_text(name), cm)
            stripped = ValidationReport(
                l1_pass=report.l1_pass, l2_pass=report.l2_pass,
                l3_pass=report.l3_pass, l4_pass=report.l4_pass,
                failures=report.failures, warnings=())
            assert stripped.overall == report.overall

    def test_report_json_round_trip(self, cm):
        report = run_circuit(golden_text("multi_l3_l4.yaml"), cm)
        assert ValidationReport.from_json(report.to_json()) == report

    def test_lowest_failing_level(self, cm):
        report = run_circuit(golden_text("multi_l2_l4.yaml"), cm)
        assert report.lowest_failing_level() == "L2"
        report = run_circuit(golden_text("valid_configmap.yaml"), cm)
        assert report.lowest_failing_level() is None


class TestContextModel:
    def test_unknown_rule_rejected(self):
        with pytest.raises(ValueError):
            default_context_model(semantic_rules=("R9",))

    def test_unknown_policy_rejected(self):
        with pytest.raises(ValueError):
            default_context_model(critical_policies=("P99",))

    def test_version_mismatch_rejected(self, tmp_path):
        cache = tmp_path / "cache"
        cache.mkdir()
        (cache / "cache-manifest.json").write_text(
            json.dumps({"kubernetes_version": "1.29.0"}))
        from k8sdistill.context import ContextModel
        with pytest.raises(ValueError):
            ContextModel(meta_spec=frozenset(), schema_store=str(cache),
                         compositions={}, semantic_rules=(),
                         critical_policies=(), kubernetes_version="1.30.0")

    def test_policy_subset_respected(self, golden_labels):
        relaxed = default_context_model(critical_policies=("P05",))
        report = run_circuit(golden_text("l4_privileged.yaml"), relaxed)
        assert report.l4_pass  # P01 not enforced in this context model

    def test_unknown_family_lookup(self, cm):
        with pytest.raises(KeyError):
            cm.gvks_for_family("Gateway")
