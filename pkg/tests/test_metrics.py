"""Metric family, BLEU, failure analysis, and report rendering."""
import math
import random
from collections import Counter
from fractions import Fraction

import pytest

from k8sdistill.bleu import bleu_aux, tokenize
from k8sdistill.circuit import FailureDetail, ValidationReport
from k8sdistill.context import default_context_model
from k8sdistill.corpus import (
    SplitSpec, deduplicate, filter_corpus, split, stratified_plan,
)
from k8sdistill.metrics import (
    EvalMode, EvalRun, GenerationOutcome, aggregate_outcomes, analyze_failures,
    evaluate_outputs, per_token_stats, read_generations, render_report,
    render_series, resource_probe,
)
from k8sdistill.mocks import MockTeacher
from k8sdistill.teacher import EndpointConfig, generate_batch


def reference_bleu(candidate: str, reference: str) -> float:
    """Independent scorer (exact-fraction clipping, same published variant)."""
    cand, ref = tokenize(candidate), tokenize(reference)
    if not cand and not ref:
        return 100.0
    if not cand or not ref:
        return 0.0
    log_total = 0.0
    for n in range(1, 5):
        cand_grams = Counter(tuple(cand[i:i + n])
                             for i in range(len(cand) - n + 1))
        ref_grams = Counter(tuple(ref[i:i + n])
                            for i in range(len(ref) - n + 1))
        clipped = sum(min(count, ref_grams[gram])
                      for gram, count in cand_grams.items())
        total = sum(cand_grams.values())
        if n == 1:
            if clipped == 0:
                return 0.0
            precision = Fraction(clipped, total)
        else:
            precision = Fraction(clipped + 1, total + 1)
        log_total += math.log(float(precision)) / 4.0
    brevity = 1.0 if len(cand) > len(ref) \
        else math.exp(1.0 - len(ref) / len(cand))
    return 100.0 * brevity * math.exp(log_total)


# Five derived pairs; expected values frozen from reference_bleu.
BLEU_PAIRS = [
    ("apiVersion: v1\nkind: ConfigMap\nmetadata:\n  name: alpha\ndata:\n  K: v1",
     "apiVersion: v1\nkind: ConfigMap\nmetadata:\n  name: alpha\ndata:\n  K: v2",
     89.09126743510708),
    ("apiVersion: apps/v1\nkind: Deployment\nmetadata:\n  name: web\nspec:\n  replicas: 2",
     "apiVersion: apps/v1\nkind: Deployment\nmetadata:\n  name: web\nspec:\n  replicas: 3\n  paused: false",
     72.9417604798171),
    ("kind: Service\nports: [80, 443]\nselector: {app: web}",
     "kind: Service\nports: [443, 80]\nselector: {app: web}",
     45.96613576124592),
    ("a b c d e f g h", "a b c d x y z w", 43.47208719449914),
    ("apiVersion: batch/v1\nkind: Job\nmetadata: {name: short}",
     "apiVersion: batch/v1\nkind: Job\nmetadata: {name: short}\nspec:\n  backoffLimit: 4\n  completions: 2\n  parallelism: 2",
     36.787944117144235),
]


class TestBleu:
    def test_identity_is_100(self):
        text = "apiVersion: v1\nkind: ConfigMap\nmetadata:\n  name: a"
        assert bleu_aux(text, text) == 100.0

    def test_disjoint_is_0(self):
        assert bleu_aux("alpha beta gamma delta", "uno dos tres cuatro") == 0.0

    def test_both_empty_is_100(self):
        assert bleu_aux("", "") == 100.0

    def test_one_empty_is_0(self):
        assert bleu_aux("", "a: 1") == 0.0

    @pytest.mark.parametrize("candidate,reference,expected", BLEU_PAIRS)
    def test_against_independent_scorer(self, candidate, reference, expected):
        got = bleu_aux(candidate, reference)
        assert abs(got - reference_bleu(candidate, reference)) < 0.1
        assert got == pytest.approx(expected, abs=1e-9)

    def test_range_on_random_texts(self):
        rng = random.Random(11)
        words = ["app", "web", "port", "name", "spec", "kind", "v1", "extra"]
        for _ in range(200):
            a = " ".join(rng.choices(words, k=rng.randint(1, 12)))
            b = " ".join(rng.choices(words, k=rng.randint(1, 12)))
            score = bleu_aux(a, b)
            assert 0.0 <= score <= 100.0

    def test_yaml_punctuation_tokenization(self):
        assert tokenize("a: {b: [1, 2]} - c") == ["a", "b", "1", "2", "c"]


def make_report(l1=True, l2=True, l3=True, l4=True, rule="x", family_level=None):
    failures = []
    for level, ok in (("L1", l1), ("L2", l2), ("L3", l3), ("L4", l4)):
        if not ok:
            failures.append(FailureDetail(level, rule, f"doc[0].spec.{rule}",
                                          "synthetic"))
    return ValidationReport(l1_pass=l1, l2_pass=l2, l3_pass=l3, l4_pass=l4,
                            failures=tuple(failures))


def make_outcome(i, report, family="composite", bleu=80.0, em=False):
    return GenerationOutcome(example_id=f"t{i:04d}", family=family,
                             output_text="", report=report, em=em, bleu=bleu)


def pilot_run(label, mode, passed, fails_by_level, bleu, total=200):
    """Outcome fixture shaped like one pilot trajectory row."""
    outcomes = []
    i = 0
    for _ in range(passed):
        outcomes.append(make_outcome(i, make_report(), bleu=bleu, em=False))
        i += 1
    flags = {"L1": dict(l1=False, l2=False, l3=False, l4=False),
             "L2": dict(l2=False), "L3": dict(l3=False), "L4": dict(l4=False)}
    for level, count in fails_by_level.items():
        for _ in range(count):
            outcomes.append(make_outcome(i, make_report(**flags[level]),
                                         bleu=bleu))
            i += 1
    assert len(outcomes) == total
    aggregates, breakdown = aggregate_outcomes(outcomes)
    return EvalRun(label=label, mode=mode, outcomes=tuple(outcomes),
                   aggregates=aggregates, breakdown=breakdown)


PILOT_ROWS = [
    ("1K + diversity", EvalMode("std", 512), 164,
     {"L1": 10, "L2": 19, "L3": 4, "L4": 3}, 83.42, "82.0%"),
    ("2K + error corr.", EvalMode("std", 512), 157,
     {"L1": 21, "L2": 14, "L3": 8, "L4": 0}, 83.05, "78.5%"),
    ("1K + strict infer.", EvalMode("strict", 768), 182,
     {"L1": 7, "L2": 11, "L3": 0, "L4": 0}, 78.45, "91.0%"),
    ("1.2K + resid. corr.", EvalMode("strict", 768), 183,
     {"L1": 1, "L2": 10, "L3": 2, "L4": 4}, 81.08, "91.5%"),
]


class TestRenderReport:
    def test_pilot_trajectory_rows(self):
        runs = [pilot_run(label, mode, passed, fails, bleu)
                for label, mode, passed, fails, bleu, _ in PILOT_ROWS]
        table = render_report(runs)
        lines = table.strip().splitlines()
        assert len(lines) == 2 + len(PILOT_ROWS)
        for (label, _, passed, fails, bleu, pct), line in zip(PILOT_ROWS,
                                                              lines[2:]):
            assert label in line
            assert f"{passed}/200 = {pct}" in line
            cells = [c.strip() for c in line.strip("|").split("|")]
            assert cells[3:7] == [str(fails["L1"]), str(fails["L2"]),
                                  str(fails["L3"]), str(fails["L4"])]
            assert cells[7] == f"{bleu:.2f}"

    def test_best_row_breakdown_columns(self):
        label, mode, passed, fails, bleu, pct = PILOT_ROWS[3]
        run = pilot_run(label, mode, passed, fails, bleu)
        assert run.breakdown == {"L1": 1, "L2": 10, "L3": 2, "L4": 4}
        assert "183/200 = 91.5%" in render_report([run])

    def test_rounding_82_percent(self):
        run = pilot_run(*PILOT_ROWS[0][:5])
        assert "164/200 = 82.0%" in render_report([run])

    def test_single_run_table(self):
        run = pilot_run(*PILOT_ROWS[2][:5])
        assert len(render_report([run]).strip().splitlines()) == 3

    def test_mode_column(self):
        run = pilot_run(*PILOT_ROWS[2][:5])
        assert "strict, 768" in render_report([run])

    def test_series_csv(self):
        run = pilot_run(*PILOT_ROWS[0][:5])
        series = render_series([run])
        assert "run,metric,value" in series.splitlines()[0]
        assert "1K + diversity,full_pass,82.0" in series
        assert "1K + diversity,fail_L2,19" in series

    def test_empty_runs_rejected(self):
        with pytest.raises(ValueError):
            render_report([])


class TestAggregation:
    def test_monotonicity_on_fuzzed_reports(self):
        rng = random.Random(5)
        outcomes = []
        for i in range(2000):
            l1 = rng.random() < 0.9
            report = make_report(
                l1=l1,
                l2=l1 and rng.random() < 0.85,
                l3=l1 and rng.random() < 0.9,
                l4=l1 and rng.random() < 0.9)
            outcomes.append(make_outcome(i, report, bleu=rng.random() * 100))
        aggregates, breakdown = aggregate_outcomes(outcomes)
        full = aggregates["full_pass"]
        assert full <= min(aggregates["schema_pass"],
                           aggregates["semantic_pass"],
                           aggregates["policy_pass"])
        assert max(aggregates["schema_pass"], aggregates["semantic_pass"],
                   aggregates["policy_pass"]) <= aggregates["sc"]
        failing = sum(1 for o in outcomes if not o.report.overall)
        assert sum(breakdown.values()) == failing

    def test_empty_outcomes(self):
        aggregates, breakdown = aggregate_outcomes([])
        assert aggregates["total"] == 0
        assert sum(breakdown.values()) == 0


class TestEvaluateOutputs:
    def setup_method(self):
        self.cm = default_context_model()
        tasks = stratified_plan({"composite": 4, "ConfigMap/Secret": 4})
        candidates, _ = generate_batch(
            tasks, EndpointConfig(rate_per_minute=10 ** 9), self.cm,
            transport=MockTeacher())
        admitted, _ = filter_corpus(candidates, self.cm)
        self.test_split = split(deduplicate(admitted),
                                SplitSpec(4, 2, 2, seed=3))["test"]

    def test_identity_generations_score_perfectly(self):
        generations = {r.id: {"output": r.yaml} for r in self.test_split}
        run = evaluate_outputs(self.test_split, generations,
                               EvalMode(), self.cm, label="identity")
        assert run.aggregates["full_pass"] == 1.0
        assert run.aggregates["em"] == 1.0
        assert run.aggregates["bleu_mean"] == 100.0
        assert sum(run.breakdown.values()) == 0

    def test_em_implies_full_pass_on_golden_split(self):
        generations = {r.id: {"output": r.yaml} for r in self.test_split}
        run = evaluate_outputs(self.test_split, generations, EvalMode(),
                               self.cm)
        for outcome in run.outcomes:
            if outcome.em:
                assert outcome.report.overall

    def test_missing_generation_is_flagged_l1(self):
        generations = {r.id: {"output": r.yaml} for r in self.test_split}
        dropped = self.test_split.records[0].id
        del generations[dropped]
        run = evaluate_outputs(self.test_split, generations, EvalMode(),
                               self.cm)
        outcome = next(o for o in run.outcomes if o.example_id == dropped)
        assert not outcome.report.l1_pass
        assert outcome.report.failures[0].rule_id == "missing-output"
        assert run.aggregates["total"] == len(self.test_split)

    def test_fenced_output_is_stripped_before_scoring(self):
        generations = {r.id: {"output": f"```yaml\n{r.yaml}\n```"}
                       for r in self.test_split}
        run = evaluate_outputs(self.test_split, generations, EvalMode(),
                               self.cm)
        assert run.aggregates["full_pass"] == 1.0
        assert run.aggregates["em"] == 1.0

    def test_pure_function_of_inputs(self):
        generations = {r.id: {"output": r.yaml} for r in self.test_split}
        first = evaluate_outputs(self.test_split, generations, EvalMode(),
                                 self.cm)
        second = evaluate_outputs(self.test_split, generations, EvalMode(),
                                  self.cm)
        assert first.aggregates == second.aggregates
        assert first.breakdown == second.breakdown

    def test_duplicate_generation_ids_rejected(self, tmp_path):
        path = tmp_path / "gens.jsonl"
        path.write_text('{"id": "a", "output": "x"}\n'
                        '{"id": "a", "output": "y"}\n')
        with pytest.raises(ValueError):
            read_generations(path)

    def test_run_json_round_trip(self):
        generations = {r.id: {"output": r.yaml, "tokens": 100,
                              "elapsed_ms": 1000.0} for r in self.test_split}
        run = evaluate_outputs(self.test_split, generations, EvalMode(),
                               self.cm)
        restored = EvalRun.from_json(run.to_json())
        assert restored.aggregates == run.aggregates
        assert restored.outcomes == run.outcomes


class TestAnalyzeFailures:
    def test_l2_dominated_run(self):
        fails = {"L1": 1, "L2": 10, "L3": 2, "L4": 4}
        run = pilot_run("best", EvalMode("strict", 768), 183, fails, 81.08)
        analysis = analyze_failures(run)
        assert analysis[0]["level"] == "L2"
        assert sum(cell["count"] for cell in analysis) == 17

    def test_all_pass_is_empty(self):
        run = pilot_run("clean", EvalMode(), 200, {}, 90.0)
        assert analyze_failures(run) == []

    def test_exemplars_and_fields(self):
        report = ValidationReport(
            l1_pass=True, l2_pass=False, l3_pass=True, l4_pass=True,
            failures=(FailureDetail(
                "L2", "unknown-field",
                "doc[0].spec.template.spec.volumeMounts", "misplaced"),))
        outcomes = [make_outcome(i, report, family="StatefulSet")
                    for i in range(8)]
        aggregates, breakdown = aggregate_outcomes(outcomes)
        run = EvalRun("r", EvalMode(), tuple(outcomes), aggregates, breakdown)
        analysis = analyze_failures(run, exemplars_per_cell=3)
        assert len(analysis) == 1
        cell = analysis[0]
        assert cell["count"] == 8
        assert len(cell["exemplar_ids"]) == 3
        assert cell["fields"] == ["volumeMounts"]


class TestResourceProbe:
    def test_noop_probe(self):
        with resource_probe("noop") as phase:
            pass
        assert phase.stats.wall_s >= 0.0
        assert phase.stats.peak_rss_mb > 0.0

    def test_per_token_mean_and_p95(self):
        stats = per_token_stats([(600, 101700.0)])
        assert stats["mean_ms_per_token"] == pytest.approx(169.50)
        stats = per_token_stats([(100, 10000.0), (100, 20000.0)])
        assert stats["mean_ms_per_token"] == pytest.approx(150.0)
        assert stats["p95_ms_per_token"] == pytest.approx(200.0)

    def test_no_metadata_means_absent(self):
        assert per_token_stats([]) is None
        assert per_token_stats([(0, 5.0)]) is None
