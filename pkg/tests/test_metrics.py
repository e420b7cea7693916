from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from floodrag.knowledge import build_library, GLOBAL_SCOPE
from floodrag.metrics import (
    boundary_tradeoff_flag,
    bts,
    classification_metrics,
    directional_mentions,
    efficiency,
    fdc,
    infer_label,
    lra,
    mentioned_features,
    pas,
    severity_score,
    sfc,
    terciles_from_records,
)
from floodrag.prompts import parse_trajectory, render_trajectory
from floodrag.records import DEFAULT_RISK_DIRECTIONS, PDECategory

from conftest import (
    SAMPLE_PREDICTION_LINE,
    SAMPLE_TRAJECTORY_RAW,
    make_entry,
    simple_record,
)

label_vectors = st.integers(min_value=1, max_value=60).flatmap(
    lambda n: st.tuples(
        st.lists(st.sampled_from([0, 1, 2]), min_size=n, max_size=n),
        st.lists(st.sampled_from([0, 1, 2]), min_size=n, max_size=n),
    )
)


def _trajectory(raw):
    trajectory, violations = parse_trajectory(raw)
    assert violations == [], violations
    return trajectory


class TestSeverityScore:
    def test_exact_matches(self):
        assert severity_score([0, 1, 2], [0, 1, 2]) == 1.0

    def test_two_level_miss(self):
        assert severity_score([0], [2]) == 0.0

    def test_hand_computed_mixture(self):
        assert severity_score([0, 1, 2, 2], [1, 1, 1, 2]) == pytest.approx(0.75)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            severity_score([0, 1], [0])

    @given(label_vectors)
    def test_equals_one_minus_half_mae(self, vectors):
        y, yhat = vectors
        mae = sum(abs(a - b) for a, b in zip(y, yhat)) / len(y)
        assert severity_score(y, yhat) == pytest.approx(1 - mae / 2, abs=1e-12)


class TestClassificationMetrics:
    def test_perfect_predictions(self):
        m = classification_metrics([0, 1, 2], [0, 1, 2])
        assert m.overall_accuracy == m.macro_f1 == m.severity_score == 1.0
        assert m.damage_class_accuracy == 1.0 and m.recall_2 == 1.0

    def test_hand_confusion_case(self):
        m = classification_metrics([0, 0, 1, 1, 2, 2], [0, 1, 1, 1, 1, 2])
        assert m.overall_accuracy == pytest.approx(4 / 6)
        assert m.recall_2 == pytest.approx(0.5)
        assert m.macro_f1 == pytest.approx(2 / 3)
        assert m.damage_class_accuracy == pytest.approx(3 / 4)

    def test_absent_subsets_reported_as_none(self):
        m = classification_metrics([0, 0], [0, 1])
        assert m.damage_class_accuracy is None
        assert m.recall_2 is None

    def test_matches_sklearn_oracle(self):
        from sklearn.metrics import accuracy_score, f1_score, recall_score

        rng = random.Random(4)
        for _ in range(25):
            n = rng.randrange(5, 200)
            y = [rng.randrange(3) for _ in range(n)]
            yhat = [rng.randrange(3) for _ in range(n)]
            m = classification_metrics(y, yhat)
            assert m.overall_accuracy == pytest.approx(accuracy_score(y, yhat), abs=1e-12)
            assert m.macro_f1 == pytest.approx(
                f1_score(y, yhat, average="macro", labels=[0, 1, 2], zero_division=0),
                abs=1e-12,
            )
            if 2 in y:
                assert m.recall_2 == pytest.approx(
                    recall_score(y, yhat, labels=[2], average="macro", zero_division=0),
                    abs=1e-12,
                )

    @given(label_vectors)
    def test_matches_bruteforce_recount(self, vectors):
        y, yhat = vectors
        m = classification_metrics(y, yhat)
        assert m.overall_accuracy == pytest.approx(
            sum(a == b for a, b in zip(y, yhat)) / len(y), abs=1e-12
        )
        damage = [(a, b) for a, b in zip(y, yhat) if a in (1, 2)]
        if damage:
            assert m.damage_class_accuracy == pytest.approx(
                sum(a == b for a, b in damage) / len(damage), abs=1e-12
            )


class TestLabelReasoningAlignment:
    def test_sample_trajectory_aligns(self):
        trajectory = _trajectory(SAMPLE_TRAJECTORY_RAW)
        assert lra(trajectory, PDECategory.MEDIUM) == 1

    def test_contradictory_closing_scores_zero(self):
        raw = render_trajectory(
            "severity resolves to 2. Based on these factors, it is reasonable to "
            "claim PDE_category is 2.",
            PDECategory.MEDIUM,
        )
        assert lra(_trajectory(raw), PDECategory.MEDIUM) == 0

    def test_closing_phrase_takes_priority_over_resolution(self):
        raw = render_trajectory(
            "severity resolves to 2 at first glance. Based on these factors, it "
            "is reasonable to claim PDE_category is 1.",
            PDECategory.MEDIUM,
        )
        assert infer_label(_trajectory(raw)) == PDECategory.MEDIUM

    def test_severity_resolution_used_when_no_closing(self):
        raw = render_trajectory("clearly severity resolves to high here", PDECategory.HIGH)
        assert infer_label(_trajectory(raw)) == PDECategory.HIGH

    def test_occurrence_zero_used_when_no_other_signal(self):
        raw = render_trajectory("occurrence resolves to zero overall", PDECategory.LOW)
        assert infer_label(_trajectory(raw)) == PDECategory.LOW

    def test_fallback_to_answer_scores_one(self):
        raw = render_trajectory("nothing extractable in this text", PDECategory.MEDIUM)
        assert lra(_trajectory(raw), PDECategory.MEDIUM) == 1

    def test_whitespace_invariance(self):
        trajectory = _trajectory(SAMPLE_TRAJECTORY_RAW)
        squeezed = _trajectory(
            SAMPLE_TRAJECTORY_RAW.replace("  ", " ")
        )
        assert lra(trajectory, PDECategory.MEDIUM) == lra(squeezed, PDECategory.MEDIUM)


SALIENT = ("Poly_num", "Popu_num", "fndn", "roughness", "elevation")


class TestSalientFeatureCoverage:
    def test_sample_trajectory_scores_two_fifths(self):
        trajectory = _trajectory(SAMPLE_TRAJECTORY_RAW)
        assert sfc(trajectory, SALIENT) == pytest.approx(0.4)

    def test_all_mentioned(self):
        raw = render_trajectory(
            "Poly_num, Popu_num, fndn, roughness and elevation all appear.",
            PDECategory.LOW,
        )
        assert sfc(_trajectory(raw), SALIENT) == 1.0

    def test_empty_think(self):
        raw = render_trajectory(" ", PDECategory.LOW)
        assert sfc(_trajectory(raw), SALIENT) == 0.0

    def test_empty_salient_set_rejected(self):
        with pytest.raises(ValueError):
            sfc(_trajectory(SAMPLE_TRAJECTORY_RAW), ())

    def test_age_never_matches_inside_damage(self):
        raw = render_trajectory("major damage everywhere", PDECategory.HIGH)
        assert mentioned_features(_trajectory(raw).think, ("age",)) == set()

    def test_full_name_aliases_match(self):
        assert mentioned_features("the floor area ratio is high", ("FAR",)) == {"FAR"}
        assert mentioned_features("height above nearest drainage", ("hand",)) == {"hand"}


def _terciles():
    # cut points chosen by hand: low <= 10 < mid <= 20 < high
    return {"hand": (10.0, 20.0), "elevation": (10.0, 20.0), "fndn": (10.0, 20.0)}


class TestFeatureDirectionConsistency:
    def test_no_directional_statements_scores_one(self):
        raw = render_trajectory("a text with features but no magnitude words", PDECategory.LOW)
        record = simple_record(1, 0, predictors={"hand": 25.0})
        assert fdc(_trajectory(raw), record, DEFAULT_RISK_DIRECTIONS, _terciles()) == 1.0

    def test_top_tercile_high_mention_consistent(self):
        raw = render_trajectory("HAND is very high in this cell.", PDECategory.LOW)
        record = simple_record(1, 0, predictors={"hand": 25.0})
        assert fdc(_trajectory(raw), record, DEFAULT_RISK_DIRECTIONS, _terciles()) == 1.0

    def test_low_mention_of_top_tercile_value_inconsistent(self):
        raw = render_trajectory("The elevation is low here.", PDECategory.LOW)
        record = simple_record(1, 0, predictors={"elevation": 25.0})
        assert fdc(_trajectory(raw), record, DEFAULT_RISK_DIRECTIONS, _terciles()) == 0.0

    def test_direction_route_rescues_tercile_mismatch(self):
        # value sits in the bottom tercile but the stated protective direction
        # agrees with the prior for a high reading, which is the rescue route
        raw = render_trajectory(
            "HAND is high, which is protective for the block.", PDECategory.LOW
        )
        record = simple_record(1, 0, predictors={"hand": 5.0})
        assert fdc(_trajectory(raw), record, DEFAULT_RISK_DIRECTIONS, _terciles()) == 1.0

    def test_mixed_mentions_average(self):
        raw = render_trajectory(
            "The elevation is low here. Separately, fndn is high.", PDECategory.LOW
        )
        record = simple_record(1, 0, predictors={"elevation": 25.0, "fndn": 25.0})
        assert fdc(_trajectory(raw), record, DEFAULT_RISK_DIRECTIONS, _terciles()) == 0.5

    def test_nearest_adjective_pairing(self):
        mentions = directional_mentions("fndn is moderate, and HAND is very high.")
        paired = {feature: magnitude for feature, magnitude, _ in mentions}
        assert paired["fndn"] == "mid"
        assert paired["hand"] == "high"

    def test_terciles_from_records(self):
        records = [simple_record(i, 0, predictors={"hand": float(i)}) for i in range(1, 10)]
        cuts = terciles_from_records(records, ("hand",))["hand"]
        assert cuts[0] < cuts[1]


def _library_for_pas():
    rng = random.Random(6)
    entries = []
    for i in range(30):
        predictors = {
            "hand": rng.uniform(0, 30), "elevation": rng.uniform(0, 100),
            "fndn": rng.uniform(0, 4),
        }
        entries.append(make_entry(simple_record(100 + i, i % 3, predictors=predictors)))
    return build_library(
        entries, {"hand": 0.5, "elevation": 0.3, "fndn": 0.2}, GLOBAL_SCOPE
    )


class TestPrototypeAlignment:
    def test_all_top_features_mentioned(self):
        library = _library_for_pas()
        raw = render_trajectory(
            "hand, elevation and fndn all matter here.", PDECategory.LOW
        )
        record = simple_record(1, 0, predictors={"hand": 5.0, "elevation": 50.0, "fndn": 1.0})
        assert pas(_trajectory(raw), PDECategory.LOW, library, record) == 1.0

    def test_none_mentioned(self):
        library = _library_for_pas()
        raw = render_trajectory("nothing related appears", PDECategory.LOW)
        record = simple_record(1, 0, predictors={"hand": 5.0, "elevation": 50.0, "fndn": 1.0})
        assert pas(_trajectory(raw), PDECategory.LOW, library, record) == 0.0

    def test_top_k_limits_the_denominator(self):
        library = _library_for_pas()
        raw = render_trajectory("only hand appears here", PDECategory.LOW)
        record = simple_record(1, 0, predictors={"hand": 5.0, "elevation": 50.0, "fndn": 1.0})
        value = pas(_trajectory(raw), PDECategory.LOW, library, record, top_k=1)
        assert value in (0.0, 1.0)

    def test_absent_prototypes_return_none(self):
        library = _library_for_pas()
        from dataclasses import replace

        gutted = replace(library, prototypes={**library.prototypes, PDECategory.HIGH: ()})
        raw = render_trajectory("text", PDECategory.HIGH)
        record = simple_record(1, 2, predictors={"hand": 5.0})
        assert pas(_trajectory(raw), PDECategory.HIGH, gutted, record) is None


class TestBoundaryTradeoff:
    def test_sample_prediction_rationale_flags(self):
        think = json.loads(SAMPLE_PREDICTION_LINE)["r1"]
        trajectory = _trajectory(think)
        assert boundary_tradeoff_flag(trajectory.think) == 1

    def test_tradeoff_needs_all_three_parts(self):
        assert boundary_tradeoff_flag("Despite exposure, risk everywhere") == 0
        assert boundary_tradeoff_flag("protective and shallow, no conflicts") == 0
        assert boundary_tradeoff_flag("Despite the risk, the protective cues hold") == 1

    def test_but_matches_as_word_only(self):
        assert boundary_tradeoff_flag("attributes risk and protective factors") == 0
        assert boundary_tradeoff_flag("risk is real but protective factors hold") == 1

    def test_bts_over_boundary_subset(self):
        good = _trajectory(render_trajectory(
            "Despite the risk factors, protective terrain holds.", PDECategory.LOW
        ))
        bad = _trajectory(render_trajectory("plain statement", PDECategory.LOW))
        samples = [(good, 0.001), (bad, 0.002)] + [(bad, 1.0)] * 18
        score, size = bts(samples, quantile=0.1)
        assert size == 2
        assert score == pytest.approx(0.5)

    def test_empty_samples_absent(self):
        assert bts([]) == (None, 0)


class TestWhitespaceNormalization:
    def test_reasoning_metrics_unmoved_by_whitespace_normalization(self):
        raw = SAMPLE_TRAJECTORY_RAW
        spaced = raw.replace(", ", ",   ").replace(". ", ".  ")
        normalized = "<think>" + " ".join(
            spaced.split("<think>")[1].split("</think>")[0].split()
        ) + "</think><answer>1</answer>"
        t_raw, t_norm = _trajectory(raw), _trajectory(normalized)
        record = simple_record(1, 1, predictors={"hand": 25.0, "elevation": 25.0, "fndn": 25.0})
        assert lra(t_raw, PDECategory.MEDIUM) == lra(t_norm, PDECategory.MEDIUM)
        assert sfc(t_raw, SALIENT) == sfc(t_norm, SALIENT)
        assert fdc(t_raw, record, DEFAULT_RISK_DIRECTIONS, _terciles()) == pytest.approx(
            fdc(t_norm, record, DEFAULT_RISK_DIRECTIONS, _terciles())
        )
        assert boundary_tradeoff_flag(t_raw.think) == boundary_tradeoff_flag(t_norm.think)

    def test_reasoning_metrics_bounded(self):
        t = _trajectory(SAMPLE_TRAJECTORY_RAW)
        record = simple_record(1, 1, predictors={"hand": 5.0})
        assert 0.0 <= sfc(t, SALIENT) <= 1.0
        assert 0.0 <= fdc(t, record, DEFAULT_RISK_DIRECTIONS, _terciles()) <= 1.0
        assert lra(t, PDECategory.MEDIUM) in (0, 1)


class TestEfficiency:
    @pytest.mark.parametrize("sev,cost,expected", [
        (0.8192, 0.010, 81.9),
        (0.7873, 0.199, 4.0),
        (0.5, 0.5, 1.0),
    ])
    def test_reference_rows(self, sev, cost, expected):
        assert efficiency(sev, cost) == pytest.approx(expected, abs=0.05)

    def test_zero_cost_rejected(self):
        with pytest.raises(ValueError):
            efficiency(0.5, 0.0)
