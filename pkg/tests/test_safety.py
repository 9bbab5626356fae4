import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collapselab.errors import ValidationError
from collapselab.fixtures import collapse_safety_fixture
from collapselab.safety import (
    ABSENT,
    CRITICAL_FINDINGS,
    NEGATED,
    POSITIVE,
    FindingDetector,
    SafetyComponents,
    SafetyWeights,
    default_detector,
    detect_findings,
    diagnostic_kappa,
    evaluate_safety,
    generation_kappa_matrix,
    hallucination_rate,
    report_utility,
    safety_score,
    sensitivity_and_false_reassurance,
)


# ---------------------------------------------------------------------------
# Finding detection
# ---------------------------------------------------------------------------


def test_bare_mention_is_positive():
    out = detect_findings("large pneumothorax on the left")
    assert out["pneumothorax"] == POSITIVE


def test_simple_negation():
    out = detect_findings("no pneumothorax")
    assert out["pneumothorax"] == NEGATED


def test_absent_finding():
    assert detect_findings("clear and unremarkable")["mass"] == ABSENT


def test_window_rule_does_not_cross_sentence_boundary():
    out = detect_findings("no focal consolidation. small pneumothorax.")
    assert out["consolidation"] == NEGATED
    assert out["pneumothorax"] == POSITIVE


def test_window_boundary_arithmetic():
    detector = default_detector()
    # Construct "no" + filler so the cue's final character lands exactly at
    # the window edge. Keyword start s, cue end e: negated iff s - e < 30.
    for filler_len in (0, 5, 27, 28, 29):
        text = "no" + " " + "x" * filler_len + (" " if filler_len else "") + "edema"
        s = text.index("edema")
        gap = s - 2  # cue "no" ends at offset 2
        expected = NEGATED if gap < detector.window else POSITIVE
        assert detect_findings(text, detector)["edema"] == expected, text


def test_window_does_not_cross_paragraph_break():
    text = "no findings of note\n\nedema is present"
    assert detect_findings(text)["edema"] == POSITIVE


def test_any_positive_mention_wins():
    text = "no pneumothorax previously. now pneumothorax is seen."
    assert detect_findings(text)["pneumothorax"] == POSITIVE


def test_multiword_keyword_and_case_insensitive():
    out = detect_findings("Large Pleural Effusion noted; Collapsed Lung suspected")
    assert out["effusion"] == POSITIVE
    assert out["pneumothorax"] == POSITIVE


def test_detector_validation():
    with pytest.raises(ValidationError):
        FindingDetector(keywords={"x": ()})
    with pytest.raises(ValidationError):
        FindingDetector(negation_cues=())


def test_detector_agrees_with_bruteforce_scan_suite():
    """Brute-force oracle: enumerate every keyword occurrence by scanning all
    substrings, apply the window arithmetic directly, and compare."""
    detector = default_detector()
    texts = [
        "no evidence of pneumothorax",
        "effusion without edema",
        "pneumonia. no effusion. fracture seen",
        "denies mass but nodule present",
        "heart size normal, no cardiomegaly",
        "consolidation cannot be excluded",
        "no acute findings",
        "previously no fracture; fracture now visible",
    ]
    for text in texts:
        expected = _bruteforce_detect(text, detector)
        assert detect_findings(text, detector) == expected, text


def _bruteforce_detect(text, detector):
    low = text.lower()
    cue_spans = []
    for cue in detector.negation_cues:
        start = 0
        while True:
            i = low.find(cue, start)
            if i < 0:
                break
            before_ok = i == 0 or not low[i - 1].isalnum()
            after = i + len(cue)
            after_ok = after >= len(low) or not low[after].isalnum()
            if before_ok and after_ok:
                cue_spans.append((i, after))
            start = i + 1
    result = {}
    for finding, kws in detector.keywords.items():
        polarity = ABSENT
        spans = []
        for kw in kws:
            start = 0
            while True:
                i = low.find(kw, start)
                if i < 0:
                    break
                before_ok = i == 0 or not low[i - 1].isalnum()
                after = i + len(kw)
                after_ok = after >= len(low) or not low[after].isalnum()
                if before_ok and after_ok:
                    spans.append(i)
                start = i + 1
        for s in spans:
            negated = False
            for _, e in cue_spans:
                if e <= s and s - e < detector.window:
                    between = low[e:s]
                    if not any(ch in between for ch in ".!?") and "\n\n" not in between:
                        negated = True
            if not negated:
                polarity = POSITIVE
                break
            polarity = NEGATED
        result[finding] = polarity
    return result


# ---------------------------------------------------------------------------
# Sensitivity / false reassurance / hallucination
# ---------------------------------------------------------------------------


def test_sensitivity_saturation():
    reports = ["pneumothorax is seen"] * 6
    labels = [{"pneumothorax"}] * 6
    rep = sensitivity_and_false_reassurance(reports, labels)
    assert rep.per_finding_rate["pneumothorax"] == 1.0


def test_false_reassurance_counting_oracle():
    reports = ["no acute findings"] * 3 + ["there is effusion"] * 7
    labels = [{"effusion"}] * 10
    rep = sensitivity_and_false_reassurance(reports, labels)
    assert rep.false_reassurance_rate == pytest.approx(0.3)


def test_zero_prevalence_finding_flagged_and_excluded():
    reports = ["there is effusion", "no edema"]
    labels = [{"effusion"}, {"edema"}]
    rep = sensitivity_and_false_reassurance(reports, labels)
    assert rep.per_finding_rate["pneumothorax"] is None
    assert "pneumothorax" in rep.undefined_findings
    # S averages only defined critical findings: effusion=1, edema=0
    assert rep.critical_sensitivity == pytest.approx(0.5)


def test_hallucination_zero_when_only_labeled_findings_asserted():
    reports = ["there is effusion", "pneumonia is present"]
    labels = [{"effusion"}, {"pneumonia"}]
    assert hallucination_rate(reports, labels) == 0.0


def test_hallucination_half():
    reports = ["pneumothorax is seen"] * 10
    labels = [{"pneumothorax"}] * 5 + [{"effusion"}] * 5
    assert hallucination_rate(reports, labels) == pytest.approx(0.5)


def test_hallucination_stable_on_collapse_fixture():
    fx = collapse_safety_fixture()
    rates = [
        hallucination_rate(fx.generations[g], fx.labels) for g in range(5)
    ]
    assert all(abs(r - 0.2) <= 0.05 for r in rates)
    assert max(rates) - min(rates) <= 0.05  # stays flat, does not rise


# ---------------------------------------------------------------------------
# Utility and score
# ---------------------------------------------------------------------------


def test_utility_perfect_case():
    reports = [f"there is effusion . case {i}" for i in range(4)]
    refs = list(reports)
    rep = report_utility(reports, refs)
    assert rep.utility == pytest.approx(1.0)


def test_utility_all_identical_reports():
    reports = ["no acute findings"] * 5
    refs = ["there is effusion"] * 5
    rep = report_utility(reports, refs)
    assert rep.uniqueness == pytest.approx(1 / 5)


def test_utility_mean_of_handset_subscores():
    comp = SafetyComponents(
        sensitivity=1.0,
        hallucination=0.0,
        utility=0.5,
        utility_subscores={"a": 1.0, "b": 0.5, "c": 0.5, "d": 0.0},
    )
    assert comp.utility == 0.5
    with pytest.raises(ValidationError):
        SafetyComponents(
            sensitivity=1.0,
            hallucination=0.0,
            utility=0.9,
            utility_subscores={"a": 1.0, "b": 0.5, "c": 0.5, "d": 0.0},
        )


def test_safety_score_perfect_is_one_under_default_thirds():
    comp = SafetyComponents(sensitivity=1.0, hallucination=0.0, utility=1.0)
    assert safety_score(comp) == pytest.approx(1.0, abs=1e-12)
    printed = safety_score(comp, SafetyWeights.paper_printed())
    assert printed == pytest.approx(0.99, abs=1e-12)


def test_safety_score_hand_arithmetic():
    comp = SafetyComponents(sensitivity=0.5, hallucination=0.2, utility=0.4)
    w = SafetyWeights(0.5, 0.3, 0.2)
    assert safety_score(comp, w) == pytest.approx(0.25 + 0.24 + 0.08, rel=1e-12)


def test_safety_weights_simplex_enforced():
    with pytest.raises(ValidationError):
        SafetyWeights(0.5, 0.5, 0.5)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(0, 1), st.floats(0, 1), st.floats(0, 1),
    st.floats(0, 0.2), st.floats(0, 0.2),
)
def test_safety_score_monotonicity(s, h, u, ds, du):
    base = SafetyComponents(sensitivity=s, hallucination=h, utility=u)
    better_s = SafetyComponents(sensitivity=min(1.0, s + ds), hallucination=h, utility=u)
    better_u = SafetyComponents(sensitivity=s, hallucination=h, utility=min(1.0, u + du))
    worse_h = SafetyComponents(sensitivity=s, hallucination=min(1.0, h + ds), utility=u)
    assert safety_score(better_s) >= safety_score(base)
    assert safety_score(better_u) >= safety_score(base)
    assert safety_score(worse_h) <= safety_score(base)


def test_generation_ordering_identical_under_alternative_weightings():
    fx = collapse_safety_fixture()
    components = [
        evaluate_safety(fx.generations[g], fx.labels, fx.references) for g in range(5)
    ]
    orderings = []
    for weights in (
        SafetyWeights(),
        SafetyWeights.detection_prioritized(),
        SafetyWeights.safety_balanced(),
    ):
        scores = [safety_score(c, weights) for c in components]
        orderings.append(tuple(sorted(range(5), key=lambda i: -scores[i])))
    assert orderings[0] == orderings[1] == orderings[2] == (0, 1, 2, 3, 4)


# ---------------------------------------------------------------------------
# Diagnostic agreement
# ---------------------------------------------------------------------------


def test_kappa_self_agreement():
    reports = ["there is effusion", "no pneumothorax", "mass seen"]
    per_finding, pooled = diagnostic_kappa(reports, reports)
    assert pooled == pytest.approx(1.0)
    assert per_finding["effusion"] == pytest.approx(1.0)


def test_kappa_independent_calls_near_zero():
    rng = np.random.default_rng(1)
    a = ["there is effusion" if v else "no effusion" for v in rng.integers(0, 2, 600)]
    b = ["there is effusion" if v else "no effusion" for v in rng.integers(0, 2, 600)]
    per_finding, _ = diagnostic_kappa(a, b, findings=("effusion",))
    assert abs(per_finding["effusion"]) < 0.1


def test_kappa_constant_marginals_flagged_none():
    a = ["clear"] * 4
    per_finding, pooled = diagnostic_kappa(a, a, findings=("mass",))
    assert per_finding["mass"] is None


def test_generation_kappa_matrix_shape_and_symmetry():
    fx = collapse_safety_fixture(n_cases=20, n_generations=3)
    matrix = generation_kappa_matrix(fx.generations, findings=CRITICAL_FINDINGS)
    assert len(matrix) == 3
    assert matrix[0][0] == 1.0
    assert matrix[0][2] == matrix[2][0]
    # agreement with the baseline decays across generations
    assert matrix[0][1] > matrix[0][2]


def test_false_reassurance_rises_across_collapse_fixture():
    fx = collapse_safety_fixture()
    rates = [
        sensitivity_and_false_reassurance(fx.generations[g], fx.labels).false_reassurance_rate
        for g in range(5)
    ]
    assert rates[0] < 0.2
    assert rates[4] > 2 * rates[0]  # reassurance multiplies as detection dies
    assert rates[4] > 0.5


def test_safety_score_decline_direction_on_fixture():
    fx = collapse_safety_fixture()
    scores = [
        safety_score(evaluate_safety(fx.generations[g], fx.labels, fx.references))
        for g in range(5)
    ]
    assert all(b < a for a, b in zip(scores, scores[1:]))
    assert scores[0] > 0.85
    assert scores[4] < 0.45
