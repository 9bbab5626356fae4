import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collapselab.errors import UndefinedStatisticError, ValidationError
from collapselab.stats import (
    EditMetrics,
    RatingsMatrix,
    bootstrap_ci,
    chi_square_gof,
    chi_square_sf,
    classify_icc,
    cohens_kappa,
    correlation,
    edit_metrics,
    icc_2_1,
    kappa_interpretation,
    lcs_length,
    levenshtein,
    midranks,
    wasserstein1,
)

# ---------------------------------------------------------------------------
# Wasserstein
# ---------------------------------------------------------------------------


def test_wasserstein_identical_zero():
    assert wasserstein1([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0


def test_wasserstein_point_masses():
    assert wasserstein1([0.0], [3.0]) == 3.0


def test_wasserstein_sorted_pairing():
    assert wasserstein1([0.0, 1.0], [1.0, 2.0]) == pytest.approx(1.0, rel=1e-12)


def test_wasserstein_unequal_sizes_matches_scipy():
    scipy_stats = pytest.importorskip("scipy.stats")
    rng = np.random.default_rng(5)
    a = rng.normal(0, 1, size=37)
    b = rng.normal(0.5, 2, size=53)
    assert wasserstein1(a, b) == pytest.approx(
        scipy_stats.wasserstein_distance(a, b), rel=1e-9
    )


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=1, max_size=20),
    st.lists(st.floats(-50, 50), min_size=1, max_size=20),
    st.lists(st.floats(-50, 50), min_size=1, max_size=20),
)
def test_wasserstein_symmetry_and_triangle(a, b, c):
    dab = wasserstein1(a, b)
    dba = wasserstein1(b, a)
    assert dab == pytest.approx(dba, abs=1e-9)
    dac = wasserstein1(a, c)
    dcb = wasserstein1(c, b)
    assert dab <= dac + dcb + 1e-9


# ---------------------------------------------------------------------------
# Chi-square
# ---------------------------------------------------------------------------


def test_chi_square_exact_fit():
    stat, p = chi_square_gof([50, 50], [0.5, 0.5])
    assert stat == 0.0
    assert p == pytest.approx(1.0, abs=1e-12)


def test_chi_square_hand_value():
    stat, p = chi_square_gof([70, 30], [0.5, 0.5])
    assert stat == pytest.approx(16.0, rel=1e-12)
    scipy_stats = pytest.importorskip("scipy.stats")
    assert p == pytest.approx(scipy_stats.chi2.sf(16.0, 1), rel=1e-8)


def test_chi_square_gender_drift_significant():
    # 69.5% male in n=5534 against a 53.2% baseline
    males = round(0.695 * 5534)
    stat, p = chi_square_gof([males, 5534 - males], [0.532, 0.468])
    assert p < 0.05


def test_chi_square_reference_table_quantiles():
    # Reference upper quantiles: sf(3.841, 1) = 0.05, sf(5.991, 2) = 0.05,
    # sf(6.635, 1) = 0.01, sf(9.210, 2) = 0.01.
    assert chi_square_sf(3.841, 1) == pytest.approx(0.05, abs=1e-4)
    assert chi_square_sf(5.991, 2) == pytest.approx(0.05, abs=1e-4)
    assert chi_square_sf(6.635, 1) == pytest.approx(0.01, abs=1e-4)
    assert chi_square_sf(9.210, 2) == pytest.approx(0.01, abs=1e-4)


def test_chi_square_sf_matches_scipy_over_grid():
    scipy_stats = pytest.importorskip("scipy.stats")
    for df in (1, 2, 5, 10, 40):
        for x in (0.1, 1.0, 3.0, 10.0, 25.0, 80.0):
            assert chi_square_sf(x, df) == pytest.approx(
                float(scipy_stats.chi2.sf(x, df)), rel=1e-8, abs=1e-12
            )


def test_chi_square_zero_expected_cell_is_error():
    with pytest.raises(ValidationError):
        chi_square_gof([10, 0], [1.0, 0.0])


# ---------------------------------------------------------------------------
# ICC(2,1)
# ---------------------------------------------------------------------------


def _hand_icc(matrix):
    """Independent mean-squares oracle with explicit loops."""
    n = len(matrix)
    k = len(matrix[0])
    grand = sum(sum(row) for row in matrix) / (n * k)
    row_means = [sum(row) / k for row in matrix]
    col_means = [sum(matrix[i][j] for i in range(n)) / n for j in range(k)]
    ss_rows = k * sum((m - grand) ** 2 for m in row_means)
    ss_cols = n * sum((m - grand) ** 2 for m in col_means)
    ss_total = sum((matrix[i][j] - grand) ** 2 for i in range(n) for j in range(k))
    ms_r = ss_rows / (n - 1)
    ms_c = ss_cols / (k - 1)
    ms_e = (ss_total - ss_rows - ss_cols) / ((n - 1) * (k - 1))
    return (ms_r - ms_e) / (ms_r + (k - 1) * ms_e + (k / n) * (ms_c - ms_e))


def test_icc_identical_raters_is_one():
    matrix = [[1.0, 1.0], [2.0, 2.0], [5.0, 5.0], [9.0, 9.0]]
    assert icc_2_1(matrix) == pytest.approx(1.0, rel=1e-12)


def test_icc_matches_hand_anova_on_4x2():
    matrix = [[9.0, 2.0], [4.0, 5.0], [7.0, 8.0], [1.0, 3.0]]
    assert icc_2_1(matrix) == pytest.approx(_hand_icc(matrix), rel=1e-12)


def test_icc_annotator_study_tiers_classified_good():
    # Deterministic two-annotator fixtures (25 subjects, as in the edit
    # study) landing near the reported reliability values; both sit in the
    # "good" band [0.60, 0.75).
    rng = np.random.default_rng(8)
    subjects = rng.uniform(0, 100, size=25)
    values = []
    for target in (0.705, 0.747):
        noise_sd = math.sqrt(np.var(subjects) * (1 - target) / target)
        matrix = np.column_stack(
            [subjects + rng.normal(0, noise_sd, 25) for _ in range(2)]
        )
        value = icc_2_1(matrix.tolist())
        values.append(value)
        assert classify_icc(value) == "good"
        assert value == pytest.approx(_hand_icc(matrix.tolist()), rel=1e-12)
    assert values == pytest.approx([0.6702, 0.7175], abs=1e-3)


def test_icc_shift_invariance_and_absolute_agreement():
    matrix = [[9.0, 2.0], [4.0, 5.0], [7.0, 8.0], [1.0, 3.0]]
    base = icc_2_1(matrix)
    shifted = [[v + 13.5 for v in row] for row in matrix]
    assert icc_2_1(shifted) == pytest.approx(base, rel=1e-9)
    one_rater = [[row[0] + 6.0, row[1]] for row in matrix]
    assert icc_2_1(one_rater) < base


def test_icc_zero_variance_flagged():
    with pytest.raises(UndefinedStatisticError):
        icc_2_1([[2.0, 2.0], [2.0, 2.0]])


def test_ratings_matrix_validation():
    with pytest.raises(ValidationError):
        RatingsMatrix(((1.0,),))
    with pytest.raises(ValidationError):
        RatingsMatrix(((1.0, 2.0), (1.0,)))
    with pytest.raises(ValidationError):
        RatingsMatrix(((1.0, float("nan")), (1.0, 2.0)))


# ---------------------------------------------------------------------------
# Kappa
# ---------------------------------------------------------------------------


def test_kappa_hand_2x2():
    a = [1] * 40 + [1] * 10 + [0] * 10 + [0] * 40
    b = [1] * 40 + [0] * 10 + [1] * 10 + [0] * 40
    assert cohens_kappa(a, b) == pytest.approx(0.6, rel=1e-12)


def test_kappa_perfect_and_chance():
    assert cohens_kappa([0, 1, 0, 1], [0, 1, 0, 1]) == pytest.approx(1.0)
    rng = np.random.default_rng(0)
    a = rng.integers(0, 2, 4000).tolist()
    b = rng.integers(0, 2, 4000).tolist()
    assert abs(cohens_kappa(a, b)) < 0.05


def test_kappa_constant_marginals_flagged():
    with pytest.raises(UndefinedStatisticError):
        cohens_kappa([1, 1, 1], [1, 1, 1])


def test_kappa_interpretation_thresholds():
    assert kappa_interpretation(0.9) == "almost perfect"
    assert kappa_interpretation(0.7) == "substantial"
    assert kappa_interpretation(0.5) == "moderate"
    assert kappa_interpretation(0.3) == "fair"
    assert kappa_interpretation(0.1) == "slight"


# ---------------------------------------------------------------------------
# Correlation
# ---------------------------------------------------------------------------


def test_correlation_linear():
    x = [1.0, 2.0, 3.0, 4.0]
    y = [2 * v + 1 for v in x]
    assert correlation(x, y, "pearson") == pytest.approx(1.0)
    assert correlation(x, y, "spearman") == pytest.approx(1.0)


def test_correlation_monotone_nonlinear():
    x = [-2.0, -1.0, 0.0, 1.0, 2.0]
    y = [v**3 for v in x]
    assert correlation(x, y, "spearman") == pytest.approx(1.0)
    assert correlation(x, y, "pearson") < 1.0


def test_spearman_with_ties_matches_midrank_oracle():
    x = [1.0, 2.0, 2.0, 3.0, 4.0]
    y = [10.0, 20.0, 25.0, 25.0, 40.0]

    def brute_midranks(vals):
        out = []
        s = sorted(vals)
        for v in vals:
            positions = [i + 1 for i, u in enumerate(s) if u == v]
            out.append(sum(positions) / len(positions))
        return out

    rx, ry = brute_midranks(x), brute_midranks(y)
    expected = correlation(rx, ry, "pearson")
    assert correlation(x, y, "spearman") == pytest.approx(expected, rel=1e-12)
    np.testing.assert_allclose(midranks(x), brute_midranks(x))


def test_correlation_constant_is_error():
    with pytest.raises(UndefinedStatisticError):
        correlation([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValidationError):
        correlation([1.0, 2.0], [1.0, 2.0])


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------


def test_bootstrap_constant_samples_degenerate_interval():
    lo, hi = bootstrap_ci([3.0] * 10, np.mean, iterations=200, seed=1)
    assert lo == hi == 3.0


def test_bootstrap_deterministic_under_seed():
    rng = np.random.default_rng(2)
    x = rng.normal(size=40)
    a = bootstrap_ci(x, np.mean, iterations=500, seed=7)
    b = bootstrap_ci(x, np.mean, iterations=500, seed=7)
    assert a == b
    c = bootstrap_ci(x, np.mean, iterations=500, seed=8)
    assert a != c


def test_bootstrap_interval_width_near_normal_theory():
    rng = np.random.default_rng(3)
    x = rng.normal(0, 1, size=100)
    lo, hi = bootstrap_ci(x, np.mean, iterations=4000, confidence=0.95, seed=4)
    theory = 2 * 1.96 * x.std(ddof=1) / 10.0
    assert abs((hi - lo) - theory) / theory < 0.2


def test_bootstrap_validation():
    with pytest.raises(ValidationError):
        bootstrap_ci([1.0], np.mean, iterations=200, seed=0)
    with pytest.raises(ValidationError):
        bootstrap_ci([1.0, 2.0], np.mean, iterations=50, seed=0)


# ---------------------------------------------------------------------------
# Edit metrics
# ---------------------------------------------------------------------------


def test_edit_metrics_identity():
    m = edit_metrics("take two tablets daily", "take two tablets daily", 12.0)
    assert m.edit_distance_percent == 0.0
    assert m.word_error_rate == 0.0
    assert m.retention_percent == 100.0
    assert m.editing_time_seconds == 12.0


def test_edit_metrics_kitten_sitting():
    m = edit_metrics("kitten", "sitting")
    assert m.edit_distance_percent == pytest.approx(50.0)


def test_edit_metrics_heavy_rewrite_direction():
    original = "patient stable continue current medication follow up in two weeks"
    edited = (
        "reviewed imaging and labs today; plan adjusted entirely with new "
        "regimen, urgent cardiology referral arranged, safety netting advised"
    )
    m = edit_metrics(original, edited)
    assert m.edit_distance_percent > 85.0
    assert m.retention_percent < 22.0


def test_levenshtein_matches_recursive_oracle_short_strings():
    @lru_cache(maxsize=None)
    def rec(a, b):
        if not a:
            return len(b)
        if not b:
            return len(a)
        cost = 0 if a[0] == b[0] else 1
        return min(rec(a[1:], b) + 1, rec(a, b[1:]) + 1, rec(a[1:], b[1:]) + cost)

    rng = np.random.default_rng(9)
    alphabet = "abcd"
    for _ in range(150):
        la, lb = rng.integers(0, 9, size=2)
        a = "".join(alphabet[i] for i in rng.integers(0, 4, size=la))
        b = "".join(alphabet[i] for i in rng.integers(0, 4, size=lb))
        assert levenshtein(a, b) == rec(a, b)


@settings(max_examples=40, deadline=None)
@given(st.text(alphabet="abcd", max_size=8), st.text(alphabet="abcd", max_size=8))
def test_levenshtein_metric_properties(a, b):
    d = levenshtein(a, b)
    assert d == levenshtein(b, a)
    assert (d == 0) == (a == b)
    assert d <= max(len(a), len(b))


def test_lcs_length_basics():
    assert lcs_length("abcde", "ace") == 3
    assert lcs_length([], ["a"]) == 0
    assert lcs_length(["x", "y"], ["y", "x"]) == 1


def test_edit_metrics_requires_original():
    with pytest.raises(ValidationError):
        edit_metrics("", "something")
