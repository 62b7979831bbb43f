import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from flicker.errors import ConfigError, UndefinedMetric
from flicker.imbalance import (
    ImbalanceThresholds,
    LabelDistribution,
    classification_report,
    cosine_similarity,
    f1_score,
    global_distribution,
    global_imbalance,
    local_imbalance,
    normalize,
    normalized_accuracy,
    report_value,
    round_half_away,
)

from conftest import D1

# Frozen oracle values (exact fractions / direct float evaluation, computed independently).
GD_D1 = [160, 1290, 2000, 10010]
GD_D3 = [40, 500, 2120, 10010]
GD_D1_NORM = [0.015548658268052505, 0.12536105728617333, 0.1943582283506563, 0.9727629328950348]
CS_D1 = [0.9996264852875434, 0.9944152579814185, 0.9936481176027444, 0.2460124552789071]

counts = st.lists(st.integers(0, 10**6), min_size=2, max_size=8)
positive_counts = st.lists(st.integers(1, 10**6), min_size=2, max_size=8)


@pytest.mark.parametrize(
    "ld, li",
    [([10, 500, 700, 4000], 0.0025), ([100, 50, 200, 10], 0.05), ([7, 7, 7, 7], 1.0)],
)
def test_local_imbalance_examples(ld, li):
    assert local_imbalance(ld) == pytest.approx(li, abs=1e-12)


def test_local_imbalance_all_zero():
    with pytest.raises(UndefinedMetric):
        local_imbalance([0, 0, 0])


def test_label_distribution_validation():
    with pytest.raises(ValueError):
        LabelDistribution([5])
    with pytest.raises(ValueError):
        LabelDistribution([1, -1])
    ld = LabelDistribution([3, 4])
    assert ld.total == 7 and list(ld) == [3, 4] and ld[1] == 4 and ld.to_list() == [3, 4]


def test_global_distribution_examples():
    assert global_distribution(D1).to_list() == GD_D1
    assert global_distribution([D1[0]]).to_list() == D1[0]
    assert global_distribution([[0, 0], [0, 0]]).to_list() == [0, 0]
    with pytest.raises(ValueError):
        global_distribution([[1, 2], [1, 2, 3]])
    with pytest.raises(ValueError):
        global_distribution([])


def test_global_imbalance_examples():
    assert global_imbalance(GD_D1) == pytest.approx(0.016, abs=5e-4)
    assert global_imbalance(GD_D1) == pytest.approx(160 / 10010)
    assert global_imbalance(GD_D3) == pytest.approx(0.0039, abs=5e-4)
    assert global_imbalance([9, 9, 9]) == 1.0


def test_normalize_examples():
    assert np.allclose(normalize([3, 4, 0, 0]), [0.6, 0.8, 0, 0])
    e2 = np.eye(4)[2]
    assert np.array_equal(normalize(e2), e2)
    assert np.allclose(normalize(GD_D1), GD_D1_NORM, rtol=0, atol=1e-15)
    with pytest.raises(UndefinedMetric):
        normalize([0, 0])


def test_cosine_examples():
    v = np.array([1.0, 2.0, 3.0])
    assert cosine_similarity(v, v) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    got = [cosine_similarity(ld, GD_D1) for ld in D1]
    assert np.allclose(got, CS_D1, rtol=0, atol=1e-14)
    assert int(np.argmax(got)) == 0 and int(np.argmin(got)) == 3
    with pytest.raises(UndefinedMetric):
        cosine_similarity([0, 0], [1, 1])


def test_normalized_accuracy_examples():
    assert normalized_accuracy(69.07, 13460, 14140) == pytest.approx(65.74838755304101, abs=1e-9)
    assert normalized_accuracy(70.0, 100, 100) == 70.0
    assert normalized_accuracy(70.0, 100, 50) == 70.0
    with pytest.raises(ValueError):
        normalized_accuracy(70.0, 0, 10)


def test_f1_from_table_values():
    assert f1_score(0.91, 0.31) == pytest.approx(0.46245901639344267)
    assert f1_score(0.91, 0.31) == pytest.approx(0.46, abs=5e-3)
    assert f1_score(0.0, 0.0) == 0.0


def test_classification_report_diagonal():
    for m in classification_report(np.diag([5, 6, 7])):
        assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)


def test_classification_report_oracle(rng):
    c = rng.integers(0, 50, (4, 4))
    c[2, :] = 0  # class never present
    c[:, 2] = 0  # and never predicted
    report = classification_report(c)
    for j, m in enumerate(report):
        tp = c[j, j]
        col, row = c[:, j].sum(), c[j, :].sum()
        p = tp / col if col else 0.0
        r = tp / row if row else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        assert (m.precision, m.recall, m.f1) == pytest.approx((p, r, f))
    assert report[2].f1 == 0.0


def test_rounding_helpers():
    assert round_half_away(2.5) == 3
    assert round_half_away(-2.5) == -3
    assert round_half_away(1 / 0.0067) == 149
    assert report_value(0.0159840159) == 0.016


def test_thresholds_validation():
    ImbalanceThresholds(0.1, 0.1, 1)
    for bad in [(0.1, 0.2, 10), (1.0, 0.05, 10), (0.1, 0.0, 10), (0.1, 0.05, 0)]:
        with pytest.raises(ConfigError):
            ImbalanceThresholds(*bad)


# -- properties ---------------------------------------------------------------------------


@given(positive_counts, st.integers(1, 1000))
def test_scale_invariance(ld, c):
    assert local_imbalance([c * x for x in ld]) == pytest.approx(local_imbalance(ld))


@given(positive_counts, st.randoms())
def test_permutation_invariance(ld, r):
    perm = list(ld)
    r.shuffle(perm)
    assert local_imbalance(perm) == local_imbalance(ld)


@given(
    st.lists(st.floats(-100, 100), min_size=3, max_size=3),
    st.lists(st.floats(-100, 100), min_size=3, max_size=3),
)
def test_cosine_normalization_identities(u, v):
    assume(np.linalg.norm(u) > 1e-3 and np.linalg.norm(v) > 1e-3)
    c = cosine_similarity(u, v)
    assert -1 - 1e-12 <= c <= 1 + 1e-12
    assert c == pytest.approx(cosine_similarity(normalize(u), v), abs=1e-12)
    assert c == pytest.approx(float(normalize(u) @ normalize(v)), abs=1e-12)


@given(counts)
def test_normalize_unit_norm(v):
    assume(any(v))
    assert abs(np.linalg.norm(normalize(v)) - 1) <= 1e-12


@given(st.floats(0, 100), st.integers(1, 10**6), st.integers(0, 10**6), st.integers(0, 10**6))
def test_normalized_accuracy_monotone(a, x, y1, y2):
    lo, hi = sorted((y1, y2))
    assert normalized_accuracy(a, x, hi) <= normalized_accuracy(a, x, lo) + 1e-12
    if hi <= x:
        assert normalized_accuracy(a, x, hi) == a


@given(st.lists(positive_counts, min_size=1, max_size=5).filter(lambda t: len({len(r) for r in t}) == 1),
       st.integers(0, 4), st.floats(0, 1))
def test_adding_to_scarcest_class_never_lowers_gi(table, who, frac):
    gd = global_distribution(table)
    g = gd.as_array()
    j = int(np.argmin(g))
    # raising the scarcest class past the largest one would create a new, larger gap
    extra = int(frac * (g.max() - g[j]))
    bumped = [list(r) for r in table]
    bumped[who % len(table)][j] += extra
    assert global_imbalance(global_distribution(bumped)) >= global_imbalance(gd)
