from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flicker.errors import CannotAugment, ConfigError
from flicker.he import make_backend
from flicker.imbalance import local_imbalance, round_half_away
from flicker.resample import (
    AlternatingResampler,
    RedundancyPolicy,
    SampleStore,
    alternate_resample,
    baseline_oversample_all,
    baseline_undersample_all,
    feature_width,
    global_redundancy_check,
    local_redundancy_candidates,
    oversample_count,
    oversample_step,
    peer_view,
    similarity_stats,
    undersample_step,
)

from conftest import D1


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def server_for(backend):
    return SimpleNamespace(keys=backend.keygen(11))


def peers_from(rows, backend, width=4, client_id=2):
    store = SampleStore(np.zeros(len(rows), dtype=int), np.asarray(rows, dtype=float), n_classes=2)
    return peer_view(client_id, store, backend, width)


# -- over-sampling ---------------------------------------------------------------------


def test_oversample_table_row():
    store = SampleStore.from_counts(D1[0], payload_dim=3)
    assert oversample_step(store) == 400
    assert store.counts().to_list() == [410, 500, 700, 4000]
    assert store.li == pytest.approx(0.1025)


@pytest.mark.parametrize("li, n", [(0.0025, 400), (0.0067, 149), (0.5, 2)])
def test_oversample_count(li, n):
    assert oversample_count(li) == n


@pytest.mark.parametrize("li", [0.0, 1.0, 1.5])
def test_oversample_count_rejects(li):
    with pytest.raises(ValueError):
        oversample_count(li)


def test_oversample_empty_minority():
    store = SampleStore.from_counts([0, 5, 9])
    with pytest.raises(CannotAugment):
        oversample_step(store, li=0.5)


@given(st.lists(st.integers(1, 300), min_size=2, max_size=5), st.integers(0, 2**16))
def test_oversample_touches_only_minority(counts, seed):
    store = SampleStore.from_counts(counts, payload_dim=2, seed=seed)
    before = store.counts().as_array()
    li = local_imbalance(before)
    if li >= 1:
        return
    j = int(np.argmin(before))
    n = oversample_step(store)
    after = store.counts().as_array()
    assert n == round_half_away(1 / li)
    expect = before.copy()
    expect[j] += n
    assert np.array_equal(after, expect)


def test_oversample_draws_within_class():
    store = SampleStore([0, 0, 1, 1, 1, 1], np.array([[0.0], [0.0], [9.0], [9.0], [9.0], [9.0]]), seed=2)
    oversample_step(store)
    new = store.payloads[store.labels == 0]
    assert np.all(np.abs(new) < 1.0)


# -- local redundancy ---------------------------------------------------------------------


def test_candidates_identical_vectors():
    store = SampleStore([1, 1, 1, 0], np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0], [5.0, 0.0]]))
    c = local_redundancy_candidates(store, 100)
    assert c.majority_class == 1
    assert c.ids == [0, 1, 2]
    assert all(e.mean_similarity == pytest.approx(1.0) for e in c)
    assert all(e.variance_similarity == pytest.approx(0.0, abs=1e-12) for e in c)


def test_candidate_count(rng):
    store = SampleStore(np.ones(20, dtype=int), rng.normal(size=(20, 4)), n_classes=2)
    assert len(local_redundancy_candidates(store, 10)) == 2


def test_candidates_prefer_cluster(rng):
    center = unit(rng.normal(size=8))
    cluster = center + 0.01 * rng.normal(size=(10, 8))
    scattered = rng.normal(size=(10, 8))
    x = np.vstack([scattered, cluster])
    store = SampleStore(np.ones(20, dtype=int), x, n_classes=2)
    c = local_redundancy_candidates(store, 10)
    assert len(c) == 2 and all(i >= 10 for i in c.ids)
    variances = [e.variance_similarity for e in c]
    assert variances == sorted(variances, reverse=True)


def test_candidates_oracle(rng):
    x = rng.normal(size=(30, 5))
    store = SampleStore(np.zeros(30, dtype=int), x, n_classes=2)
    c = local_redundancy_candidates(store, 20)
    u = x / np.linalg.norm(x, axis=1, keepdims=True)
    s = u @ u.T
    off = ~np.eye(30, dtype=bool)
    mean = np.array([s[i][off[i]].mean() for i in range(30)])
    var = np.array([s[i][off[i]].var() for i in range(30)])
    top = sorted(range(30), key=lambda i: (-mean[i], i))[:6]
    expect = sorted(top, key=lambda i: (-var[i], i))
    assert c.ids == expect
    assert np.allclose([e.mean_similarity for e in c], mean[expect])


def test_candidates_skip_zero_vectors():
    x = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.1], [0.0, 1.0]])
    store = SampleStore([0, 0, 0, 0], x, n_classes=2)
    assert 0 not in local_redundancy_candidates(store, 100).ids


def test_similarity_stats_blocked(rng):
    u = rng.normal(size=(50, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    m1, v1 = similarity_stats(u, block=7)
    m2, v2 = similarity_stats(u)
    assert np.allclose(m1, m2) and np.allclose(v1, v2)


@given(st.integers(0, 2**16))
def test_candidates_deterministic(seed):
    rng = np.random.default_rng(seed)
    x = np.round(rng.normal(size=(12, 3)), 1)
    a = local_redundancy_candidates(SampleStore(np.zeros(12, dtype=int), x, n_classes=2), 50)
    b = local_redundancy_candidates(SampleStore(np.zeros(12, dtype=int), x.copy(), n_classes=2), 50)
    assert a.ids == b.ids


def test_policy_validation():
    RedundancyPolicy(100, 0.5, 100)
    for bad in [(0, 0.98, 50), (101, 0.98, 50), (10, 1.0, 50), (10, 0.0, 50), (10, 0.98, 0), (10, 0.98, 101)]:
        with pytest.raises(ConfigError):
            RedundancyPolicy(*bad)


def test_feature_width():
    assert [feature_width(k) for k in (1, 2, 3, 4, 5, 16)] == [1, 2, 4, 4, 8, 16]


# -- global redundancy -----------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["mock", "ckks"])
def test_global_check_examples(toy, kind):
    be = make_backend(kind, toy)
    server = server_for(be)
    cand = unit([1, 2, 0, 1])
    policy = RedundancyPolicy(10, 0.98, 50)
    same = peers_from([cand] * 5, be)
    assert global_redundancy_check(cand, [same], policy, be, server).remove
    ortho = peers_from([unit([0, 0, 1, 0])] * 5, be)
    check = global_redundancy_check(cand, [ortho], policy, be, server)
    assert not check.remove and check.above == 0
    # exactly 40% of peer vectors sit above eta
    mixed = [peers_from([cand] * 4 + [unit([0, 0, 1, 0])] * 2, be, client_id=2),
             peers_from([unit([-2, 1, 0, 0])] * 4, be, client_id=3)]
    assert not global_redundancy_check(cand, mixed, policy, be, server).remove
    assert global_redundancy_check(cand, mixed, RedundancyPolicy(10, 0.98, 30), be, server).remove


def test_global_check_without_peers(toy):
    be = make_backend("mock", toy)
    check = global_redundancy_check(unit([1, 0]), [], RedundancyPolicy(), be, server_for(be))
    assert not check.remove and check.total == 0


def test_global_check_full_count_when_undecided(toy):
    be = make_backend("mock", toy)
    cand = unit([1, 0, 0, 0])
    peer = peers_from([cand] * 3 + [unit([0, 1, 0, 0])] * 3, be)
    check = global_redundancy_check(cand, [peer], RedundancyPolicy(10, 0.98, 50), be, server_for(be))
    assert (check.remove, check.above, check.total) == (True, 3, 6)


# -- under-sampling ---------------------------------------------------------------------------


def _dup_store(n_major=20, seed=0):
    rng = np.random.default_rng(seed)
    major = np.tile(unit([1, 1, 0, 0]), (n_major, 1)) + 1e-4 * rng.normal(size=(n_major, 4))
    minor = rng.normal(size=(2, 4))
    return SampleStore([1] * n_major + [0, 0], np.vstack([major, minor]), n_classes=2, seed=seed)


def test_undersample_all_redundant(toy):
    be = make_backend("mock", toy)
    store = _dup_store()
    peer = peers_from([unit([1, 1, 0, 0])] * 6, be)
    cands = local_redundancy_candidates(store, 10)
    removed = undersample_step(store, [peer], RedundancyPolicy(), be, server_for(be))
    assert removed == len(cands) == 2
    assert store.counts().to_list() == [2, 18]


def test_undersample_no_peers(toy):
    be = make_backend("mock", toy)
    store = _dup_store()
    assert undersample_step(store, [], RedundancyPolicy(), be, server_for(be)) == 0


@given(st.integers(0, 2**16), st.floats(0.5, 0.999))
def test_undersample_bounds(toy, seed, frac_similar):
    be = make_backend("mock", toy)
    rng = np.random.default_rng(seed)
    store = SampleStore(rng.integers(0, 3, 40), rng.normal(size=(40, 3)), n_classes=3, seed=seed)
    before = store.counts().as_array()
    j = store.majority_class()
    n_cands = len(local_redundancy_candidates(store, 25))
    peer_rows = rng.normal(size=(10, 3))
    removed = undersample_step(store, [peers_from(peer_rows, be)], RedundancyPolicy(25, frac_similar, 10), be,
                               server_for(be))
    after = store.counts().as_array()
    assert removed <= n_cands
    assert before[j] - after[j] == removed
    assert np.array_equal(np.delete(before, j), np.delete(after, j))


def test_undersample_backends_agree(toy):
    results = []
    for kind in ("mock", "ckks"):
        be = make_backend(kind, toy)
        store = _dup_store(40, seed=3)
        peers = [peers_from(np.vstack([np.tile(unit([1, 1, 0, 0]), (5, 1)), np.eye(4)]), be)]
        undersample_step(store, peers, RedundancyPolicy(), be, server_for(be))
        results.append(store.ids.tolist())
    assert results[0] == results[1]


def test_peer_view_cached(toy):
    be = make_backend("mock", toy)
    store = _dup_store()
    a = peer_view(1, store, be, 4)
    assert peer_view(1, store, be, 4) is a
    store.remove_ids([0])
    assert peer_view(1, store, be, 4) is not a


# -- alternation ---------------------------------------------------------------------------------


def test_alternation_first_step_over():
    store = SampleStore.from_counts(D1[0])
    r = AlternatingResampler(store, undersampler=lambda s: 0)
    rep = alternate_resample(r, 0.05)
    assert (rep.action, rep.added, rep.admissible) == ("over", 400, True)
    assert store.counts().to_list() == [410, 500, 700, 4000]
    assert rep.li_after == pytest.approx(0.1025)


def test_alternation_second_step_tries_under():
    store = SampleStore.from_counts([1, 200, 300])
    calls = []

    def under(s):
        calls.append(len(s))
        return s.remove_ids(s.ids[s.labels == 2][:10])

    r = AlternatingResampler(store, under)
    r.step(0.9)
    rep = r.step(0.9)
    assert rep.action == "under" and rep.removed == 10 and len(calls) == 1


def test_alternation_noop_when_balanced():
    r = AlternatingResampler(SampleStore.from_counts([100, 50, 200, 10]))
    rep = r.step(0.05)
    assert (rep.action, rep.admissible) == (None, False)


def test_alternation_inadmissible():
    r = AlternatingResampler(SampleStore.from_counts([0, 10]), undersampler=lambda s: 0)
    rep = r.step(0.05)
    assert not rep.admissible and rep.action is None


@given(st.lists(st.booleans(), min_size=1, max_size=12))
def test_alternation_sequence(under_works):
    store = SampleStore.from_counts([1, 5000, 6000])
    flags = iter(under_works)

    def under(s):
        if next(flags, False):
            return s.remove_ids(s.ids[s.labels == s.majority_class()][:1])
        return 0

    r = AlternatingResampler(store, under)
    actions = []
    for _ in range(8):
        rep = r.step(0.999)
        if not rep.admissible:
            break
        actions.append(rep.action)
    # an "under" never follows another "under"; "over" repeats only when under was skipped
    for a, b in zip(actions, actions[1:]):
        assert not (a == "under" and b == "under")
    assert actions[0] == "over"


# -- baselines ---------------------------------------------------------------------------------


def test_baseline_over_examples():
    stores = [SampleStore.from_counts(D1[0]), SampleStore.from_counts(D1[3]), SampleStore.from_counts([49, 1000])]
    reps = baseline_oversample_all(stores, 0.05)
    assert stores[0].counts().to_list() == [410, 500, 700, 4000] and reps[0].steps == 1
    assert stores[1].counts().to_list() == D1[3] and reps[1].steps == 0
    assert reps[2].steps >= 1 and stores[2].li >= 0.05


@given(st.lists(st.integers(1, 500), min_size=2, max_size=4))
def test_baseline_over_always_reaches_threshold(counts):
    store = SampleStore.from_counts(counts)
    baseline_oversample_all([store], 0.05)
    assert store.li >= 0.05


def test_baseline_under_examples(rng):
    balanced = SampleStore.from_counts([50, 50], payload_dim=3)
    skewed = SampleStore(np.r_[np.zeros(5, int), np.ones(300, int)], rng.normal(size=(305, 3)))
    reps = baseline_undersample_all([balanced, skewed], 10, 0.05)
    assert reps[0].removed == 0 and reps[0].steps == 0
    assert skewed.li >= 0.05 or reps[1].exhausted
    strict = baseline_undersample_all([SampleStore(np.r_[np.zeros(1, int), np.ones(40, int)], np.eye(41))],
                                      10, 0.05, strict_eta=0.98)
    assert strict[0].exhausted and strict[0].removed == 0
