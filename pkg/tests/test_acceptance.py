"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (the lines are written to
the terminal even without ``-s``).
"""

import functools
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flicker.config import PRESET_TABLES, parse_config, preset_config
from flicker.he import make_backend
from flicker.he.params import default_params
from flicker.imbalance import global_distribution, global_imbalance, local_imbalance, normalize, normalized_accuracy
from flicker.protocol import ProtocolConfig, ProtocolTrace, privacy_audit, run_flicker
from flicker.resample import SampleStore, oversample_step

PRESETS = ("d1", "d2", "d3")
N_CLIENTS, MAX_ROUNDS = 4, 10
STATED_BUDGET = 2 * N_CLIENTS * MAX_ROUNDS + 3 * N_CLIENTS + 2

# every protocol trace produced here, for the privacy scan
TRACES: list[ProtocolTrace] = []


@pytest.fixture
def verdict(capsys):
    def emit(label: str, ok: bool, detail: str = ""):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {label}" + (f" ({detail})" if detail else ""))
        return ok

    return emit


def stores_for(table, payload_dim=2):
    return [SampleStore.from_counts(r, payload_dim=payload_dim, seed=i) for i, r in enumerate(table)]


@functools.cache
def preset_run(name: str, kind: str):
    out = run_flicker(ProtocolConfig(N_CLIENTS, backend=kind, seed=0), stores_for(PRESET_TABLES[name]))
    TRACES.append(out.trace)
    return out


def random_tables(seed: int, count: int, high: int):
    # a log-uniform size per class, jittered per client, so most tables start well below the server threshold
    rng = np.random.default_rng(seed)
    tables = []
    for _ in range(count):
        sizes = np.exp(rng.uniform(0, np.log(high), 4))
        jitter = np.exp(rng.uniform(-1, 1, (N_CLIENTS, 4)))
        tables.append(np.clip(sizes * jitter, 1, high).astype(int).tolist())
    return tables


log_counts = st.floats(0, np.log(3000)).map(lambda e: int(np.exp(e)))


# -- 1 -------------------------------------------------------------------------------------


@pytest.mark.parametrize(
    "name, expected",
    [
        ("d1", 0.016),
        # the reference value for d2 is 0.016, but its column sums give 110/10010
        pytest.param("d2", 0.016, marks=pytest.mark.xfail(strict=True, reason="printed GI disagrees with its table")),
        ("d3", 0.0039),
    ],
)
def test_c1_global_imbalance(name, expected, verdict):
    t0 = time.perf_counter()
    cfg = parse_config(preset_config(name))
    gi = global_imbalance(global_distribution(cfg.distribution))
    elapsed = time.perf_counter() - t0
    ok = abs(gi - expected) <= 5e-4 and elapsed < 1
    verdict(f"C1 global imbalance {name}", ok, f"GI={gi:.6f} expected {expected}, {elapsed:.3f}s")
    assert abs(gi - expected) <= 5e-4
    assert elapsed < 1


# -- 2 -------------------------------------------------------------------------------------


def test_c2_oversample_single_step(verdict):
    t0 = time.perf_counter()
    store = SampleStore.from_counts([10, 500, 700, 4000])
    li0 = store.li
    oversample_step(store)
    counts = store.counts().to_list()
    li = local_imbalance(counts)
    elapsed = time.perf_counter() - t0
    ok = li0 == 0.0025 and counts[0] == 410 and li == 0.1025 and elapsed < 1
    verdict("C2 over-sampling step", ok, f"class 0 -> {counts[0]}, LI {li}, {elapsed:.3f}s")
    assert li0 == 0.0025
    assert counts == [410, 500, 700, 4000]
    assert li == 0.1025
    assert elapsed < 1


# -- 3 -------------------------------------------------------------------------------------


def check_budget(out):
    ring = out.trace.phases_of("ring")
    locs = out.trace.phases_of("localization")
    assert [p.booked for p in ring] == [N_CLIENTS + 1]
    assert out.initial_gi >= 0.1 or locs[0].participants == N_CLIENTS
    for p in locs:
        assert p.booked == 2 * p.participants + 1
        if p.participants == N_CLIENTS:
            assert p.booked == 2 * N_CLIENTS + 1
    assert out.trace.budget_total <= STATED_BUDGET


@pytest.mark.parametrize("name", PRESETS)
def test_c3_op_budget_presets(name, verdict):
    out = preset_run(name, "mock")
    try:
        check_budget(out)
        ok = True
    finally:
        verdict(f"C3 op budget {name}", locals().get("ok", False), f"total {out.trace.budget_total} <= {STATED_BUDGET}")


@settings(max_examples=25, derandomize=True)
@given(st.lists(st.lists(log_counts, min_size=4, max_size=4), min_size=N_CLIENTS, max_size=N_CLIENTS),
       st.integers(0, 2**16))
def test_c3_op_budget_random(table, seed):
    out = run_flicker(ProtocolConfig(N_CLIENTS, seed=seed), stores_for(table, payload_dim=0))
    TRACES.append(out.trace)
    check_budget(out)


def test_c3_op_budget_random_verdict(verdict):
    totals, localized = [], 0
    for table in random_tables(3, 20, 3000):
        out = run_flicker(ProtocolConfig(N_CLIENTS), stores_for(table, payload_dim=0))
        TRACES.append(out.trace)
        check_budget(out)
        totals.append(out.trace.budget_total)
        localized += bool(out.dominant_sequence)
    verdict("C3 op budget random scenarios", True,
            f"{len(totals)} scenarios, {localized} with localization, max total {max(totals)}")
    assert localized >= 15


# -- 4 -------------------------------------------------------------------------------------


def test_c4_he_precision(verdict):
    t0 = time.perf_counter()
    be = make_backend("ckks", default_params(), seed=4)
    keys = be.keygen(4, rotation_steps=[1, 2])
    sk, pk, gk = keys.secret_key, keys.public_key, keys.galois_keys
    rng = np.random.default_rng(2024)

    count_errors = 0
    for _ in range(1000):
        v = rng.integers(0, 10**6, 4, endpoint=True)
        ct = be.encrypt(pk, v)
        expect = v.copy()
        for _ in range(rng.integers(0, 10, endpoint=True)):
            d = rng.integers(0, 10**6, 4, endpoint=True)
            if rng.random() < 0.5:
                ct, expect = be.add_plain(ct, d), expect + d
            else:
                ct, expect = be.sub_plain(ct, d), expect - d
        got = np.rint(be.decrypt_values(sk, ct)[:4]).astype(np.int64)
        count_errors += int(not np.array_equal(got, expect))

    worst = 0.0
    for i in range(1000):
        u, w = normalize(rng.normal(size=4)), normalize(rng.normal(size=4))
        out = be.decrypt_values(sk, be.blinded_inner_product(be.encrypt(pk, u), w, 4, i, gk))
        worst = max(worst, abs(out[0] - float(u @ w)))
    elapsed = time.perf_counter() - t0

    ok = count_errors == 0 and worst < 1e-3 and elapsed < 60
    verdict("C4 HE precision", ok, f"{count_errors} count errors, max cosine error {worst:.2e}, {elapsed:.1f}s")
    assert count_errors == 0
    assert worst < 1e-3
    assert elapsed < 60


# -- 5 -------------------------------------------------------------------------------------


def fingerprint(out):
    return (
        out.dominant_sequence,
        {i: ld.to_list() for i, ld in out.lds.items()},
        out.trace.totals,
        [(p.step, p.participants, p.booked) for p in out.trace.phases],
    )


@pytest.mark.parametrize("name", PRESETS)
def test_c5_backend_equivalence_presets(name, verdict):
    same = fingerprint(preset_run(name, "ckks")) == fingerprint(preset_run(name, "mock"))
    verdict(f"C5 backend equivalence {name}", same, f"dominant sequence {preset_run(name, 'mock').dominant_sequence}")
    assert same


def test_c5_backend_equivalence_random(verdict):
    mismatches = 0
    for i, table in enumerate(random_tables(5, 10, 400)):
        runs = []
        for kind in ("mock", "ckks"):
            out = run_flicker(ProtocolConfig(N_CLIENTS, backend=kind, seed=i), stores_for(table))
            TRACES.append(out.trace)
            runs.append(fingerprint(out))
        mismatches += runs[0] != runs[1]
    verdict("C5 backend equivalence random scenarios", mismatches == 0, f"{mismatches} of 10 differ")
    assert mismatches == 0


# -- 6 -------------------------------------------------------------------------------------


@pytest.mark.parametrize("name", PRESETS)
def test_c6_termination(name, verdict):
    out = preset_run(name, "mock")
    ok = out.reached_threshold or out.all_saturated
    verdict(f"C6 termination {name}", ok, f"final GI {out.gi:.4f}, saturated {sorted(out.saturated)}")
    assert ok


# -- 7 -------------------------------------------------------------------------------------


def test_c7_normalized_accuracy(verdict):
    x = int(np.sum(PRESET_TABLES["d1"]))
    y = x + 680
    a_n = normalized_accuracy(69.07, x, y)
    ok = (x, y) == (13460, 14140) and abs(a_n - 65.75) <= 0.01
    verdict("C7 normalized accuracy", ok, f"A_N={a_n:.4f}")
    assert (x, y) == (13460, 14140)
    assert abs(a_n - 65.75) <= 0.01


@given(st.floats(0, 100), st.integers(1, 10**7), st.floats(0, 1))
def test_c7_clamp(a, x, frac):
    y = int(frac * x)
    assert normalized_accuracy(a, x, y) == a


# -- 8 -------------------------------------------------------------------------------------


def test_c8_directional_effect(verdict):
    t0 = time.perf_counter()
    cfg = parse_config(preset_config("d1"))
    from flicker.fedsim import run_experiment

    seeds = range(5)
    res = {c: [] for c in ("none", "under", "flicker")}
    for seed in seeds:
        for c in res:
            r = run_experiment(cfg.scenario(seed), c, seed=seed)
            if r.outcome is not None:
                TRACES.append(r.outcome.trace)
            res[c].append(r)
    elapsed = time.perf_counter() - t0
    acc = {c: float(np.mean([r.final_normalized for r in rs])) for c, rs in res.items()}
    f1 = {c: float(np.mean([r.f1(0) for r in rs])) for c, rs in res.items()}
    ok = acc["flicker"] > acc["none"] and acc["flicker"] > acc["under"] and f1["flicker"] > f1["none"] and elapsed < 120
    verdict(
        "C8 directional downstream effect",
        ok,
        f"A_N flicker {acc['flicker']:.2f} none {acc['none']:.2f} under {acc['under']:.2f}; "
        f"class-0 F1 {f1['none']:.3f} -> {f1['flicker']:.3f}; {elapsed:.1f}s",
    )
    assert acc["flicker"] > acc["none"]
    assert acc["flicker"] > acc["under"]
    assert f1["flicker"] > f1["none"]
    assert elapsed < 120


# -- 9 -------------------------------------------------------------------------------------


def test_c9_privacy_scan(verdict):
    if not TRACES:  # run in isolation
        for name in PRESETS:
            preset_run(name, "mock")
    findings = [f for t in TRACES for f in privacy_audit(t)]
    n_events = sum(len(t.events) for t in TRACES)
    verdict("C9 privacy boundary scan", not findings, f"{len(TRACES)} traces, {n_events} messages, {len(findings)} leaks")
    assert not findings
