"""Feature extraction: windows, hashed n-grams, resource statistics, scaling."""

from __future__ import annotations

import numpy as np
import pytest

from warden.datagen import builtin_profiles, gen_trace
from warden.features import (
    EmptyDataset,
    EmptyTrace,
    FeatureConfig,
    FeatureVector,
    Scaler,
    Window,
    apply_scaler,
    extract,
    feature_matrix,
    fit_scaler,
    make_windows,
    ngram_features,
    resource_features,
)
from warden.hashing import MASK64
from warden.records import ENTER, EXIT, LabeledTrace, ResourceSample, SyscallEvent


def fnv_oracle(text: str) -> int:
    from functools import reduce

    return reduce(lambda h, b: ((h ^ b) * 0x100000001B3) & MASK64, text.encode(), 0xCBF29CE484222325)


def ev(t_s, name="read", pid=1, tid=1, direction=ENTER, job="j1"):
    retval = 0 if direction == EXIT else None
    return SyscallEvent(
        t_ns=int(t_s * 1e9), job_id=job, pid=pid, tid=tid, name=name, direction=direction,
        args_digest="", retval=retval,
    )


def rs(t_s, cpu=0.0, rss=0, rx=0, tx=0, io_r=0, io_w=0, job="j1"):
    return ResourceSample(
        t_ns=int(t_s * 1e9), job_id=job, cpu_pct=cpu, rss_bytes=rss,
        net_rx_bytes=rx, net_tx_bytes=tx, io_read_bytes=io_r, io_write_bytes=io_w,
    )


def trace_of(records, job="j1"):
    return LabeledTrace(job_id=job, label="normal", profile_name="", records=tuple(sorted(records, key=lambda r: r.t_ns)))


CFG = FeatureConfig()


# --- make_windows -----------------------------------------------------------------

def test_single_window_holds_all_events():
    # trace spanning exactly one window with window == hop: one window, all events
    events = [ev(t) for t in (0.0, 2.0, 4.0, 6.0, 9.0)]
    config = FeatureConfig(window_s=10.0, hop_s=10.0)
    windows = make_windows(trace_of(events), config)
    assert [w.index for w in windows] == [0]
    assert len(windows[0].events) == 5


def test_overlapping_hop_windows():
    events = [ev(t) for t in (0.0, 2.0, 4.0, 6.0, 9.0)]
    windows = make_windows(trace_of(events), CFG)  # hop 5 s: second window starts at 5 <= 9
    assert [w.index for w in windows] == [0, 1]
    assert len(windows[0].events) == 5
    assert len(windows[1].events) == 2  # events at 6 and 9


def test_window_membership_hand_oracle():
    # window 10 s, hop 5 s, events at 0 s and 12 s
    events = [ev(0.0), ev(12.0)]
    windows = make_windows(trace_of(events), CFG)
    assert [(w.index, len(w.events)) for w in windows] == [(0, 1), (1, 1), (2, 1)]
    assert windows[1].events[0].t_ns == int(12e9)
    assert windows[0].t_start_ns == 0 and windows[0].t_end_ns == int(10e9)


def test_windows_without_syscalls_are_not_emitted():
    samples = [rs(float(t)) for t in range(20)]
    assert make_windows(trace_of(samples), CFG) == []


def test_empty_trace_raises():
    with pytest.raises(EmptyTrace):
        make_windows(trace_of([]), CFG)


def test_window_samples_include_last_before_start():
    records = [ev(0.0), ev(7.0), rs(1.0, cpu=10), rs(6.0, cpu=20), rs(8.0, cpu=30)]
    windows = make_windows(trace_of(records), CFG)
    w1 = [w for w in windows if w.index == 1][0]  # [5 s, 15 s)
    assert [s.cpu_pct for s in w1.samples] == [10.0, 20.0, 30.0]  # 1 s sample is the carry-in


def test_window_index_grid_alignment():
    events = [ev(3.0), ev(23.0)]
    for w in make_windows(trace_of(events), CFG):
        assert w.t_start_ns - int(3e9) == w.index * CFG.hop_ns


# --- ngram_features ---------------------------------------------------------------

def test_ngram_empty_is_zero_vector():
    vec = ngram_features([], CFG)
    assert vec.shape == (256,)
    assert not vec.any()


def test_ngram_single_event_independent_hash_oracle():
    vec = ngram_features([ev(0.0, name="read")], FeatureConfig(ngram_orders=(1,)))
    bucket = fnv_oracle("read") % 256
    assert vec[bucket] == 1.0
    assert vec.sum() == 1.0
    assert (vec != 0).sum() == 1


def test_ngram_read_write_orders_1_2():
    vec = ngram_features([ev(0.0, "read"), ev(1.0, "write")], CFG)
    expected = {fnv_oracle("read") % 256: 1 / 3, fnv_oracle("write") % 256: 1 / 3, fnv_oracle("read|write") % 256: 1 / 3}
    for bucket, value in expected.items():
        assert vec[bucket] == pytest.approx(value)
    assert vec.sum() == pytest.approx(1.0)


def test_ngram_brute_force_bucket_accumulation():
    names = ["read", "write", "read", "open", "close", "read"]
    events = [ev(i * 0.1, n) for i, n in enumerate(names)]
    config = FeatureConfig(ngram_orders=(1, 2, 3))
    vec = ngram_features(events, config)
    # oracle: enumerate every n-gram and accumulate counts independently
    counts = {}
    for n in (1, 2, 3):
        for i in range(len(names) - n + 1):
            bucket = fnv_oracle("|".join(names[i : i + n])) % 256
            counts[bucket] = counts.get(bucket, 0) + 1
    total = sum(counts.values())
    oracle = np.zeros(256)
    for bucket, c in counts.items():
        oracle[bucket] = c / total
    assert np.array_equal(vec, oracle)


def test_ngrams_do_not_cross_threads():
    # two threads interleaved; bigrams stay within each (pid, tid)
    events = [
        ev(0.0, "read", tid=1), ev(0.1, "open", tid=2), ev(0.2, "write", tid=1), ev(0.3, "close", tid=2),
    ]
    vec = ngram_features(events, CFG)
    grams = ["read", "open", "write", "close", "read|write", "open|close"]
    oracle = np.zeros(256)
    for g in grams:
        oracle[fnv_oracle(g) % 256] += 1 / len(grams)
    assert np.allclose(vec, oracle)
    assert vec[fnv_oracle("read|open") % 256] == 0.0  # cross-thread bigram absent


def test_interleaving_invariance():
    a = [ev(0.0, "read", tid=1), ev(0.2, "write", tid=1), ev(0.4, "open", tid=2), ev(0.5, "close", tid=2)]
    b = [ev(0.0, "read", tid=1), ev(0.1, "open", tid=2), ev(0.3, "close", tid=2), ev(0.4, "write", tid=1)]
    assert np.array_equal(ngram_features(a, CFG), ngram_features(b, CFG))


def test_exit_events_are_not_tokens():
    events = [ev(0.0, "read"), ev(0.1, "read", direction=EXIT)]
    vec = ngram_features(events, FeatureConfig(ngram_orders=(1,)))
    assert vec[fnv_oracle("read") % 256] == 1.0


# --- resource_features --------------------------------------------------------------

def win(start_s, end_s):
    return Window(job_id="j1", index=0, t_start_ns=int(start_s * 1e9), t_end_ns=int(end_s * 1e9), events=(), samples=())


def test_resource_no_samples():
    assert not resource_features([], win(0, 10)).any()


def test_resource_single_sample():
    out = resource_features([rs(1.0, cpu=50.0, rss=2**20)], win(0, 10))
    assert out[0] == 50.0 and out[1] == 0.0 and out[2] == 50.0
    assert out[3] == 1.0 and out[4] == 0.0 and out[5] == 1.0
    assert not out[6:].any()


def test_resource_net_rate_hand_oracle():
    samples = [rs(1.0, tx=0), rs(2.0, tx=10**6)]
    out = resource_features(samples, win(0, 10))
    assert out[8] == pytest.approx(1e6)  # tx rate mean
    assert out[9] == pytest.approx(1e6)  # tx rate max


def test_resource_rates_use_carry_in_sample():
    # first sample before window start provides the delta baseline
    samples = [rs(4.0, rx=100), rs(6.0, rx=300)]
    w = win(5, 15)
    out = resource_features(samples, w)
    assert out[6] == pytest.approx(100.0)  # (300-100)/2 s
    assert out[0] == 0.0  # stats cover in-window samples only


def test_resource_zero_dt_pairs_skipped():
    samples = [rs(1.0, tx=0), rs(1.0, tx=500), rs(2.0, tx=1000)]
    out = resource_features(samples, win(0, 10))
    assert out[8] == pytest.approx(500.0)  # only the 1 s pair counts


def test_resource_layout_statistics():
    samples = [rs(1.0, cpu=10, rss=2**20), rs(2.0, cpu=30, rss=3 * 2**20)]
    out = resource_features(samples, win(0, 10))
    assert out[0] == pytest.approx(20.0)
    assert out[1] == pytest.approx(10.0)  # population std
    assert out[2] == 30.0
    assert out[3] == pytest.approx(2.0)
    assert out[5] == 3.0


# --- extract -----------------------------------------------------------------------

def test_extract_dimension_contract(small_corpus):
    from warden.ml.data import iter_manifest_traces

    for _, trace in iter_manifest_traces(small_corpus["manifest_path"]):
        for vec in extract(trace, CFG):
            assert vec.values.shape == (CFG.dim,)
            block = vec.values[: CFG.hash_dim]
            assert block.sum() == pytest.approx(1.0, abs=1e-9) or not block.any()
        break


def test_extract_deterministic():
    trace = gen_trace(builtin_profiles()[0], 30.0, "job-d", seed=5)
    a = extract(trace, CFG)
    b = extract(trace, CFG)
    assert len(a) == len(b) > 0
    for va, vb in zip(a, b):
        assert np.array_equal(va.values, vb.values)
        assert va.values.tobytes() == vb.values.tobytes()


def test_extract_resource_only_trace_is_empty():
    assert extract(trace_of([rs(float(t)) for t in range(5)]), CFG) == []


def test_feature_vector_rejects_non_finite():
    with pytest.raises(ValueError):
        FeatureVector(job_id="j", window_index=0, values=np.array([np.nan, 1.0]))


# --- scaler ------------------------------------------------------------------------

def test_scaler_single_vector_zeroes():
    vec = FeatureVector(job_id="j", window_index=0, values=np.arange(5.0))
    scaler = fit_scaler([vec])
    assert np.allclose(apply_scaler(scaler, vec), 0.0)


def test_scaler_constant_dimension_floor():
    X = np.ones((4, 3)) * 7.0
    scaler = Scaler().fit(X)
    assert np.all(scaler.std_ == 1e-8)
    assert np.allclose(scaler.transform(X), 0.0)


def test_scaler_moments_after_scaling():
    rng = np.random.default_rng(3)
    X = rng.normal(5.0, 3.0, size=(200, 8))
    X[:, 2] = 1.25  # constant dimension
    Z = Scaler().fit(X).transform(X)
    mean = Z.mean(axis=0)
    std = Z.std(axis=0)
    assert np.all(np.abs(mean) < 1e-9)
    for j in range(8):
        assert std[j] == 0.0 or abs(std[j] - 1.0) < 1e-6


def test_scaler_errors():
    with pytest.raises(EmptyDataset):
        fit_scaler([])
    from warden.features import DimensionMismatch

    scaler = Scaler().fit(np.ones((2, 3)))
    with pytest.raises(DimensionMismatch):
        scaler.transform(np.ones((2, 4)))
    with pytest.raises(DimensionMismatch):
        feature_matrix([np.ones(3), np.ones(4)])


def test_scaler_estimator_api():
    scaler = Scaler()
    assert scaler.get_params() == {}
    assert scaler.set_params() is scaler


def test_config_validation():
    with pytest.raises(ValueError):
        FeatureConfig(hop_s=20.0)  # hop > window
    with pytest.raises(ValueError):
        FeatureConfig(hash_dim=100)  # not a power of two
    with pytest.raises(ValueError):
        FeatureConfig(ngram_orders=(4,))
    with pytest.raises(ValueError):
        FeatureConfig(ngram_orders=())
    assert FeatureConfig(ngram_orders=(2, 1, 2)).ngram_orders == (1, 2)
