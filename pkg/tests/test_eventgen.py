import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, optimize, stats

from wheezebias.corpus import GENERATED, RANDOM, LabeledEvent
from wheezebias.errors import ArgumentError
from wheezebias.eventgen import (
    EVENT_CSV_COLUMNS,
    FD,
    VD,
    BurrParams,
    GenerationConfig,
    burr_cdf,
    burr_inverse_cdf,
    burr_mode,
    burr_pdf,
    event_count,
    events_from_csv,
    events_to_csv,
    file_seed,
    generate_events,
    sample_duration,
    truncated_burr_cdf,
)

P = BurrParams()
# frozen from the bisection / maximization oracles below
MEDIAN = 0.3814
MODE = 0.2458

params = st.builds(BurrParams, alpha=st.floats(0.05, 2.0), c=st.floats(0.5, 8.0), k=st.floats(0.1, 3.0))


def bisect(f, lo, hi, tol=1e-13):
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestBurr:
    def test_pdf_integrates_to_one(self):
        total, _ = integrate.quad(lambda x: burr_pdf(x), 0, np.inf, limit=200)
        assert abs(total - 1) < 1e-6

    def test_matches_scipy_burr12(self):
        x = np.linspace(0.01, 3, 50)
        ref = stats.burr12(P.c, P.k, scale=P.alpha)
        np.testing.assert_allclose(burr_pdf(x), ref.pdf(x), rtol=1e-10)
        np.testing.assert_allclose(burr_cdf(x), ref.cdf(x), rtol=1e-10)

    def test_mode_by_numeric_maximization(self):
        res = optimize.minimize_scalar(lambda x: -burr_pdf(x), bounds=(0.01, 2), method="bounded",
                                       options={"xatol": 1e-10})
        assert abs(burr_mode() - res.x) < 1e-6
        assert round(burr_mode(), 4) == MODE

    def test_mode_is_peak(self):
        assert burr_pdf(MODE) > burr_pdf(0.1)
        assert burr_pdf(MODE) > burr_pdf(1.0)

    def test_median_by_bisection(self):
        oracle = bisect(lambda x: burr_cdf(x) - 0.5, 1e-6, 10.0)
        assert abs(burr_inverse_cdf(0.5) - oracle) < 1e-6
        assert round(oracle, 4) == MEDIAN

    def test_inverse_cdf_zero(self):
        assert burr_inverse_cdf(0.0) == 0.0

    @pytest.mark.parametrize("q", [-0.1, 1.0, 1.5, float("nan")])
    def test_inverse_cdf_domain(self, q):
        with pytest.raises(ArgumentError):
            burr_inverse_cdf(q)

    def test_pdf_domain(self):
        with pytest.raises(ArgumentError):
            burr_pdf(0.0)

    def test_invalid_params(self):
        with pytest.raises(ArgumentError):
            BurrParams(alpha=0.0)

    @given(params, st.floats(0.0, 0.999))
    def test_cdf_inverts(self, p, q):
        assert abs(burr_cdf(burr_inverse_cdf(q, p), p) - q) < 1e-10

    @given(params)
    def test_inverse_monotone(self, p):
        assert burr_inverse_cdf(0.25, p) < burr_inverse_cdf(0.75, p)


class TestSampleDuration:
    def test_fd_constant(self, rng):
        cfg = GenerationConfig(mode=FD)
        assert {sample_duration(rng, cfg) for _ in range(100)} == {0.150}

    def test_vd_range_and_ks(self):
        cfg = GenerationConfig(mode=VD)
        rng = np.random.Generator(np.random.PCG64(7))
        x = np.sort([sample_duration(rng, cfg) for _ in range(20000)])
        assert x.min() >= 0.1 and x.max() <= 2.0
        n = x.size
        F = truncated_burr_cdf(x, P, 0.1, 2.0)
        ks = max(np.max(np.arange(1, n + 1) / n - F), np.max(F - np.arange(n) / n))
        assert ks < 0.01
        assert stats.kstest(x, lambda v: truncated_burr_cdf(v, P, 0.1, 2.0)).pvalue > 0.01


class TestConfig:
    def test_validation(self):
        with pytest.raises(ArgumentError):
            GenerationConfig(mode="XD")
        with pytest.raises(ArgumentError):
            GenerationConfig(vd_min=2.0, vd_max=1.0)
        with pytest.raises(ArgumentError):
            GenerationConfig(fd_duration=3.0)
        with pytest.raises(ArgumentError):
            GenerationConfig(spacing_window=0)


def wheeze(rid, s, e):
    return LabeledEvent(rid, s, e)


class TestGenerate:
    def test_four_events_in_20s(self):
        wz = [wheeze("f", 1 + 4 * i, 1.5 + 4 * i) for i in range(4)]
        evs = generate_events("f", 20.0, wz, GenerationConfig(mode=FD))
        assert len(evs) == 4
        assert all(abs(e.duration - 0.150) < 1e-12 for e in evs)
        assert sorted(int(e.start // 5) for e in evs) == [0, 1, 2, 3]
        assert all(e.label == RANDOM and e.provenance == GENERATED for e in evs)

    def test_no_wheezes_no_events(self):
        assert generate_events("f", 20.0, [], GenerationConfig()) == []

    def test_count_rule(self):
        cfg = GenerationConfig()
        assert event_count(20.0, 1, cfg) == 2  # round(1.534)
        assert event_count(20.0, 2, cfg) == 3
        assert event_count(20.0, 10, cfg) == 4
        assert event_count(4.9, 3, cfg) == 0

    def test_deterministic(self):
        wz = [wheeze("f", 2.0, 3.0)]
        cfg = GenerationConfig(mode=VD, base_seed=11)
        assert generate_events("f", 30.0, wz, cfg) == generate_events("f", 30.0, wz, cfg)

    def test_seed_depends_on_id_and_base(self):
        assert file_seed(0, "a") != file_seed(0, "b")
        assert file_seed(0, "a") != file_seed(1, "a")
        assert file_seed(3, "a") == file_seed(3, "a")

    def test_fd_vd_share_windows(self):
        wz = [wheeze("r", 0.5, 1.0), wheeze("r", 12.0, 12.4)]
        fd = generate_events("r", 25.0, wz, GenerationConfig(mode=FD, base_seed=5))
        vd = generate_events("r", 25.0, wz, GenerationConfig(mode=VD, base_seed=5))
        assert len(fd) == len(vd)
        assert sorted(int(e.start // 5) for e in fd) == sorted(int(e.start // 5) for e in vd)

    def test_crowded_recording_warns(self, caplog):
        # wheezes cover everything except tiny gaps
        wz = [wheeze("c", 0.0, 4.95), wheeze("c", 5.0, 9.99)]
        evs = generate_events("c", 10.0, wz, GenerationConfig(mode=VD))
        assert len(evs) < 2
        assert "placed" in caplog.text

    def test_foreign_wheeze_rejected(self):
        with pytest.raises(ArgumentError):
            generate_events("a", 10.0, [wheeze("b", 1, 2)], GenerationConfig())

    @given(st.integers(0, 2**32), st.floats(5.0, 60.0),
           st.lists(st.tuples(st.floats(0, 1), st.floats(0.1, 2.0)), min_size=1, max_size=6),
           st.sampled_from([FD, VD]))
    def test_placement_invariants(self, seed, duration, raw, mode):
        wz = []
        for frac, d in raw:
            s = frac * max(duration - d, 0)
            e = min(s + d, duration)
            if e > s and not any(s < w.end and w.start < e for w in wz):
                wz.append(wheeze("p", s, e))
        if not wz:
            return
        cfg = GenerationConfig(mode=mode, base_seed=seed)
        evs = generate_events("p", duration, wz, cfg)
        assert len(evs) <= event_count(duration, len(wz), cfg)
        windows = [math.floor(e.start / 5.0) for e in evs]
        assert len(windows) == len(set(windows))
        for e in evs:
            assert 0 <= e.start < e.end <= duration + 1e-12
            assert 0.1 <= e.duration <= 2.0
            assert not any(e.start < w.end and w.start < e.end for w in wz)
        for a in evs:
            for b in evs:
                assert a is b or not (a.start < b.end and b.start < a.end)


def test_csv_roundtrip():
    evs = [LabeledEvent("x", 0.5, 1.0), LabeledEvent("x", 6.25, 6.4, RANDOM, GENERATED)]
    text = events_to_csv(evs, FD, 3)
    assert text.splitlines()[0].split(",") == list(EVENT_CSV_COLUMNS)
    assert events_from_csv(text) == evs
    rows = [line.split(",") for line in text.splitlines()[1:]]
    assert rows[0][-1] == "" and rows[1][-1] == str(file_seed(3, "x"))


def test_csv_numpy_floats_roundtrip():
    ev = LabeledEvent("x", np.float64(1.25), np.float64(1.4), RANDOM, GENERATED)
    assert events_from_csv(events_to_csv([ev], VD, 0)) == [ev]
