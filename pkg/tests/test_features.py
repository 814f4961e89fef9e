import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wheezebias import dsp
from wheezebias.errors import ArgumentError
from wheezebias.features import (
    EVENT_FEATURE_NAMES,
    FEATURE_CSV_COLUMNS,
    FRAME_FEATURE_NAMES,
    HARMONIC_NAMES,
    SHAPE_NAMES,
    FeatureConfig,
    aggregate_event_features,
    delta_mfcc,
    extract_event_features,
    frame_feature_matrix,
    harmonic_features,
    hz_to_mel,
    mel_to_hz,
    mfcc13,
    normalized_autocorrelation,
    pitch_class,
    plomp_levelt,
    read_feature_csv,
    spectral_shape_features,
    write_feature_csv,
)

F = np.arange(257) * 4000 / 512
SHAPE = {name: i for i, name in enumerate(SHAPE_NAMES)}
HARM = {name: i for i, name in enumerate(HARMONIC_NAMES)}


def sine(f, n=512, phase=0.1, fs=4000):
    return np.sin(2 * np.pi * f * np.arange(n) / fs + phase)


def frame_mag(x):
    return np.abs(np.fft.rfft(x * np.hamming(512)))


def mfcc_oracle(mag, n_mels=40, fmax=2000.0, floor=1e-10):
    """Loop-built HTK mel filterbank and explicit orthonormal DCT-II."""
    mel = lambda f: 2595 * math.log10(1 + f / 700)
    imel = lambda m: 700 * (10 ** (m / 2595) - 1)
    edges = [imel(mel(fmax) * i / (n_mels + 1)) for i in range(n_mels + 2)]
    energies = []
    for b in range(n_mels):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        e = 0.0
        for k, f in enumerate(F):
            if lo < f < hi:
                w = (f - lo) / (mid - lo) if f <= mid else (hi - f) / (hi - mid)
                e += w * mag[k] ** 2
        energies.append(math.log(max(e, floor)))
    out = []
    for q in range(13):
        scale = math.sqrt(1 / n_mels) if q == 0 else math.sqrt(2 / n_mels)
        out.append(scale * sum(energies[m] * math.cos(math.pi * q * (2 * m + 1) / (2 * n_mels))
                               for m in range(n_mels)))
    return np.array(out)


class TestRegistry:
    def test_counts(self):
        assert len(FRAME_FEATURE_NAMES) == 47
        assert len(EVENT_FEATURE_NAMES) == 235
        assert len(FEATURE_CSV_COLUMNS) == 237

    def test_names(self):
        assert EVENT_FEATURE_NAMES[:5] == tuple(f"centroid_{s}" for s in ("mean", "std", "median", "min", "max"))
        assert "mfcc03_std" in EVENT_FEATURE_NAMES
        assert "brightness100_mean" in EVENT_FEATURE_NAMES and "rolloff5_max" in EVENT_FEATURE_NAMES


class TestSpectralShape:
    def test_point_mass(self):
        m = np.zeros(257)
        m[64] = 1.0
        v = spectral_shape_features(m, None, sine(500))
        assert v[SHAPE["centroid"]] == 500.0
        assert v[SHAPE["spread"]] == 0.0
        assert v[SHAPE["flatness"]] == 0.0
        assert v[SHAPE["rolloff95"]] == 500.0
        assert v[SHAPE["entropy"]] == 0.0

    def test_flat_spectrum(self):
        v = spectral_shape_features(np.ones(257), None, np.ones(512))
        assert abs(v[SHAPE["flatness"]] - 1) < 1e-12
        assert abs(v[SHAPE["entropy"]] - 1) < 1e-12
        assert abs(v[SHAPE["brightness100"]] - np.mean(F > 100)) < 1e-6
        assert abs(v[SHAPE["brightness800"]] - np.mean(F > 800)) < 1e-6
        assert v[SHAPE["centroid"]] == pytest.approx(1000.0)

    def test_zcr_of_sine(self):
        v = spectral_shape_features(np.ones(257), None, sine(500))
        assert v[SHAPE["zcr"]] == pytest.approx(1000, rel=0.02)

    def test_flux(self, rng):
        a, b = rng.random(257), rng.random(257)
        assert spectral_shape_features(a, None, np.ones(512))[SHAPE["flux"]] == 0.0
        assert spectral_shape_features(a, b, np.ones(512))[SHAPE["flux"]] == pytest.approx(
            math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b))))

    def test_irregularity(self, rng):
        m = rng.random(257)
        expected = sum((m[i] - m[i + 1]) ** 2 for i in range(256)) / sum(x * x for x in m)
        assert spectral_shape_features(m, None, np.ones(512))[SHAPE["irregularity"]] == pytest.approx(expected)

    def test_roughness_two_peaks(self):
        m = np.zeros(257)
        m[40], m[45] = 1.0, 0.5
        f1, f2 = F[40], F[45]
        s = 0.24 / (0.0207 * f1 + 18.96)
        d = abs(f2 - f1)
        expected = 0.5 * (math.exp(-3.5 * s * d) - math.exp(-5.75 * s * d))
        assert spectral_shape_features(m, None, np.ones(512))[SHAPE["roughness"]] == pytest.approx(expected)
        assert plomp_levelt(f1, 1.0, f1, 1.0) == 0.0

    def test_rolloff_levels(self):
        m = np.zeros(257)
        m[[10, 20, 30, 40]] = 1.0  # equal energy quarters
        v = spectral_shape_features(m, None, np.ones(512))
        assert v[SHAPE["rolloff5"]] == F[10]
        assert v[SHAPE["rolloff25"]] == F[10]
        assert v[SHAPE["rolloff75"]] == F[30]
        assert v[SHAPE["rolloff95"]] == F[40]

    def test_silence(self):
        assert not spectral_shape_features(np.zeros(257), None, np.zeros(512)).any()

    def test_negative_rejected(self):
        with pytest.raises(ArgumentError):
            spectral_shape_features(-np.ones(257), None, np.zeros(512))

    @given(st.integers(0, 2**32 - 1))
    def test_ranges(self, seed):
        m = np.random.default_rng(seed).random(257) ** 3
        v = spectral_shape_features(m, None, np.random.default_rng(seed).normal(size=512))
        for name in ("entropy", "flatness", "brightness100", "brightness800"):
            assert 0 <= v[SHAPE[name]] <= 1 + 1e-12
        for name in ("centroid", "rolloff95", "rolloff5"):
            assert 0 <= v[SHAPE[name]] <= 2000


class TestMfcc:
    def test_mel_roundtrip(self):
        f = np.linspace(0, 2000, 11)
        np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-9)

    def test_zero_spectrum(self):
        c = mfcc13(np.zeros(257))
        assert c[0] == pytest.approx(math.sqrt(40) * math.log(1e-10))
        np.testing.assert_allclose(c[1:], 0, atol=1e-9)

    def test_matches_oracle(self, rng):
        m = rng.random(257)
        np.testing.assert_allclose(mfcc13(m), mfcc_oracle(m), rtol=1e-9, atol=1e-9)

    def test_gain_moves_only_c0(self, rng):
        m = rng.random(257) + 0.1
        g = 3.7
        a, b = mfcc13(m), mfcc13(g * m)
        assert b[0] - a[0] == pytest.approx(math.sqrt(40) * 2 * math.log(g))
        np.testing.assert_allclose(a[1:], b[1:], atol=1e-9)

    def test_without_c0(self, rng):
        m = rng.random(257)
        c =mfcc13(m, FeatureConfig(include_c0=False))
        assert c[0] == pytest.approx(mfcc_oracle(m)[1])

    def test_deltas(self, rng):
        assert not delta_mfcc(np.ones((59, 13))).any()
        ramp = np.arange(59)[:, None] * 0.3 * np.ones(13)
        np.testing.assert_allclose(delta_mfcc(ramp)[1:], 0.3)
        assert not delta_mfcc(ramp)[0].any()
        r = rng.normal(size=(59, 13))
        d = delta_mfcc(r)
        for t in range(1, 59):
            np.testing.assert_array_equal(d[t], r[t] - r[t - 1])
        assert not delta_mfcc(r[:1]).any()


class TestHarmonic:
    def test_a440(self):
        x = sine(440)
        v = harmonic_features(x, frame_mag(x))
        assert abs(v[HARM["pitch"]] - 440) <= 5
        assert v[HARM["voicing"]] > 0.9
        assert v[HARM["chroma_peak"]] == 9

    def test_autocorrelation_oracle(self, rng):
        x = rng.normal(size=512)
        lags = [5, 17, 40]
        r = normalized_autocorrelation(x, lags)[0]
        for j, tau in enumerate(lags):
            a, b = x[:-tau], x[tau:]
            assert r[j] == pytest.approx(np.dot(a, b) / math.sqrt(np.dot(a, a) * np.dot(b, b)))

    def test_white_noise_unvoiced(self, rng):
        v = [harmonic_features(x, frame_mag(x))[HARM["voicing"]] for x in rng.normal(size=(100, 512))]
        assert np.mean(v) < 0.5

    def test_silence(self):
        assert not harmonic_features(np.zeros(512), np.zeros(257)).any()

    def test_pitch_classes(self):
        assert pitch_class(440.0) == 9
        assert pitch_class(261.63) == 0
        assert pitch_class(880.0) == 9
        assert pitch_class(493.88) == 11

    def test_harmonic_tone_low_inharmonicity(self):
        x = sine(250) + 0.5 * sine(500) + 0.25 * sine(750)
        assert harmonic_features(x, frame_mag(x))[HARM["inharmonicity"]] < 0.02


class TestAggregate:
    def test_identical_rows(self, rng):
        row = rng.normal(size=47)
        v = aggregate_event_features(np.tile(row, (59, 1))).reshape(47, 5)
        np.testing.assert_allclose(v[:, 1], 0, atol=1e-12 * (1 + np.abs(row).max()))
        for j in (0, 2, 3, 4):
            np.testing.assert_allclose(v[:, j], row, rtol=1e-12, atol=1e-12)

    def test_ramp(self):
        rows = np.zeros((59, 47))
        rows[:, 0] = np.arange(59)
        v = aggregate_event_features(rows)
        assert v[0] == 29 and v[2] == 29 and v[3] == 0 and v[4] == 58
        assert v[1] == pytest.approx(np.sqrt(np.mean((np.arange(59) - 29.0) ** 2)))
        assert v.size == 235

    def test_wrong_rows(self):
        with pytest.raises(ArgumentError):
            aggregate_event_features(np.zeros((58, 47)))

    @given(st.integers(0, 2**32 - 1), st.integers(50, 9000))
    def test_event_invariants(self, seed, n):
        x = np.random.default_rng(seed).normal(size=n)
        v = extract_event_features(x).values.reshape(47, 5)
        assert np.all(np.isfinite(v))
        mean, std, med, lo, hi = v.T
        tol = 1e-9 * (1 + np.abs(v).max())
        assert np.all(lo <= med + tol) and np.all(med <= hi + tol)
        assert np.all(lo <= mean + tol) and np.all(mean <= hi + tol)
        assert np.all(std >= 0)


class TestEventLevel:
    def test_zero_padding_dominance(self, rng):
        seg = dsp.prepare_segment(rng.normal(size=600))
        rows = frame_feature_matrix(seg)
        silent = np.sum(np.all(dsp.frames(seg) == 0, axis=1))
        assert silent >= 40
        v = aggregate_event_features(rows).reshape(47, 5)
        names = list(FRAME_FEATURE_NAMES)
        assert v[names.index("flux"), 3] == 0
        assert v[names.index("zcr"), 3] == 0

    def test_amplitude_invariance(self, rng):
        x = rng.normal(size=3000) + sine(300, 3000)
        a = frame_feature_matrix(dsp.prepare_segment(x))
        b = frame_feature_matrix(dsp.prepare_segment(2.5 * x))
        names = list(FRAME_FEATURE_NAMES)
        for name in ("centroid", "spread", "entropy", "flatness", "brightness100", "brightness400",
                     "rolloff95", "rolloff25", "chroma_peak", "pitch"):
            j = names.index(name)
            np.testing.assert_allclose(a[:, j], b[:, j], rtol=1e-9, atol=1e-9, err_msg=name)
        for name in ("flux", "mfcc01"):
            j = names.index(name)
            assert not np.allclose(a[:, j], b[:, j])

    def test_deterministic(self, rng):
        x = rng.normal(size=1500)
        assert extract_event_features(x).values.tobytes() == extract_event_features(x.copy()).values.tobytes()

    def test_duration(self):
        assert extract_event_features(np.ones(600), "wheeze").duration == 0.15


def test_feature_csv_roundtrip(tmp_path, rng):
    vecs = [extract_event_features(rng.normal(size=n), lab) for n, lab in ((700, "wheeze"), (900, "random"))]
    path = tmp_path / "f.csv"
    write_feature_csv(path, vecs)
    header = path.read_text().splitlines()[0].split(",")
    assert len(header) == 237 and header[-2:] == ["label", "duration"]
    X, labels, durs, extra = read_feature_csv(path)
    np.testing.assert_array_equal(X, np.stack([v.values for v in vecs]))
    assert labels == ["wheeze", "random"] and durs.tolist() == [0.175, 0.225] and extra == {}
