"""Frame-level audio descriptors and their per-event statistics.

Each of the 59 spectrogram frames yields 47 descriptors:

======================  =====
group                   count
======================  =====
spectral shape            16
MFCC                      13
delta-MFCC                13
chroma / pitch            5
======================  =====

Five statistics (mean, std, median, min, max) over frames give the
235-dimensional event vector. Ratios that are undefined on silent frames
are reported as 0 so classifiers never see NaN.

Descriptors are computed on the raw magnitude spectrogram; min-max
normalization is only applied to CNN inputs.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from . import dsp
from .corpus import ANALYSIS_RATE
from .errors import ArgumentError

log = logging.getLogger(__name__)

BRIGHTNESS_CUTOFFS = (100, 200, 400, 800)
ROLLOFF_PERCENTS = (95, 75, 25, 5)
N_MFCC = 13

SHAPE_NAMES = (
    ("centroid", "spread", "zcr", "entropy", "flatness", "roughness", "irregularity", "flux")
    + tuple(f"brightness{b}" for b in BRIGHTNESS_CUTOFFS)
    + tuple(f"rolloff{p}" for p in ROLLOFF_PERCENTS)
)
MFCC_NAMES = tuple(f"mfcc{i:02d}" for i in range(1, N_MFCC + 1))
DELTA_NAMES = tuple(f"dmfcc{i:02d}" for i in range(1, N_MFCC + 1))
HARMONIC_NAMES = ("chroma_centroid", "chroma_peak", "pitch", "voicing", "inharmonicity")

FRAME_FEATURE_NAMES = SHAPE_NAMES + MFCC_NAMES + DELTA_NAMES + HARMONIC_NAMES
STAT_NAMES = ("mean", "std", "median", "min", "max")
EVENT_FEATURE_NAMES = tuple(f"{f}_{s}" for f in FRAME_FEATURE_NAMES for s in STAT_NAMES)

N_FRAME_FEATURES = len(FRAME_FEATURE_NAMES)
N_EVENT_FEATURES = len(EVENT_FEATURE_NAMES)
assert N_FRAME_FEATURES == 47 and N_EVENT_FEATURES == 235


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = ANALYSIS_RATE
    n_mels: int = 40
    mel_fmin: float = 0.0
    mel_fmax: float = 2000.0
    log_floor: float = 1e-10
    include_c0: bool = True
    pitch_fmin: float = 60.0
    pitch_fmax: float = 1000.0
    peak_threshold: float = 0.01
    voiced_threshold: float = 0.5
    chroma_fmin: float = 60.0
    harmonic_fmax: float = 2000.0


DEFAULT_CONFIG = FeatureConfig()


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den > 0)
    return out


def _freqs(n_bins, sample_rate):
    return np.arange(n_bins) * sample_rate / (2 * (n_bins - 1))


def _peaks(m, threshold):
    """Indices of interior local maxima at least ``threshold * max(m)``."""
    if m.size < 3 or m.max() <= 0:
        return np.empty(0, dtype=int)
    inner = (m[1:-1] > m[:-2]) & (m[1:-1] >= m[2:]) & (m[1:-1] >= threshold * m.max())
    return np.flatnonzero(inner) + 1


def plomp_levelt(f1, a1, f2, a2):
    """Sethares' parameterisation of the Plomp-Levelt dissonance curve."""
    fmin = np.minimum(f1, f2)
    s = 0.24 / (0.0207 * fmin + 18.96)
    df = np.abs(f2 - f1)
    return a1 * a2 * (np.exp(-3.5 * s * df) - np.exp(-5.75 * s * df))


# --------------------------------------------------------------------------
# Spectral shape (16)
# --------------------------------------------------------------------------


def spectral_shape_matrix(mag, frame_samples, cfg: FeatureConfig = DEFAULT_CONFIG, prev=None):
    """Spectral-shape descriptors for every frame.

    Parameters
    ----------
    mag : (n_frames, n_bins) array
        Magnitude spectra, one row per frame.
    frame_samples : (n_frames, window) array
        Raw time-domain frames, used for the zero-crossing rate.
    prev : (n_bins,) array, optional
        Spectrum preceding the first row; flux of row 0 is 0 without it.

    Returns
    -------
    (n_frames, 16) array ordered as ``SHAPE_NAMES``.
    """
    m = np.atleast_2d(np.asarray(mag, dtype=np.float64))
    t = np.atleast_2d(np.asarray(frame_samples, dtype=np.float64))
    if np.any(m < 0):
        raise ArgumentError("magnitude spectra must be non-negative")
    n, n_bins = m.shape
    f = _freqs(n_bins, cfg.sample_rate)
    power = m * m
    total_mag = m.sum(axis=1)
    total_pow = power.sum(axis=1)
    if np.any(total_mag == 0):
        log.debug("%d silent frames; shape ratios set to 0", int(np.sum(total_mag == 0)))

    centroid = _safe_div(m @ f, total_mag)
    spread = np.sqrt(_safe_div(((f[None, :] - centroid[:, None]) ** 2 * m).sum(axis=1), total_mag))

    frame_seconds = t.shape[1] / cfg.sample_rate
    zcr = np.count_nonzero(np.diff(np.signbit(t), axis=1), axis=1) / frame_seconds

    p = _safe_div(power, total_pow[:, None])
    plogp = np.zeros_like(p)
    np.multiply(p, np.log(p, where=p > 0, out=np.zeros_like(p)), out=plogp, where=p > 0)
    entropy = -plogp.sum(axis=1) / np.log(n_bins)

    with np.errstate(divide="ignore"):
        geo = np.exp(np.log(m).mean(axis=1))  # any zero bin gives 0
    flatness = _safe_div(geo, total_mag / n_bins)

    roughness = np.zeros(n)
    for i in range(n):
        idx = _peaks(m[i], cfg.peak_threshold)
        if idx.size > 1:
            a, fr = m[i, idx], f[idx]
            d = plomp_levelt(fr[:, None], a[:, None], fr[None, :], a[None, :])
            roughness[i] = np.triu(d, 1).sum()

    irregularity = _safe_div((np.diff(m, axis=1) ** 2).sum(axis=1), total_pow)

    diffs = np.diff(m, axis=0)
    flux = np.zeros(n)
    flux[1:] = np.sqrt((diffs * diffs).sum(axis=1))
    if prev is not None:
        flux[0] = np.linalg.norm(m[0] - np.asarray(prev, dtype=np.float64))

    brightness = [_safe_div(power[:, f > b].sum(axis=1), total_pow) for b in BRIGHTNESS_CUTOFFS]

    cum = np.cumsum(power, axis=1)
    rolloff = []
    for pct in ROLLOFF_PERCENTS:
        reached = cum >= (pct / 100.0) * total_pow[:, None]
        idx = np.argmax(reached, axis=1)
        rolloff.append(np.where(total_pow > 0, f[idx], 0.0))

    return np.column_stack(
        [centroid, spread, zcr, entropy, flatness, roughness, irregularity, flux]
        + brightness + rolloff
    )


def spectral_shape_features(frame_mag, prev_mag, frame_samples, cfg: FeatureConfig = DEFAULT_CONFIG):
    """The 16 spectral-shape descriptors of a single frame."""
    return spectral_shape_matrix(frame_mag, frame_samples, cfg, prev=prev_mag)[0]


# --------------------------------------------------------------------------
# MFCC (13 + 13)
# --------------------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_bins: int = dsp.N_BINS, cfg: FeatureConfig = DEFAULT_CONFIG) -> np.ndarray:
    """(n_mels, n_bins) triangular filters, equally spaced on the mel scale."""
    f = _freqs(n_bins, cfg.sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.mel_fmin), hz_to_mel(cfg.mel_fmax), cfg.n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rise = (f[None, :] - lo) / (mid - lo)
    fall = (hi - f[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rise, fall))


_FILTERBANK_CACHE: dict = {}


def _filterbank(n_bins, cfg):
    key = (n_bins, cfg)
    if key not in _FILTERBANK_CACHE:
        _FILTERBANK_CACHE[key] = mel_filterbank(n_bins, cfg)
    return _FILTERBANK_CACHE[key]


def mfcc_matrix(mag, cfg: FeatureConfig = DEFAULT_CONFIG) -> np.ndarray:
    m = np.atleast_2d(np.asarray(mag, dtype=np.float64))
    if np.any(m < 0):
        raise ArgumentError("magnitude spectra must be non-negative")
    bands = (m * m) @ _filterbank(m.shape[1], cfg).T
    logs = np.log(np.maximum(bands, cfg.log_floor))
    ceps = dct(logs, type=2, norm="ortho", axis=1)
    first = 0 if cfg.include_c0 else 1
    return ceps[:, first : first + N_MFCC]


def mfcc13(frame_mag, cfg: FeatureConfig = DEFAULT_CONFIG) -> np.ndarray:
    """13 cepstral coefficients of one magnitude spectrum.

    With ``include_c0`` (the default) the first value is the 0th, energy
    coefficient; otherwise coefficients 1..13 are returned.
    """
    return mfcc_matrix(frame_mag, cfg)[0]


def delta_mfcc(mfcc_sequence) -> np.ndarray:
    """Backward difference along time; the first frame gets zeros."""
    c = np.asarray(mfcc_sequence, dtype=np.float64)
    out = np.zeros_like(c)
    out[1:] = c[1:] - c[:-1]
    return out


# --------------------------------------------------------------------------
# Chroma, pitch, voicing, inharmonicity (5)
# --------------------------------------------------------------------------


def pitch_class(f):
    """Pitch class of frequency ``f`` with C = 0, ..., A = 9."""
    return (np.round(12.0 * np.log2(np.asarray(f, dtype=np.float64) / 440.0)).astype(int) + 9) % 12


def normalized_autocorrelation(x, lags) -> np.ndarray:
    """Energy-normalized autocorrelation of the rows of ``x`` at ``lags``.

    r(tau) = sum x[n] x[n+tau] / sqrt(sum x[n]^2 * sum x[n+tau]^2) over the
    overlapping part, so a pure periodic frame peaks near 1 at its period.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[1]
    sq = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(x * x, axis=1)], axis=1)
    out = np.zeros((x.shape[0], len(lags)))
    for j, tau in enumerate(lags):
        num = np.einsum("ij,ij->i", x[:, : n - tau], x[:, tau:])
        e_head = sq[:, n - tau]
        e_tail = sq[:, n] - sq[:, tau]
        out[:, j] = _safe_div(num, np.sqrt(e_head * e_tail))
    return out


def harmonic_matrix(frame_samples, mag, cfg: FeatureConfig = DEFAULT_CONFIG) -> np.ndarray:
    """(n_frames, 5) array ordered as ``HARMONIC_NAMES``."""
    t = np.atleast_2d(np.asarray(frame_samples, dtype=np.float64))
    m = np.atleast_2d(np.asarray(mag, dtype=np.float64))
    n, n_bins = m.shape
    fs = cfg.sample_rate
    f = _freqs(n_bins, fs)

    lag_lo = int(np.ceil(fs / cfg.pitch_fmax))
    lag_hi = int(np.floor(fs / cfg.pitch_fmin))
    # one extra lag on each side for parabolic refinement
    lags = np.arange(lag_lo - 1, lag_hi + 2)
    r = normalized_autocorrelation(t, lags)
    inner = r[:, 1:-1]
    best = np.argmax(inner, axis=1)
    peak = inner[np.arange(n), best]
    left = r[np.arange(n), best]
    right = r[np.arange(n), best + 2]
    denom = left - 2 * peak + right
    curved = denom < 0
    offset = np.where(curved, 0.5 * (left - right) / np.where(curved, denom, 1.0), 0.0)
    offset = np.clip(offset, -0.5, 0.5)
    best_lag = lags[best + 1] + offset

    voiced_any = peak > 0
    pitch = np.where(voiced_any, fs / best_lag, 0.0)
    voicing = np.clip(peak, 0.0, 1.0)

    power = m * m
    inharm = np.zeros(n)
    band = f <= cfg.harmonic_fmax
    for i in np.flatnonzero(voicing >= cfg.voiced_threshold):
        idx = _peaks(m[i], cfg.peak_threshold)
        idx = idx[band[idx] & (f[idx] > 0)]
        if idx.size == 0:
            continue
        fp = f[idx]
        harmonic = np.maximum(1, np.round(fp / pitch[i]))
        dev = np.abs(fp / (harmonic * pitch[i]) - 1.0)
        inharm[i] = np.average(dev, weights=power[i, idx])

    chroma_bins = (f >= cfg.chroma_fmin) & (f <= cfg.harmonic_fmax)
    classes = pitch_class(f[chroma_bins])
    onehot = np.zeros((chroma_bins.sum(), 12))
    onehot[np.arange(classes.size), classes] = 1.0
    chroma = power[:, chroma_bins] @ onehot
    has_chroma = chroma.sum(axis=1) > 0
    angles = 2 * np.pi * np.arange(12) / 12
    theta = np.arctan2(chroma @ np.sin(angles), chroma @ np.cos(angles))
    chroma_centroid = np.where(has_chroma, np.mod(theta * 12 / (2 * np.pi), 12.0), 0.0)
    chroma_peak = np.where(has_chroma, np.argmax(chroma, axis=1), 0).astype(np.float64)

    return np.column_stack([chroma_centroid, chroma_peak, pitch, voicing, inharm])


def harmonic_features(frame_samples, frame_mag, cfg: FeatureConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Chroma centroid, chroma peak, pitch (Hz), voicing, inharmonicity of one frame."""
    return harmonic_matrix(frame_samples, frame_mag, cfg)[0]


# --------------------------------------------------------------------------
# Per-event assembly
# --------------------------------------------------------------------------


def frame_feature_matrix(segment, cfg: FeatureConfig = DEFAULT_CONFIG,
                         stft: dsp.StftConfig = dsp.StftConfig()) -> np.ndarray:
    """(59, 47) descriptor rows for a prepared 8000-sample segment."""
    mag = dsp.stft_magnitude(segment, stft).T
    raw = dsp.frames(segment, stft)
    mf = mfcc_matrix(mag, cfg)
    return np.column_stack([
        spectral_shape_matrix(mag, raw, cfg),
        mf,
        delta_mfcc(mf),
        harmonic_matrix(raw, mag, cfg),
    ])


def aggregate_event_features(rows) -> np.ndarray:
    """Mean, std, median, min, max of each column; feature-major layout."""
    r = np.asarray(rows, dtype=np.float64)
    if r.shape != (dsp.N_FRAMES, N_FRAME_FEATURES):
        raise ArgumentError(f"expected ({dsp.N_FRAMES}, {N_FRAME_FEATURES}) rows, got {r.shape}")
    stats = np.stack([r.mean(axis=0), r.std(axis=0), np.median(r, axis=0),
                      r.min(axis=0), r.max(axis=0)], axis=1)
    return stats.reshape(-1)


@dataclass
class EventFeatureVector:
    values: np.ndarray
    label: str
    duration: float


def extract_event_features(samples, label: str = "", cfg: FeatureConfig = DEFAULT_CONFIG) -> EventFeatureVector:
    """Full chain for one event: prepare, STFT, frame descriptors, statistics."""
    samples = np.asarray(samples, dtype=np.float64)
    segment = dsp.prepare_segment(samples)
    values = aggregate_event_features(frame_feature_matrix(segment, cfg))
    if not np.all(np.isfinite(values)):
        raise ArgumentError("non-finite feature produced")
    return EventFeatureVector(values, label, samples.size / cfg.sample_rate)


FEATURE_CSV_COLUMNS = EVENT_FEATURE_NAMES + ("label", "duration")


def write_feature_csv(path, vectors, extra_columns=None):
    """Feature matrix with one stable header column per statistic.

    ``extra_columns`` maps leading column names to per-row values (for
    example recording ids) and is written before the features.
    """
    extra_columns = extra_columns or {}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(tuple(extra_columns) + FEATURE_CSV_COLUMNS)
        for i, v in enumerate(vectors):
            lead = [col[i] for col in extra_columns.values()]
            writer.writerow(lead + [repr(float(x)) for x in v.values] + [v.label, repr(float(v.duration))])


def read_feature_csv(path):
    """Return (X, labels, durations, extra) from :func:`write_feature_csv` output."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    n_extra = len(header) - len(FEATURE_CSV_COLUMNS)
    if n_extra < 0 or tuple(header[n_extra:]) != FEATURE_CSV_COLUMNS:
        raise ArgumentError(f"{path}: unexpected feature header")
    extra = {name: [r[i] for r in rows] for i, name in enumerate(header[:n_extra])}
    X = np.array([[float(x) for x in r[n_extra:n_extra + N_EVENT_FEATURES]] for r in rows]).reshape(-1, N_EVENT_FEATURES)
    labels = [r[-2] for r in rows]
    durations = np.array([float(r[-1]) for r in rows])
    return X, labels, durations, extra
