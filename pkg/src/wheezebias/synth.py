"""Synthetic respiratory corpus for exercising the pipeline without the real data.

Each recording is band-limited noise with a slow breathing envelope. Wheezes
are faint narrowband chirps whose durations follow the same truncated Burr
law the variable-duration generator uses, so in VD mode duration carries no
class information while in FD mode it carries almost all of it. The chirps
are deliberately buried close to the noise floor: content alone should only
weakly separate the classes.

The corpus is written in the on-disk layout :func:`corpus.load_corpus`
expects (``<id>.wav``, ``<id>.txt`` cycle annotations, a split manifest).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfilt
from scipy.signal.windows import tukey

from .corpus import ANNOTATED, ANALYSIS_RATE, WHEEZE, AudioRecording, LabeledEvent, encode_wav, sample_bounds
from .errors import ArgumentError
from .eventgen import VD, GenerationConfig, sample_duration
from .fileio import atomic_write_bytes, atomic_write_text


@dataclass(frozen=True)
class SynthConfig:
    n_recordings: int = 120
    duration: float = 20.0
    wheezes_per_recording: int = 2
    sample_rate: int = ANALYSIS_RATE
    # chirp level relative to the local noise RMS, drawn uniformly per wheeze
    snr_db: tuple = (-16.0, -6.0)
    f_low: float = 150.0
    f_high: float = 800.0
    test_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_recordings < 2:
            raise ArgumentError("need at least 2 recordings (one per split)")
        if self.wheezes_per_recording < 0:
            raise ArgumentError("wheezes_per_recording must be >= 0")
        # worst case: every wheeze at the 2 s cap plus a 0.25 s gap each
        if self.wheezes_per_recording * 2.25 + 1.0 > self.duration:
            raise ArgumentError("recording too short for the requested wheezes")
        if not 0 < self.test_fraction < 1:
            raise ArgumentError("test_fraction must lie in (0, 1)")


def breathing_noise(rng: np.random.Generator, n: int, fs: int) -> np.ndarray:
    """Band-passed noise (80-1200 Hz) under a slow inhale/exhale envelope."""
    sos = butter(4, [80.0, 1200.0], btype="bandpass", fs=fs, output="sos")
    x = sosfilt(sos, rng.standard_normal(n + fs))[fs:]
    t = np.arange(n) / fs
    period = rng.uniform(2.5, 4.5)
    env = 0.35 + 0.65 * np.sin(np.pi * t / period + rng.uniform(0, np.pi)) ** 2
    x = x * env
    return x / np.sqrt(np.mean(x**2))


def chirp(rng: np.random.Generator, n: int, fs: int, f_low: float, f_high: float) -> np.ndarray:
    """Unit-RMS linear chirp with a weak second harmonic and tapered edges."""
    f0 = rng.uniform(f_low, f_high)
    f1 = np.clip(f0 * rng.uniform(0.8, 1.25), f_low, f_high)
    t = np.arange(n) / fs
    dur = n / fs
    phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) * t**2 / dur)
    y = np.sin(phase) + 0.3 * np.sin(2 * phase)
    y *= tukey(n, 0.2)
    return y / max(np.sqrt(np.mean(y**2)), 1e-12)


def _place(rng, durations, total, margin=0.5, gap=0.25):
    """Non-overlapping start times for ``durations`` inside ``[margin, total - margin]``."""
    for _ in range(1000):
        starts = []
        for d in durations:
            for _ in range(200):
                s = rng.uniform(margin, total - margin - d)
                if all(s + d + gap <= a or b + gap <= s for a, b in starts):
                    starts.append((s, s + d))
                    break
            else:
                break
        else:
            return sorted(starts)
    raise ArgumentError("could not place wheezes; recordings too short")


def synth_recording(rec_id: str, cfg: SynthConfig, rng: np.random.Generator):
    """One recording and its annotated wheezes."""
    fs = cfg.sample_rate
    n = int(round(cfg.duration * fs))
    x = breathing_noise(rng, n, fs)
    vd = GenerationConfig(mode=VD)
    durations = [sample_duration(rng, vd) for _ in range(cfg.wheezes_per_recording)]
    events = []
    for start, end in _place(rng, durations, cfg.duration):
        start, end = round(start, 4), round(end, 4)
        a, b = sample_bounds(start, end, fs)
        local_rms = np.sqrt(np.mean(x[a:b] ** 2))
        gain = local_rms * 10 ** (rng.uniform(*cfg.snr_db) / 20)
        x[a:b] += gain * chirp(rng, b - a, fs, cfg.f_low, cfg.f_high)
        events.append(LabeledEvent(rec_id, start, end, WHEEZE, ANNOTATED))
    x *= 0.25 / np.max(np.abs(x))
    return AudioRecording(rec_id, x, fs), events


def recording_ids(cfg: SynthConfig) -> list[str]:
    return [f"syn{i:04d}" for i in range(cfg.n_recordings)]


def split_assignment(cfg: SynthConfig) -> dict[str, str]:
    ids = recording_ids(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    n_test = min(max(1, int(round(cfg.test_fraction * len(ids)))), len(ids) - 1)
    test = set(rng.permutation(len(ids))[:n_test].tolist())
    return {rid: ("test" if i in test else "train") for i, rid in enumerate(ids)}


def make_corpus(cfg: SynthConfig = SynthConfig()):
    """List of ``(recording, wheezes, split)`` triples, deterministic in ``cfg``."""
    split = split_assignment(cfg)
    out = []
    for i, rid in enumerate(recording_ids(cfg)):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0, i]))
        rec, events = synth_recording(rid, cfg, rng)
        out.append((rec, events, split[rid]))
    return out


def annotation_text(events, duration: float, cycle: float = 2.5) -> str:
    """Cycle-style annotation: fixed-length cycles, wheeze cycles cut to the wheeze.

    Wheeze rows carry the exact wheeze interval; the gaps between them are
    covered by non-wheeze cycles so the file looks like a real transcript.
    """
    rows = []
    t = 0.0
    for ev in sorted(events, key=lambda e: e.start):
        while ev.start - t > 1e-9:
            end = min(t + cycle, ev.start)
            rows.append((t, end, 0))
            t = end
        rows.append((ev.start, ev.end, 1))
        t = ev.end
    while duration - t > 1e-9:
        end = min(t + cycle, duration)
        rows.append((t, end, 0))
        t = end
    return "".join(f"{a:.4f}\t{b:.4f}\t0\t{w}\n" for a, b, w in rows)


def write_corpus(out_dir, cfg: SynthConfig = SynthConfig()):
    """Write WAVs, annotations and ``split.txt``; returns (data_dir, manifest)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for rec, events, part in make_corpus(cfg):
        atomic_write_bytes(out / f"{rec.id}.wav", encode_wav(rec.samples, rec.sample_rate))
        atomic_write_text(out / f"{rec.id}.txt", annotation_text(events, rec.duration))
        lines.append(f"{rec.id}\t{part}\n")
    manifest = out / "split.txt"
    atomic_write_text(manifest, "".join(lines))
    return out, manifest
