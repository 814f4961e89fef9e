"""Seeded generation of non-wheeze ("random") events.

Two duration regimes are supported:

* ``FD``: every generated event lasts exactly ``fd_duration`` (150 ms).
* ``VD``: durations follow a Burr type XII distribution fitted to annotated
  wheeze durations, truncated to ``[vd_min, vd_max]``.

Event counts and placement windows depend only on the recording and the
seed, never on the mode, so FD and VD event sets line up one to one.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import GENERATED, RANDOM, LabeledEvent
from .errors import ArgumentError, InternalError

log = logging.getLogger(__name__)

FD = "FD"
VD = "VD"
MODES = (FD, VD)

RANDOM_PER_WHEEZE = 1.534
MAX_DRAWS = 10**6
MAX_PLACEMENT_ATTEMPTS = 10**4
PER_WINDOW_ATTEMPTS = 500

EVENT_CSV_COLUMNS = ("recording_id", "start_s", "end_s", "class", "provenance", "mode", "seed")


@dataclass(frozen=True)
class BurrParams:
    alpha: float = 0.2266
    c: float = 4.1906
    k: float = 0.3029

    def __post_init__(self):
        if not (self.alpha > 0 and self.c > 0 and self.k > 0):
            raise ArgumentError(f"Burr parameters must be positive: {self}")


@dataclass(frozen=True)
class GenerationConfig:
    mode: str = FD
    fd_duration: float = 0.150
    vd_min: float = 0.100
    vd_max: float = 2.0
    spacing_window: float = 5.0
    base_seed: int = 0
    burr: BurrParams = field(default_factory=BurrParams)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ArgumentError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.vd_min < self.vd_max:
            raise ArgumentError("vd_min must be < vd_max")
        if not self.vd_min <= self.fd_duration <= self.vd_max:
            raise ArgumentError("fd_duration must lie in [vd_min, vd_max]")
        if self.spacing_window <= 0:
            raise ArgumentError("spacing_window must be positive")


# --------------------------------------------------------------------------
# Burr type XII
# --------------------------------------------------------------------------


def burr_pdf(x, p: BurrParams = BurrParams()):
    """(k c / a) (x/a)^(c-1) / (1 + (x/a)^c)^(k+1) for x > 0."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0):
        raise ArgumentError("burr_pdf is defined for x > 0 only")
    z = x / p.alpha
    out = (p.k * p.c / p.alpha) * z ** (p.c - 1) / (1 + z**p.c) ** (p.k + 1)
    return out if out.ndim else float(out)


def burr_cdf(x, p: BurrParams = BurrParams()):
    x = np.asarray(x, dtype=np.float64)
    z = np.maximum(x, 0.0) / p.alpha
    # 1 - (1 + z^c)^-k, written to stay accurate for small z
    out = -np.expm1(-p.k * np.log1p(z**p.c))
    return out if out.ndim else float(out)


def burr_inverse_cdf(q, p: BurrParams = BurrParams()):
    """alpha * ((1 - q)^(-1/k) - 1)^(1/c), defined on [0, 1)."""
    q = np.asarray(q, dtype=np.float64)
    if np.any((q < 0) | (q >= 1)) or np.any(np.isnan(q)):
        raise ArgumentError("quantile must lie in [0, 1)")
    inner = np.expm1(-np.log1p(-q) / p.k)
    out = p.alpha * inner ** (1.0 / p.c)
    return out if out.ndim else float(out)


def burr_mode(p: BurrParams = BurrParams()) -> float:
    if p.c <= 1:
        return 0.0
    return p.alpha * ((p.c - 1) / (p.c * p.k + 1)) ** (1.0 / p.c)


def truncated_burr_cdf(x, p: BurrParams, lo: float, hi: float):
    x = np.clip(np.asarray(x, dtype=np.float64), lo, hi)
    f_lo, f_hi = burr_cdf(lo, p), burr_cdf(hi, p)
    return (burr_cdf(x, p) - f_lo) / (f_hi - f_lo)


# --------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------


def sample_duration(rng: np.random.Generator, cfg: GenerationConfig) -> float:
    """One event duration in seconds.

    VD draws are rejected and redrawn until they land in [vd_min, vd_max].
    """
    if cfg.mode == FD:
        return cfg.fd_duration
    for _ in range(MAX_DRAWS):
        d = burr_inverse_cdf(rng.random(), cfg.burr)
        if cfg.vd_min <= d <= cfg.vd_max:
            return d
    raise InternalError(f"no Burr draw landed in [{cfg.vd_min}, {cfg.vd_max}]")


def stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def file_seed(base_seed: int, recording_id: str) -> int:
    """64-bit per-recording seed, stable across runs and platforms."""
    ss = np.random.SeedSequence([base_seed & (2**64 - 1), stable_hash(recording_id)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def event_count(duration: float, n_wheezes: int, cfg: GenerationConfig) -> int:
    if n_wheezes == 0:
        return 0
    n_windows = int(math.floor(duration / cfg.spacing_window))
    return min(n_windows, int(round(RANDOM_PER_WHEEZE * n_wheezes)))


def _overlaps(start, end, intervals):
    return any(start < b and a < end for a, b in intervals)


def generate_events(recording_id: str, duration: float, wheezes, cfg: GenerationConfig) -> list[LabeledEvent]:
    """Place random events in a recording.

    The recording is split into consecutive ``spacing_window`` windows; a
    subset is chosen uniformly without replacement and one event start is
    drawn uniformly inside each chosen window. Events never overlap
    annotated wheezes, each other, or the recording end.

    Windows are chosen from one RNG stream, durations and starts from two
    others, so FD and VD runs share counts and window assignments.
    """
    if duration <= 0:
        raise ArgumentError("recording duration must be positive")
    wheezes = list(wheezes)
    for w in wheezes:
        if w.recording_id != recording_id:
            raise ArgumentError(f"wheeze from {w.recording_id!r} passed for {recording_id!r}")

    n = event_count(duration, len(wheezes), cfg)
    seed = file_seed(cfg.base_seed, recording_id)
    log.debug("%s: %d wheezes, %.3f s -> %d random events (seed %d)",
              recording_id, len(wheezes), duration, n, seed)
    if n == 0:
        return []

    window_rng, duration_rng, start_rng = (
        np.random.Generator(np.random.PCG64(s))
        for s in np.random.SeedSequence(seed).spawn(3)
    )
    n_windows = int(math.floor(duration / cfg.spacing_window))
    order = window_rng.permutation(n_windows)

    taken = [(w.start, w.end) for w in wheezes]
    events = []
    attempts = 0
    for win in order:
        if len(events) == n or attempts >= MAX_PLACEMENT_ATTEMPTS:
            break
        w0 = win * cfg.spacing_window
        for _ in range(PER_WINDOW_ATTEMPTS):
            if attempts >= MAX_PLACEMENT_ATTEMPTS:
                break
            attempts += 1
            d = sample_duration(duration_rng, cfg)
            hi = min(w0 + cfg.spacing_window, duration - d)
            if hi <= w0:
                continue
            start = w0 + (hi - w0) * start_rng.random()
            end = start + d
            if _overlaps(start, end, taken):
                continue
            taken.append((start, end))
            events.append(LabeledEvent(recording_id, start, end, RANDOM, GENERATED))
            break

    if len(events) < n:
        log.warning("%s: placed %d of %d random events after %d attempts",
                    recording_id, len(events), n, attempts)
    events.sort(key=lambda e: e.start)
    return events


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def events_to_csv(events, mode: str, base_seed: int) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EVENT_CSV_COLUMNS)
    for e in events:
        seed = file_seed(base_seed, e.recording_id) if e.provenance == GENERATED else ""
        writer.writerow([e.recording_id, repr(float(e.start)), repr(float(e.end)), e.label, e.provenance, mode, seed])
    return buf.getvalue()


def events_from_csv(text: str) -> list[LabeledEvent]:
    reader = csv.DictReader(io.StringIO(text))
    return [
        LabeledEvent(row["recording_id"], float(row["start_s"]), float(row["end_s"]),
                     row["class"], row["provenance"])
        for row in reader
    ]
