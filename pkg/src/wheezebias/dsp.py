"""Fixed-size magnitude spectrograms of event segments.

A segment is centred in (or truncated to) a 2 s buffer at 4 kHz, framed
with a 512-sample Hamming window and a hop of 128 samples, giving a
257 x 59 (bins x frames) magnitude matrix.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import ANALYSIS_RATE
from .errors import ArgumentError, EmptyInputError, FormatError

SEGMENT_SECONDS = 2.0
SEGMENT_LENGTH = int(SEGMENT_SECONDS * ANALYSIS_RATE)  # 8000
N_BINS = 257
N_FRAMES = 59

SPEC_MAGIC = b"WZSPEC\x00\x01"


@dataclass(frozen=True)
class StftConfig:
    window_length: int = 512
    hop: int = 128
    fft_size: int = 512
    window_shape: str = "hamming"

    def __post_init__(self):
        if self.hop * 4 != self.window_length:
            raise ArgumentError("hop must be window_length / 4 (75% overlap)")
        if self.fft_size < self.window_length:
            raise ArgumentError("fft_size must be >= window_length")
        if self.window_shape != "hamming":
            raise ArgumentError(f"unsupported window {self.window_shape!r}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        return (n_samples - self.window_length) // self.hop + 1

    def window(self) -> np.ndarray:
        return np.hamming(self.window_length)


def prepare_segment(samples, length: int = SEGMENT_LENGTH) -> np.ndarray:
    """Centre-pad with zeros or keep the first ``length`` samples.

    For odd deficits the extra zero goes on the right.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise EmptyInputError("cannot prepare an empty segment")
    if x.size >= length:
        return x[:length].copy()
    deficit = length - x.size
    left = deficit // 2
    out = np.zeros(length)
    out[left : left + x.size] = x
    return out


def padding_fraction(n_samples: int, length: int = SEGMENT_LENGTH) -> float:
    """Share of the fixed buffer that is zero padding for an event of n samples."""
    if n_samples <= 0:
        raise ArgumentError("n_samples must be positive")
    return 1.0 - min(n_samples, length) / length


def frames(segment, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """(n_frames, window_length) view of the raw, unwindowed frames."""
    x = np.asarray(segment, dtype=np.float64)
    view = np.lib.stride_tricks.sliding_window_view(x, cfg.window_length)
    return view[:: cfg.hop]


def stft_magnitude(segment, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """|DFT| of each Hamming-windowed frame, shape (n_bins, n_frames)."""
    x = np.asarray(segment, dtype=np.float64)
    if x.shape != (SEGMENT_LENGTH,):
        raise ArgumentError(f"segment must have {SEGMENT_LENGTH} samples, got {x.shape}")
    windowed = frames(x, cfg) * cfg.window()
    return np.abs(np.fft.rfft(windowed, n=cfg.fft_size, axis=1)).T


def normalize01(spec) -> np.ndarray:
    """Per-event min-max scaling; a constant matrix maps to zeros."""
    s = np.asarray(spec, dtype=np.float64)
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.zeros_like(s)
    return (s - lo) / (hi - lo)


def event_spectrogram(samples, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Normalized 257 x 59 image of an event, as fed to the CNN."""
    return normalize01(stft_magnitude(prepare_segment(samples), cfg))


def bin_frequencies(cfg: StftConfig = StftConfig(), sample_rate: int = ANALYSIS_RATE) -> np.ndarray:
    return np.arange(cfg.n_bins) * sample_rate / cfg.fft_size


# --------------------------------------------------------------------------
# Dumps
# --------------------------------------------------------------------------


def spectrogram_to_bytes(spec) -> bytes:
    """Magic, u32 rows, u32 cols, then row-major little-endian float32."""
    s = np.asarray(spec)
    if s.ndim != 2:
        raise ArgumentError("spectrogram must be 2-D")
    rows, cols = s.shape
    return SPEC_MAGIC + struct.pack("<II", rows, cols) + s.astype("<f4").tobytes(order="C")


def spectrogram_from_bytes(raw: bytes) -> np.ndarray:
    if len(raw) < 16 or raw[:8] != SPEC_MAGIC:
        raise FormatError("bad spectrogram magic")
    rows, cols = struct.unpack("<II", raw[8:16])
    body = raw[16:]
    if len(body) != 4 * rows * cols:
        raise FormatError(f"expected {4 * rows * cols} payload bytes, got {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float64)


def write_spectrogram(path, spec):
    Path(path).write_bytes(spectrogram_to_bytes(spec))


def read_spectrogram(path) -> np.ndarray:
    return spectrogram_from_bytes(Path(path).read_bytes())


def write_spectrogram_csv(path, spec):
    np.savetxt(path, np.asarray(spec), delimiter=",", fmt="%.9g")
