"""Recordings, annotations and the train/test split.

Audio comes in as 16-bit PCM WAV, annotations as the four-column text
files distributed with the Respiratory Sound Database (start, end,
crackle flag, wheeze flag). Everything downstream works at
``ANALYSIS_RATE``.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import (
    ArgumentError,
    EmptyInputError,
    FormatError,
    ParseError,
    RangeError,
    UnsupportedError,
)

log = logging.getLogger(__name__)

ANALYSIS_RATE = 4000
WHEEZE = "wheeze"
RANDOM = "random"
ANNOTATED = "annotated"
GENERATED = "generated"

_PCM = 0x0001
_EXTENSIBLE = 0xFFFE
# the first two bytes of the KSDATAFORMAT_SUBTYPE_PCM GUID
_PCM_SUBFORMAT = b"\x01\x00"


@dataclass
class AudioRecording:
    id: str
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ArgumentError("samples must be one-dimensional (mono)")
        if self.samples.size == 0:
            raise EmptyInputError(f"recording {self.id!r} has no samples")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ArgumentError(f"invalid sample rate {self.sample_rate!r}")
        self.sample_rate = int(self.sample_rate)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class LabeledEvent:
    recording_id: str
    start: float
    end: float
    label: str = WHEEZE
    provenance: str = ANNOTATED

    def __post_init__(self):
        if not (0.0 <= self.start < self.end):
            raise ArgumentError(
                f"event [{self.start}, {self.end}] needs 0 <= start < end"
            )
        if self.label not in (WHEEZE, RANDOM):
            raise ArgumentError(f"unknown event class {self.label!r}")
        if self.provenance not in (ANNOTATED, GENERATED):
            raise ArgumentError(f"unknown provenance {self.provenance!r}")

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def __post_init__(self):
        shared = {e.recording_id for e in self.train} & {
            e.recording_id for e in self.test
        }
        if shared:
            raise ArgumentError(
                f"recordings in both train and test: {sorted(shared)[:5]}"
            )


# --------------------------------------------------------------------------
# WAV I/O
# --------------------------------------------------------------------------


def load_wav(raw: bytes, recording_id: str = "") -> AudioRecording:
    """Decode a 16-bit linear PCM RIFF/WAVE payload into a mono recording.

    Channels are averaged and samples scaled by 1/32768.
    """
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise FormatError("not a RIFF/WAVE payload")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4 : pos + 8])
        body = raw[pos + 8 : pos + 8 + size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise FormatError("fmt chunk too short")
            fmt = body
        elif chunk_id == b"data":
            # Some writers leave a bogus size on the final chunk.
            data = body
        pos += 8 + size + (size & 1)

    if fmt is None:
        raise FormatError("missing fmt chunk")
    if data is None:
        raise FormatError("missing data chunk")

    audio_format, channels, rate, _, block_align, bits = struct.unpack(
        "<HHIIHH", fmt[:16]
    )
    if audio_format == _EXTENSIBLE:
        if len(fmt) < 26 or fmt[24:26] != _PCM_SUBFORMAT:
            raise UnsupportedError("WAVE_FORMAT_EXTENSIBLE with non-PCM subformat")
    elif audio_format != _PCM:
        raise UnsupportedError(f"audio format tag {audio_format:#06x} is not PCM")
    if bits != 16:
        raise UnsupportedError(f"{bits}-bit samples are not supported")
    if channels < 1 or rate <= 0:
        raise FormatError(f"invalid header: channels={channels}, rate={rate}")
    if block_align != 2 * channels:
        raise FormatError(f"block_align {block_align} inconsistent with {channels} channels")

    n_frames = len(data) // block_align
    if n_frames == 0:
        raise EmptyInputError("WAV payload contains no samples")
    pcm = np.frombuffer(data[: n_frames * block_align], dtype="<i2")
    pcm = pcm.reshape(n_frames, channels).astype(np.float64) / 32768.0
    return AudioRecording(recording_id, pcm.mean(axis=1), rate)


def read_wav(path) -> AudioRecording:
    path = Path(path)
    return load_wav(path.read_bytes(), recording_id=path.stem)


def encode_wav(samples, sample_rate: int) -> bytes:
    """Encode mono or (n, channels) float samples in [-1, 1] as 16-bit PCM."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    channels = x.shape[1]
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    data = pcm.tobytes()
    fmt = struct.pack(
        "<HHIIHH", _PCM, channels, sample_rate, sample_rate * 2 * channels,
        2 * channels, 16,
    )
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(data)) + data
    return b"RIFF" + struct.pack("<I", len(body)) + body


def write_wav(path, samples, sample_rate: int):
    Path(path).write_bytes(encode_wav(samples, sample_rate))


# --------------------------------------------------------------------------
# Resampling
# --------------------------------------------------------------------------


def resample(rec: AudioRecording, target_rate: int = ANALYSIS_RATE) -> AudioRecording:
    """Polyphase windowed-sinc resampling.

    The anti-aliasing cutoff sits at 0.45 * target_rate, i.e. 90% of the
    new Nyquist frequency. Output length is round(n * target / source).
    """
    if target_rate <= 0:
        raise ArgumentError(f"target_rate must be positive, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == rec.sample_rate:
        return AudioRecording(rec.id, rec.samples.copy(), rec.sample_rate)

    ratio = Fraction(target_rate, rec.sample_rate)
    up, down = ratio.numerator, ratio.denominator
    cutoff_hz = 0.45 * min(target_rate, rec.sample_rate)
    half_len = 10 * max(up, down)
    # filter runs at the upsampled rate up * source_rate
    taps = signal.firwin(
        2 * half_len + 1,
        cutoff_hz,
        window=("kaiser", 5.0),
        fs=up * rec.sample_rate,
    )
    y = signal.resample_poly(rec.samples, up, down, window=taps * up)

    n_out = max(1, int(round(rec.samples.size * target_rate / rec.sample_rate)))
    if y.size >= n_out:
        y = y[:n_out]
    else:
        y = np.concatenate([y, np.zeros(n_out - y.size)])
    return AudioRecording(rec.id, y, target_rate)


# --------------------------------------------------------------------------
# Annotations
# --------------------------------------------------------------------------


def parse_annotations(text: str, recording_id: str = "") -> list[LabeledEvent]:
    """Wheeze events from a four-column annotation file.

    Lines whose wheeze flag is 0 (crackle-only or normal cycles) are dropped.
    """
    events = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 4:
            raise ParseError(f"expected 4 fields, found {len(fields)}", lineno)
        try:
            start, end = float(fields[0]), float(fields[1])
            crackle, wheeze = int(float(fields[2])), int(float(fields[3]))
        except ValueError as exc:
            raise ParseError(f"non-numeric field ({exc})", lineno) from None
        if not (math.isfinite(start) and math.isfinite(end)):
            raise ParseError("non-finite time", lineno)
        if end <= start:
            raise ParseError(f"end {end} <= start {start}", lineno)
        if start < 0:
            raise ParseError(f"negative start {start}", lineno)
        if wheeze not in (0, 1) or crackle not in (0, 1):
            raise ParseError("flags must be 0 or 1", lineno)
        if wheeze:
            events.append(LabeledEvent(recording_id, start, end, WHEEZE, ANNOTATED))
    return events


def serialize_annotations(events) -> str:
    """Inverse of :func:`parse_annotations` for wheeze events.

    ``repr`` keeps every float exactly.
    """
    return "".join(f"{e.start!r}\t{e.end!r}\t0\t1\n" for e in events)


def clip_events(events, duration: float) -> list[LabeledEvent]:
    """Clip events that run past the end of their recording.

    Annotation noise is tolerated: overhanging events are truncated and
    logged, events starting after the end are dropped.
    """
    out = []
    for e in events:
        if e.start >= duration:
            log.warning("%s: dropping event [%g, %g] past recording end %g",
                        e.recording_id, e.start, e.end, duration)
            continue
        if e.end > duration:
            log.warning("%s: clipping event [%g, %g] to recording end %g",
                        e.recording_id, e.start, e.end, duration)
            e = LabeledEvent(e.recording_id, e.start, duration, e.label, e.provenance)
        out.append(e)
    return out


def sample_bounds(start: float, end: float, sample_rate: int) -> tuple[int, int]:
    # the epsilon absorbs products like 0.35 * 4000 = 1399.9999999999998
    lo = int(math.floor(start * sample_rate + 1e-9))
    hi = int(math.floor(end * sample_rate + 1e-9))
    return lo, hi


def slice_event(rec: AudioRecording, ev: LabeledEvent) -> np.ndarray:
    """Samples floor(start*fs) .. floor(end*fs), end exclusive."""
    lo, hi = sample_bounds(ev.start, ev.end, rec.sample_rate)
    if lo < 0 or hi > rec.samples.size or hi <= lo:
        raise RangeError(
            f"event [{ev.start}, {ev.end}] outside recording {rec.id!r} "
            f"({rec.duration:.4f} s)"
        )
    return rec.samples[lo:hi]


# --------------------------------------------------------------------------
# Corpus on disk
# --------------------------------------------------------------------------


def parse_split_manifest(text: str) -> dict[str, str]:
    """``recording_id -> 'train' | 'test'`` from a two-column manifest."""
    split = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 2:
            raise ParseError(f"expected 2 fields, found {len(fields)}", lineno)
        rec_id, part = fields
        part = part.lower()
        if part not in ("train", "test"):
            raise ParseError(f"split must be train or test, got {part!r}", lineno)
        if split.get(rec_id, part) != part:
            raise ParseError(f"{rec_id} assigned to both splits", lineno)
        split[rec_id] = part
    return split


@dataclass
class CorpusEntry:
    id: str
    wav_path: Path
    annotation_path: Path
    split: str

    def load(self, target_rate: int = ANALYSIS_RATE) -> AudioRecording:
        return resample(read_wav(self.wav_path), target_rate)

    def wheezes(self, duration: float | None = None) -> list[LabeledEvent]:
        events = parse_annotations(self.annotation_path.read_text(), self.id)
        if duration is not None:
            events = clip_events(events, duration)
        return events


def missing_files(data_dir, split: dict[str, str]) -> list[Path]:
    data_dir = Path(data_dir)
    missing = []
    for rec_id in sorted(split):
        for suffix in (".wav", ".txt"):
            p = data_dir / (rec_id + suffix)
            if not p.is_file():
                missing.append(p)
    return missing


def load_corpus(data_dir, manifest_path) -> list[CorpusEntry]:
    """Index a corpus directory against its split manifest.

    Audio is not decoded here; call :meth:`CorpusEntry.load` per file.
    Raises ``FileNotFoundError`` listing every missing file.
    """
    data_dir = Path(data_dir)
    split = parse_split_manifest(Path(manifest_path).read_text())
    missing = missing_files(data_dir, split)
    if missing:
        listing = "\n  ".join(str(p) for p in missing[:20])
        more = f"\n  ... and {len(missing) - 20} more" if len(missing) > 20 else ""
        raise FileNotFoundError(f"{len(missing)} corpus files missing:\n  {listing}{more}")
    return [
        CorpusEntry(rec_id, data_dir / f"{rec_id}.wav", data_dir / f"{rec_id}.txt", part)
        for rec_id, part in sorted(split.items())
    ]
