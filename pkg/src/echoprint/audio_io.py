"""Audio trace I/O, resampling, and the chunk-amplitude matrix.

Traces are mono float arrays in [-1, 1]. WAV support is deliberately
restricted to 16-bit linear PCM so that read(write(x)) round-trips
bit-exactly.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .config import SUPPORTED_RATES
from .errors import ConfigError, DataError, FormatError, UnsupportedCodecError

DB_FLOOR_AMPLITUDE = 1e-6  # -120 dBFS; below any audible component
DB_SHIFT = 120.0


@dataclass
class AudioTrace:
    """Single-channel sampled audio."""

    samples: np.ndarray
    sample_rate: int
    label: str | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise DataError("trace must be a non-empty 1-D sample array")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("trace contains non-finite samples")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class TraceMatrix:
    """Per-chunk mean-amplitude matrix (dB, floor-shifted to be >= 0)."""

    values: np.ndarray  # shape (M chunks, t intervals)

    @property
    def n_chunks(self) -> int:
        return self.values.shape[0]

    @property
    def n_intervals(self) -> int:
        return self.values.shape[1]


def read_wav(path) -> AudioTrace:
    """Read a 16-bit PCM WAV file as a mono trace scaled to +/-1.

    Stereo files are downmixed by channel averaging.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            comptype = wf.getcomptype()
            raw = wf.readframes(n_frames)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}")
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: malformed WAV file ({exc})") from exc
    if comptype != "NONE":
        raise UnsupportedCodecError(f"{path}: compressed WAV ({comptype}) not supported")
    if sampwidth != 2:
        raise UnsupportedCodecError(f"{path}: only 16-bit PCM supported, got {8 * sampwidth}-bit")
    if n_channels not in (1, 2):
        raise UnsupportedCodecError(f"{path}: {n_channels} channels unsupported")
    data = np.frombuffer(raw, dtype="<i2")
    if n_channels == 2:
        data = data.reshape(-1, 2).mean(axis=1)
    samples = np.asarray(data, dtype=np.float64) / 32768.0
    if samples.size == 0:
        raise FormatError(f"{path}: empty WAV file")
    return AudioTrace(samples, rate)


def write_wav(path, trace: AudioTrace) -> None:
    """Write a trace as mono 16-bit PCM WAV (values clipped to full scale)."""
    quantized = np.clip(np.round(trace.samples * 32768.0), -32768, 32767).astype("<i2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(trace.sample_rate)
        wf.writeframes(quantized.tobytes())


def resample(trace: AudioTrace, target_rate: int) -> AudioTrace:
    """Polyphase windowed-sinc resampling to one of the supported rates.

    Output length is round(n * target_rate / input_rate) exactly.
    """
    if target_rate not in SUPPORTED_RATES:
        raise ConfigError(f"target rate {target_rate} not in {SUPPORTED_RATES}")
    if target_rate == trace.sample_rate:
        return AudioTrace(trace.samples.copy(), target_rate, trace.label)
    g = math.gcd(target_rate, trace.sample_rate)
    up, down = target_rate // g, trace.sample_rate // g
    out = resample_poly(trace.samples, up, down, window=("kaiser", 8.0))
    n_target = round(trace.samples.size * target_rate / trace.sample_rate)
    if out.size > n_target:
        out = out[:n_target]
    elif out.size < n_target:
        out = np.pad(out, (0, n_target - out.size))
    return AudioTrace(out, target_rate, trace.label)


def interval_bounds(n_samples: int, t: int) -> np.ndarray:
    """Sample indices delimiting t near-equal intervals of an n-sample chunk."""
    return np.floor(np.linspace(0.0, float(n_samples), t + 1)).astype(np.intp)


def amplitude_to_db(mean_abs: np.ndarray, floor: float = DB_FLOOR_AMPLITUDE,
                    shift: float = DB_SHIFT) -> np.ndarray:
    """Floor-shifted dB mapping; floor keeps NMF inputs non-negative."""
    return 20.0 * np.log10(np.maximum(mean_abs, floor)) + shift


def build_trace_matrix(utterances, t: int, floor: float = DB_FLOOR_AMPLITUDE,
                       shift: float = DB_SHIFT) -> TraceMatrix:
    """Assemble the decomposition input: one row of t mean-|amplitude| dB
    entries per utterance.

    Utterances shorter than t samples produce empty intervals, which take
    the floor value.
    """
    if t < 8:
        raise ConfigError("interval count t must be >= 8")
    if not utterances:
        raise DataError("empty utterance list")
    rows = np.empty((len(utterances), t), dtype=np.float64)
    for i, utt in enumerate(utterances):
        x = np.abs(np.asarray(utt.samples, dtype=np.float64))
        if x.size == 0:
            raise DataError(f"utterance {i} is empty")
        bounds = interval_bounds(x.size, t)
        csum = np.concatenate(([0.0], np.cumsum(x)))
        widths = np.diff(bounds)
        sums = csum[bounds[1:]] - csum[bounds[:-1]]
        means = np.divide(sums, widths, out=np.zeros(t, dtype=np.float64),
                          where=widths > 0)
        rows[i] = amplitude_to_db(means, floor, shift)
    return TraceMatrix(rows)
