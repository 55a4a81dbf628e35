"""Utterance segmentation: voice-activity + silence detection.

A frame is voiced when its energy clears an adaptive threshold (median
frame energy minus a fixed offset) AND its spectral flatness is below a
tonality threshold. Maximal voiced runs become utterances, with short
gaps hysteresis-merged and one silent guard frame kept on each side so
the reverberant tail right after voicing is not cut off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import AudioTrace
from .config import VadConfig
from .errors import TooShortError

ENERGY_FLOOR_DB = -120.0
_EPS = 1e-12


@dataclass
class Utterance:
    """A contiguous voiced span of a parent trace."""

    samples: np.ndarray
    sample_rate: int
    start_offset: int  # sample index in the parent trace

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class FrameFeatures:
    spectral_flatness: np.ndarray  # in [0, 1]; exact silence -> 1.0
    frame_energy: np.ndarray       # dB, floored at ENERGY_FLOOR_DB
    frame_length: int
    hop: int


def _frame_signal(x: np.ndarray, frame: int, hop: int) -> np.ndarray:
    n_frames = 1 + (x.size - frame) // hop
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx]


def frame_features(trace: AudioTrace, frame_ms: float = 32.0,
                   hop_ms: float = 16.0) -> FrameFeatures:
    """Per-frame energy (dB) and spectral flatness (geometric/arithmetic
    mean of the magnitude spectrum, DC excluded)."""
    frame = int(round(trace.sample_rate * frame_ms / 1000.0))
    hop = int(round(trace.sample_rate * hop_ms / 1000.0))
    if frame < 1 or hop < 1 or hop > frame:
        raise ValueError("need 0 < hop_ms <= frame_ms")
    if trace.samples.size < frame:
        raise TooShortError(
            f"trace of {trace.samples.size} samples is shorter than one "
            f"{frame}-sample frame")
    frames = _frame_signal(trace.samples, frame, hop)

    power = np.mean(frames ** 2, axis=1)
    energy_db = np.where(power > 0, 10.0 * np.log10(np.maximum(power, _EPS)),
                         ENERGY_FLOOR_DB)
    energy_db = np.maximum(energy_db, ENERGY_FLOOR_DB)

    window = np.hanning(frame)
    mags = np.abs(np.fft.rfft(frames * window, axis=1))[:, 1:]  # drop DC
    arith = mags.mean(axis=1)
    geo = np.exp(np.mean(np.log(np.maximum(mags, _EPS)), axis=1))
    flatness = np.ones(frames.shape[0])
    nz = arith > _EPS
    flatness[nz] = np.minimum(geo[nz] / arith[nz], 1.0)
    return FrameFeatures(flatness, energy_db, frame, hop)


def _voiced_mask(feats: FrameFeatures, cfg: VadConfig) -> np.ndarray:
    threshold = np.median(feats.frame_energy) - cfg.silence_offset_db
    return (feats.frame_energy > threshold) & \
           (feats.spectral_flatness < cfg.flatness_threshold)


def _runs(mask: np.ndarray):
    """(start, end) frame-index pairs of maximal True runs, end exclusive."""
    padded = np.concatenate(([False], mask, [False]))
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[0::2], edges[1::2]))


def segment(trace: AudioTrace, cfg: VadConfig | None = None) -> list[Utterance]:
    """Split a trace into utterances. Silence-only traces return []."""
    cfg = cfg or VadConfig()
    feats = frame_features(trace, cfg.frame_ms, cfg.hop_ms)
    voiced = _voiced_mask(feats, cfg)
    runs = _runs(voiced)
    if not runs:
        return []

    max_gap_frames = int(round(cfg.min_gap_s * 1000.0 / cfg.hop_ms))
    merged = [list(runs[0])]
    for start, end in runs[1:]:
        if start - merged[-1][1] < max_gap_frames:
            merged[-1][1] = end
        else:
            merged.append([start, end])

    min_frames = max(1, int(round(cfg.min_utterance_s * 1000.0 / cfg.hop_ms)))
    hop, frame = feats.hop, feats.frame_length
    n_frames = voiced.size
    utterances = []
    for start, end in merged:
        if end - start < min_frames:
            continue
        # one silent guard frame each side preserves the decay tail
        g_start = max(0, start - 1)
        g_end = min(n_frames, end + 1)
        s0 = g_start * hop
        s1 = min(trace.samples.size, (g_end - 1) * hop + frame)
        utterances.append(Utterance(trace.samples[s0:s1].copy(),
                                    trace.sample_rate, s0))
    return utterances
