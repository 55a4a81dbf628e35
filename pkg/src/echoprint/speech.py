"""Synthetic anechoic speech bank.

Pseudo-speech built from pitched glottal-style harmonic bursts shaped
by vowel formant resonators, grouped into utterances separated by
silences long enough for the segmenter. Not a speech synthesizer;
it only has to excite rooms the way talking does (80-260 Hz pitch,
formant structure, syllable-scale amplitude envelopes).
"""

from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

from .audio_io import AudioTrace

# (F1, F2, F3) vowel formant frequencies, Hz
_VOWELS = [
    (730.0, 1090.0, 2440.0),   # a
    (270.0, 2290.0, 3010.0),   # i
    (300.0, 870.0, 2240.0),    # u
    (530.0, 1840.0, 2480.0),   # e
    (570.0, 840.0, 2410.0),    # o
]
_FORMANT_BW = (60.0, 90.0, 120.0)


def _resonator(x: np.ndarray, freq: float, bw: float, rate: int) -> np.ndarray:
    """Second-order all-pole resonance."""
    r = np.exp(-np.pi * bw / rate)
    theta = 2.0 * np.pi * freq / rate
    a = [1.0, -2.0 * r * np.cos(theta), r * r]
    b = [(1.0 - r) * np.sqrt(1.0 - 2.0 * r * np.cos(2.0 * theta) + r * r)]
    return lfilter(b, a, x)


def _syllable(rng: np.random.Generator, rate: int) -> np.ndarray:
    dur = rng.uniform(0.12, 0.3)
    n = int(dur * rate)
    t = np.arange(n) / rate
    f0 = rng.uniform(85.0, 255.0)
    drift = rng.uniform(-0.15, 0.15)
    inst_f0 = f0 * (1.0 + drift * t / max(dur, 1e-9))
    phase = 2.0 * np.pi * np.cumsum(inst_f0) / rate

    src = np.zeros(n)
    n_harm = int((rate / 2 * 0.9) // f0)
    for h in range(1, min(n_harm, 40) + 1):
        src += np.sin(h * phase) / h
    src += 0.02 * rng.standard_normal(n)  # aspiration noise

    vowel = _VOWELS[rng.integers(0, len(_VOWELS))]
    y = np.zeros(n)
    for freq, bw in zip(vowel, _FORMANT_BW):
        y += _resonator(src, freq, bw, rate)

    attack = max(1, int(0.02 * rate))
    release = max(1, int(0.05 * rate))
    env = np.ones(n)
    env[:attack] = np.linspace(0.0, 1.0, attack)
    env[-release:] *= np.linspace(1.0, 0.0, release)
    y *= env
    peak = np.max(np.abs(y))
    return y / peak * rng.uniform(0.5, 0.9) if peak > 0 else y


def synthesize_speech(duration_s: float, sample_rate: int,
                      seed: int) -> AudioTrace:
    """One anechoic pseudo-speech trace of roughly the given duration."""
    rng = np.random.Generator(np.random.PCG64(seed))
    n_total = int(duration_s * sample_rate)
    out = np.zeros(n_total)
    pos = int(rng.uniform(0.05, 0.2) * sample_rate)
    while pos < n_total:
        n_syll = rng.integers(2, 6)
        for _ in range(n_syll):
            syl = _syllable(rng, sample_rate)
            end = min(pos + syl.size, n_total)
            out[pos:end] += syl[:end - pos]
            pos = end + int(rng.uniform(0.02, 0.08) * sample_rate)
            if pos >= n_total:
                break
        pos += int(rng.uniform(0.45, 0.8) * sample_rate)  # inter-utterance gap
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= 0.9 / peak
    return AudioTrace(out, sample_rate)


def speech_bank(count: int, duration_s: float, sample_rate: int,
                seed: int) -> list[AudioTrace]:
    """Deterministic bank of anechoic traces for corpus generation."""
    root = np.random.SeedSequence(seed)
    return [synthesize_speech(duration_s, sample_rate,
                              child.generate_state(1)[0])
            for child in root.spawn(count)]
