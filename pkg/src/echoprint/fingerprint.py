"""Location fingerprint computation.

Pipeline per trace: per-utterance gain normalization and Wiener noise
suppression, multilayer NMF decomposition of the chunk-amplitude
matrix, interval-wise gating of each utterance into reverberant and
direct waveforms, constant-Q band powers of both, and band-wise
ratio aggregation into the fingerprint vector p.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import istft, stft

from .audio_io import AudioTrace, build_trace_matrix, interval_bounds
from .config import CqtConfig, PipelineConfig, WienerConfig
from .decomposition import deep_decompose
from .errors import ConfigError, DataError, NoFingerprintError, ShapeError

_EPS = 1e-12
DIRECT_POWER_EPS = 1e-8  # fraction of a segment's total direct power


# ---------------------------------------------------------------------------
# noise suppression

def _noise_psd(power_spec: np.ndarray, decile: float) -> np.ndarray:
    """Mean PSD of the lowest-energy fraction of frames."""
    frame_power = power_spec.sum(axis=0)
    n_keep = max(1, int(math.floor(frame_power.size * decile)))
    quiet = np.argsort(frame_power, kind="stable")[:n_keep]
    return power_spec[:, quiet].mean(axis=1)


def suppress_noise(signal: AudioTrace, noise_profile: AudioTrace | None = None,
                   cfg: WienerConfig | None = None) -> AudioTrace:
    """Two-pass Wiener suppression with harmonic regeneration.

    Pass one applies a decision-directed a-priori-SNR Wiener gain; pass
    two refines the SNR estimate with harmonics regenerated from the
    rectified first-pass output, preserving speech harmonics that the
    plain gain would thin out. The noise PSD comes from the given
    profile, or from the lowest-energy decile of the signal's frames.
    """
    cfg = cfg or WienerConfig()
    x = signal.samples
    n = x.size
    frame = min(cfg.frame, n)
    if frame < 8:
        return AudioTrace(x.copy(), signal.sample_rate, signal.label)
    noverlap = frame // 2

    f, t, X = stft(x, nperseg=frame, noverlap=noverlap, window="hann")
    px = (X.real ** 2 + X.imag ** 2)

    if noise_profile is not None:
        _, _, N = stft(noise_profile.samples, nperseg=frame, noverlap=noverlap,
                       window="hann")
        noise = (N.real ** 2 + N.imag ** 2).mean(axis=1)
    else:
        noise = _noise_psd(px, cfg.noise_decile)

    def wiener_gain(power):
        gamma = power / (noise[:, None] + _EPS)
        xi = np.empty_like(gamma)
        g_prev = np.ones(gamma.shape[0])
        p_prev = np.zeros(gamma.shape[0])
        a = cfg.snr_smoothing
        for j in range(gamma.shape[1]):
            xi[:, j] = a * (g_prev ** 2) * p_prev / (noise + _EPS) \
                + (1.0 - a) * np.maximum(gamma[:, j] - 1.0, 0.0)
            g_prev = np.maximum(xi[:, j] / (1.0 + xi[:, j]), cfg.gain_floor)
            p_prev = power[:, j]
        return np.maximum(xi / (1.0 + xi), cfg.gain_floor)

    g1 = wiener_gain(px)
    _, s1 = istft(g1 * X, nperseg=frame, noverlap=noverlap, window="hann")

    # harmonic regeneration: rectification restores upper harmonics
    harmo = np.maximum(s1, 0.0)
    _, _, Xh = stft(harmo, nperseg=frame, noverlap=noverlap, window="hann")
    ph = (Xh.real ** 2 + Xh.imag ** 2)
    width = min(ph.shape[1], px.shape[1])
    p1 = (g1 ** 2) * px
    rho = cfg.harmonic_mix
    scale = p1[:, :width].sum() / max(ph[:, :width].sum(), _EPS)
    p_mix = rho * p1[:, :width] + (1.0 - rho) * scale * ph[:, :width]
    xi2 = p_mix / (noise[:, None] + _EPS)
    g2 = np.maximum(xi2 / (1.0 + xi2), cfg.gain_floor)
    g_full = np.ones_like(g1) * cfg.gain_floor
    g_full[:, :width] = g2

    _, out = istft(g_full * X, nperseg=frame, noverlap=noverlap, window="hann")
    if out.size < n:
        out = np.pad(out, (0, n - out.size))
    return AudioTrace(out[:n], signal.sample_rate, signal.label)


# ---------------------------------------------------------------------------
# constant-Q transform

@dataclass
class CqtSpectrum:
    """Per-band constant-Q signal power of one segment."""

    bins: np.ndarray
    center_freqs: np.ndarray
    bins_per_octave: int
    f_min: float
    f_max: float
    kernel_lengths: np.ndarray
    sample_rate: int

    @property
    def q_factors(self) -> np.ndarray:
        """Effective Q per bin, from the realized kernel lengths."""
        return self.center_freqs * self.kernel_lengths / self.sample_rate

    def __len__(self) -> int:
        return self.bins.size


def cqt_bin_count(f_min: float, f_max: float, bins_per_octave: int) -> int:
    return int(math.ceil(bins_per_octave * math.log2(f_max / f_min)))


def cqt_center_freqs(f_min: float, f_max: float, bins_per_octave: int) -> np.ndarray:
    k = np.arange(cqt_bin_count(f_min, f_max, bins_per_octave))
    return f_min * 2.0 ** (k / bins_per_octave)


_kernel_cache: dict = {}


def _cqt_kernels(sample_rate: int, n_fft: int, cfg_key):
    """Spectral-domain constant-Q kernel weights, cached per layout."""
    key = (sample_rate, n_fft, cfg_key)
    if key in _kernel_cache:
        return _kernel_cache[key]
    f_min, f_max, bpo = cfg_key
    freqs = cqt_center_freqs(f_min, f_max, bpo)
    q = 1.0 / (2.0 ** (1.0 / bpo) - 1.0)
    lengths = np.round(q * sample_rate / freqs).astype(int)
    n_bins = n_fft // 2 + 1
    weights = np.empty((freqs.size, n_bins))
    t = np.arange(n_fft)
    for i, (fc, nk) in enumerate(zip(freqs, lengths)):
        nk = min(nk, n_fft)
        kern = np.zeros(n_fft, dtype=np.complex128)
        kern[:nk] = np.hanning(nk) * np.exp(2j * np.pi * fc * t[:nk] / sample_rate)
        spec = np.abs(np.fft.fft(kern)[:n_bins]) ** 2
        weights[i] = spec / spec.sum()
    result = (freqs, lengths, weights)
    _kernel_cache[key] = result
    return result


def cqt(signal: AudioTrace, f_min: float = 50.0, f_max: float = 2000.0,
        bins_per_octave: int = 24) -> CqtSpectrum:
    """Constant-Q band powers of a whole segment.

    Bin k's power is the squared magnitude of the signal's response to a
    Hann-windowed complex kernel of Q-constant length, aggregated over
    the segment (computed as a spectral-kernel weighted integral of the
    signal's power spectrum).
    """
    if f_min >= f_max:
        raise ConfigError("cqt: f_min must be below f_max")
    if f_min < 20.0:
        raise ConfigError("cqt: f_min must be >= 20 Hz")
    if f_max > signal.sample_rate / 2:
        raise ConfigError("cqt: f_max above Nyquist")
    q = 1.0 / (2.0 ** (1.0 / bins_per_octave) - 1.0)
    n_min = int(round(q * signal.sample_rate / f_min))
    n_fft = 1 << max(int(math.ceil(math.log2(max(signal.samples.size, n_min)))), 4)
    freqs, lengths, weights = _cqt_kernels(signal.sample_rate, n_fft,
                                           (f_min, f_max, bins_per_octave))
    spec = np.abs(np.fft.rfft(signal.samples, n_fft)) ** 2
    bins = weights @ spec
    return CqtSpectrum(bins, freqs, bins_per_octave, f_min, f_max, lengths,
                       signal.sample_rate)


# ---------------------------------------------------------------------------
# aggregation

@dataclass
class FingerprintVector:
    """Normalized, aggregated per-band power ratios."""

    p: np.ndarray
    band_mask: np.ndarray  # bool; bands with valid direct-sound power
    n_segments: int

    def __len__(self) -> int:
        return self.p.size


def normalize_and_aggregate(R, D) -> FingerprintVector:
    """Element-wise reverberant/direct power ratios, summed over segments.

    Ratios where the direct power is below DIRECT_POWER_EPS of the
    segment's total direct power are zeroed.
    """
    if len(R) != len(D) or len(R) == 0:
        raise ShapeError("R and D must be non-empty lists of equal length")
    n_bands = len(R[0])
    p = np.zeros(n_bands)
    mask = np.zeros(n_bands, dtype=bool)
    for r_spec, d_spec in zip(R, D):
        r = r_spec.bins if isinstance(r_spec, CqtSpectrum) else np.asarray(r_spec, dtype=np.float64)
        d = d_spec.bins if isinstance(d_spec, CqtSpectrum) else np.asarray(d_spec, dtype=np.float64)
        if r.size != n_bands or d.size != n_bands:
            raise ShapeError("mismatched CQT bin layouts")
        eps_d = DIRECT_POWER_EPS * d.sum()
        valid = d > eps_d
        p[valid] += r[valid] / d[valid]
        mask |= valid
    return FingerprintVector(p, mask, len(R))


# ---------------------------------------------------------------------------
# full pipeline

def _rms_normalize(x: np.ndarray) -> np.ndarray:
    rms = math.sqrt(float(np.mean(x ** 2)))
    return x / rms if rms > 0 else x.copy()


def _interval_gains(row_rev: np.ndarray, row_total: np.ndarray,
                    n_samples: int) -> np.ndarray:
    """Per-sample reverberant share from per-interval regenerations."""
    share = np.divide(row_rev, row_total,
                      out=np.zeros_like(row_rev), where=row_total > 0)
    share = np.clip(share, 0.0, 1.0)
    bounds = interval_bounds(n_samples, share.size)
    return np.repeat(share, np.diff(bounds))


def fingerprint_utterances(utterances, cfg: PipelineConfig | None = None) -> FingerprintVector:
    """Compute one location fingerprint from the utterances of a trace."""
    cfg = cfg or PipelineConfig()
    if not utterances:
        raise DataError("no utterances to fingerprint")

    processed = []
    for utt in utterances:
        x = _rms_normalize(np.asarray(utt.samples, dtype=np.float64))
        trace = AudioTrace(x, utt.sample_rate)
        if cfg.wiener.enabled:
            trace = suppress_noise(trace, None, cfg.wiener)
        processed.append(trace)

    matrix = build_trace_matrix(processed, cfg.matrix.intervals,
                                cfg.matrix.floor_amplitude, cfg.matrix.db_shift)
    result = deep_decompose(matrix, K=cfg.nmf.layers, ranks=cfg.nmf.ranks,
                            c=cfg.nmf.pool_halfwidth, tol=cfg.nmf.tol,
                            max_iter=cfg.nmf.max_iter, seed=cfg.nmf.seed,
                            direct_share_threshold=cfg.nmf.direct_share_threshold)
    if not np.any(result.reverberant):
        raise NoFingerprintError("decomposition produced no reverberant component")

    total = result.total
    r_specs, d_specs = [], []
    for i, trace in enumerate(processed):
        gains = _interval_gains(result.reverberant[i], total[i],
                                trace.samples.size)
        rev_sig = AudioTrace(trace.samples * gains, trace.sample_rate)
        dir_sig = AudioTrace(trace.samples * (1.0 - gains), trace.sample_rate)
        r_specs.append(cqt(rev_sig, cfg.cqt.f_min, cfg.cqt.f_max,
                           cfg.cqt.bins_per_octave))
        d_specs.append(cqt(dir_sig, cfg.cqt.f_min, cfg.cqt.f_max,
                           cfg.cqt.bins_per_octave))
    return normalize_and_aggregate(r_specs, d_specs)


def fingerprint_trace(trace: AudioTrace, cfg: PipelineConfig | None = None):
    """Segment a trace and fingerprint it. Returns (fingerprint, utterances)."""
    from .segmentation import segment

    cfg = cfg or PipelineConfig()
    normalized = AudioTrace(_rms_normalize(trace.samples), trace.sample_rate,
                            trace.label)
    utterances = segment(normalized, cfg.vad)
    if not utterances:
        raise NoFingerprintError("no voiced utterances found in trace")
    return fingerprint_utterances(utterances, cfg), utterances


# ---------------------------------------------------------------------------
# reverberation-time estimate (tracked quality metric)

def estimate_rt60(samples: np.ndarray, sample_rate: int,
                  smooth_ms: float = 10.0) -> float | None:
    """Exponential-decay fit on the energy envelope after the last
    voicing peak. Returns seconds, or None when no usable decay exists."""
    x = np.asarray(samples, dtype=np.float64)
    win = max(1, int(round(sample_rate * smooth_ms / 1000.0)))
    energy = np.convolve(x ** 2, np.ones(win) / win, mode="same")
    peak = int(np.argmax(energy))
    tail = energy[peak:]
    if tail.size < 2 or tail[0] <= 0:
        return None
    ref = tail[0]
    db = 10.0 * np.log10(np.maximum(tail / ref, 1e-12))
    lo, hi = -25.0, -5.0
    sel = (db <= hi) & (db >= lo)
    if sel.sum() < max(8, win):
        sel = db >= lo  # very short decays: fit what exists below the peak
    idx = np.flatnonzero(sel)
    if idx.size < 2:
        return None
    t = idx / sample_rate
    slope, _ = np.polyfit(t, db[idx], 1)
    if slope >= -1e-9:
        return None
    return float(-60.0 / slope)


# ---------------------------------------------------------------------------
# fingerprint store (CSV)

def _mask_to_hex(mask: np.ndarray) -> str:
    value = 0
    for j, bit in enumerate(mask):
        if bit:
            value |= 1 << j
    width = (mask.size + 3) // 4
    return f"{value:0{width}x}"


def _hex_to_mask(text: str, n_bands: int) -> np.ndarray:
    value = int(text, 16)
    return np.array([(value >> j) & 1 == 1 for j in range(n_bands)])


def write_fingerprints(path, rows) -> None:
    """Write (label, FingerprintVector) pairs to CSV.

    Header: label,band_0..band_{B-1},band_mask_hex,n_segments. Band
    values use 17 significant digits so reload is bit-exact.
    """
    rows = list(rows)
    if not rows:
        raise DataError("no fingerprints to write")
    n_bands = len(rows[0][1])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"band_{j}" for j in range(n_bands)]
                        + ["band_mask_hex", "n_segments"])
        for label, fp in rows:
            if len(fp) != n_bands:
                raise ShapeError("fingerprints of mixed band counts")
            writer.writerow([label] + [f"{v:.17g}" for v in fp.p]
                            + [_mask_to_hex(fp.band_mask), fp.n_segments])


def read_fingerprints(path):
    """Read a fingerprint CSV back as a list of (label, FingerprintVector)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "label" or header[-1] != "n_segments":
            raise DataError(f"{path}: not a fingerprint store")
        n_bands = len(header) - 3
        out = []
        for row in reader:
            if len(row) != len(header):
                raise DataError(f"{path}: malformed row with {len(row)} fields")
            p = np.array([float(v) for v in row[1:1 + n_bands]])
            mask = _hex_to_mask(row[1 + n_bands], n_bands)
            out.append((row[0], FingerprintVector(p, mask, int(row[2 + n_bands]))))
    return out
