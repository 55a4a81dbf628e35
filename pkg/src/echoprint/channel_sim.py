"""Synthetic room and VoIP-channel simulation.

Rooms are shoebox geometries rendered with the image-source method
using fractional-delay taps, convolved with anechoic speech, then
passed through a codec band-limit emulation and a lossy packet channel
with concealment. Stands in for field recordings so the evaluation
protocols run at desk scale.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve, firwin

from .audio_io import AudioTrace, write_wav
from .config import CorpusConfig, RoomConfig, UNLABELLED
from .errors import ConfigError, DataError
from .fingerprint import estimate_rt60

SPEED_OF_SOUND = 343.0  # m/s at 20 C
SINC_HALFWIDTH = 16     # 33-tap windowed-sinc fractional delays

CODEC_BANDS = {
    "narrowband": (300.0, 3400.0),
    "mediumband": (200.0, 6000.0),
    "wideband": (100.0, 8000.0),
    "superwideband": (50.0, None),
}


def material_presets() -> dict:
    """Energy-reflection presets shipped with the package."""
    text = resources.files("echoprint.data").joinpath("materials.json").read_text()
    data = json.loads(text)
    return {k: v for k, v in data.items() if not k.startswith("_")}


@dataclass
class RoomSpec:
    """Shoebox room with per-surface amplitude reflection coefficients.

    surface_coeffs order: x=0 wall, x=L wall, y=0, y=W, floor, ceiling.
    """

    dims: tuple
    surface_coeffs: tuple
    source_pos: tuple
    mic_pos: tuple
    max_order: int = 10
    label: str = ""

    def __post_init__(self):
        if len(self.dims) != 3 or any(d <= 0 for d in self.dims):
            raise ConfigError(f"room '{self.label}': dims must be 3 positive lengths")
        if len(self.surface_coeffs) != 6:
            raise ConfigError(f"room '{self.label}': need 6 surface coefficients")
        if any(not (0 <= b < 1) for b in self.surface_coeffs):
            raise ConfigError(f"room '{self.label}': coefficients must be in [0, 1)")
        for name, pos in (("source", self.source_pos), ("mic", self.mic_pos)):
            if len(pos) != 3 or any(not (0 < p < d) for p, d in zip(pos, self.dims)):
                raise ConfigError(
                    f"room '{self.label}': {name} position must lie strictly inside")
        if tuple(self.source_pos) == tuple(self.mic_pos):
            raise ConfigError(f"room '{self.label}': source and mic coincide")


@dataclass
class ImpulseResponse:
    taps: np.ndarray
    sample_rate: int
    rt60_est: float | None = None


@dataclass
class LossProfile:
    loss_rate: float = 0.0
    frame_ms: float = 20.0
    concealment: str = "repeat-spectrum"  # or "silence"
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.loss_rate <= 1.0):
            raise ConfigError("loss_rate must be in [0, 1]")
        if self.frame_ms < 2.5:
            raise ConfigError("loss frame_ms must be >= 2.5 ms")
        if self.concealment not in ("repeat-spectrum", "silence"):
            raise ConfigError(f"unknown concealment '{self.concealment}'")


def image_source_ir(room: RoomSpec, rate: int) -> ImpulseResponse:
    """Image-source impulse response with fractional-delay taps.

    Every mirrored source up to max_order total reflections contributes
    a windowed-sinc tap cluster at delay d/c with amplitude
    (product of per-bounce coefficients) / d.
    """
    dims = np.asarray(room.dims, dtype=np.float64)
    src = np.asarray(room.source_pos, dtype=np.float64)
    mic = np.asarray(room.mic_pos, dtype=np.float64)
    beta = np.asarray(room.surface_coeffs, dtype=np.float64).reshape(3, 2)
    order = room.max_order

    q_max = (order + 1) // 2 + 1
    q = np.arange(-q_max, q_max + 1)

    # per-axis image coordinates and reflection counts for (p, q) pairs
    axis_coord, axis_refl0, axis_refl1 = [], [], []
    for a in range(3):
        coords, r0, r1 = [], [], []
        for p in (0, 1):
            coords.append((1 - 2 * p) * src[a] + 2.0 * q * dims[a])
            r0.append(np.abs(q - p))
            r1.append(np.abs(q))
        axis_coord.append(np.concatenate(coords))
        axis_refl0.append(np.concatenate(r0))
        axis_refl1.append(np.concatenate(r1))

    nx = axis_coord[0].size
    cx, cy, cz = np.meshgrid(axis_coord[0], axis_coord[1], axis_coord[2],
                             indexing="ij")
    n0x, n0y, n0z = np.meshgrid(axis_refl0[0], axis_refl0[1], axis_refl0[2],
                                indexing="ij")
    n1x, n1y, n1z = np.meshgrid(axis_refl1[0], axis_refl1[1], axis_refl1[2],
                                indexing="ij")
    total_order = (n0x + n1x + n0y + n1y + n0z + n1z).ravel()
    keep = total_order <= order

    coords = np.stack([cx.ravel(), cy.ravel(), cz.ravel()], axis=1)[keep]
    refl = (beta[0, 0] ** n0x.ravel()[keep] * beta[0, 1] ** n1x.ravel()[keep]
            * beta[1, 0] ** n0y.ravel()[keep] * beta[1, 1] ** n1y.ravel()[keep]
            * beta[2, 0] ** n0z.ravel()[keep] * beta[2, 1] ** n1z.ravel()[keep])

    dist = np.linalg.norm(coords - mic[None, :], axis=1)
    amp = refl / dist
    delay = dist * rate / SPEED_OF_SOUND

    n_taps = int(np.ceil(delay.max())) + SINC_HALFWIDTH + 2
    ir = np.zeros(n_taps)
    centers = np.round(delay).astype(np.intp)
    offsets = np.arange(-SINC_HALFWIDTH, SINC_HALFWIDTH + 1)
    idx = centers[:, None] + offsets[None, :]
    u = idx - delay[:, None]
    window = np.cos(np.pi * u / (2 * SINC_HALFWIDTH + 1)) ** 2
    vals = amp[:, None] * np.sinc(u) * window
    valid = idx >= 0
    np.add.at(ir, idx[valid], vals[valid])

    return ImpulseResponse(ir, rate, estimate_rt60(ir, rate))


def convolve(dry: AudioTrace, ir: ImpulseResponse) -> AudioTrace:
    """Linear convolution with an impulse response, peak-normalized."""
    if dry.sample_rate != ir.sample_rate:
        raise ConfigError(
            f"sample-rate mismatch: trace {dry.sample_rate} vs IR {ir.sample_rate}")
    out = fftconvolve(dry.samples, ir.taps)
    peak = np.max(np.abs(out))
    if peak > 0:
        out = out / peak
    return AudioTrace(out, dry.sample_rate, dry.label)


def codec_emulate(trace: AudioTrace, mode: str) -> AudioTrace:
    """Band-limit a trace the way a speech codec's mode ladder does."""
    if mode not in CODEC_BANDS:
        raise ConfigError(f"unknown codec mode '{mode}' (have {sorted(CODEC_BANDS)})")
    low, high = CODEC_BANDS[mode]
    nyquist = trace.sample_rate / 2.0
    numtaps = int(trace.sample_rate * 64 / 1000) | 1  # odd; ~50 Hz transition
    if high is None or high >= 0.98 * nyquist:
        taps = firwin(numtaps, low, pass_zero=False, fs=trace.sample_rate)
    else:
        taps = firwin(numtaps, [low, high], pass_zero=False, fs=trace.sample_rate)
    half = numtaps // 2
    out = fftconvolve(trace.samples, taps)[half:half + trace.samples.size]
    return AudioTrace(out, trace.sample_rate, trace.label)


def lossy_channel(trace: AudioTrace, profile: LossProfile) -> AudioTrace:
    """Drop speech frames at the profile's rate and conceal the gaps.

    Frame losses are independent Bernoulli events (the discretized
    Poisson arrival model). Repeat-spectrum concealment resynthesizes a
    dropped frame from the last received frame's magnitude spectrum
    with its phase continued across the gap; silence concealment
    inserts zeros. Output length equals input length.
    """
    frame_n = max(1, int(round(profile.frame_ms * trace.sample_rate / 1000.0)))
    x = trace.samples
    if profile.loss_rate == 0.0:
        return AudioTrace(x.copy(), trace.sample_rate, trace.label)
    rng = np.random.Generator(np.random.PCG64(profile.seed))
    n_frames = int(math.ceil(x.size / frame_n))
    dropped = rng.random(n_frames) < profile.loss_rate

    out = x.copy()
    last = None           # last received full frame
    synth_phase = None    # continued phase per rfft bin
    bin_advance = 2.0 * np.pi * np.arange(frame_n // 2 + 1)  # per frame hop
    for i in range(n_frames):
        s0, s1 = i * frame_n, min((i + 1) * frame_n, x.size)
        if not dropped[i]:
            if s1 - s0 == frame_n:
                last = x[s0:s1]
                synth_phase = None
            continue
        if profile.concealment == "silence" or last is None:
            out[s0:s1] = 0.0
            continue
        spec = np.fft.rfft(last)
        if synth_phase is None:
            synth_phase = np.angle(spec)
        synth_phase = synth_phase + bin_advance
        frame = np.fft.irfft(np.abs(spec) * np.exp(1j * synth_phase), frame_n)
        out[s0:s1] = frame[:s1 - s0]
    return AudioTrace(out, trace.sample_rate, trace.label)


# ---------------------------------------------------------------------------
# corpus generation

# floor plans for identical-geometry rooms that differ only in finish
DEFAULT_SURFACE_SETS = [
    ("office", ("plaster", "plaster", "plaster", "plaster", "carpet", "acoustic_tile")),
    ("studio", ("curtain", "curtain", "drywall", "drywall", "carpet", "acoustic_tile")),
    ("glass_lab", ("glass", "glass", "glass", "plaster", "linoleum", "concrete")),
    ("wood_room", ("wood", "wood", "wood", "wood", "wood", "plaster")),
    ("concrete_cell", ("concrete", "concrete", "concrete", "concrete", "concrete", "concrete")),
    ("library", ("bookshelf", "bookshelf", "bookshelf", "plaster", "carpet", "plaster")),
    ("meeting_room", ("drywall", "drywall", "drywall", "drywall", "linoleum", "acoustic_tile")),
    ("brick_room", ("brick", "brick", "brick", "brick", "wood", "plaster")),
    ("mixed_live", ("glass", "brick", "plaster", "metal_panel", "linoleum", "concrete")),
    ("damped_room", ("acoustic_tile", "acoustic_tile", "curtain", "curtain", "carpet", "acoustic_tile")),
    ("lounge", ("curtain", "wood", "drywall", "bookshelf", "carpet", "plaster")),
    ("atrium", ("glass", "glass", "concrete", "concrete", "linoleum", "glass")),
]


def surfaces_to_coeffs(surfaces) -> tuple:
    """Material names (or raw coefficients) to amplitude reflection values.

    Presets store energy reflection; the image-source model multiplies
    amplitudes per bounce, hence the square root.
    """
    presets = material_presets()
    coeffs = []
    for s in surfaces:
        if isinstance(s, str):
            if s not in presets:
                raise ConfigError(f"unknown material '{s}' (have {sorted(presets)})")
            coeffs.append(math.sqrt(presets[s]))
        else:
            coeffs.append(float(s))
    return tuple(coeffs)


def _default_positions(dims) -> tuple:
    source = (0.35 * dims[0], 0.40 * dims[1], 1.25)
    mic = (min(0.35 * dims[0] + 0.45, dims[0] - 0.2),
           min(0.40 * dims[1] + 0.30, dims[1] - 0.2), 1.10)
    return source, mic


def room_from_config(cfg: RoomConfig) -> RoomSpec:
    source, mic = _default_positions(cfg.dims)
    return RoomSpec(
        dims=tuple(cfg.dims),
        surface_coeffs=surfaces_to_coeffs(cfg.surfaces),
        source_pos=tuple(cfg.source_pos) if cfg.source_pos else source,
        mic_pos=tuple(cfg.mic_pos) if cfg.mic_pos else mic,
        max_order=cfg.max_order,
        label=cfg.label,
    )


def default_room_set(count: int, dims=(4.2, 5.1, 2.9), max_order: int = 10) -> list[RoomSpec]:
    """Identical-geometry rooms with distinct surface-material sets."""
    if count > len(DEFAULT_SURFACE_SETS):
        raise ConfigError(
            f"only {len(DEFAULT_SURFACE_SETS)} distinct material sets shipped; "
            f"pass explicit rooms for more")
    rooms = []
    for label, surfaces in DEFAULT_SURFACE_SETS[:count]:
        rooms.append(room_from_config(RoomConfig(
            label=label, dims=dims, surfaces=surfaces, max_order=max_order)))
    return rooms


def _jitter_position(rng, base, dims, spread, margin=0.3):
    pos = np.asarray(base) + rng.uniform(-1.0, 1.0, 3) * np.asarray(spread)
    return tuple(np.clip(pos, margin, np.asarray(dims) - margin))


def _position_variant(room: RoomSpec, room_idx: int, pos_idx: int,
                      master_seed: int) -> RoomSpec:
    """Speaker-and-laptop placement for one recording position.

    Positions spread the source over the room interior on a jittered
    grid; the mic tracks the source at desk distance.
    """
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(master_seed, spawn_key=(room_idx, pos_idx))))
    dims = np.asarray(room.dims)
    grid = [(0.3, 0.3), (0.7, 0.3), (0.5, 0.5), (0.3, 0.7), (0.7, 0.7),
            (0.5, 0.25), (0.25, 0.5), (0.75, 0.5), (0.5, 0.75)]
    gx, gy = grid[pos_idx % len(grid)]
    base_src = (gx * dims[0], gy * dims[1], 1.25)
    src = _jitter_position(rng, base_src, dims, (0.25, 0.25, 0.1))
    offset = rng.uniform(-1.0, 1.0, 3) * np.array([0.1, 0.1, 0.05])
    base_mic = np.asarray(src) + np.array([0.42, 0.28, -0.12]) + offset
    mic = tuple(np.clip(base_mic, 0.3, dims - 0.3))
    if mic == src:
        mic = tuple(np.asarray(mic) + np.array([0.05, 0.0, 0.0]))
    return RoomSpec(room.dims, room.surface_coeffs, src, mic,
                    room.max_order, room.label)


MANIFEST_FIELDS = ["path", "label", "room_id", "position_id", "codec_mode",
                   "loss_rate", "seed"]


def generate_corpus(rooms, dry_bank, positions: int, codec_mode: str,
                    loss: LossProfile, out_dir, seed: int,
                    unlabelled_room_labels=()) -> list[dict]:
    """Render (room x position x dry trace) recordings and a manifest.

    Returns the manifest rows; also writes WAVs plus manifest.csv under
    out_dir. Deterministic for a fixed seed: every triple draws from
    its own spawned RNG stream.
    """
    if len(rooms) < 2:
        raise DataError("need at least 2 rooms")
    if not dry_bank:
        raise DataError("need at least 1 anechoic trace")
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wavs"
    wav_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for ri, room in enumerate(rooms):
        label = room.label if room.label not in unlabelled_room_labels else UNLABELLED
        for pi in range(positions):
            variant = _position_variant(room, ri, pi, seed)
            ir = image_source_ir(variant, dry_bank[0].sample_rate)
            for di, dry in enumerate(dry_bank):
                trace_seed = int(np.random.SeedSequence(
                    seed, spawn_key=(ri, pi, di)).generate_state(1)[0])
                wet = convolve(dry, ir)
                wet = codec_emulate(wet, codec_mode)
                wet = lossy_channel(wet, LossProfile(
                    loss.loss_rate, loss.frame_ms, loss.concealment, trace_seed))
                name = f"{room.label}_p{pi}_d{di}.wav"
                write_wav(wav_dir / name, wet)
                rows.append({
                    "path": str(wav_dir / name),
                    "label": label,
                    "room_id": room.label,
                    "position_id": pi,
                    "codec_mode": codec_mode,
                    "loss_rate": loss.loss_rate,
                    "seed": trace_seed,
                })
    write_manifest(out_dir / "manifest.csv", rows)
    return rows


def write_manifest(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def corpus_from_config(cfg: CorpusConfig, out_dir, seed: int) -> list[dict]:
    """Generate a corpus as described by a config section."""
    from .speech import speech_bank

    if cfg.rooms:
        rooms = [room_from_config(r) for r in cfg.rooms]
    elif cfg.room_count >= 2:
        rooms = default_room_set(cfg.room_count, cfg.room_dims)
    else:
        raise ConfigError("corpus: provide rooms or room_count >= 2")
    dry = speech_bank(cfg.dry_count, cfg.dry_duration_s, cfg.sample_rate,
                      np.random.SeedSequence(seed, spawn_key=(0xD2,)).generate_state(1)[0])
    loss = LossProfile(cfg.loss.rate, cfg.loss.frame_ms, cfg.loss.concealment, seed)
    return generate_corpus(rooms, dry, cfg.positions, cfg.codec_mode, loss,
                           out_dir, seed)
