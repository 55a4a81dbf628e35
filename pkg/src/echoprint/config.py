"""Configuration objects and the JSON config file loader.

A single JSON file configures every subcommand. Top-level sections are
optional; omitted fields fall back to the defaults below.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

SUPPORTED_RATES = (8000, 16000, 44100, 48000)
UNLABELLED = "UNLABELLED"


@dataclass
class VadConfig:
    frame_ms: float = 32.0
    hop_ms: float = 16.0
    flatness_threshold: float = 0.35
    silence_offset_db: float = 10.0  # threshold = median frame energy - offset
    min_utterance_s: float = 0.3
    min_gap_s: float = 0.2


@dataclass
class MatrixConfig:
    intervals: int = 512  # t, time intervals per chunk
    floor_amplitude: float = 1e-6
    db_shift: float = 120.0


@dataclass
class NmfConfig:
    layers: int = 3
    ranks: tuple = (100, 50, 25)
    pool_halfwidth: int = 20
    tol: float = 0.05
    max_iter: int = 500
    seed: int = 2024
    direct_share_threshold: float = 0.9


@dataclass
class WienerConfig:
    enabled: bool = True
    frame: int = 512
    noise_decile: float = 0.1
    gain_floor: float = 0.1
    snr_smoothing: float = 0.97
    harmonic_mix: float = 0.5


@dataclass
class CqtConfig:
    f_min: float = 50.0
    f_max: float = 2000.0
    bins_per_octave: int = 24


@dataclass
class ClassifierConfig:
    c: float = 10.0
    kkt_tol: float = 1e-3
    members: int = 10
    vote_threshold: int = 6
    gamma: float | None = None  # None -> median pairwise distance heuristic
    bagging: bool = True
    prefilter: bool = True
    duplicate_delta: float = 1e-6
    max_passes: int = 8
    max_iter: int = 20000


@dataclass
class PipelineConfig:
    sample_rate: int = 16000
    vad: VadConfig = field(default_factory=VadConfig)
    matrix: MatrixConfig = field(default_factory=MatrixConfig)
    nmf: NmfConfig = field(default_factory=NmfConfig)
    wiener: WienerConfig = field(default_factory=WienerConfig)
    cqt: CqtConfig = field(default_factory=CqtConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)


@dataclass
class RoomConfig:
    label: str
    dims: tuple = (4.2, 5.1, 2.9)
    surfaces: tuple = ("plaster", "plaster", "plaster", "plaster", "carpet", "plaster")
    source_pos: tuple | None = None  # None -> deterministic default placement
    mic_pos: tuple | None = None
    max_order: int = 10


@dataclass
class LossConfig:
    rate: float = 0.0
    frame_ms: float = 20.0
    concealment: str = "repeat-spectrum"  # or "silence"


@dataclass
class CorpusConfig:
    rooms: list = field(default_factory=list)  # list of RoomConfig
    room_count: int = 0  # procedural generation when rooms is empty
    room_dims: tuple = (4.2, 5.1, 2.9)
    positions: int = 5
    dry_count: int = 2
    dry_duration_s: float = 10.0
    sample_rate: int = 16000
    codec_mode: str = "superwideband"
    loss: LossConfig = field(default_factory=LossConfig)


@dataclass
class EvalConfig:
    k: int = 5
    inverted: bool = True  # train on one fold, test on the rest
    unlabelled_fraction: float = 0.0


@dataclass
class ExperimentConfig:
    kind: str = "packet_loss"  # packet_loss | open_world | codec | intervals
    loss_rates: list = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3])
    concealment: str = "repeat-spectrum"
    unlabelled_fractions: list = field(default_factory=lambda: [0.0, 0.5])
    codec_modes: list = field(default_factory=lambda: ["narrowband", "superwideband"])
    interval_counts: list = field(default_factory=lambda: [256, 512, 1024])


@dataclass
class ToolConfig:
    """Bundle of all sections as read from one config file."""

    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"{where}: unknown key '{key}'")
        kwargs[key] = value
    obj = cls(**kwargs)
    # recursively promote nested dicts to their dataclass types
    for f in dataclasses.fields(cls):
        val = getattr(obj, f.name)
        nested = _NESTED.get((cls, f.name))
        if nested is not None and isinstance(val, dict):
            setattr(obj, f.name, _build(nested, val, f"{where}.{f.name}"))
        elif (cls, f.name) == (CorpusConfig, "rooms") and val:
            rooms = []
            for i, r in enumerate(val):
                rooms.append(r if isinstance(r, RoomConfig) else _build(RoomConfig, r, f"{where}.rooms[{i}]"))
            setattr(obj, f.name, rooms)
        elif isinstance(val, list) and f.name in ("ranks", "dims", "room_dims", "surfaces", "source_pos", "mic_pos"):
            setattr(obj, f.name, tuple(val))
    return obj


_NESTED = {
    (PipelineConfig, "vad"): VadConfig,
    (PipelineConfig, "matrix"): MatrixConfig,
    (PipelineConfig, "nmf"): NmfConfig,
    (PipelineConfig, "wiener"): WienerConfig,
    (PipelineConfig, "cqt"): CqtConfig,
    (PipelineConfig, "classifier"): ClassifierConfig,
    (CorpusConfig, "loss"): LossConfig,
    (ToolConfig, "pipeline"): PipelineConfig,
    (ToolConfig, "corpus"): CorpusConfig,
    (ToolConfig, "evaluation"): EvalConfig,
    (ToolConfig, "experiment"): ExperimentConfig,
    (RoomConfig, "loss"): LossConfig,
}


def load_config(path) -> ToolConfig:
    """Read a JSON config file into a ToolConfig, validating keys."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    cfg = _build(ToolConfig, data, "config")
    validate_pipeline(cfg.pipeline)
    return cfg


def validate_pipeline(cfg: PipelineConfig) -> None:
    if cfg.sample_rate not in SUPPORTED_RATES:
        raise ConfigError(f"sample_rate {cfg.sample_rate} not in {SUPPORTED_RATES}")
    if cfg.matrix.intervals < 8:
        raise ConfigError("matrix.intervals must be >= 8")
    if cfg.cqt.f_min >= cfg.cqt.f_max:
        raise ConfigError("cqt.f_min must be below cqt.f_max")
    if cfg.cqt.f_min < 20.0:
        raise ConfigError("cqt.f_min must be >= 20 Hz")
    if cfg.nmf.layers < 1:
        raise ConfigError("nmf.layers must be >= 1")
    if len(cfg.nmf.ranks) < cfg.nmf.layers:
        raise ConfigError("nmf.ranks must provide one rank per layer")
    if not (0 < cfg.vad.hop_ms <= cfg.vad.frame_ms):
        raise ConfigError("vad hop must be positive and <= frame")
    if cfg.vad.frame_ms < 10.0:
        raise ConfigError("vad.frame_ms must be >= 10 ms")


def config_echo(cfg) -> str:
    """Stable one-line JSON rendering of any config dataclass (for reports)."""
    def encode(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: encode(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, (list, tuple)):
            return [encode(v) for v in obj]
        return obj

    return json.dumps(encode(cfg), sort_keys=True)
