"""Run configuration: strict JSON schema, cross-field validation, hashing.

Unknown keys are errors at every level (typos in ablation flags must not
pass silently). Validation checks stage-specific requirements plus the
grid/segment arithmetic: the evaluation window has to fit every grid offset
inside a clip with room for at least one visible event.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .extractors import PatchTransformerConfig
from .frontend import SegmentSpec
from .grid import OffsetGrid
from .synthgen import EVENT_SEC, MIN_EVENT_GAP_SEC

STAGES = ("gen-data", "pretrain", "train-sync", "finetune-syncability", "eval", "attribute")


def _strict(raw: dict, cls, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")
    return cls(**raw)


@dataclass
class ModelConfig:
    d: int = 64
    proj_dim: int = 64
    heads: int = 4
    audio_layers: int = 2
    visual_layers: int = 2
    sync_layers: int = 3
    sync_heads: int = 4
    mlp_ratio: float = 4.0
    audio_patch: list = field(default_factory=lambda: [16, 11])
    audio_stride: list = field(default_factory=lambda: [16, 11])
    visual_patch: list = field(default_factory=lambda: [2, 8, 8])
    visual_stride: list = field(default_factory=lambda: [2, 8, 8])
    frame_size: int = 32
    mel_channels: int = 128

    def audio_cfg(self, mel_frames: int = 66) -> PatchTransformerConfig:
        return PatchTransformerConfig(
            patch=tuple(self.audio_patch), stride=tuple(self.audio_stride), d=self.d,
            layers=self.audio_layers, heads=self.heads, mlp_ratio=self.mlp_ratio,
            max_tokens=_token_budget(self.mel_channels, mel_frames,
                                     self.audio_patch, self.audio_stride))

    def visual_cfg(self, frames_per_segment: int) -> PatchTransformerConfig:
        return PatchTransformerConfig(
            patch=tuple(self.visual_patch), stride=tuple(self.visual_stride), d=self.d,
            layers=self.visual_layers, heads=self.heads, mlp_ratio=self.mlp_ratio,
            max_tokens=_token_budget(frames_per_segment, self.frame_size, self.frame_size,
                                     self.visual_patch, self.visual_stride))


def _token_budget(*args) -> int:
    *extents, patch, stride = args
    count = 1
    for e, p, s in zip(extents, patch, stride):
        if e < p:
            raise ConfigError(f"input extent {e} smaller than patch {p}")
        count *= (e - p) // s + 1
    return count


@dataclass
class SegmentsConfig:
    length_sec: float = 0.64
    hop_sec: float = 0.32
    count: int = 14

    def spec(self) -> SegmentSpec:
        return SegmentSpec(self.length_sec, self.hop_sec)

    @property
    def window_sec(self) -> float:
        return self.hop_sec * (self.count - 1) + self.length_sec


@dataclass
class GridConfig:
    num_classes: int = 21
    min_sec: float = -2.0
    step_sec: float = 0.2

    def grid(self) -> OffsetGrid:
        return OffsetGrid(self.num_classes, self.min_sec, self.step_sec)


@dataclass
class DataConfig:
    dataset_dir: str = ""
    eval_dir: str = ""
    n_clips: int = 2000
    duration_sec: float = 11.0
    events_min: int = 3
    events_max: int = 8
    noise_level: float = 0.1


@dataclass
class TrainConfig:
    steps: int = 1500
    batch_clips: int = 16
    segments_per_clip: int = 14          # stage-I pool segments
    lr: float = 1e-4
    warmup_steps: int = 0
    log_every: int = 20
    init_checkpoint: str = ""
    from_scratch: bool = False
    freeze_extractors: bool = True
    out_checkpoint: str = "model.ckpt"
    probe_every: int = 0


@dataclass
class FinetuneConfig:
    steps: int = 300
    batch_clips: int = 16
    lr: float = 1e-3
    p_unsync: float = 0.5
    scope: str = "head"
    log_every: int = 20
    checkpoint: str = ""
    out_checkpoint: str = "model_syncability.ckpt"


@dataclass
class EvalConfig:
    rounds: int = 25
    checkpoint: str = ""
    batch_size: int = 16
    max_clips: int = 0                   # 0 = all clips in eval_dir
    with_syncability: bool = False
    syncability_examples: int = 0        # balanced unsync/sync set size; 0 disables
    emit_plots: bool = False


@dataclass
class AttributionStageConfig:
    checkpoint: str = ""
    trials: int = 1000
    p_keep: float = 0.5
    tolerance_classes: int = 1
    n_clips: int = 20
    n_distractors: int = 8
    emit_plots: bool = False


@dataclass
class RunConfig:
    stage: str
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    segments: SegmentsConfig = field(default_factory=SegmentsConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    attribution: AttributionStageConfig = field(default_factory=AttributionStageConfig)

    _SECTIONS = {
        "model": ModelConfig, "segments": SegmentsConfig, "grid": GridConfig,
        "data": DataConfig, "train": TrainConfig, "finetune": FinetuneConfig,
        "eval": EvalConfig, "attribution": AttributionStageConfig,
    }

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        allowed = {"stage", "seed"} | set(cls._SECTIONS)
        unknown = sorted(set(raw) - allowed)
        if unknown:
            raise ConfigError(f"unknown keys in config: {unknown}")
        if "stage" not in raw:
            raise ConfigError("config is missing required key 'stage'")
        kwargs = {"stage": raw["stage"], "seed": int(raw.get("seed", 0))}
        for name, section_cls in cls._SECTIONS.items():
            section_raw = raw.get(name, {})
            if not isinstance(section_raw, dict):
                raise ConfigError(f"section '{name}' must be a JSON object")
            kwargs[name] = _strict(section_raw, section_cls, f"section '{name}'")
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path: Path) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        out = {"stage": self.stage, "seed": self.seed}
        for name in self._SECTIONS:
            out[name] = dict(vars(getattr(self, name)))
        return out

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")).hexdigest()

    def model_hash(self) -> str:
        """Hash of the sections that fix model shapes and the task grid.

        Stored in checkpoints: stages of one pipeline share it, so resuming
        only warns when the architecture or grid actually changed.
        """
        subset = {name: dict(vars(getattr(self, name))) for name in ("model", "segments", "grid")}
        return hashlib.sha256(json.dumps(subset, sort_keys=True).encode("utf-8")).hexdigest()

    # -- validation ---------------------------------------------------------

    @property
    def mel_frames_per_segment(self) -> int:
        return int(round(self.segments.length_sec * 100)) + 2

    @property
    def frames_per_segment(self) -> int:
        return int(round(self.segments.length_sec * 25))

    def validate(self) -> None:
        if self.stage not in STAGES:
            raise ConfigError(f"unknown stage {self.stage!r}; expected one of {STAGES}")
        self.model.audio_cfg(self.mel_frames_per_segment)
        self.model.visual_cfg(self.frames_per_segment)
        self.segments.spec()
        grid = self.grid.grid()

        max_offset = max(abs(grid.min_sec), abs(grid.max_sec))
        window = self.segments.window_sec
        if self.stage in ("train-sync", "finetune-syncability", "eval", "attribute"):
            # offset windows must overlap enough to keep one event visible
            if window < max_offset + EVENT_SEC + MIN_EVENT_GAP_SEC:
                raise ConfigError(
                    f"window {window:.2f}s cannot hold offsets up to {max_offset:.1f}s "
                    f"with a visible event (needs >= {max_offset + EVENT_SEC + MIN_EVENT_GAP_SEC:.2f}s)")
            if window + max_offset > self.data.duration_sec:
                raise ConfigError(
                    f"window {window:.2f}s plus max offset {max_offset:.1f}s exceeds "
                    f"clip duration {self.data.duration_sec:.2f}s")
        if self.stage == "pretrain":
            pool_window = self.train.segments_per_clip * self.segments.length_sec
            if pool_window > self.data.duration_sec:
                raise ConfigError(
                    f"pre-training window {pool_window:.2f}s exceeds clip duration "
                    f"{self.data.duration_sec:.2f}s")

        needs_dataset = self.stage in ("pretrain", "train-sync", "finetune-syncability")
        if needs_dataset and not Path(self.data.dataset_dir).is_dir():
            raise ConfigError(f"dataset_dir does not exist: {self.data.dataset_dir!r}")
        if self.stage in ("eval", "attribute") and not Path(self.data.eval_dir).is_dir():
            raise ConfigError(f"eval_dir does not exist: {self.data.eval_dir!r}")

        if self.stage == "train-sync":
            if self.train.from_scratch and self.train.init_checkpoint:
                raise ConfigError("from_scratch and init_checkpoint are mutually exclusive")
            if not self.train.from_scratch:
                if not self.train.init_checkpoint:
                    raise ConfigError(
                        "train-sync requires a stage-I init_checkpoint "
                        "(set train.from_scratch to skip pre-trained init explicitly)")
                if not Path(self.train.init_checkpoint).is_file():
                    raise ConfigError(f"init_checkpoint not found: {self.train.init_checkpoint!r}")
        for stage, path in (("finetune-syncability", self.finetune.checkpoint),
                            ("eval", self.eval.checkpoint),
                            ("attribute", self.attribution.checkpoint)):
            if self.stage == stage:
                if not path:
                    raise ConfigError(f"{stage} requires a checkpoint path")
                if not Path(path).is_file():
                    raise ConfigError(f"checkpoint not found: {path!r}")
        if self.stage == "gen-data":
            if not self.data.dataset_dir:
                raise ConfigError("gen-data requires data.dataset_dir")
            if self.data.n_clips < 1:
                raise ConfigError("gen-data needs n_clips >= 1")
        if self.finetune.scope not in ("head", "full"):
            raise ConfigError(f"finetune.scope must be 'head' or 'full', got {self.finetune.scope!r}")
        if not 0.0 < self.attribution.p_keep < 1.0:
            raise ConfigError(f"attribution.p_keep must be in (0, 1), got {self.attribution.p_keep}")
