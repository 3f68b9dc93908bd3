"""Stage-II training: offset classification, then synchronizability fine-tuning.

Offsets are sampled fresh every iteration (uniform over the grid) together
with a random crop start, so no two passes over a clip see identical inputs.
Extractor weights stay frozen; a SHA-256 over their serialized values guards
the contract before and after training.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import TrainingError
from .grid import OffsetGrid
from .sync import SyncModel
from .synthgen import apply_offset, make_unsynchronizable


def params_sha256(named_params) -> str:
    """Order-independent digest of named parameter values."""
    digest = hashlib.sha256()
    for name, p in sorted(named_params, key=lambda kv: kv[0]):
        digest.update(name.encode())
        digest.update(str(tuple(p.shape)).encode())
        digest.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return digest.hexdigest()


@dataclass
class SyncTrainSettings:
    steps: int = 1500
    batch_clips: int = 16
    lr: float = 1e-4
    log_every: int = 20
    freeze_extractors: bool = True


@dataclass
class Stage2History:
    losses: list[float] = field(default_factory=list)


class Stage2Trainer:
    """Cross-entropy training of the sync transformer over frozen features."""

    def __init__(self, model: SyncModel, dataset, settings: SyncTrainSettings,
                 seed: int = 0, grid: OffsetGrid | None = None, log_fn=None):
        self.model = model
        self.dataset = dataset
        self.settings = settings
        self.grid = grid or OffsetGrid()
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
        self.log_fn = log_fn
        self.history = Stage2History()
        if settings.freeze_extractors:
            model.extractor.freeze()
            self._freeze_hash = params_sha256(model.extractor.named_parameters())
            trainable = list(model.sync.parameters())
        else:
            self._freeze_hash = None
            trainable = list(model.parameters())
        self.optimizer = nn.Adam(trainable, lr=settings.lr)

    def sample_batch(self):
        s = self.settings
        indices = self.rng.choice(len(self.dataset), size=min(s.batch_clips, len(self.dataset)),
                                  replace=False)
        classes = self.rng.integers(0, self.grid.num_classes, size=len(indices))
        clips = []
        for idx, cls in zip(indices, classes):
            source = self.dataset.load(int(idx))
            clips.append(apply_offset(source, int(cls), self.model.window_sec, self.rng,
                                      grid=self.grid))
        return clips, classes.astype(np.int64)

    def train_step(self, step: int) -> float:
        clips, targets = self.sample_batch()
        record_graph = not self.settings.freeze_extractors
        audio, visual = self.model.clip_features(clips, record_graph=record_graph)
        seq = self.model.sync.build_sequence(audio, visual)
        loss = nn.cross_entropy(self.model.sync.offset_logits(seq), targets)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingError(f"stage-II loss is not finite at step {step}")
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        return value

    def run(self) -> Stage2History:
        for step in range(self.settings.steps):
            value = self.train_step(step)
            self.history.losses.append(value)
            if self.log_fn and (step % self.settings.log_every == 0
                                or step == self.settings.steps - 1):
                self.log_fn({"step": step, "loss": f"{value:.6f}"})
        self.verify_freeze()
        return self.history

    def verify_freeze(self) -> None:
        if self._freeze_hash is None:
            return
        now = params_sha256(self.model.extractor.named_parameters())
        if now != self._freeze_hash:
            raise TrainingError("freeze violation: extractor parameters changed during stage II")


# ---------------------------------------------------------------------------
# synchronizability fine-tuning
# ---------------------------------------------------------------------------

@dataclass
class SyncabilitySettings:
    steps: int = 300
    batch_clips: int = 16
    lr: float = 1e-3
    p_unsync: float = 0.5
    scope: str = "head"  # "head": only the synchronizability head; "full": whole sync module
    log_every: int = 20


class SyncabilityTrainer:
    """Binary cross-entropy fine-tuning of the synchronizability head.

    Each sample is synchronizable (an on-grid offset, label 1) with
    probability 1 - p_unsync, otherwise unsynchronizable (disjoint windows of
    one clip or streams from two different clips, label 0).
    """

    def __init__(self, model: SyncModel, dataset, settings: SyncabilitySettings,
                 seed: int = 0, grid: OffsetGrid | None = None, log_fn=None):
        if settings.scope not in ("head", "full"):
            raise TrainingError(f"unknown fine-tune scope {settings.scope!r}")
        self.model = model
        self.dataset = dataset
        self.settings = settings
        self.grid = grid or OffsetGrid()
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 23]))
        self.log_fn = log_fn
        model.extractor.freeze()
        self._freeze_hash = params_sha256(model.extractor.named_parameters())
        if settings.scope == "head":
            trainable = list(model.sync.sync_head.parameters())
        else:
            trainable = list(model.sync.parameters())
        self.optimizer = nn.Adam(trainable, lr=settings.lr)
        self.losses: list[float] = []

    def sample_item(self):
        window = self.model.window_sec
        idx = int(self.rng.integers(len(self.dataset)))
        source = self.dataset.load(idx)
        if self.rng.random() < self.settings.p_unsync:
            if source.video.duration_sec >= 2 * window and self.rng.random() < 0.5:
                clip = make_unsynchronizable(source, None, window, self.rng)
            else:
                other_idx = int(self.rng.integers(len(self.dataset)))
                if other_idx == idx:
                    other_idx = (idx + 1) % len(self.dataset)
                clip = make_unsynchronizable(source, self.dataset.load(other_idx), window, self.rng)
            return clip, 0.0
        cls = int(self.rng.integers(self.grid.num_classes))
        return apply_offset(source, cls, window, self.rng, grid=self.grid), 1.0

    def train_step(self, step: int) -> float:
        items = [self.sample_item() for _ in range(self.settings.batch_clips)]
        clips = [c for c, _ in items]
        labels = np.array([y for _, y in items])
        audio, visual = self.model.clip_features(clips)
        seq = self.model.sync.build_sequence(audio, visual)
        if self.settings.scope == "head":
            # CLS output can be computed graph-free when only the head trains
            with nn.no_grad():
                cls = self.model.sync.cls_output(seq)
            cls = cls.detach()
        else:
            cls = self.model.sync.cls_output(seq)
        logits = nn.reshape(self.model.sync.sync_head(cls), (len(clips),))
        loss = nn.bce_with_logits(logits, labels)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingError(f"synchronizability loss is not finite at step {step}")
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        return value

    def run(self) -> list[float]:
        for step in range(self.settings.steps):
            value = self.train_step(step)
            self.losses.append(value)
            if self.log_fn and (step % self.settings.log_every == 0
                                or step == self.settings.steps - 1):
                self.log_fn({"step": step, "loss": f"{value:.6f}"})
        now = params_sha256(self.model.extractor.named_parameters())
        if now != self._freeze_hash:
            raise TrainingError("freeze violation: extractor parameters changed during fine-tuning")
        return self.losses
