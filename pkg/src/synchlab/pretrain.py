"""Segment-level contrastive pre-training (stage I).

A batch of B clips contributes S segments each; audio and visual embeddings
of the same (clip, segment) index form the positive pair and every other
cross-modal entry in the B*S pool is a negative. The loss averages the
audio-to-visual and visual-to-audio InfoNCE directions and is scaled by a
trainable temperature (log-parameterized, so it stays positive).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ContractError, TrainingError
from .extractors import (PatchTransformerConfig, SegmentFeatureExtractor,
                         SegmentProjection)
from .frontend import SegmentSpec, segmentize
from .nn import Module, Tensor
from .synthgen import LabeledClip

TEMPERATURE_INIT = 0.07


class SegmentEmbeddingModel(Module):
    """Stage-I bundle: extractor trunk, per-modality projections, temperature."""

    def __init__(self, audio_cfg: PatchTransformerConfig, visual_cfg: PatchTransformerConfig,
                 proj_dim: int, rng: np.random.Generator):
        self.extractor = SegmentFeatureExtractor(audio_cfg, visual_cfg, rng)
        self.audio_proj = SegmentProjection(audio_cfg.d, proj_dim, rng)
        self.visual_proj = SegmentProjection(visual_cfg.d, proj_dim, rng)
        self.log_temperature = nn.parameter(np.array(np.log(TEMPERATURE_INIT)))

    @property
    def temperature(self) -> float:
        return float(np.exp(self.log_temperature.data))

    def embed_segments(self, mels, frames) -> tuple[Tensor, Tensor]:
        """(M, F, T) mels and (M, Tv, H, W, 3) frames -> two (M, d_proj) unit-row tensors."""
        audio = self.audio_proj(self.extractor.audio_features(mels))
        visual = self.visual_proj(self.extractor.visual_features(frames))
        return audio, visual


@dataclass
class ContrastivePool:
    """Paired unit-norm embeddings; row i of each modality is the positive pair."""

    audio: Tensor
    visual: Tensor

    def __post_init__(self):
        if self.audio.shape != self.visual.shape or self.audio.ndim != 2:
            raise ContractError(
                f"pool shapes must match and be 2-D: {self.audio.shape} vs {self.visual.shape}")
        if self.audio.shape[0] < 2:
            raise ContractError(f"pool needs at least 2 entries, got {self.audio.shape[0]}")
        for name, t in (("audio", self.audio), ("visual", self.visual)):
            norms = np.linalg.norm(t.data, axis=-1)
            if np.abs(norms - 1.0).max() > 1e-3:
                raise ContractError(f"{name} pool rows are not unit-norm (max dev {np.abs(norms - 1).max():.2e})")

    @property
    def size(self) -> int:
        return self.audio.shape[0]


def infonce_from_similarities(sims: Tensor, log_temperature: Tensor) -> Tensor:
    """Bidirectional InfoNCE from an (N, N) cross-modal similarity matrix.

    Entry (i, j) is sim(audio_i, visual_j); diagonal entries are positives.
    """
    n = sims.shape[0]
    inv_tau = nn.exp(nn.mul(log_temperature, -1.0))
    logits = nn.mul(sims, inv_tau)
    targets = np.arange(n)
    loss_av = nn.cross_entropy(logits, targets)
    loss_va = nn.cross_entropy(nn.transpose(logits, (1, 0)), targets)
    return nn.mul(nn.add(loss_av, loss_va), 0.5)


def infonce_loss(pool: ContrastivePool, log_temperature: Tensor) -> Tensor:
    sims = nn.matmul(pool.audio, nn.transpose(pool.visual, (1, 0)))
    return infonce_from_similarities(sims, log_temperature)


def retrieval_probe(model: SegmentEmbeddingModel, clips: list[LabeledClip],
                    spec: SegmentSpec, segments: int, rng: np.random.Generator) -> float:
    """Top-1 same-index retrieval rate over the segment pool of ``clips``.

    For each visual segment the audio segments are ranked by similarity;
    a hit means the best-matching audio segment has the same pool index.
    """
    mels, frames = assemble_segment_batch(clips, spec, segments, rng)
    with nn.no_grad():
        audio, visual = model.embed_segments(mels, frames)
    sims = visual.data @ audio.data.T  # (N_visual, N_audio)
    return float((sims.argmax(axis=1) == np.arange(sims.shape[0])).mean())


def assemble_segment_batch(clips: list[LabeledClip], spec: SegmentSpec, segments: int,
                           rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Crop one S-segment window per clip and stack all segments.

    Returns mels (B*S, F, T) and frames (B*S, Tv, H, W, 3).
    """
    from .frontend import AudioStream, VideoStream, temporal_crop

    window = spec.window_sec(segments)
    mel_list, frame_list = [], []
    for clip in clips:
        margin = clip.video.duration_sec - window
        if margin < -1e-9:
            raise ContractError(
                f"clip {clip.clip_id} of {clip.video.duration_sec:.2f}s shorter than "
                f"the {window:.2f}s window")
        start = float(rng.uniform(0.0, max(margin, 0.0)))
        audio, video = temporal_crop(clip.audio, clip.video, start, window, 0.0)
        audio_segs = segmentize(audio, spec)
        video_segs = segmentize(video, spec)
        if len(audio_segs) != segments or len(video_segs) != segments:
            raise ContractError(
                f"expected {segments} segments, got {len(audio_segs)}/{len(video_segs)}")
        mel_list.extend(seg.values for seg in audio_segs)
        frame_list.extend(seg.frames for seg in video_segs)
    return np.stack(mel_list), np.stack(frame_list)


@dataclass
class PretrainSettings:
    steps: int = 600
    batch_clips: int = 2
    segments: int = 14
    segment_len_sec: float = 0.64
    lr: float = 3e-4
    warmup_steps: int = 100
    log_every: int = 10
    probe_every: int = 100
    probe_clips: int = 2


@dataclass
class Stage1History:
    losses: list[float] = field(default_factory=list)
    temperatures: list[float] = field(default_factory=list)
    probe_accuracy: dict[int, float] = field(default_factory=dict)


class Stage1Trainer:
    """Runs segment-level contrastive pre-training over a clip dataset."""

    def __init__(self, model: SegmentEmbeddingModel, dataset, settings: PretrainSettings,
                 seed: int = 0, log_fn=None):
        self.model = model
        self.dataset = dataset
        self.settings = settings
        # non-overlapping segmentation during pre-training
        self.spec = SegmentSpec(settings.segment_len_sec, settings.segment_len_sec)
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        self.optimizer = nn.Adam(self.model.parameters(), lr=settings.lr)
        self.log_fn = log_fn
        self.history = Stage1History()

    def _lr_at(self, step: int) -> float:
        s = self.settings
        if s.warmup_steps <= 0:
            return s.lr
        return s.lr * min(1.0, (step + 1) / s.warmup_steps)

    def train_step(self, step: int) -> float:
        s = self.settings
        indices = self.rng.choice(len(self.dataset), size=s.batch_clips, replace=False)
        clips = [self.dataset.load(int(i)) for i in indices]
        mels, frames = assemble_segment_batch(clips, self.spec, s.segments, self.rng)
        audio, visual = self.model.embed_segments(mels, frames)
        loss = infonce_loss(ContrastivePool(audio, visual), self.model.log_temperature)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingError(
                f"stage-I loss is not finite at step {step} "
                f"(tau={self.model.temperature:.4f}, batch={list(map(int, indices))})")
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.lr = self._lr_at(step)
        self.optimizer.step()
        return value

    def run(self) -> Stage1History:
        s = self.settings
        probe_pool = [self.dataset.load(i) for i in range(min(s.probe_clips, len(self.dataset)))]
        for step in range(s.steps):
            value = self.train_step(step)
            self.history.losses.append(value)
            self.history.temperatures.append(self.model.temperature)
            if self.log_fn and (step % s.log_every == 0 or step == s.steps - 1):
                self.log_fn({"step": step, "loss": f"{value:.6f}",
                             "temperature": f"{self.model.temperature:.6f}"})
            if s.probe_every and (step + 1) % s.probe_every == 0:
                probe_rng = np.random.default_rng(np.random.SeedSequence([step, 2]))
                acc = retrieval_probe(self.model, probe_pool, self.spec, s.segments, probe_rng)
                self.history.probe_accuracy[step + 1] = acc
        return self.history
