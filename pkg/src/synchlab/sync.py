"""Offset classification over frozen segment features (stage II).

Aggregated per-segment rows from both modalities are concatenated into one
token sequence [CLS, audio rows, SEP, visual rows] with trainable positional
encodings; a small transformer encoder reads it and a linear head on the CLS
output predicts one of the offset classes. A second linear head (sigmoid)
scores synchronizability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError, ContractError
from .extractors import SegmentFeatureExtractor
from .frontend import SegmentSpec, segmentize
from .grid import OffsetGrid
from .nn import (Linear, Module, PositionalEncoding, Tensor, TransformerEncoder)
from .synthgen import LabeledClip


@dataclass
class SyncSequence:
    """Token rows [CLS, a_1..a_S, SEP, v_1..v_S] with positions added."""

    tokens: Tensor  # (N, L, d)
    segments: int
    t_a: int
    t_v: int

    @property
    def length(self) -> int:
        return self.tokens.shape[1]

    @property
    def sep_index(self) -> int:
        return 1 + self.segments * self.t_a

    def __post_init__(self):
        expected = 2 + self.segments * (self.t_a + self.t_v)
        if self.tokens.ndim != 3 or self.tokens.shape[1] != expected:
            raise ContractError(
                f"sequence length {self.tokens.shape} does not match layout "
                f"2 + {self.segments}*({self.t_a}+{self.t_v}) = {expected}")


@dataclass
class SyncPrediction:
    class_probs: np.ndarray          # (num_classes,), sums to 1
    predicted_class: int
    syncability_prob: float | None = None


class SyncTransformer(Module):
    """The synchronization encoder plus offset and synchronizability heads."""

    def __init__(self, d: int, num_classes: int, max_len: int, rng: np.random.Generator,
                 layers: int = 3, heads: int = 4, mlp_ratio: float = 4.0):
        self.cls = nn.parameter(nn.trunc_normal(rng, (1, d)))
        self.sep = nn.parameter(nn.trunc_normal(rng, (1, d)))
        self.pos = PositionalEncoding(max_len, d, rng)
        self.encoder = TransformerEncoder(d, layers, heads, mlp_ratio, rng)
        self.offset_head = Linear(d, num_classes, rng)
        self.sync_head = Linear(d, 1, rng)
        self.d = d
        self.num_classes = num_classes
        self.max_len = max_len

    def build_sequence(self, audio_feats, visual_feats) -> SyncSequence:
        """(N, S, t_a, d) and (N, S, t_v, d) feature stacks -> SyncSequence."""
        a = nn.as_tensor(audio_feats)
        v = nn.as_tensor(visual_feats)
        if a.ndim != 4 or v.ndim != 4:
            raise ContractError(f"expected (N, S, t, d) stacks, got {a.shape} and {v.shape}")
        if a.shape[0] != v.shape[0] or a.shape[1] != v.shape[1]:
            raise ContractError(f"clip/segment counts differ: {a.shape} vs {v.shape}")
        if a.shape[3] != self.d or v.shape[3] != self.d:
            raise ContractError(f"feature width must be {self.d}, got {a.shape[3]}/{v.shape[3]}")
        n, s, t_a, d = a.shape
        t_v = v.shape[2]
        length = 2 + s * (t_a + t_v)
        if length > self.max_len:
            raise ConfigError(f"sequence length {length} exceeds positional capacity {self.max_len}")
        cls_rows = nn.broadcast_to(nn.reshape(self.cls, (1, 1, d)), (n, 1, d))
        sep_rows = nn.broadcast_to(nn.reshape(self.sep, (1, 1, d)), (n, 1, d))
        audio_rows = nn.reshape(a, (n, s * t_a, d))
        visual_rows = nn.reshape(v, (n, s * t_v, d))
        tokens = nn.concat([cls_rows, audio_rows, sep_rows, visual_rows], axis=1)
        return SyncSequence(self.pos(tokens), segments=s, t_a=t_a, t_v=t_v)

    def cls_output(self, seq: SyncSequence) -> Tensor:
        encoded = self.encoder(seq.tokens)
        return nn.reshape(encoded[:, 0, :], (encoded.shape[0], self.d))

    def offset_logits(self, seq: SyncSequence) -> Tensor:
        return self.offset_head(self.cls_output(seq))

    def both_logits(self, seq: SyncSequence) -> tuple[Tensor, Tensor]:
        cls = self.cls_output(seq)
        return self.offset_head(cls), nn.reshape(self.sync_head(cls), (cls.shape[0],))


class SyncModel(Module):
    """Stage-II bundle: feature extractor trunk plus the sync transformer."""

    def __init__(self, extractor: SegmentFeatureExtractor, sync: SyncTransformer,
                 spec: SegmentSpec, segments: int):
        self.extractor = extractor
        self.sync = sync
        self.spec = spec
        self.segments = segments

    @property
    def window_sec(self) -> float:
        return self.spec.window_sec(self.segments)

    def clip_features(self, clips: list[LabeledClip], record_graph: bool = False
                      ) -> tuple[Tensor, Tensor]:
        """Segment both streams of each clip and extract (N, S, t, d) stacks.

        Each modality is segmented over its own cropped window, so a clip that
        carries a nonzero offset contributes aligned-by-index but time-shifted
        rows. Runs without graph recording unless ``record_graph`` (needed only
        when the extractors themselves are being trained).
        """
        mels, frames = [], []
        for clip in clips:
            audio_segs = segmentize(clip.audio, self.spec)
            video_segs = segmentize(clip.video, self.spec)
            if len(audio_segs) != self.segments or len(video_segs) != self.segments:
                raise ContractError(
                    f"clip {clip.clip_id}: expected {self.segments} segments, "
                    f"got {len(audio_segs)} audio / {len(video_segs)} video")
            mels.extend(seg.values for seg in audio_segs)
            frames.extend(seg.frames for seg in video_segs)
        mel_batch = np.stack(mels)
        frame_batch = np.stack(frames)
        n = len(clips)

        def run():
            a = self.extractor.audio_features(mel_batch)
            v = self.extractor.visual_features(frame_batch)
            a = nn.reshape(a, (n, self.segments, a.shape[1], a.shape[2]))
            v = nn.reshape(v, (n, self.segments, v.shape[1], v.shape[2]))
            return a, v

        if record_graph:
            return run()
        with nn.no_grad():
            return run()

    def predict(self, clips: list[LabeledClip], with_syncability: bool = True
                ) -> list[SyncPrediction]:
        audio, visual = self.clip_features(clips)
        with nn.no_grad():
            seq = self.sync.build_sequence(audio, visual)
            offset_logits, sync_logits = self.sync.both_logits(seq)
            probs = nn.softmax_lastdim(offset_logits).data
            sync_probs = nn.sigmoid(sync_logits).data if with_syncability else None
        out = []
        for i in range(len(clips)):
            out.append(SyncPrediction(
                class_probs=probs[i].copy(),
                predicted_class=int(probs[i].argmax()),
                syncability_prob=float(sync_probs[i]) if with_syncability else None))
        return out


def predict_offset(seq: SyncSequence, sync: SyncTransformer) -> list[SyncPrediction]:
    """Offset distribution from an already-built sequence."""
    with nn.no_grad():
        logits = sync.offset_logits(seq)
        probs = nn.softmax_lastdim(logits).data
    return [SyncPrediction(class_probs=p.copy(), predicted_class=int(p.argmax())) for p in probs]


def build_sync_model(audio_cfg, visual_cfg, rng: np.random.Generator,
                     spec: SegmentSpec | None = None, segments: int = 14,
                     grid: OffsetGrid | None = None, sync_layers: int = 3,
                     sync_heads: int = 4, mlp_ratio: float = 4.0,
                     mel_shape: tuple[int, int] = (128, 66),
                     frame_shape: tuple[int, int, int] = (16, 32, 32)) -> SyncModel:
    """Fresh Stage-II model with positional capacity sized from the layouts."""
    grid = grid or OffsetGrid()
    spec = spec or SegmentSpec(0.64, 0.32)
    extractor = SegmentFeatureExtractor(audio_cfg, visual_cfg, rng)
    t_a = audio_cfg.grid_shape(*mel_shape)[1]
    t_v = visual_cfg.grid_shape(*frame_shape)[0]
    max_len = 2 + segments * (t_a + t_v)
    sync = SyncTransformer(audio_cfg.d, grid.num_classes, max_len, rng,
                           layers=sync_layers, heads=sync_heads, mlp_ratio=mlp_ratio)
    return SyncModel(extractor, sync, spec, segments)
