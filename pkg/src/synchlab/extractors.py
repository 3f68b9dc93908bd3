"""Per-segment feature extractors and spatial/frequency aggregation.

Audio segments (mel slabs) and visual segments (frame stacks) pass through
small patch transformers; a learnable aggregation token then summarizes the
frequency (audio) or spatial (visual) axis at every temporal position,
leaving one d-vector per position per segment. A per-modality projection
(time-mean, linear map, unit normalization) produces the embeddings used by
contrastive pre-training.

Patch extraction uses pure reshapes when patches tile the input exactly and
a gather with scatter-add backward for strided/overlapping layouts (the
full-scale audio geometry overlaps; toy layouts tile).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from . import nn
from .nn import (Linear, Module, PositionalEncoding, Tensor, TransformerEncoder)


@dataclass(frozen=True)
class PatchTransformerConfig:
    """Geometry and width of one patch transformer.

    ``patch``/``stride`` are (freq, time) for audio and (time, h, w) for
    visual inputs; RGB channels fold into the patch for visual.
    """

    patch: tuple[int, ...]
    stride: tuple[int, ...]
    d: int = 64
    layers: int = 2
    heads: int = 4
    mlp_ratio: float = 4.0
    max_tokens: int = 256

    def __post_init__(self):
        if len(self.patch) != len(self.stride):
            raise ConfigError(f"patch {self.patch} and stride {self.stride} rank mismatch")
        if any(p <= 0 for p in self.patch) or any(s <= 0 for s in self.stride):
            raise ConfigError("patch and stride extents must be positive")
        if self.d % self.heads:
            raise ConfigError(f"width {self.d} not divisible by {self.heads} heads")

    def grid_shape(self, *extents: int) -> tuple[int, ...]:
        if len(extents) != len(self.patch):
            raise ConfigError(f"{len(self.patch)}-D patches cannot tile a {len(extents)}-D input")
        grid = []
        for size, p, s in zip(extents, self.patch, self.stride):
            if size < p:
                raise ConfigError(f"input extent {size} smaller than patch {p}")
            grid.append((size - p) // s + 1)
        return tuple(grid)

    @property
    def tiles_exactly(self) -> bool:
        return self.patch == self.stride


_GATHER_INDEX_CACHE: dict[tuple, np.ndarray] = {}


def _strided_patch_indices(extents: tuple[int, ...], patch: tuple[int, ...],
                           stride: tuple[int, ...], channels: int) -> np.ndarray:
    """Flat indices (n_patches, patch_elems) into one input of given extents."""
    key = (extents, patch, stride, channels)
    cached = _GATHER_INDEX_CACHE.get(key)
    if cached is not None:
        return cached
    grid = [(e - p) // s + 1 for e, p, s in zip(extents, patch, stride)]
    full = extents + ((channels,) if channels else ())
    flat_strides = np.cumprod((full + (1,))[::-1])[::-1][1:]
    starts = np.zeros(grid, dtype=np.int64).reshape(-1)
    for axis, (g, s) in enumerate(zip(grid, stride)):
        coord = np.indices(grid)[axis].reshape(-1)
        starts = starts + coord * s * flat_strides[axis]
    offs = np.zeros(patch + ((channels,) if channels else ()), dtype=np.int64).reshape(-1)
    within = np.indices(patch + ((channels,) if channels else ()))
    for axis in range(len(full)):
        offs = offs + within[axis].reshape(-1) * flat_strides[axis]
    idx = starts[:, None] + offs[None, :]
    _GATHER_INDEX_CACHE[key] = idx
    return idx


def _extract_patches(x: Tensor, cfg: PatchTransformerConfig, channels: int) -> Tensor:
    """(N, *extents[, C]) -> (N, n_patches, patch_elems), row-major patch order."""
    spatial = x.shape[1:len(cfg.patch) + 1]
    grid = cfg.grid_shape(*spatial)
    n_patches = int(np.prod(grid))
    elems = int(np.prod(cfg.patch)) * max(channels, 1)
    n = x.shape[0]
    if cfg.tiles_exactly and all(e % p == 0 for e, p in zip(spatial, cfg.patch)):
        if len(cfg.patch) == 2:  # audio (N, F, T)
            f, t = grid
            pf, pt = cfg.patch
            out = nn.reshape(x, (n, f, pf, t, pt))
            out = nn.transpose(out, (0, 1, 3, 2, 4))
            return nn.reshape(out, (n, n_patches, elems))
        gt, gh, gw = grid  # visual (N, T, H, W, 3)
        pt_, ph, pw = cfg.patch
        out = nn.reshape(x, (n, gt, pt_, gh, ph, gw, pw, channels))
        out = nn.transpose(out, (0, 1, 3, 5, 2, 4, 6, 7))
        return nn.reshape(out, (n, n_patches, elems))
    idx = _strided_patch_indices(tuple(spatial), cfg.patch, cfg.stride, channels if channels else 0)
    per_item = int(np.prod(x.shape[1:]))
    batch_offsets = (np.arange(n, dtype=np.int64) * per_item)[:, None, None]
    return nn.gather_flat(x, idx[None, :, :] + batch_offsets, (n, n_patches, elems))


class AudioPatchTransformer(Module):
    """Mel slab (N, F, T) -> feature map (N, f, t_a, d)."""

    def __init__(self, cfg: PatchTransformerConfig, rng: np.random.Generator):
        if len(cfg.patch) != 2:
            raise ConfigError(f"audio patches are (freq, time), got {cfg.patch}")
        self.cfg = cfg
        self.embed = Linear(int(np.prod(cfg.patch)), cfg.d, rng)
        self.pos = PositionalEncoding(cfg.max_tokens, cfg.d, rng)
        self.encoder = TransformerEncoder(cfg.d, cfg.layers, cfg.heads, cfg.mlp_ratio, rng)

    def __call__(self, mels) -> Tensor:
        x = nn.as_tensor(mels)
        if x.ndim != 3:
            raise ConfigError(f"expected (N, F, T) mel batch, got shape {x.shape}")
        f, t = self.cfg.grid_shape(x.shape[1], x.shape[2])
        if f * t > self.cfg.max_tokens:
            raise ConfigError(f"{f * t} tokens exceed positional capacity {self.cfg.max_tokens}")
        tokens = self.embed(_extract_patches(x, self.cfg, channels=0))
        encoded = self.encoder(self.pos(tokens))
        return nn.reshape(encoded, (x.shape[0], f, t, self.cfg.d))


class VideoPatchTransformer(Module):
    """Frame stack (N, T, H, W, 3) -> feature map (N, t_v, h, w, d)."""

    def __init__(self, cfg: PatchTransformerConfig, rng: np.random.Generator):
        if len(cfg.patch) != 3:
            raise ConfigError(f"visual patches are (time, h, w), got {cfg.patch}")
        self.cfg = cfg
        self.embed = Linear(int(np.prod(cfg.patch)) * 3, cfg.d, rng)
        self.pos = PositionalEncoding(cfg.max_tokens, cfg.d, rng)
        self.encoder = TransformerEncoder(cfg.d, cfg.layers, cfg.heads, cfg.mlp_ratio, rng)

    def __call__(self, frames) -> Tensor:
        x = nn.as_tensor(frames)
        if x.ndim != 5 or x.shape[-1] != 3:
            raise ConfigError(f"expected (N, T, H, W, 3) frame batch, got shape {x.shape}")
        gt, gh, gw = self.cfg.grid_shape(x.shape[1], x.shape[2], x.shape[3])
        if gt * gh * gw > self.cfg.max_tokens:
            raise ConfigError(f"{gt * gh * gw} tokens exceed positional capacity {self.cfg.max_tokens}")
        tokens = self.embed(_extract_patches(x, self.cfg, channels=3))
        encoded = self.encoder(self.pos(tokens))
        return nn.reshape(encoded, (x.shape[0], gt, gh, gw, self.cfg.d))


class TokenAggregator(Module):
    """Collapse the spatial/frequency axis at one temporal position.

    A learnable token is prepended to the position's spatial tokens, one
    encoder layer runs over the set, and the token's output row is the
    aggregate. Positional encodings cover [token, spatial positions].
    """

    def __init__(self, d: int, heads: int, max_spatial: int, rng: np.random.Generator,
                 mlp_ratio: float = 4.0):
        self.token = nn.parameter(nn.trunc_normal(rng, (1, d)))
        self.pos = PositionalEncoding(max_spatial + 1, d, rng)
        self.encoder = TransformerEncoder(d, 1, heads, mlp_ratio, rng)
        self.d = d

    def __call__(self, spatial_tokens: Tensor) -> Tensor:
        """(M, n_spatial, d) -> (M, d)."""
        m = spatial_tokens.shape[0]
        lead = nn.broadcast_to(nn.reshape(self.token, (1, 1, self.d)), (m, 1, self.d))
        seq = nn.concat([lead, spatial_tokens], axis=1)
        encoded = self.encoder(self.pos(seq))
        return nn.reshape(encoded[:, 0, :], (m, self.d))


class SegmentProjection(Module):
    """Time-mean, linear map, unit L2 normalization: (N, t, d) -> (N, d_proj)."""

    def __init__(self, d: int, d_proj: int, rng: np.random.Generator):
        self.linear = Linear(d, d_proj, rng)

    def __call__(self, feats: Tensor) -> Tensor:
        pooled = nn.mean(feats, axis=1)
        return nn.l2_normalize(self.linear(pooled))


class SegmentFeatureExtractor(Module):
    """Both modality extractors plus their aggregators.

    The outputs are the per-segment time sequences (N, t_a, d) / (N, t_v, d)
    consumed by the synchronization transformer and, after projection, by
    contrastive pre-training.
    """

    def __init__(self, audio_cfg: PatchTransformerConfig, visual_cfg: PatchTransformerConfig,
                 rng: np.random.Generator):
        if audio_cfg.d != visual_cfg.d:
            raise ConfigError(f"modality widths differ: {audio_cfg.d} vs {visual_cfg.d}")
        self.audio_encoder = AudioPatchTransformer(audio_cfg, rng)
        self.visual_encoder = VideoPatchTransformer(visual_cfg, rng)
        self.audio_agg = TokenAggregator(audio_cfg.d, audio_cfg.heads,
                                         max_spatial=audio_cfg.max_tokens, rng=rng,
                                         mlp_ratio=audio_cfg.mlp_ratio)
        self.visual_agg = TokenAggregator(visual_cfg.d, visual_cfg.heads,
                                          max_spatial=visual_cfg.max_tokens, rng=rng,
                                          mlp_ratio=visual_cfg.mlp_ratio)
        self.d = audio_cfg.d

    def audio_features(self, mels) -> Tensor:
        """(N, F, T) mel batch -> (N, t_a, d) aggregated rows."""
        fmap = self.audio_encoder(mels)  # (N, f, t_a, d)
        n, f, t, d = fmap.shape
        per_pos = nn.reshape(nn.transpose(fmap, (0, 2, 1, 3)), (n * t, f, d))
        rows = self.audio_agg(per_pos)
        return nn.reshape(rows, (n, t, d))

    def visual_features(self, frames) -> Tensor:
        """(N, T, H, W, 3) frame batch -> (N, t_v, d) aggregated rows."""
        fmap = self.visual_encoder(frames)  # (N, t_v, h, w, d)
        n, t, h, w, d = fmap.shape
        per_pos = nn.reshape(fmap, (n * t, h * w, d))
        rows = self.visual_agg(per_pos)
        return nn.reshape(rows, (n, t, d))


def toy_audio_config(d: int = 64, layers: int = 2, heads: int = 4) -> PatchTransformerConfig:
    """128x66 mel with (16, 11) tiles -> 8x6 grid, 48 tokens."""
    return PatchTransformerConfig(patch=(16, 11), stride=(16, 11), d=d, layers=layers,
                                  heads=heads, max_tokens=64)


def toy_visual_config(d: int = 64, layers: int = 2, heads: int = 4) -> PatchTransformerConfig:
    """16x32x32x3 frames with (2, 8, 8) tiles -> 8x4x4 grid, 128 tokens."""
    return PatchTransformerConfig(patch=(2, 8, 8), stride=(2, 8, 8), d=d, layers=layers,
                                  heads=heads, max_tokens=160)
