"""Extractors: patch arithmetic, shape contracts, aggregation, projections."""

import numpy as np
import pytest

from synchlab import nn
from synchlab.errors import ConfigError
from synchlab.extractors import (AudioPatchTransformer, PatchTransformerConfig,
                                 SegmentFeatureExtractor, SegmentProjection,
                                 TokenAggregator, VideoPatchTransformer,
                                 toy_audio_config, toy_visual_config)
from synchlab.nn import Tensor, finite_diff_check, use_dtype


# ---------------------------------------------------------------------------
# patch arithmetic
# ---------------------------------------------------------------------------

def test_full_scale_audio_grid_is_12x6():
    cfg = PatchTransformerConfig(patch=(16, 16), stride=(10, 10), d=16, layers=1, heads=2,
                                 max_tokens=128)
    assert cfg.grid_shape(128, 66) == (12, 6)


def test_full_scale_visual_grid_is_8x14x14():
    cfg = PatchTransformerConfig(patch=(2, 16, 16), stride=(2, 16, 16), d=16, layers=1, heads=2,
                                 max_tokens=2048)
    assert cfg.grid_shape(16, 224, 224) == (8, 14, 14)


def test_toy_audio_grid_is_8x6():
    assert toy_audio_config().grid_shape(128, 66) == (8, 6)


def test_toy_visual_grid_is_8x4x4():
    assert toy_visual_config().grid_shape(16, 32, 32) == (8, 4, 4)


def test_patch_larger_than_input_errors():
    cfg = PatchTransformerConfig(patch=(16, 16), stride=(16, 16), d=8, layers=1, heads=2)
    with pytest.raises(ConfigError):
        cfg.grid_shape(8, 66)


def test_config_rejects_bad_heads():
    with pytest.raises(ConfigError):
        PatchTransformerConfig(patch=(4, 4), stride=(4, 4), d=10, heads=4)


# ---------------------------------------------------------------------------
# forward shapes
# ---------------------------------------------------------------------------

def test_audio_extractor_full_scale_shape(rng):
    cfg = PatchTransformerConfig(patch=(16, 16), stride=(10, 10), d=32, layers=1, heads=2,
                                 max_tokens=128)
    ext = AudioPatchTransformer(cfg, rng)
    out = ext(rng.normal(size=(2, 128, 66)).astype(np.float32))
    assert out.shape == (2, 12, 6, 32)


def test_audio_extractor_toy_shape(rng):
    ext = AudioPatchTransformer(toy_audio_config(), rng)
    out = ext(rng.normal(size=(3, 128, 66)).astype(np.float32))
    assert out.shape == (3, 8, 6, 64)


def test_visual_extractor_full_scale_shape(rng):
    cfg = PatchTransformerConfig(patch=(2, 16, 16), stride=(2, 16, 16), d=16, layers=1, heads=2,
                                 max_tokens=2048)
    ext = VideoPatchTransformer(cfg, rng)
    out = ext(rng.random((1, 16, 224, 224, 3)).astype(np.float32))
    assert out.shape == (1, 8, 14, 14, 16)


def test_visual_extractor_toy_shape(rng):
    ext = VideoPatchTransformer(toy_visual_config(), rng)
    out = ext(rng.random((2, 16, 32, 32, 3)).astype(np.float32))
    assert out.shape == (2, 8, 4, 4, 64)


def test_extractor_rejects_wrong_shapes(rng):
    ext = AudioPatchTransformer(toy_audio_config(), rng)
    with pytest.raises(ConfigError):
        ext(np.zeros((2, 128), dtype=np.float32))
    vext = VideoPatchTransformer(toy_visual_config(), rng)
    with pytest.raises(ConfigError):
        vext(np.zeros((2, 16, 32, 32, 1), dtype=np.float32))  # wrong channel count
    with pytest.raises(ConfigError):
        vext(np.zeros((2, 1, 32, 32, 3), dtype=np.float32))  # fewer frames than one patch


def test_overlapping_patches_match_naive_extraction(rng):
    # gather path against a hand loop
    from synchlab.extractors import _extract_patches
    cfg = PatchTransformerConfig(patch=(4, 4), stride=(2, 3), d=8, layers=1, heads=2)
    x = rng.normal(size=(2, 10, 13)).astype(np.float32)
    got = _extract_patches(Tensor(x), cfg, channels=0).data
    f, t = cfg.grid_shape(10, 13)
    k = 0
    for i in range(f):
        for j in range(t):
            patch = x[:, 2 * i:2 * i + 4, 3 * j:3 * j + 4].reshape(2, -1)
            np.testing.assert_array_equal(got[:, k, :], patch)
            k += 1


def test_audio_gradient_wrt_input_mel(rng):
    # small geometry keeps the element-wise finite-difference loop affordable
    with use_dtype(np.float64):
        cfg = PatchTransformerConfig(patch=(4, 3), stride=(4, 3), d=8, layers=1, heads=2,
                                     max_tokens=16)
        ext = AudioPatchTransformer(cfg, rng)
        x = Tensor(rng.normal(size=(1, 8, 6)), dtype=np.float64)
        err = finite_diff_check(lambda v: nn.mean(ext(v)), x)
    assert err < 1e-3


def test_overlapping_audio_gradient_through_gather(rng):
    with use_dtype(np.float64):
        cfg = PatchTransformerConfig(patch=(4, 3), stride=(2, 2), d=8, layers=1, heads=2,
                                     max_tokens=16)
        ext = AudioPatchTransformer(cfg, rng)
        x = Tensor(rng.normal(size=(1, 8, 5)), dtype=np.float64)
        err = finite_diff_check(lambda v: nn.mean(ext(v)), x)
    assert err < 1e-3


def test_visual_blob_changes_outputs(rng):
    ext = VideoPatchTransformer(toy_visual_config(d=32, layers=1, heads=2), rng)
    gray = np.full((1, 16, 32, 32, 3), 0.5, dtype=np.float32)
    with_blob = gray.copy()
    with_blob[0, 4:6, 8:16, 8:16, :] = 1.0
    a = ext(gray).data
    b = ext(with_blob).data
    assert np.linalg.norm(a - b) > 0


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def test_aggregate_audio_map_to_time_rows(rng):
    ext = SegmentFeatureExtractor(toy_audio_config(), toy_visual_config(), rng)
    out = ext.audio_features(rng.normal(size=(4, 128, 66)).astype(np.float32))
    assert out.shape == (4, 6, 64)


def test_aggregate_visual_map_to_time_rows(rng):
    ext = SegmentFeatureExtractor(toy_audio_config(), toy_visual_config(), rng)
    out = ext.visual_features(rng.random((4, 16, 32, 32, 3)).astype(np.float32))
    assert out.shape == (4, 8, 64)


def test_every_spatial_token_receives_gradient(rng):
    with use_dtype(np.float64):
        agg = TokenAggregator(d=8, heads=2, max_spatial=5, rng=rng)
        x = Tensor(rng.normal(size=(2, 4, 8)), requires_grad=True, dtype=np.float64)
        nn.sum_(agg(x)).backward()
        per_token = np.abs(x.grad).sum(axis=-1)
        assert np.all(per_token > 0)
        x2 = Tensor(rng.normal(size=(1, 4, 8)), dtype=np.float64)
        assert finite_diff_check(lambda v: nn.sum_(agg(v)), x2) < 1e-4


def test_segment_independence(rng):
    # features of one segment do not change when other segments change
    ext = SegmentFeatureExtractor(toy_audio_config(), toy_visual_config(), rng)
    mels = rng.normal(size=(3, 128, 66)).astype(np.float32)
    base = ext.audio_features(mels).data
    altered = mels.copy()
    altered[1] = 0.0
    out = ext.audio_features(altered).data
    np.testing.assert_array_equal(out[0], base[0])
    np.testing.assert_array_equal(out[2], base[2])
    assert not np.array_equal(out[1], base[1])


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def test_projection_unit_norm(rng):
    proj = SegmentProjection(16, 8, rng)
    out = proj(Tensor(rng.normal(size=(5, 3, 16)).astype(np.float32)))
    np.testing.assert_allclose(np.linalg.norm(out.data, axis=-1), np.ones(5), atol=1e-5)


def test_projection_time_permutation_invariant(rng):
    proj = SegmentProjection(16, 8, rng)
    x = rng.normal(size=(1, 4, 16)).astype(np.float32)
    a = proj(Tensor(x)).data
    b = proj(Tensor(x[:, ::-1].copy())).data
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_projection_identity_single_step(rng):
    proj = SegmentProjection(4, 4, rng)
    proj.linear.weight.data = np.eye(4, dtype=np.float32)
    proj.linear.bias.data = np.zeros(4, dtype=np.float32)
    v = np.zeros((1, 1, 4), dtype=np.float32)
    v[0, 0, 1] = 1.0
    out = proj(Tensor(v)).data
    np.testing.assert_allclose(out, v[:, 0, :], atol=1e-3)  # eps guard shifts norm slightly


def test_parameters_enumerable_by_name(rng):
    ext = SegmentFeatureExtractor(toy_audio_config(), toy_visual_config(), rng)
    names = [n for n, _ in ext.named_parameters()]
    assert any(n.startswith("audio_encoder.") for n in names)
    assert any(n.startswith("visual_agg.") for n in names)
    assert len(names) == len(set(names))
