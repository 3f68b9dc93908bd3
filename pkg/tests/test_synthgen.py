"""Synthetic generator: determinism, event localization, offsets, container IO."""

import numpy as np
import pytest

from synchlab.container import (SyntheticDataset, derive_clip_seed, generate_dataset,
                                read_tensor, write_tensor)
from synchlab.errors import CheckpointError, GenerationError, GridError
from synchlab.frontend import FPS, SAMPLE_RATE
from synchlab.grid import UNSYNCHRONIZABLE, OffsetGrid
from synchlab.synthgen import apply_offset, generate_clip, make_unsynchronizable


# ---------------------------------------------------------------------------
# OffsetGrid
# ---------------------------------------------------------------------------

def test_grid_constants():
    grid = OffsetGrid()
    assert grid.num_classes == 21
    assert grid.offset_sec(0) == -2.0
    assert grid.offset_sec(20) == 2.0
    assert grid.offset_sec(10) == 0.0
    assert grid.center_class == 10


def test_grid_round_trip_all_classes():
    grid = OffsetGrid()
    for cls in range(21):
        assert grid.class_of(grid.offset_sec(cls)) == cls


def test_grid_symmetry_about_center():
    grid = OffsetGrid()
    for cls in range(21):
        assert grid.offset_sec(cls) == pytest.approx(-grid.offset_sec(20 - cls))


def test_grid_rejects_out_of_range_and_off_grid():
    grid = OffsetGrid()
    with pytest.raises(GridError):
        grid.offset_sec(21)
    with pytest.raises(GridError):
        grid.class_of(0.31)
    with pytest.raises(GridError):
        grid.class_of(2.2)


# ---------------------------------------------------------------------------
# generate_clip
# ---------------------------------------------------------------------------

def test_same_seed_bit_identical():
    a = generate_clip(42, 9.5, 4, 0.1)
    b = generate_clip(42, 9.5, 4, 0.1)
    assert np.array_equal(a.audio.samples, b.audio.samples)
    assert np.array_equal(a.video.frames, b.video.frames)
    assert a.events.times_sec == b.events.times_sec


def test_different_seeds_differ():
    a = generate_clip(1, 9.5, 4, 0.1)
    b = generate_clip(2, 9.5, 4, 0.1)
    assert not np.array_equal(a.audio.samples, b.audio.samples)


def test_event_localized_in_both_modalities():
    clip = generate_clip(7, 9.5, 1, noise_level=0.05)
    (t0,) = clip.events.times_sec

    win = int(0.05 * SAMPLE_RATE)
    energy = np.convolve(clip.audio.samples.astype(np.float64) ** 2, np.ones(win), "valid")
    audio_peak = np.argmax(energy) / SAMPLE_RATE
    assert t0 <= audio_peak <= t0 + 0.1

    brightness = clip.video.frames.mean(axis=(1, 2, 3))
    video_peak = np.argmax(brightness) / FPS
    assert t0 - 0.04 <= video_peak <= t0 + 0.1


def test_zero_events_clip_is_allowed():
    clip = generate_clip(3, 9.0, 0, 0.1)
    assert clip.events.times_sec == []
    assert clip.audio.duration_sec == pytest.approx(9.0)


def test_event_spacing_respected():
    clip = generate_clip(11, 10.0, 8, 0.1)
    times = clip.events.times_sec
    assert all(b - a >= 0.2 - 1e-9 for a, b in zip(times, times[1:]))


def test_too_many_events_error():
    with pytest.raises(GenerationError):
        generate_clip(0, 9.0, 60, 0.1)


def test_short_duration_rejected():
    with pytest.raises(GenerationError):
        generate_clip(0, 5.0, 2, 0.1)


# ---------------------------------------------------------------------------
# apply_offset
# ---------------------------------------------------------------------------

def test_apply_offset_class10_keeps_alignment():
    clip = generate_clip(5, 10.0, 4, 0.1)
    out = apply_offset(clip, 10, 4.8, np.random.default_rng(0))
    assert out.offset_class == 10
    assert out.audio_start_sec == pytest.approx(out.video_start_sec)
    assert out.audio.duration_sec == pytest.approx(4.8)
    assert out.video.duration_sec == pytest.approx(4.8)
    va, aa = out.event_times_video(), out.event_times_audio()
    assert va and va == pytest.approx(aa)


def test_apply_offset_event_timestamp_bookkeeping():
    # class 12 = +0.4 s: a visual event at t appears at t - 0.4 in audio time
    clip = generate_clip(9, 10.5, 5, 0.1)
    out = apply_offset(clip, 12, 4.8, np.random.default_rng(1))
    assert out.offset_class == 12
    assert out.audio_start_sec - out.video_start_sec == pytest.approx(0.4)
    shared = [t for t in out.events.times_sec
              if t in set(out.events.times_sec)]  # all source events
    for t in shared:
        tv = t - out.video_start_sec
        ta = t - out.audio_start_sec
        assert ta == pytest.approx(tv - 0.4)
    # at least one event inside the overlap of both windows
    assert any(0 <= t <= 4.8 for t in out.event_times_video())
    assert any(0 <= t <= 4.8 for t in out.event_times_audio())


def test_apply_offset_out_of_grid_class():
    clip = generate_clip(5, 10.0, 4, 0.1)
    with pytest.raises(GridError):
        apply_offset(clip, 21, 4.8, np.random.default_rng(0))


def test_apply_offset_every_class_fits_default_duration():
    clip = generate_clip(21, 11.0, 5, 0.1)
    for cls in range(21):
        out = apply_offset(clip, cls, 4.8, np.random.default_rng(cls))
        assert out.offset_class == cls


# ---------------------------------------------------------------------------
# make_unsynchronizable
# ---------------------------------------------------------------------------

def test_unsync_disjoint_windows_share_no_events():
    clip = generate_clip(13, 11.0, 6, 0.1)
    out = make_unsynchronizable(clip, None, 4.8, np.random.default_rng(0))
    assert out.offset_class == UNSYNCHRONIZABLE
    assert out.audio_start_sec - out.video_start_sec == pytest.approx(4.8)
    video_events = set(round(t + out.video_start_sec, 6) for t in out.event_times_video())
    audio_events = set(round(t + out.audio_start_sec, 6) for t in out.event_times_audio())
    assert not video_events & audio_events


def test_unsync_cross_pair():
    a = generate_clip(1, 9.5, 4, 0.1)
    b = generate_clip(2, 9.5, 4, 0.1)
    out = make_unsynchronizable(a, b, 4.8, np.random.default_rng(0))
    assert out.offset_class == UNSYNCHRONIZABLE
    assert out.audio.duration_sec == pytest.approx(4.8)


def test_unsync_window_too_long_errors():
    clip = generate_clip(4, 9.0, 3, 0.1)
    with pytest.raises(GenerationError):
        make_unsynchronizable(clip, None, 4.8, np.random.default_rng(0))  # needs 9.6 s


# ---------------------------------------------------------------------------
# container
# ---------------------------------------------------------------------------

def test_tensor_file_round_trip(tmp_path):
    f32 = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    u8 = np.arange(12, dtype=np.uint8).reshape(3, 4)
    write_tensor(tmp_path / "a.avsy", f32)
    write_tensor(tmp_path / "b.avsy", u8)
    assert np.array_equal(read_tensor(tmp_path / "a.avsy"), f32)
    assert np.array_equal(read_tensor(tmp_path / "b.avsy"), u8)


def test_tensor_file_bad_magic(tmp_path):
    (tmp_path / "bad.avsy").write_bytes(b"NOPE!" + b"\x00" * 16)
    with pytest.raises(CheckpointError):
        read_tensor(tmp_path / "bad.avsy")


def test_tensor_file_truncated(tmp_path):
    arr = np.ones((4, 4), dtype=np.float32)
    write_tensor(tmp_path / "t.avsy", arr)
    blob = (tmp_path / "t.avsy").read_bytes()
    (tmp_path / "t.avsy").write_bytes(blob[:-8])
    with pytest.raises(CheckpointError):
        read_tensor(tmp_path / "t.avsy")


def test_dataset_generation_deterministic(tmp_path):
    m1 = generate_dataset(tmp_path / "d1", global_seed=7, n_clips=3, duration_sec=9.5)
    m2 = generate_dataset(tmp_path / "d2", global_seed=7, n_clips=3, duration_sec=9.5)
    assert m1 == m2
    for name in sorted(p.name for p in (tmp_path / "d1").iterdir()):
        assert (tmp_path / "d1" / name).read_bytes() == (tmp_path / "d2" / name).read_bytes()


def test_dataset_round_trip_bit_exact(tmp_path):
    generate_dataset(tmp_path / "d", global_seed=3, n_clips=2, duration_sec=9.5)
    ds = SyntheticDataset(tmp_path / "d")
    assert len(ds) == 2
    for i in range(2):
        record = ds.records[i]
        regenerated = generate_clip(record["seed"], 9.5,
                                    len(record["event_times_sec"]),
                                    ds.manifest["noise_level"], clip_id=record["clip_id"])
        loaded = ds.load(i)
        assert np.array_equal(loaded.audio.samples, regenerated.audio.samples)
        assert np.array_equal(loaded.video.frames, regenerated.video.frames)


def test_clip_seed_derivation_is_stable():
    assert derive_clip_seed(7, 0) == derive_clip_seed(7, 0)
    assert derive_clip_seed(7, 0) != derive_clip_seed(7, 1)
    assert derive_clip_seed(7, 0) != derive_clip_seed(8, 0)
