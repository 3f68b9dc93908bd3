"""On-disk dataset container: manifest.json plus per-clip binary tensors.

Tensor file layout (all integers little-endian):

    magic   5 bytes  b"AVSY1"
    dtype   3 bytes  b"f32" or b"u8 " (space-padded ASCII)
    rank    1 byte   unsigned
    extents rank x u32
    payload raw little-endian values, row-major

Audio is stored as f32 samples; video as u8 intensities (values/255), which
round-trips the generator's u8-quantized frames bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError, GenerationError
from .frontend import AudioStream, VideoStream
from .grid import OffsetGrid
from .synthgen import EventSpec, LabeledClip, generate_clip

MAGIC = b"AVSY1"
MANIFEST_NAME = "manifest.json"
_DTYPE_TAGS = {np.dtype(np.float32): b"f32", np.dtype(np.uint8): b"u8 "}
_TAG_DTYPES = {b"f32": np.dtype("<f4"), b"u8 ": np.dtype("u1")}


def write_tensor(path: Path, arr: np.ndarray) -> None:
    dtype = np.dtype(arr.dtype)
    if dtype not in _DTYPE_TAGS:
        raise CheckpointError(f"container stores f32/u8 tensors only, got {dtype}")
    tag = _DTYPE_TAGS[dtype]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(tag)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype=dtype.newbyteorder("<")).tobytes())


def read_tensor(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 4 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not an AVSY1 tensor file")
    tag = blob[5:8]
    if tag not in _TAG_DTYPES:
        raise CheckpointError(f"{path}: unknown dtype tag {tag!r}")
    rank = blob[8]
    header_end = 9 + 4 * rank
    if len(blob) < header_end:
        raise CheckpointError(f"{path}: truncated header")
    shape = struct.unpack(f"<{rank}I", blob[9:header_end])
    dtype = _TAG_DTYPES[tag]
    expected = int(np.prod(shape)) * dtype.itemsize
    payload = blob[header_end:]
    if len(payload) != expected:
        raise CheckpointError(f"{path}: payload of {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


# ---------------------------------------------------------------------------
# dataset directory
# ---------------------------------------------------------------------------

def derive_clip_seed(global_seed: int, index: int) -> int:
    """Stable per-clip seed; parallel and serial generation agree bit-exactly."""
    return int(np.random.SeedSequence([int(global_seed), int(index)]).generate_state(1)[0])


def generate_dataset(out_dir: Path, global_seed: int, n_clips: int,
                     duration_sec: float = 11.0, events_min: int = 3, events_max: int = 8,
                     noise_level: float = 0.1, frame_size: int = 32,
                     grid: OffsetGrid | None = None, threads: int = 1) -> dict:
    """Write an in-sync source-clip dataset; returns the manifest dict.

    Per-clip seeds derive from (global_seed, index), so parallel and serial
    generation produce byte-identical directories.
    """
    grid = grid or OffsetGrid()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if events_max < events_min or events_min < 0:
        raise GenerationError(f"bad event range [{events_min}, {events_max}]")

    def make(i: int):
        seed = derive_clip_seed(global_seed, i)
        count_rng = np.random.default_rng(np.random.SeedSequence([int(global_seed), int(i), 1]))
        n_events = int(count_rng.integers(events_min, events_max + 1))
        clip_id = f"clip_{i:05d}"
        clip = generate_clip(seed, duration_sec, n_events, noise_level,
                             clip_id=clip_id, frame_size=frame_size)
        return seed, clip

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            produced = list(pool.map(make, range(n_clips)))
    else:
        produced = [make(i) for i in range(n_clips)]

    records = []
    for seed, clip in produced:
        write_tensor(out_dir / f"{clip.clip_id}_audio.avsy", clip.audio.samples.astype(np.float32))
        write_tensor(out_dir / f"{clip.clip_id}_video.avsy",
                     np.round(clip.video.frames * 255.0).astype(np.uint8))
        records.append({
            "clip_id": clip.clip_id,
            "seed": seed,
            "offset_class": clip.offset_class,
            "event_times_sec": [round(t, 9) for t in clip.events.times_sec],
            "audio_freqs_hz": [round(f, 6) for f in clip.events.audio_freqs_hz],
            "visual_pos": [[round(p, 9) for p in pos] for pos in clip.events.visual_pos],
        })
    manifest = {
        "format": "avsy-dataset-v1",
        "global_seed": int(global_seed),
        "grid": grid.to_dict(),
        "duration_sec": duration_sec,
        "noise_level": noise_level,
        "frame_size": frame_size,
        "events_min": events_min,
        "events_max": events_max,
        "clips": records,
    }
    with open(out_dir / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


class SyntheticDataset:
    """Read-only view over a generated dataset directory."""

    def __init__(self, root: Path, cache_size: int = 64):
        self.root = Path(root)
        manifest_path = self.root / MANIFEST_NAME
        if not manifest_path.exists():
            raise GenerationError(f"no {MANIFEST_NAME} in {self.root}")
        with open(manifest_path, "r", encoding="utf-8") as fh:
            self.manifest = json.load(fh)
        if self.manifest.get("format") != "avsy-dataset-v1":
            raise CheckpointError(f"unknown dataset format {self.manifest.get('format')!r}")
        self.grid = OffsetGrid.from_dict(self.manifest["grid"])
        self.records = self.manifest["clips"]
        self._cache: dict[int, LabeledClip] = {}
        self._cache_size = cache_size

    def __len__(self) -> int:
        return len(self.records)

    def load(self, index: int) -> LabeledClip:
        if index in self._cache:
            return self._cache[index]
        record = self.records[index]
        clip_id = record["clip_id"]
        audio = read_tensor(self.root / f"{clip_id}_audio.avsy")
        video_u8 = read_tensor(self.root / f"{clip_id}_video.avsy")
        events = EventSpec(
            times_sec=list(record["event_times_sec"]),
            audio_freqs_hz=list(record.get("audio_freqs_hz", [])),
            visual_pos=[tuple(p) for p in record.get("visual_pos", [])],
        )
        clip = LabeledClip(
            audio=AudioStream(audio),
            video=VideoStream(video_u8.astype(np.float32) / 255.0),
            events=events, offset_class=int(record["offset_class"]),
            clip_id=clip_id, seed=int(record["seed"]))
        if len(self._cache) >= self._cache_size:
            self._cache.pop(next(iter(self._cache)))
        self._cache[index] = clip
        return clip
