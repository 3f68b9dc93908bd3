"""Deterministic audio-visual clip generator with known event ground truth.

Clips pair a noisy audio track with a textured video track; at each event
time a 0.1 s Hann-enveloped tone burst plays while a Gaussian brightness
blob pulses at a random position. Everything derives from a single integer
seed, so a manifest of seeds reproduces every tensor bit-exactly. Offsets
between the modalities are realized by cropping shifted windows out of a
longer in-sync source clip.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import GenerationError
from .frontend import FPS, SAMPLE_RATE, AudioStream, VideoStream, temporal_crop
from .grid import UNSYNCHRONIZABLE, OffsetGrid

EVENT_SEC = 0.1          # burst/flash envelope length
MIN_EVENT_GAP_SEC = 0.2  # between event onsets
EVENT_FREQ_RANGE_HZ = (300.0, 3000.0)
TONE_AMP = 0.5
BLOB_AMP = 0.8
BLOB_SIGMA_FRAC = 0.09   # blob stddev as a fraction of frame size
TEXTURE_CONTRAST = 0.06
FRAME_SIZE = 32


@dataclass
class EventSpec:
    """Where the synchronization evidence lives, per modality."""

    times_sec: list[float] = field(default_factory=list)      # sorted onsets
    audio_freqs_hz: list[float] = field(default_factory=list)  # one per event
    visual_pos: list[tuple[float, float]] = field(default_factory=list)  # fractional (y, x)
    envelope_sec: float = EVENT_SEC


@dataclass
class LabeledClip:
    """Paired streams plus ground truth and crop bookkeeping.

    Event times are kept in source-clip time; ``video_start_sec`` and
    ``audio_start_sec`` locate each cropped window in that timeline, so
    modality-relative event times stay recoverable after offset crops.
    """

    audio: AudioStream
    video: VideoStream
    events: EventSpec
    offset_class: int
    clip_id: str
    seed: int
    video_start_sec: float = 0.0
    audio_start_sec: float = 0.0

    def event_times_video(self) -> list[float]:
        dur = self.video.duration_sec
        return [t - self.video_start_sec for t in self.events.times_sec
                if self.video_start_sec <= t and t + self.events.envelope_sec <= self.video_start_sec + dur]

    def event_times_audio(self) -> list[float]:
        dur = self.audio.duration_sec
        return [t - self.audio_start_sec for t in self.events.times_sec
                if self.audio_start_sec <= t and t + self.events.envelope_sec <= self.audio_start_sec + dur]


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed))


def _draw_event_times(rng: np.random.Generator, n: int, duration: float) -> list[float]:
    margin = MIN_EVENT_GAP_SEC
    usable = duration - 2 * margin - EVENT_SEC
    slack = usable - (n - 1) * MIN_EVENT_GAP_SEC if n else usable
    if n and slack < 0:
        raise GenerationError(f"{n} events with {MIN_EVENT_GAP_SEC}s gaps do not fit in {duration}s")
    if n == 0:
        return []
    u = np.sort(rng.uniform(0.0, slack, size=n))
    return [float(margin + u[i] + i * MIN_EVENT_GAP_SEC) for i in range(n)]


def _pink_noise(rng: np.random.Generator, n: int, level: float) -> np.ndarray:
    """1/sqrt(f)-shaped noise, RMS-normalized to ``level``."""
    white = rng.normal(size=n)
    spectrum = np.fft.rfft(white)
    f = np.arange(len(spectrum), dtype=np.float64)
    f[0] = 1.0
    shaped = np.fft.irfft(spectrum / np.sqrt(f), n=n)
    rms = np.sqrt((shaped ** 2).mean()) or 1.0
    return (shaped / rms * level).astype(np.float32)


def _hann_envelope(n: int) -> np.ndarray:
    return (0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / max(n - 1, 1))).astype(np.float32)


def _render_audio(rng, duration, events: EventSpec, noise_level) -> np.ndarray:
    n = int(round(duration * SAMPLE_RATE))
    samples = _pink_noise(rng, n, noise_level)
    env_n = int(EVENT_SEC * SAMPLE_RATE)
    env = _hann_envelope(env_n)
    for t0, freq in zip(events.times_sec, events.audio_freqs_hz):
        lo = int(round(t0 * SAMPLE_RATE))
        tt = np.arange(env_n) / SAMPLE_RATE
        burst = TONE_AMP * np.sin(2 * np.pi * freq * tt).astype(np.float32) * env
        span = min(env_n, n - lo)
        samples[lo:lo + span] += burst[:span]
    return np.clip(samples, -1.0, 1.0)


def _render_video(rng, duration, events: EventSpec, size: int) -> np.ndarray:
    n_frames = int(round(duration * FPS))
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    t = np.arange(n_frames, dtype=np.float64)[:, None, None]

    frames = np.full((n_frames, size, size), 0.5, dtype=np.float64)
    for _ in range(3):  # drifting low-contrast gratings
        kx, ky = rng.uniform(0.1, 0.8, size=2)
        omega = rng.uniform(-0.3, 0.3)
        phase = rng.uniform(0, 2 * np.pi)
        frames += TEXTURE_CONTRAST * np.sin(kx * xx + ky * yy + omega * t + phase)

    env_frames = max(int(round(EVENT_SEC * FPS)), 1)
    sigma = BLOB_SIGMA_FRAC * size
    for t0, (py, px) in zip(events.times_sec, events.visual_pos):
        blob = np.exp(-(((yy - py * size) ** 2 + (xx - px * size) ** 2) / (2 * sigma ** 2)))
        f0 = int(round(t0 * FPS))
        env = _hann_envelope(env_frames + 2)[1:-1]  # avoid zero endpoints on short pulses
        for j in range(env_frames):
            if f0 + j < n_frames:
                frames[f0 + j] += BLOB_AMP * env[j] * blob
    rgb = np.repeat(np.clip(frames, 0.0, 1.0)[..., None], 3, axis=-1)
    # quantize to the u8 grid so the on-disk container round-trips bit-exactly
    return (np.round(rgb * 255.0).astype(np.uint8).astype(np.float32) / 255.0)


def generate_clip(seed: int, duration_sec: float = 11.0, n_events: int = 5,
                  noise_level: float = 0.1, clip_id: str | None = None,
                  frame_size: int = FRAME_SIZE) -> LabeledClip:
    """In-sync source clip (offset class = grid center), fully seed-determined."""
    if duration_sec < 9.0:
        raise GenerationError(f"duration {duration_sec}s leaves no room for +-2s shifts (need >= 9.0)")
    if n_events < 0:
        raise GenerationError("n_events must be >= 0")
    rng = _rng(seed)
    times = _draw_event_times(rng, n_events, duration_sec)
    events = EventSpec(
        times_sec=times,
        audio_freqs_hz=[float(rng.uniform(*EVENT_FREQ_RANGE_HZ)) for _ in times],
        visual_pos=[(float(rng.uniform(0.2, 0.8)), float(rng.uniform(0.2, 0.8))) for _ in times],
    )
    audio = _render_audio(rng, duration_sec, events, noise_level)
    video = _render_video(rng, duration_sec, events, frame_size)
    grid = OffsetGrid()
    return LabeledClip(
        audio=AudioStream(audio), video=VideoStream(video), events=events,
        offset_class=grid.center_class, clip_id=clip_id or f"clip_{seed:016x}", seed=seed)


def apply_offset(clip: LabeledClip, offset_class: int, window_sec: float,
                 rng: np.random.Generator, grid: OffsetGrid | None = None,
                 max_retries: int = 100) -> LabeledClip:
    """Crop shifted windows so the pair is out of sync by a grid offset.

    The crop start is drawn uniformly over the feasible range and redrawn
    (bounded retries) until at least one event is visible in the overlap of
    both windows, when the source clip has events at all.
    """
    grid = grid or OffsetGrid()
    offset = grid.offset_sec(offset_class)
    if clip.offset_class != grid.center_class:
        raise GenerationError("apply_offset expects an in-sync source clip")
    duration = min(clip.audio.duration_sec, clip.video.duration_sec)
    lo = max(0.0, -offset)
    hi = min(duration - window_sec, duration - window_sec - offset)
    if hi < lo:
        raise GenerationError(
            f"window {window_sec}s with offset {offset:+.1f}s does not fit in {duration:.2f}s clip")

    def visible(start: float) -> bool:
        if not clip.events.times_sec:
            return True
        ov_lo = start + max(0.0, offset)
        ov_hi = start + window_sec + min(0.0, offset)
        return any(ov_lo <= t and t + EVENT_SEC <= ov_hi for t in clip.events.times_sec)

    start = None
    for _ in range(max_retries):
        candidate = float(rng.uniform(lo, hi)) if hi > lo else lo
        if visible(candidate):
            start = candidate
            break
    if start is None:
        raise GenerationError(
            f"no crop start in [{lo:.2f}, {hi:.2f}] keeps an event visible at offset {offset:+.1f}s "
            f"after {max_retries} retries")
    audio, video = temporal_crop(clip.audio, clip.video, start, window_sec, offset)
    return replace(clip, audio=audio, video=video, offset_class=offset_class,
                   video_start_sec=start, audio_start_sec=start + offset)


def make_unsynchronizable(clip_a: LabeledClip, clip_b: LabeledClip | None,
                          window_sec: float, rng: np.random.Generator) -> LabeledClip:
    """A pair no grid offset can align.

    With one clip: audio and video windows come from disjoint time ranges
    (the audio window sits one full window later). With two clips (different
    seeds): video from the first, audio from the second.
    """
    if clip_b is None or clip_b is clip_a:
        duration = clip_a.video.duration_sec
        if 2 * window_sec > duration:
            raise GenerationError(
                f"disjoint windows of {window_sec}s need a clip of >= {2 * window_sec}s, have {duration:.2f}s")
        start = float(rng.uniform(0.0, duration - 2 * window_sec))
        audio, video = temporal_crop(clip_a.audio, clip_a.video, start, window_sec, window_sec)
        return replace(clip_a, audio=audio, video=video, offset_class=UNSYNCHRONIZABLE,
                       video_start_sec=start, audio_start_sec=start + window_sec)
    if clip_b.seed == clip_a.seed:
        raise GenerationError("cross-clip unsynchronizable pair needs distinct seeds")
    for c in (clip_a, clip_b):
        if c.video.duration_sec < window_sec:
            raise GenerationError(f"clip {c.clip_id} shorter than window {window_sec}s")
    v_start = float(rng.uniform(0.0, clip_a.video.duration_sec - window_sec))
    a_start = float(rng.uniform(0.0, clip_b.audio.duration_sec - window_sec))
    _, video = temporal_crop(clip_a.audio, clip_a.video, v_start, window_sec, 0.0)
    audio, _ = temporal_crop(clip_b.audio, clip_b.video, 0.0, window_sec, a_start)
    return LabeledClip(audio=audio, video=video, events=clip_a.events,
                       offset_class=UNSYNCHRONIZABLE,
                       clip_id=f"{clip_a.clip_id}+{clip_b.clip_id}", seed=clip_a.seed,
                       video_start_sec=v_start, audio_start_sec=a_start)
