"""Audio/visual front-end: streams, log-mel spectrograms, segmentation, crops.

Canonical rates are 16 kHz audio and 25 fps video; rate mismatches are
errors, not conversions. The mel framing is pinned so that a 0.64 s segment
yields exactly 66 frames: reflect-pad (win-hop)*rate/2 samples on each side
plus one extra analysis window on the right, then hop through with
frames = floor((padded - win)/hop) + 1. For sample-aligned durations this
gives duration*100 + 2 frames, and stream-level mel frames slice exactly
into per-segment frame windows at hop granularity.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, CropError, FrontendError

SAMPLE_RATE = 16000
FPS = 25
MEL_CHANNELS = 128
MEL_WIN_SEC = 0.025
MEL_HOP_SEC = 0.010
LOG_FLOOR = 1e-10


@dataclass
class AudioStream:
    """Mono waveform in [-1, 1] with its sampling rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise ContractError(f"audio samples must be 1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ContractError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def duration_sec(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class VideoStream:
    """Frame stack (T, H, W, 3) with intensities in [0, 1]."""

    frames: np.ndarray
    fps: float = FPS

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ContractError(f"frames must be (T, H, W, 3), got shape {self.frames.shape}")
        if self.fps <= 0:
            raise ContractError(f"fps must be positive, got {self.fps}")

    @property
    def duration_sec(self) -> float:
        return self.frames.shape[0] / self.fps


@dataclass
class MelSpectrogram:
    """Log-mel energies, (F, T_a), with the framing that produced them."""

    values: np.ndarray
    frame_hop_sec: float = MEL_HOP_SEC
    frame_win_sec: float = MEL_WIN_SEC

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ContractError(f"mel values must be (F, T), got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ContractError("mel values must be finite")

    @property
    def num_frames(self) -> int:
        return self.values.shape[1]

    @property
    def duration_sec(self) -> float:
        # frames = duration/hop + 2 under the pinned padding rule
        return (self.num_frames - 2) * self.frame_hop_sec


@dataclass(frozen=True)
class SegmentSpec:
    """Fixed-length segmentation; hop equals the length or half of it."""

    segment_len_sec: float = 0.64
    hop_sec: float = 0.64
    allow_any_hop: bool = False

    def __post_init__(self):
        if self.segment_len_sec <= 0 or self.hop_sec <= 0:
            raise ContractError("segment length and hop must be positive")
        if not self.allow_any_hop:
            half = self.segment_len_sec / 2
            if not (np.isclose(self.hop_sec, self.segment_len_sec) or np.isclose(self.hop_sec, half)):
                raise ContractError(
                    f"hop {self.hop_sec} must equal segment length {self.segment_len_sec} or half of it")

    def count_for(self, duration_sec: float) -> int:
        if duration_sec + 1e-9 < self.segment_len_sec:
            raise FrontendError(
                f"stream of {duration_sec:.3f}s shorter than one {self.segment_len_sec:.2f}s segment")
        return int(np.floor((duration_sec - self.segment_len_sec) / self.hop_sec + 1e-9)) + 1

    def window_sec(self, count: int) -> float:
        return self.hop_sec * (count - 1) + self.segment_len_sec


# ---------------------------------------------------------------------------
# mel front-end
# ---------------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=8)
def _mel_filterbank_cached(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    nyquist = sample_rate / 2.0
    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(nyquist), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    fft_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    weights = np.zeros((n_mels, len(fft_freqs)))
    for i in range(n_mels):
        lo, center, hi = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        rising = (fft_freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - fft_freqs) / max(hi - center, 1e-12)
        weights[i] = np.maximum(0.0, np.minimum(rising, falling))
    return weights.astype(np.float32)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters (peak 1) on the HTK mel scale, 0 Hz to Nyquist."""
    return _mel_filterbank_cached(n_mels, n_fft, sample_rate).copy()


def _frame_count(n_samples: int, win: int, hop: int) -> int:
    padded = n_samples + (win - hop) + win  # (win-hop)/2 per side + one window right
    return (padded - win) // hop + 1


def compute_mel(a: AudioStream, n_mels: int = MEL_CHANNELS,
                win_sec: float = MEL_WIN_SEC, hop_sec: float = MEL_HOP_SEC) -> MelSpectrogram:
    """Power STFT -> HTK mel filterbank -> log with floor.

    Hann window (periodic) of win_sec, zero-padded to the FFT size.
    """
    if a.sample_rate != SAMPLE_RATE:
        raise FrontendError(f"expected {SAMPLE_RATE} Hz audio, got {a.sample_rate} Hz")
    win = int(round(win_sec * a.sample_rate))
    hop = int(round(hop_sec * a.sample_rate))
    side = (win - hop) // 2
    if len(a.samples) < side + win + 1:  # reflect pad of side+win needs this much signal
        raise FrontendError(f"audio of {len(a.samples)} samples shorter than one {win}-sample window")
    values = _mel_batch(a.samples[None, :], a.sample_rate, n_mels, win, hop)[0]
    return MelSpectrogram(values=values, frame_hop_sec=hop_sec, frame_win_sec=win_sec)


def _mel_batch(pieces: np.ndarray, sample_rate: int, n_mels: int, win: int, hop: int
               ) -> np.ndarray:
    """(N, samples) equal-length waveforms -> (N, F, frames) log-mel stacks."""
    n_fft = 1
    while n_fft < win:
        n_fft *= 2
    side = (win - hop) // 2
    padded = np.pad(pieces.astype(np.float64), ((0, 0), (side, side + win)), mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, win, axis=1)[:, ::hop]
    frames = windows * _hann(win)
    spectrum = np.fft.rfft(frames, n=n_fft, axis=2)
    power = spectrum.real ** 2 + spectrum.imag ** 2          # (N, frames, bins)
    bank = _mel_filterbank_cached(n_mels, n_fft, sample_rate).T.astype(np.float64)
    mel = power @ bank                                       # (N, frames, F)
    np.maximum(mel, LOG_FLOOR, out=mel)
    np.log(mel, out=mel)
    return np.ascontiguousarray(mel.swapaxes(1, 2)).astype(np.float32)


@functools.lru_cache(maxsize=4)
def _hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------

def segmentize(stream, spec: SegmentSpec):
    """Split a stream into S equal-length segments.

    Audio segments come back as mel slabs (each segment's mel is computed
    from its own samples, so segments stay independent); mel inputs are
    frame-sliced; video inputs become per-segment frame stacks.
    """
    if isinstance(stream, AudioStream):
        if stream.sample_rate != SAMPLE_RATE:
            raise FrontendError(f"expected {SAMPLE_RATE} Hz audio, got {stream.sample_rate} Hz")
        count = spec.count_for(stream.duration_sec)
        seg_samples = int(round(spec.segment_len_sec * stream.sample_rate))
        hop_samples = spec.hop_sec * stream.sample_rate
        pieces = []
        for s in range(count):
            start = int(round(s * hop_samples))
            piece = stream.samples[start:start + seg_samples]
            if len(piece) != seg_samples:
                raise FrontendError(f"audio too short for segment {s}")
            pieces.append(piece)
        win = int(round(MEL_WIN_SEC * stream.sample_rate))
        hop = int(round(MEL_HOP_SEC * stream.sample_rate))
        if seg_samples < (win - hop) // 2 + win + 1:
            raise FrontendError(f"segments of {seg_samples} samples too short for the mel window")
        stacked = _mel_batch(np.stack(pieces), stream.sample_rate, MEL_CHANNELS, win, hop)
        return [MelSpectrogram(values=stacked[s]) for s in range(count)]

    if isinstance(stream, MelSpectrogram):
        count = spec.count_for(stream.duration_sec)
        frames_per_hop = spec.hop_sec / stream.frame_hop_sec
        seg_frames = int(round(spec.segment_len_sec / stream.frame_hop_sec)) + 2
        out = []
        for s in range(count):
            start = int(round(s * frames_per_hop))
            piece = stream.values[:, start:start + seg_frames]
            if piece.shape[1] != seg_frames:
                raise FrontendError(
                    f"mel too short for segment {s}: need {seg_frames} frames from index {start}, "
                    f"have {stream.num_frames}")
            out.append(MelSpectrogram(piece, stream.frame_hop_sec, stream.frame_win_sec))
        return out

    if isinstance(stream, VideoStream):
        count = spec.count_for(stream.duration_sec)
        seg_frames = int(round(spec.segment_len_sec * stream.fps))
        hop_frames = spec.hop_sec * stream.fps
        out = []
        for s in range(count):
            start = int(round(s * hop_frames))
            piece = stream.frames[start:start + seg_frames]
            if piece.shape[0] != seg_frames:
                raise FrontendError(f"video too short for segment {s}")
            out.append(VideoStream(piece, stream.fps))
        return out

    raise ContractError(f"cannot segmentize {type(stream).__name__}")


# ---------------------------------------------------------------------------
# temporal cropping
# ---------------------------------------------------------------------------

def temporal_crop(a: AudioStream, v: VideoStream, start_sec: float, duration_sec: float,
                  audio_shift_sec: float = 0.0) -> tuple[AudioStream, VideoStream]:
    """Crop both streams to duration_sec; the audio window is shifted.

    Video covers [start, start+dur); audio covers
    [start+shift, start+shift+dur). A positive shift means the model hears
    audio from later source time than it sees (audio track starts later).
    Boundaries round to the nearest sample/frame.
    """
    a_start = start_sec + audio_shift_sec
    a_lo = int(round(a_start * a.sample_rate))
    a_hi = a_lo + int(round(duration_sec * a.sample_rate))
    v_lo = int(round(start_sec * v.fps))
    v_hi = v_lo + int(round(duration_sec * v.fps))
    if a_lo < 0 or a_hi > len(a.samples):
        raise CropError(
            f"audio crop [{a_start:.3f}, {a_start + duration_sec:.3f})s outside stream of "
            f"{a.duration_sec:.3f}s (margins: {a_start:.3f}s before, "
            f"{a.duration_sec - a_start - duration_sec:.3f}s after)")
    if v_lo < 0 or v_hi > v.frames.shape[0]:
        raise CropError(
            f"video crop [{start_sec:.3f}, {start_sec + duration_sec:.3f})s outside stream of "
            f"{v.duration_sec:.3f}s (margins: {start_sec:.3f}s before, "
            f"{v.duration_sec - start_sec - duration_sec:.3f}s after)")
    return (AudioStream(a.samples[a_lo:a_hi].copy(), a.sample_rate),
            VideoStream(v.frames[v_lo:v_hi].copy(), v.fps))
