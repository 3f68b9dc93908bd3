"""Desk-scale audio-visual synchronization lab.

Two-stage training (segment-level contrastive pre-training, then offset
classification over frozen extractors) on deterministic synthetic clips,
plus masking-based evidence attribution and synchronizability prediction.
"""

from .config import RunConfig
from .grid import UNSYNCHRONIZABLE, OffsetGrid
from .frontend import (AudioStream, MelSpectrogram, SegmentSpec, VideoStream,
                       compute_mel, segmentize, temporal_crop)
from .synthgen import (EventSpec, LabeledClip, apply_offset, generate_clip,
                       make_unsynchronizable)

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "OffsetGrid", "UNSYNCHRONIZABLE",
    "AudioStream", "VideoStream", "MelSpectrogram", "SegmentSpec",
    "compute_mel", "segmentize", "temporal_crop",
    "EventSpec", "LabeledClip", "generate_clip", "apply_offset", "make_unsynchronizable",
    "__version__",
]
