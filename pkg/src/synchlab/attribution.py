"""Evidence attribution by randomized masking with distractor substitution.

Feature rows entering the synchronization transformer are grouped into
0.1 s chunks per modality. Each trial keeps every chunk of one modality
independently with probability p_keep, replaces dropped chunks' rows with
the rows of a random distractor clip at the same positions, and records
whether the prediction stays correct (within the class tolerance). A chunk's
raw score is the fraction of trials in which it was kept AND the prediction
was correct; important chunks score near 1, unimportant ones near p_keep.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .errors import ContractError
from .sync import SyncModel
from .synthgen import LabeledClip

CHUNK_SEC = 0.1
MODALITIES = ("audio", "visual")


@dataclass(frozen=True)
class FeatureLayout:
    """Row-to-time bookkeeping for the sync module's input sequence."""

    segments: int
    t_a: int
    t_v: int
    segment_len_sec: float
    hop_sec: float
    chunk_sec: float = CHUNK_SEC

    @property
    def window_sec(self) -> float:
        return self.hop_sec * (self.segments - 1) + self.segment_len_sec

    @property
    def n_chunks(self) -> int:
        return int(round(self.window_sec / self.chunk_sec))

    @property
    def mask_length(self) -> int:
        return self.segments * (self.t_a + self.t_v)

    def rows_per_modality(self, modality: str) -> int:
        return self.segments * (self.t_a if modality == "audio" else self.t_v)

    def chunk_of_rows(self, modality: str) -> np.ndarray:
        """Chunk index of every feature row (by the row's center time)."""
        t = self.t_a if modality == "audio" else self.t_v
        seg = np.repeat(np.arange(self.segments), t)
        row = np.tile(np.arange(t), self.segments)
        centers = seg * self.hop_sec + (row + 0.5) * self.segment_len_sec / t
        return np.minimum((centers / self.chunk_sec).astype(np.int64), self.n_chunks - 1)

    @classmethod
    def of_model(cls, model: SyncModel, t_a: int, t_v: int) -> "FeatureLayout":
        return cls(segments=model.segments, t_a=t_a, t_v=t_v,
                   segment_len_sec=model.spec.segment_len_sec, hop_sec=model.spec.hop_sec)


@dataclass
class Mask:
    """Per-chunk keep decisions for one modality; the other stays intact."""

    modality: str
    chunk_keep: np.ndarray  # (n_chunks,) bool
    layout: FeatureLayout

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ContractError(f"unknown modality {self.modality!r}")
        if self.chunk_keep.shape != (self.layout.n_chunks,):
            raise ContractError(
                f"mask over {self.chunk_keep.shape} chunks, layout has {self.layout.n_chunks}")

    def row_keep(self) -> dict[str, np.ndarray]:
        """Keep flags over all T = S*(t_a+t_v) rows; unmasked modality all 1."""
        out = {}
        for modality in MODALITIES:
            if modality == self.modality:
                out[modality] = self.chunk_keep[self.layout.chunk_of_rows(modality)]
            else:
                out[modality] = np.ones(self.layout.rows_per_modality(modality), dtype=bool)
        return out


def sample_mask(rng: np.random.Generator, layout: FeatureLayout, p_keep: float,
                modality: str) -> Mask:
    if not 0.0 < p_keep < 1.0:
        raise ContractError(f"p_keep must be in (0, 1), got {p_keep}")
    keep = rng.random(layout.n_chunks) < p_keep
    return Mask(modality=modality, chunk_keep=keep, layout=layout)


def apply_mask(audio_rows: np.ndarray, visual_rows: np.ndarray, mask: Mask,
               distractor_audio: np.ndarray, distractor_visual: np.ndarray
               ) -> tuple[np.ndarray, np.ndarray]:
    """Replace masked chunks' rows with the distractor's rows at the same spots."""
    layout = mask.layout
    if audio_rows.shape != distractor_audio.shape or visual_rows.shape != distractor_visual.shape:
        raise ContractError(
            f"distractor layout mismatch: {audio_rows.shape}/{distractor_audio.shape}, "
            f"{visual_rows.shape}/{distractor_visual.shape}")
    if audio_rows.shape[0] != layout.rows_per_modality("audio") or \
            visual_rows.shape[0] != layout.rows_per_modality("visual"):
        raise ContractError(
            f"row counts {audio_rows.shape[0]}/{visual_rows.shape[0]} do not match layout "
            f"{layout.rows_per_modality('audio')}/{layout.rows_per_modality('visual')}")
    keep = mask.row_keep()
    audio_out = np.where(keep["audio"][:, None], audio_rows, distractor_audio)
    visual_out = np.where(keep["visual"][:, None], visual_rows, distractor_visual)
    return audio_out, visual_out


# ---------------------------------------------------------------------------
# score estimation engines
# ---------------------------------------------------------------------------

def attribution_scores(correct_fn, n_chunks: int, p_keep: float, trials: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Monte-Carlo raw scores: P(chunk kept AND prediction correct).

    ``correct_fn`` maps a (trials, n_chunks) bool keep matrix to a (trials,)
    bool correctness vector; masks are drawn up-front so aggregation is
    order-independent.
    """
    keep = rng.random((trials, n_chunks)) < p_keep
    correct = np.asarray(correct_fn(keep), dtype=bool)
    if correct.shape != (trials,):
        raise ContractError(f"correct_fn returned shape {correct.shape}, expected ({trials},)")
    return (keep & correct[:, None]).sum(axis=0) / trials


def attribution_scores_exhaustive(correct_fn, n_chunks: int, p_keep: float) -> np.ndarray:
    """Exact expectation by enumerating all 2^n_chunks masks (n_chunks <= 16)."""
    if n_chunks > 16:
        raise ContractError(f"exhaustive enumeration supports <= 16 chunks, got {n_chunks}")
    patterns = np.arange(2 ** n_chunks, dtype=np.uint32)
    keep = (patterns[:, None] >> np.arange(n_chunks)) & 1
    keep = keep.astype(bool)
    kept_counts = keep.sum(axis=1)
    weights = (p_keep ** kept_counts) * ((1 - p_keep) ** (n_chunks - kept_counts))
    correct = np.asarray(correct_fn(keep), dtype=bool)
    return ((keep & correct[:, None]) * weights[:, None]).sum(axis=0)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class AttributionReport:
    clip_id: str
    true_class: int
    trials: int
    p_keep: float
    tolerance_classes: int
    chunk_sec: float
    raw: dict[str, list[float]]
    scaled: dict[str, list[float]]
    flags: list[str] = field(default_factory=list)
    distractor_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "type": "attribution_report",
            "clip_id": self.clip_id,
            "true_class": self.true_class,
            "trials": self.trials,
            "p_keep": self.p_keep,
            "tolerance_classes": self.tolerance_classes,
            "chunk_sec": self.chunk_sec,
            "raw": self.raw,
            "scaled": self.scaled,
            "flags": self.flags,
            "distractor_ids": self.distractor_ids,
        }

    def save(self, path: Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def save_csv(self, path: Path) -> None:
        lines = ["modality,chunk,start_sec,raw,scaled"]
        for modality in MODALITIES:
            for i, (r, s) in enumerate(zip(self.raw[modality], self.scaled[modality])):
                lines.append(f"{modality},{i},{i * self.chunk_sec:.1f},{r:.6f},{s:.6f}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _minmax_scale(raw: np.ndarray) -> tuple[np.ndarray, bool]:
    lo, hi = float(raw.min()), float(raw.max())
    if hi - lo < 1e-12:
        return np.full_like(raw, 0.5), True
    return (raw - lo) / (hi - lo), False


def attribute(model: SyncModel, clip: LabeledClip, distractors: list[LabeledClip],
              trials: int = 1000, rng: np.random.Generator | None = None,
              p_keep: float = 0.5, tolerance_classes: int = 1,
              batch_size: int = 50) -> AttributionReport:
    """Per-chunk importance scores for both modalities of one labeled clip.

    The clip must carry its true offset class; distractors must share the
    clip's window geometry. Deterministic given (rng state, trials,
    distractor list).
    """
    if not distractors:
        raise ContractError("attribution needs at least one distractor clip")
    if any(d.clip_id == clip.clip_id for d in distractors):
        raise ContractError("the clip itself cannot serve as its distractor")
    rng = rng or np.random.default_rng(0)

    audio, visual = model.clip_features([clip])
    a_rows = audio.data.reshape(-1, audio.shape[-1])          # (S*t_a, d)
    v_rows = visual.data.reshape(-1, visual.shape[-1])        # (S*t_v, d)
    layout = FeatureLayout.of_model(model, t_a=audio.shape[2], t_v=visual.shape[2])

    bank_a, bank_v = [], []
    for d in distractors:
        da, dv = model.clip_features([d])
        bank_a.append(da.data.reshape(-1, da.shape[-1]))
        bank_v.append(dv.data.reshape(-1, dv.shape[-1]))
    bank_a = np.stack(bank_a)
    bank_v = np.stack(bank_v)
    if bank_a.shape[1:] != a_rows.shape or bank_v.shape[1:] != v_rows.shape:
        raise ContractError("distractor feature layout does not match the clip")

    raw: dict[str, list[float]] = {}
    flags: list[str] = []
    n_chunks = layout.n_chunks
    for modality in MODALITIES:
        keep_chunks = rng.random((trials, n_chunks)) < p_keep
        distractor_pick = rng.integers(0, len(distractors), size=trials)
        chunk_ids = layout.chunk_of_rows(modality)
        correct = np.zeros(trials, dtype=bool)
        for lo in range(0, trials, batch_size):
            hi = min(lo + batch_size, trials)
            keep_rows = keep_chunks[lo:hi][:, chunk_ids]      # (b, rows)
            if modality == "audio":
                masked_a = np.where(keep_rows[:, :, None], a_rows[None], bank_a[distractor_pick[lo:hi]])
                masked_v = np.broadcast_to(v_rows[None], (hi - lo,) + v_rows.shape)
            else:
                masked_a = np.broadcast_to(a_rows[None], (hi - lo,) + a_rows.shape)
                masked_v = np.where(keep_rows[:, :, None], v_rows[None], bank_v[distractor_pick[lo:hi]])
            batch_a = masked_a.reshape(hi - lo, layout.segments, layout.t_a, -1)
            batch_v = masked_v.reshape(hi - lo, layout.segments, layout.t_v, -1)
            with nn.no_grad():
                seq = model.sync.build_sequence(np.ascontiguousarray(batch_a),
                                                np.ascontiguousarray(batch_v))
                preds = model.sync.offset_logits(seq).data.argmax(axis=1)
            correct[lo:hi] = np.abs(preds - clip.offset_class) <= tolerance_classes
        scores = (keep_chunks & correct[:, None]).sum(axis=0) / trials
        raw[modality] = scores
        if not correct.any():
            flags.append(f"no_evidence_{modality}")

    scaled = {}
    for modality in MODALITIES:
        s, degenerate = _minmax_scale(np.asarray(raw[modality]))
        scaled[modality] = [float(x) for x in s]
        if degenerate:
            flags.append(f"uniform_{modality}")

    return AttributionReport(
        clip_id=clip.clip_id, true_class=int(clip.offset_class), trials=trials,
        p_keep=p_keep, tolerance_classes=tolerance_classes, chunk_sec=layout.chunk_sec,
        raw={m: [float(x) for x in raw[m]] for m in MODALITIES}, scaled=scaled,
        flags=flags, distractor_ids=[d.clip_id for d in distractors])
