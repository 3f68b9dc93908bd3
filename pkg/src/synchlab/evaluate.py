"""Offset evaluation (multi-round protocol), ROC/AUC, ranked accuracy curves."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MetricError
from .grid import OffsetGrid
from .sync import SyncModel
from .synthgen import apply_offset


@dataclass
class EvalReport:
    """Strict and tolerant top-1 accuracy plus the per-class confusion matrix."""

    top1_strict: float
    top1_tol1: float
    confusion: list[list[int]]      # confusion[true][pred]
    rounds: int
    n_clips: int
    tolerance_classes: int = 1
    draws: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.top1_tol1 + 1e-9 < self.top1_strict:
            raise MetricError("tol1 accuracy cannot be below strict accuracy")

    def to_dict(self) -> dict:
        return {
            "type": "eval_report",
            "top1_strict": self.top1_strict,
            "top1_tol1": self.top1_tol1,
            "confusion": self.confusion,
            "rounds": self.rounds,
            "n_clips": self.n_clips,
            "tolerance_classes": self.tolerance_classes,
            "draws": self.draws,
        }

    def save(self, path: Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def save_confusion_csv(self, path: Path) -> None:
        matrix = np.asarray(self.confusion)
        header = "true\\pred," + ",".join(str(i) for i in range(matrix.shape[1]))
        lines = [header]
        for i, row in enumerate(matrix):
            lines.append(f"{i}," + ",".join(str(int(v)) for v in row))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def accuracy_pair(true_classes, pred_classes, tolerance: int = 1) -> tuple[float, float]:
    """(strict, within-tolerance) top-1 accuracies; no wraparound at the ends."""
    t = np.asarray(true_classes, dtype=np.int64)
    p = np.asarray(pred_classes, dtype=np.int64)
    if t.shape != p.shape or t.size == 0:
        raise MetricError(f"bad prediction set: {t.shape} vs {p.shape}")
    strict = float((t == p).mean())
    tol = float((np.abs(t - p) <= tolerance).mean())
    return strict, tol


def report_from_draws(draws: list[dict], rounds: int, n_clips: int, num_classes: int,
                      tolerance: int = 1) -> EvalReport:
    true_classes = [d["true_class"] for d in draws]
    pred_classes = [d["predicted_class"] for d in draws]
    strict, tol = accuracy_pair(true_classes, pred_classes, tolerance)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(true_classes, pred_classes):
        confusion[t, p] += 1
    return EvalReport(top1_strict=strict, top1_tol1=tol,
                      confusion=confusion.tolist(), rounds=rounds, n_clips=n_clips,
                      tolerance_classes=tolerance, draws=draws)


def evaluate_offsets(model: SyncModel, dataset, rounds: int, seed: int = 0,
                     grid: OffsetGrid | None = None, clip_indices=None,
                     batch_size: int = 16, with_syncability: bool = False,
                     tolerance: int = 1, keep_draws: bool = True) -> EvalReport:
    """R independent (offset, crop start) draws per clip, averaged.

    Every draw derives its own RNG from (seed, clip index, round), so results
    do not depend on batching or evaluation order.
    """
    grid = grid or OffsetGrid()
    indices = list(range(len(dataset))) if clip_indices is None else list(clip_indices)
    pairs = [(idx, r) for idx in indices for r in range(rounds)]
    draws: list[dict] = []
    for lo in range(0, len(pairs), batch_size):
        chunk = pairs[lo:lo + batch_size]
        clips, metas = [], []
        for idx, r in chunk:
            rng = np.random.default_rng(np.random.SeedSequence([seed, idx, r]))
            cls = int(rng.integers(grid.num_classes))
            clip = apply_offset(dataset.load(idx), cls, model.window_sec, rng, grid=grid)
            clips.append(clip)
            metas.append({"clip_index": idx, "round": r, "true_class": cls})
        for meta, pred in zip(metas, model.predict(clips, with_syncability=with_syncability)):
            record = dict(meta)
            record["predicted_class"] = pred.predicted_class
            if with_syncability:
                record["syncability_prob"] = pred.syncability_prob
            draws.append(record)
    report = report_from_draws(draws, rounds, len(indices), grid.num_classes, tolerance)
    if not keep_draws:
        report.draws = []
    return report


# ---------------------------------------------------------------------------
# binary metrics
# ---------------------------------------------------------------------------

def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    ranks[order] = np.arange(1, len(values) + 1)
    # average ranks over ties
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float:
    """Rank-based (Mann-Whitney) AUC with tie averaging."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricError(f"scores/labels shape mismatch: {s.shape} vs {y.shape}")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("roc_auc needs both classes present")
    ranks = _average_ranks(s)
    pos_rank_sum = ranks[y == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_points(scores, labels) -> list[tuple[float, float]]:
    """(FPR, TPR) polyline from (0,0) to (1,1), thresholds descending."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("roc curve needs both classes present")
    order = np.argsort(-s, kind="mergesort")
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[order[j + 1]] == s[order[i]]:
            j += 1
        tp += int((y[order[i:j + 1]] == 1).sum())
        fp += int((y[order[i:j + 1]] == 0).sum())
        points.append((fp / n_neg, tp / n_pos))
        i = j + 1
    return points


def confidence_ranked_accuracy(confidences, correct, coverage_grid=None
                               ) -> list[tuple[float, float]]:
    """Accuracy over the most-confident fraction of draws, per coverage level."""
    c = np.asarray(confidences, dtype=np.float64)
    ok = np.asarray(correct, dtype=np.float64)
    if c.shape != ok.shape or c.size == 0:
        raise MetricError(f"bad curve inputs: {c.shape} vs {ok.shape}")
    if coverage_grid is None:
        coverage_grid = [0.1, 0.25, 0.5, 0.75, 1.0]
    order = np.argsort(-c, kind="mergesort")  # stable: ties keep draw order
    sorted_ok = ok[order]
    curve = []
    for cov in coverage_grid:
        k = max(1, int(round(cov * len(c))))
        curve.append((float(cov), float(sorted_ok[:k].mean())))
    return curve
