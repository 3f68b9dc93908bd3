"""Stage dispatch: builds models from config, runs, writes logs and reports.

Every run writes ``run.json`` (config, seed, code version, wall time,
artifact list) into the output directory. Training logs are CSV, flushed
per row, with no timestamps so identical seeds produce identical bytes.
"""

from __future__ import annotations

import json
import os
import subprocess
import time
from pathlib import Path

import numpy as np

from .attribution import attribute
from .checkpoint import load_extractor_into, load_into, save_checkpoint
from .config import RunConfig
from .container import SyntheticDataset, generate_dataset
from .errors import ConfigError
from .evaluate import (confidence_ranked_accuracy, evaluate_offsets, roc_auc, roc_points)
from .grid import OffsetGrid
from .pretrain import PretrainSettings, SegmentEmbeddingModel, Stage1Trainer
from .sync import SyncModel, build_sync_model
from .synctrain import (Stage2Trainer, SyncabilitySettings, SyncabilityTrainer,
                        SyncTrainSettings)
from .synthgen import apply_offset, make_unsynchronizable


def worker_count(requested: int | None = None) -> int:
    """Worker cap: SYNCHLAB_THREADS wins, then the request, then one."""
    env = os.environ.get("SYNCHLAB_THREADS", "")
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError(f"SYNCHLAB_THREADS must be an integer, got {env!r}")
        return max(1, cap if requested is None else min(cap, requested))
    return max(1, requested or 1)


class CsvLogger:
    """Append-only CSV with a fixed header, flushed per row."""

    def __init__(self, path: Path, columns: list[str]):
        self.path = Path(path)
        self.columns = columns
        self._fh = open(self.path, "w", encoding="utf-8", newline="")
        self._fh.write(",".join(columns) + "\n")
        self._fh.flush()

    def __call__(self, row: dict) -> None:
        self._fh.write(",".join(str(row.get(c, "")) for c in self.columns) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).parent)
        return out.stdout.strip() or "unknown"
    except Exception:
        return "unknown"


def build_stage1_model(config: RunConfig) -> SegmentEmbeddingModel:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    return SegmentEmbeddingModel(config.model.audio_cfg(config.mel_frames_per_segment),
                                 config.model.visual_cfg(config.frames_per_segment),
                                 proj_dim=config.model.proj_dim, rng=rng)


def build_stage2_model(config: RunConfig) -> SyncModel:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    return build_sync_model(
        config.model.audio_cfg(config.mel_frames_per_segment),
        config.model.visual_cfg(config.frames_per_segment),
        rng, spec=config.segments.spec(), segments=config.segments.count,
        grid=config.grid.grid(), sync_layers=config.model.sync_layers,
        sync_heads=config.model.sync_heads, mlp_ratio=config.model.mlp_ratio,
        mel_shape=(config.model.mel_channels, config.mel_frames_per_segment),
        frame_shape=(config.frames_per_segment, config.model.frame_size,
                     config.model.frame_size))


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def run_gen_data(config: RunConfig, out_dir: Path) -> list[str]:
    d = config.data
    generate_dataset(Path(d.dataset_dir), config.seed, d.n_clips,
                     duration_sec=d.duration_sec, events_min=d.events_min,
                     events_max=d.events_max, noise_level=d.noise_level,
                     frame_size=config.model.frame_size, grid=config.grid.grid(),
                     threads=worker_count(os.cpu_count()))
    return [d.dataset_dir]


def run_pretrain(config: RunConfig, out_dir: Path) -> list[str]:
    dataset = SyntheticDataset(Path(config.data.dataset_dir))
    model = build_stage1_model(config)
    settings = PretrainSettings(
        steps=config.train.steps, batch_clips=config.train.batch_clips,
        segments=config.train.segments_per_clip, segment_len_sec=config.segments.length_sec,
        lr=config.train.lr, warmup_steps=config.train.warmup_steps,
        log_every=config.train.log_every, probe_every=config.train.probe_every)
    log = CsvLogger(out_dir / "train_log.csv", ["step", "loss", "temperature"])
    try:
        Stage1Trainer(model, dataset, settings, seed=config.seed, log_fn=log).run()
    finally:
        log.close()
    ckpt = out_dir / config.train.out_checkpoint
    save_checkpoint(model, ckpt, meta={"stage": "pretrain", "step": settings.steps,
                                       "config_hash": config.model_hash()})
    return [str(ckpt), str(out_dir / "train_log.csv")]


def run_train_sync(config: RunConfig, out_dir: Path) -> list[str]:
    dataset = SyntheticDataset(Path(config.data.dataset_dir))
    model = build_stage2_model(config)
    if not config.train.from_scratch:
        load_extractor_into(model, Path(config.train.init_checkpoint),
                            expect_config_hash=config.model_hash())
    settings = SyncTrainSettings(
        steps=config.train.steps, batch_clips=config.train.batch_clips,
        lr=config.train.lr, log_every=config.train.log_every,
        freeze_extractors=config.train.freeze_extractors)
    log = CsvLogger(out_dir / "train_log.csv", ["step", "loss"])
    try:
        Stage2Trainer(model, dataset, settings, seed=config.seed,
                      grid=config.grid.grid(), log_fn=log).run()
    finally:
        log.close()
    ckpt = out_dir / config.train.out_checkpoint
    save_checkpoint(model, ckpt, meta={"stage": "train-sync", "step": settings.steps,
                                       "config_hash": config.model_hash()})
    return [str(ckpt), str(out_dir / "train_log.csv")]


def run_finetune(config: RunConfig, out_dir: Path) -> list[str]:
    dataset = SyntheticDataset(Path(config.data.dataset_dir))
    model = build_stage2_model(config)
    load_into(model, Path(config.finetune.checkpoint), expect_config_hash=config.model_hash())
    settings = SyncabilitySettings(
        steps=config.finetune.steps, batch_clips=config.finetune.batch_clips,
        lr=config.finetune.lr, p_unsync=config.finetune.p_unsync,
        scope=config.finetune.scope, log_every=config.finetune.log_every)
    log = CsvLogger(out_dir / "finetune_log.csv", ["step", "loss"])
    try:
        SyncabilityTrainer(model, dataset, settings, seed=config.seed,
                           grid=config.grid.grid(), log_fn=log).run()
    finally:
        log.close()
    ckpt = out_dir / config.finetune.out_checkpoint
    save_checkpoint(model, ckpt, meta={"stage": "finetune-syncability", "step": settings.steps,
                                       "config_hash": config.model_hash()})
    return [str(ckpt), str(out_dir / "finetune_log.csv")]


def syncability_eval_set(model: SyncModel, dataset, n_examples: int, seed: int,
                         grid: OffsetGrid) -> tuple[list, np.ndarray]:
    """Balanced synchronizable/unsynchronizable clips for AUC measurement."""
    clips, labels = [], []
    for i in range(n_examples):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7, i]))
        idx = int(rng.integers(len(dataset)))
        source = dataset.load(idx)
        if i % 2 == 0:
            cls = int(rng.integers(grid.num_classes))
            clips.append(apply_offset(source, cls, model.window_sec, rng, grid=grid))
            labels.append(1)
        else:
            if source.video.duration_sec >= 2 * model.window_sec and rng.random() < 0.5:
                clips.append(make_unsynchronizable(source, None, model.window_sec, rng))
            else:
                other = dataset.load(int((idx + 1 + rng.integers(len(dataset) - 1)) % len(dataset)))
                if other.seed == source.seed:
                    other = dataset.load((idx + 1) % len(dataset))
                clips.append(make_unsynchronizable(source, other, model.window_sec, rng))
            labels.append(0)
    return clips, np.asarray(labels)


def run_eval(config: RunConfig, out_dir: Path) -> list[str]:
    dataset = SyntheticDataset(Path(config.data.eval_dir))
    model = build_stage2_model(config)
    load_into(model, Path(config.eval.checkpoint), expect_config_hash=config.model_hash())
    indices = None
    if config.eval.max_clips:
        indices = list(range(min(config.eval.max_clips, len(dataset))))
    report = evaluate_offsets(model, dataset, rounds=config.eval.rounds, seed=config.seed,
                              grid=config.grid.grid(), clip_indices=indices,
                              batch_size=config.eval.batch_size,
                              with_syncability=config.eval.with_syncability)
    report_path = out_dir / "eval_report.json"
    report.save(report_path)
    report.save_confusion_csv(out_dir / "confusion.csv")
    artifacts = [str(report_path), str(out_dir / "confusion.csv")]

    if config.eval.syncability_examples:
        clips, labels = syncability_eval_set(model, dataset, config.eval.syncability_examples,
                                             config.seed, config.grid.grid())
        scores = []
        for lo in range(0, len(clips), config.eval.batch_size):
            preds = model.predict(clips[lo:lo + config.eval.batch_size], with_syncability=True)
            scores.extend(p.syncability_prob for p in preds)
        scores = np.asarray(scores)
        auc = roc_auc(scores, labels)
        sync_draws = [d for d in report.draws if d.get("syncability_prob") is not None]
        curve = []
        if sync_draws:
            conf = [d["syncability_prob"] for d in sync_draws]
            ok = [abs(d["predicted_class"] - d["true_class"]) <= report.tolerance_classes
                  for d in sync_draws]
            curve = confidence_ranked_accuracy(conf, ok)
        sync_report = {
            "type": "syncability_report",
            "auc": auc,
            "n_examples": len(clips),
            "roc_points": [[float(a), float(b)] for a, b in roc_points(scores, labels)],
            "ranked_accuracy": [[c, a] for c, a in curve],
        }
        sync_path = out_dir / "syncability_report.json"
        with open(sync_path, "w", encoding="utf-8") as fh:
            json.dump(sync_report, fh, indent=1, sort_keys=True)
            fh.write("\n")
        artifacts.append(str(sync_path))

    if config.eval.emit_plots:
        from .plots import emit_plots
        artifacts.extend(emit_plots([Path(p) for p in artifacts if p.endswith(".json")], out_dir))
    return artifacts


def run_attribute(config: RunConfig, out_dir: Path) -> list[str]:
    dataset = SyntheticDataset(Path(config.data.eval_dir))
    model = build_stage2_model(config)
    load_into(model, Path(config.attribution.checkpoint),
              expect_config_hash=config.model_hash())
    a = config.attribution
    grid = config.grid.grid()
    n_clips = min(a.n_clips, len(dataset))
    artifacts = []
    for i in range(n_clips):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 13, i]))
        cls = int(rng.integers(grid.num_classes))
        clip = apply_offset(dataset.load(i), cls, model.window_sec, rng, grid=grid)
        distractor_ids = [int(j) for j in rng.choice(
            [j for j in range(len(dataset)) if j != i],
            size=min(a.n_distractors, len(dataset) - 1), replace=False)]
        distractors = [apply_offset(dataset.load(j), grid.center_class, model.window_sec, rng,
                                    grid=grid) for j in distractor_ids]
        report = attribute(model, clip, distractors, trials=a.trials, rng=rng,
                           p_keep=a.p_keep, tolerance_classes=a.tolerance_classes)
        json_path = out_dir / f"attribution_{clip.clip_id}.json"
        report.save(json_path)
        report.save_csv(out_dir / f"attribution_{clip.clip_id}.csv")
        artifacts.extend([str(json_path), str(out_dir / f"attribution_{clip.clip_id}.csv")])
    if a.emit_plots:
        from .plots import emit_plots
        artifacts.extend(emit_plots([Path(p) for p in artifacts if p.endswith(".json")], out_dir))
    return artifacts


_STAGE_RUNNERS = {
    "gen-data": run_gen_data,
    "pretrain": run_pretrain,
    "train-sync": run_train_sync,
    "finetune-syncability": run_finetune,
    "eval": run_eval,
    "attribute": run_attribute,
}


def run(config: RunConfig, out_dir: Path) -> list[str]:
    """Validate, dispatch, and record provenance. Returns artifact paths."""
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    artifacts = _STAGE_RUNNERS[config.stage](config, out_dir)
    provenance = {
        "stage": config.stage,
        "seed": config.seed,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "code_version": _git_describe(),
        "wall_time_sec": round(time.time() - started, 3),
        "artifacts": artifacts,
    }
    with open(out_dir / "run.json", "w", encoding="utf-8") as fh:
        json.dump(provenance, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return artifacts
