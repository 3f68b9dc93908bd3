"""Checkpoints, config validation, CLI stages, plot emission."""

import json
from pathlib import Path

import numpy as np
import pytest

from synchlab.checkpoint import (load_checkpoint, load_extractor_into, load_into,
                                 save_checkpoint)
from synchlab.cli import main
from synchlab.config import RunConfig
from synchlab.errors import CheckpointError, ConfigError, ReportError
from synchlab.plots import emit_plots, heat_strip_svg, line_chart_svg
from synchlab.runner import build_stage1_model, build_stage2_model, worker_count


def tiny_config(tmp_path, stage="gen-data", **overrides):
    raw = {
        "stage": stage,
        "seed": 3,
        "model": {"d": 16, "proj_dim": 16, "heads": 2, "audio_layers": 1, "visual_layers": 1,
                  "sync_layers": 1, "sync_heads": 2},
        "segments": {"length_sec": 0.64, "hop_sec": 0.32, "count": 8},
        "data": {"dataset_dir": str(tmp_path / "data"), "eval_dir": str(tmp_path / "data"),
                 "n_clips": 4, "duration_sec": 9.5, "events_min": 2, "events_max": 4},
        "train": {"steps": 2, "batch_clips": 2, "segments_per_clip": 8,
                  "out_checkpoint": "m.ckpt"},
        "eval": {"rounds": 2, "batch_size": 4},
        "finetune": {"steps": 2, "batch_clips": 2},
        "attribution": {"trials": 8, "n_clips": 1, "n_distractors": 2},
    }
    for key, value in overrides.items():
        section, _, name = key.partition(".")
        if name:
            raw[section][name] = value
        else:
            raw[section] = value
    return raw


def write_config(tmp_path, raw, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip_bitwise(tmp_path):
    config = RunConfig.from_dict(tiny_config(tmp_path))
    model = build_stage1_model(config)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, meta={"stage": "pretrain", "step": 7, "config_hash": "x"})
    meta, params = load_checkpoint(path)
    assert meta["step"] == 7
    own = dict(model.named_parameters())
    assert set(params) == set(own)
    for name, value in params.items():
        assert np.array_equal(value, own[name].data), name

    fresh = build_stage1_model(RunConfig.from_dict(tiny_config(tmp_path, seed=99)))
    load_into(fresh, path)
    for name, p in fresh.named_parameters():
        assert np.array_equal(p.data, own[name].data), name


def test_stage1_checkpoint_partially_loads_into_stage2(tmp_path):
    config = RunConfig.from_dict(tiny_config(tmp_path))
    stage1 = build_stage1_model(config)
    path = tmp_path / "s1.ckpt"
    save_checkpoint(stage1, path, meta={"stage": "pretrain"})

    stage2 = build_stage2_model(config)
    sync_before = {n: p.data.copy() for n, p in stage2.sync.named_parameters()}
    load_extractor_into(stage2, path)
    s1 = dict(stage1.named_parameters())
    for name, p in stage2.named_parameters():
        if name.startswith("extractor."):
            assert np.array_equal(p.data, s1[name].data), name
    for name, p in stage2.sync.named_parameters():
        assert np.array_equal(p.data, sync_before[name]), name  # fresh init kept


def test_checkpoint_truncation_and_magic_errors(tmp_path):
    config = RunConfig.from_dict(tiny_config(tmp_path))
    model = build_stage1_model(config)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    blob = path.read_bytes()
    (tmp_path / "trunc.ckpt").write_bytes(blob[:-100])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "trunc.ckpt")
    (tmp_path / "bad.ckpt").write_bytes(b"NOTACKPT" + blob[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "bad.ckpt")
    import struct
    (tmp_path / "v9.ckpt").write_bytes(blob[:8] + struct.pack("<I", 9) + blob[12:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v9.ckpt")


def test_checkpoint_hash_mismatch_warns(tmp_path):
    config = RunConfig.from_dict(tiny_config(tmp_path))
    model = build_stage1_model(config)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, meta={"config_hash": "a" * 64})
    with pytest.warns(UserWarning, match="config hash"):
        load_into(model, path, expect_config_hash="b" * 64)


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

def test_config_defaults_and_hash_stability(tmp_path):
    raw = tiny_config(tmp_path)
    a = RunConfig.from_dict(raw)
    b = RunConfig.from_dict(json.loads(json.dumps(raw)))
    assert a.config_hash() == b.config_hash()
    assert a.segments.window_sec == pytest.approx(0.32 * 7 + 0.64)


def test_config_rejects_unknown_keys(tmp_path):
    raw = tiny_config(tmp_path)
    raw["trian"] = {}
    with pytest.raises(ConfigError, match="trian"):
        RunConfig.from_dict(raw)
    raw = tiny_config(tmp_path)
    raw["train"]["freeze_extractor"] = True  # typo of a real ablation flag
    with pytest.raises(ConfigError, match="freeze_extractor"):
        RunConfig.from_dict(raw)


def test_config_rejects_unknown_stage(tmp_path):
    config = RunConfig.from_dict(tiny_config(tmp_path, stage="train"))
    with pytest.raises(ConfigError, match="stage"):
        config.validate()


def test_config_window_must_cover_offsets(tmp_path):
    raw = tiny_config(tmp_path, stage="eval")
    raw["segments"]["count"] = 4  # 1.6 s window < 2 s max offset
    (tmp_path / "data").mkdir()
    config = RunConfig.from_dict(raw)
    with pytest.raises(ConfigError, match="offsets"):
        config.validate()


def test_train_sync_demands_init_checkpoint(tmp_path):
    (tmp_path / "data").mkdir()
    raw = tiny_config(tmp_path, stage="train-sync")
    config = RunConfig.from_dict(raw)
    with pytest.raises(ConfigError, match="init_checkpoint"):
        config.validate()
    raw["train"]["from_scratch"] = True
    RunConfig.from_dict(raw).validate()  # explicit flag allows it


def test_missing_dataset_dir_fails_validation(tmp_path):
    raw = tiny_config(tmp_path, stage="pretrain")
    config = RunConfig.from_dict(raw)
    with pytest.raises(ConfigError, match="dataset_dir"):
        config.validate()


def test_worker_count_env(monkeypatch):
    monkeypatch.delenv("SYNCHLAB_THREADS", raising=False)
    assert worker_count(4) == 4
    monkeypatch.setenv("SYNCHLAB_THREADS", "2")
    assert worker_count(8) == 2
    assert worker_count(1) == 1
    monkeypatch.setenv("SYNCHLAB_THREADS", "nope")
    with pytest.raises(ConfigError):
        worker_count(2)


# ---------------------------------------------------------------------------
# CLI pipeline (tiny end-to-end)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    raw = tiny_config(tmp)
    assert main(["gen-data", "--config", str(write_config(tmp, raw, "gen.json")),
                 "--out", str(tmp / "out_gen")]) == 0
    return tmp, raw


def test_cli_gen_data_deterministic(cli_workspace, tmp_path):
    tmp, raw = cli_workspace
    raw2 = dict(raw)
    raw2 = json.loads(json.dumps(raw))
    raw2["data"] = dict(raw["data"])
    raw2["data"]["dataset_dir"] = str(tmp_path / "data2")
    assert main(["gen-data", "--config", str(write_config(tmp_path, raw2, "gen2.json")),
                 "--out", str(tmp_path / "out_gen2")]) == 0
    d1, d2 = Path(raw["data"]["dataset_dir"]), Path(raw2["data"]["dataset_dir"])
    names1 = sorted(p.name for p in d1.iterdir())
    assert names1 == sorted(p.name for p in d2.iterdir())
    for name in names1:
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name


def test_cli_full_pipeline(cli_workspace):
    tmp, raw = cli_workspace
    pre = json.loads(json.dumps(raw))
    pre["stage"] = "pretrain"
    assert main(["pretrain", "--config", str(write_config(tmp, pre, "pre.json")),
                 "--out", str(tmp / "out_pre")]) == 0
    assert (tmp / "out_pre" / "m.ckpt").exists()
    log_lines = (tmp / "out_pre" / "train_log.csv").read_text().strip().splitlines()
    assert log_lines[0] == "step,loss,temperature"
    assert len(log_lines) >= 2

    ts = json.loads(json.dumps(raw))
    ts["stage"] = "train-sync"
    ts["train"]["init_checkpoint"] = str(tmp / "out_pre" / "m.ckpt")
    assert main(["train-sync", "--config", str(write_config(tmp, ts, "ts.json")),
                 "--out", str(tmp / "out_sync")]) == 0
    sync_ckpt = tmp / "out_sync" / "m.ckpt"
    assert sync_ckpt.exists()
    run_meta = json.loads((tmp / "out_sync" / "run.json").read_text())
    assert run_meta["stage"] == "train-sync"
    assert "config_hash" in run_meta

    ev = json.loads(json.dumps(raw))
    ev["stage"] = "eval"
    ev["eval"].update({"checkpoint": str(sync_ckpt), "with_syncability": True,
                       "syncability_examples": 6, "emit_plots": True})
    assert main(["eval", "--config", str(write_config(tmp, ev, "ev.json")),
                 "--out", str(tmp / "out_eval")]) == 0
    report = json.loads((tmp / "out_eval" / "eval_report.json").read_text())
    assert report["rounds"] == 2
    assert report["n_clips"] == 4
    assert len(report["draws"]) == 8
    assert (tmp / "out_eval" / "confusion.csv").exists()
    assert (tmp / "out_eval" / "syncability_report_roc.svg").exists()

    ft = json.loads(json.dumps(raw))
    ft["stage"] = "finetune-syncability"
    ft["finetune"]["checkpoint"] = str(sync_ckpt)
    assert main(["finetune-syncability", "--config", str(write_config(tmp, ft, "ft.json")),
                 "--out", str(tmp / "out_ft")]) == 0
    assert (tmp / "out_ft" / "model_syncability.ckpt").exists()

    at = json.loads(json.dumps(raw))
    at["stage"] = "attribute"
    at["attribution"]["checkpoint"] = str(sync_ckpt)
    assert main(["attribute", "--config", str(write_config(tmp, at, "at.json")),
                 "--out", str(tmp / "out_attr")]) == 0
    attr_files = list((tmp / "out_attr").glob("attribution_*.json"))
    assert len(attr_files) == 1


def test_cli_stage_mismatch_is_validation_error(cli_workspace):
    tmp, raw = cli_workspace
    assert main(["pretrain", "--config", str(tmp / "gen.json"),
                 "--out", str(tmp / "out_x")]) == 2


def test_cli_bad_config_returns_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["gen-data", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


def test_cli_missing_checkpoint_returns_2(cli_workspace, tmp_path):
    tmp, raw = cli_workspace
    ev = json.loads(json.dumps(raw))
    ev["stage"] = "eval"
    ev["eval"]["checkpoint"] = str(tmp_path / "absent.ckpt")
    assert main(["eval", "--config", str(write_config(tmp_path, ev, "ev.json")),
                 "--out", str(tmp_path / "o")]) == 2


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------

def test_roc_svg_polyline_matches_fixture(tmp_path):
    from synchlab.evaluate import roc_auc, roc_points
    scores, labels = [0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]
    report = {
        "type": "syncability_report",
        "auc": roc_auc(scores, labels),
        "roc_points": [[a, b] for a, b in roc_points(scores, labels)],
        "ranked_accuracy": [[0.5, 0.9], [1.0, 0.7]],
    }
    path = tmp_path / "syncability_report.json"
    path.write_text(json.dumps(report))
    written = emit_plots([path], tmp_path)
    svg = (tmp_path / "syncability_report_roc.svg").read_text()
    assert "polyline" in svg
    csv = (tmp_path / "syncability_report_roc.csv").read_text().splitlines()
    assert csv[0] == "fpr,tpr"
    assert csv[1:] == ["0.000000,0.000000", "0.000000,0.500000", "0.500000,0.500000",
                       "0.500000,1.000000", "1.000000,1.000000"]
    assert len(written) == 4  # roc svg+csv, ranked svg+csv


def test_emit_plots_empty_curve_is_parse_error(tmp_path):
    path = tmp_path / "syncability_report.json"
    path.write_text(json.dumps({"type": "syncability_report", "auc": 0.5,
                                "roc_points": [], "ranked_accuracy": []}))
    with pytest.raises(ReportError, match="roc_points"):
        emit_plots([path], tmp_path)


def test_emit_plots_unknown_type_errors(tmp_path):
    path = tmp_path / "weird.json"
    path.write_text(json.dumps({"type": "mystery"}))
    with pytest.raises(ReportError, match="mystery"):
        emit_plots([path], tmp_path)


def test_attribution_heat_strip_counts(tmp_path):
    report = {"type": "attribution_report", "clip_id": "c0", "chunk_sec": 0.1,
              "scaled": {"audio": [0.1] * 24, "visual": [0.9] * 24}}
    path = tmp_path / "attribution_c0.json"
    path.write_text(json.dumps(report))
    written = emit_plots([path], tmp_path)
    svg = (tmp_path / "attribution_c0_audio.svg").read_text()
    assert svg.count("<rect") == 24 + 1  # cells plus background
    assert len(written) == 4


def test_chart_helpers_reject_empty():
    with pytest.raises(ReportError):
        line_chart_svg([], "t", "x", "y")
    with pytest.raises(ReportError):
        heat_strip_svg([], "t", 0.1)
