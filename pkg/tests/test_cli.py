import json
from pathlib import Path

import numpy as np
import pytest

from objsplat.cli import main
from objsplat.fileio import load_checkpoint, load_scene_config


@pytest.fixture(scope="module")
def tracking_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixture") / "tracking"
    assert main(["gen-synthetic", "tracking", "--out", str(out), "--seed", "5"]) == 0
    return out


@pytest.fixture(scope="module")
def initialized(tracking_dir):
    masks = tracking_dir / "masks"
    assert main(["consolidate", "--raw", str(tracking_dir / "masks_raw"),
                 "--out", str(masks), "--config", str(tracking_dir / "scene_config.json")]) == 0
    ckpt = tracking_dir / "out" / "init.ckpt"
    assert main(["init", "--config", str(tracking_dir / "scene_config.json"),
                 "--masks", str(masks), "--out", str(ckpt)]) == 0
    return ckpt


def test_gen_synthetic_tracking_layout(tracking_dir):
    assert (tracking_dir / "masks_raw" / "index.json").exists()
    assert (tracking_dir / "gt_tracks.json").exists()
    assert (tracking_dir / "points.ply").exists()
    assert (tracking_dir / "cameras.json").exists()


def test_consolidate_and_init_outputs(tracking_dir, initialized):
    assert initialized.exists()
    report = json.loads((initialized.parent / "init_report.json").read_text())
    assert report["merges"], "occlusion fixture should produce a lost-track merge"
    scene, _ = load_checkpoint(initialized)
    assert len(scene.gaussians) > 0


def test_export_and_render_commands(tracking_dir, initialized, tmp_path):
    ply_out = tmp_path / "obj.ply"
    scene, _ = load_checkpoint(initialized)
    some_id = scene.foreground_ids(list(scene.object_sets)[0])[0]
    from objsplat.scene import GranularityLevel
    sid = scene.foreground_ids(GranularityLevel.SMALL)[0]
    assert main(["export", "--checkpoint", str(initialized), "--object-id", str(sid),
                 "--granularity", "S", "--out", str(ply_out)]) == 0
    assert ply_out.exists()
    png_out = tmp_path / "view.png"
    assert main(["render", "--checkpoint", str(initialized), "--camera-index", "0",
                 "--out", str(png_out)]) == 0
    assert png_out.exists()


def test_render_rejects_bad_camera(initialized, tmp_path):
    assert main(["render", "--checkpoint", str(initialized), "--camera-index", "999",
                 "--out", str(tmp_path / "x.png")]) == 1


def test_missing_file_is_clean_error(tmp_path):
    assert main(["export", "--checkpoint", str(tmp_path / "nope.ckpt"),
                 "--object-id", "1", "--out", str(tmp_path / "o.ply")]) == 1


def test_unknown_subcommand_exits_nonzero():
    with pytest.raises(SystemExit):
        main(["frobnicate"])


@pytest.fixture(scope="module")
def nested_mini(tmp_path_factory):
    """A tiny nested run end to end through the CLI (few iterations)."""
    out = tmp_path_factory.mktemp("fixture") / "nested"
    assert main(["gen-synthetic", "nested", "--out", str(out), "--seed", "7",
                 "--iterations", "40"]) == 0
    cfg_path = out / "scene_config.json"
    cfg = json.loads(cfg_path.read_text())
    cfg["train"]["stage_boundaries"] = [10, 20]
    cfg["train"]["densify_from"] = 10 ** 9
    cfg["train"]["psnr_interval"] = 20
    cfg_path.write_text(json.dumps(cfg))
    ckpt = out / "out" / "init.ckpt"
    assert main(["init", "--config", str(cfg_path), "--out", str(ckpt)]) == 0
    trained = out / "out" / "trained.ckpt"
    assert main(["train", "--config", str(cfg_path), "--checkpoint", str(ckpt),
                 "--out", str(trained)]) == 0
    return out, trained


def test_train_writes_metrics_and_checkpoint(nested_mini):
    out, trained = nested_mini
    assert trained.exists()
    metrics = (trained.parent / "metrics.csv").read_text().splitlines()
    assert metrics[0].startswith("iteration,render_loss")
    assert len(metrics) == 41


def test_train_same_seed_byte_identical(nested_mini, tmp_path):
    out, trained = nested_mini
    cfg_path = out / "scene_config.json"
    ckpt = out / "out" / "init.ckpt"
    a = tmp_path / "a.ckpt"
    b = tmp_path / "b.ckpt"
    assert main(["train", "--config", str(cfg_path), "--checkpoint", str(ckpt),
                 "--out", str(a), "--iterations", "25"]) == 0
    assert main(["train", "--config", str(cfg_path), "--checkpoint", str(ckpt),
                 "--out", str(b), "--iterations", "25"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (a.parent / "metrics.csv").read_bytes() == (b.parent / "metrics.csv").read_bytes()


def test_query_command_returns_expected_object(nested_mini, tmp_path, capsys):
    out, trained = nested_mini
    prompts = json.loads((out / "prompts.json").read_text())["prompts"]
    target = next(p for p in prompts if p["granularity"] == "S")
    code = main(["query", "--checkpoint", str(trained),
                 "--embeddings", str(out / "embeddings.bin"),
                 "--prompts", str(out / "prompts.json"),
                 "--prompt-id", target["id"], "--granularity", "S",
                 "--render-out", str(tmp_path / "hl.png")])
    assert code == 0
    payload = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert payload["matches"][0]["object_id"] == target["expected_object"]
    assert (tmp_path / "hl.png").exists()


def test_eval_command_writes_report(nested_mini, tmp_path):
    out, trained = nested_mini
    report = tmp_path / "eval_report.json"
    assert main(["eval", "--checkpoint", str(trained),
                 "--embeddings", str(out / "embeddings.bin"),
                 "--prompts", str(out / "prompts.json"),
                 "--gt-masks", str(out / "gt_masks"), "--out", str(report)]) == 0
    data = json.loads(report.read_text())
    assert data["miou"] is not None
    assert len(data["prompts"]) == 6
