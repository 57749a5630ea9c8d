"""End-to-end checks of the command-line driver (path in EVFSAM_CLI)."""

import json
import os
import subprocess
from pathlib import Path

import pytest

CLI = os.environ.get("EVFSAM_CLI", "evfsam")

TINY = {
    "encoder": {"embed_dim": 16, "num_layers": 2, "num_heads": 2, "ffn_dim": 32, "image_size": 16, "patch_size": 4},
    "sam": {"image_size": 16, "encoder_dim": 16, "feat_dim": 16, "decoder_blocks": 1, "decoder_mlp_dim": 16},
    "train": {"total_iterations": 4, "batch_size": 2, "eval_every": 2},
    "data": {"n_train": 6, "n_val": 3, "canvas_size": 16, "min_objects": 2, "max_objects": 3, "overlap_iou_cap": 0.2},
}


def run(*args, check=True):
    proc = subprocess.run([CLI, *map(str, args)], capture_output=True, text=True)
    if check and proc.returncode != 0:
        raise AssertionError(f"exit {proc.returncode}: {proc.stderr}")
    return proc


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    (d / "config.json").write_text(json.dumps(TINY))
    run("train", "--config", d / "config.json", "--out-dir", d / "out")
    return d


def test_gen_data_is_deterministic(tmp_path):
    for name in ("a", "b"):
        run("gen-data", "--seed", 5, "--n", 4, "--size", 32, "--out", tmp_path / name)
    for f in ["index.jsonl", *(p.name for p in (tmp_path / "a" / "images").iterdir())]:
        sub = "" if f == "index.jsonl" else "images"
        assert (tmp_path / "a" / sub / f).read_bytes() == (tmp_path / "b" / sub / f).read_bytes()


def test_gen_data_rejects_zero_samples(tmp_path):
    assert run("gen-data", "--n", 0, "--out", tmp_path, check=False).returncode == 2


def test_unwritable_output_is_a_usage_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("gen-data", "--n", 2, "--out", blocker / "sub", check=False).returncode == 2


def test_unknown_flag_is_a_usage_error():
    assert run("train", "--bogus", check=False).returncode == 2


def test_dump_defaults_round_trips(tmp_path):
    defaults = run("--dump-defaults").stdout
    (tmp_path / "cfg.json").write_text(defaults)
    again = run("--dump-defaults").stdout
    assert json.loads(defaults) == json.loads(again)
    bad = json.loads(defaults)
    bad["train"]["unknown"] = 1
    (tmp_path / "bad.json").write_text(json.dumps(bad))
    assert run("train", "--config", tmp_path / "bad.json", "--out-dir", tmp_path / "o", check=False).returncode == 2


def test_train_outputs(trained):
    out = trained / "out"
    for name in ("config.json", "train_log.jsonl", "checkpoint.evf", "metrics.txt", "metrics.json"):
        assert (out / name).exists(), name
    metrics = json.loads((out / "metrics.json").read_text())
    assert 0.0 <= metrics["giou"] <= 1.0


def test_eval_is_deterministic(trained):
    ckpt = trained / "out" / "checkpoint.evf"
    for name in ("e1", "e2"):
        run("eval", "--checkpoint", ckpt, "--split", "val", "--out", trained / name)
    assert (trained / "e1.json").read_bytes() == (trained / "e2.json").read_bytes()
    assert run("eval", "--checkpoint", ckpt, "--split", "test", check=False).returncode == 2


def test_predict_writes_mask(trained, tmp_path):
    run("gen-data", "--seed", 1, "--n", 1, "--size", 16, "--out", tmp_path / "d")
    record = json.loads((tmp_path / "d" / "index.jsonl").read_text().splitlines()[0])
    image = tmp_path / "d" / record["image"]
    run("predict", "--checkpoint", trained / "out" / "checkpoint.evf", "--image", image, "--text",
        record["expression"], "--out", tmp_path / "pred")
    assert (tmp_path / "pred.pgm").read_bytes().startswith(b"P5\n16 16\n255\n")
    rle = json.loads((tmp_path / "pred.json").read_text())["mask_rle"]
    assert rle["size"] == [16, 16] and sum(rle["counts"]) == 256


def test_gradcheck_single_block(tmp_path):
    proc = run("gradcheck", "--scope", "dice", "--configs", 3, "--json", tmp_path / "g.json")
    assert "dice" in proc.stdout
    assert json.loads((tmp_path / "g.json").read_text())[0]["pass"] is True
    assert run("gradcheck", "--scope", "nope", check=False).returncode == 2
