import numpy as np
import pytest

import evfsam


def tiny_config(tmp_iters=4):
    return {
        "encoder": {"embed_dim": 16, "num_layers": 2, "num_heads": 2, "ffn_dim": 32, "image_size": 16,
                    "patch_size": 4},
        "sam": {"image_size": 16, "encoder_dim": 16, "feat_dim": 16, "decoder_blocks": 1,
                "decoder_mlp_dim": 16},
        "train": {"total_iterations": tmp_iters, "batch_size": 2, "eval_every": 2},
        "data": {"n_train": 6, "n_val": 3, "canvas_size": 16, "min_objects": 2, "max_objects": 3,
                 "overlap_iou_cap": 0.2},
    }


def test_rle_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(50):
        h, w = rng.integers(1, 9, size=2)
        mask = (rng.random((h, w)) < 0.4).astype(np.uint8)
        counts = evfsam.rle_encode(mask)
        assert sum(counts) == h * w
        np.testing.assert_array_equal(evfsam.rle_decode(counts, h, w), mask)


def test_rle_starts_with_background_run():
    assert evfsam.rle_encode(np.ones((2, 3), np.uint8)) == [0, 6]


def test_metrics_two_image_fixture():
    gt_a = np.zeros((3, 3), np.uint8)
    gt_a[0, :] = 1
    gt_b = np.zeros((3, 3), np.uint8)
    gt_b[1, 1] = 1
    pred_b = gt_b.copy()
    pred_b[1, 2] = 1
    m = evfsam.compute_metrics([gt_a, pred_b], [gt_a, gt_b])
    assert m["giou"] == pytest.approx(0.75)
    assert m["ciou"] == pytest.approx(0.8)
    assert m["n_samples"] == 2


def test_generation_is_deterministic():
    a = evfsam.generate_dataset(seed=3, n=4, size=32)
    b = evfsam.generate_dataset(seed=3, n=4, size=32)
    for x, y in zip(a, b):
        assert x["expression"] == y["expression"]
        np.testing.assert_array_equal(x["image"], y["image"])
        np.testing.assert_array_equal(x["mask"], y["mask"])
    assert a[0]["image"].shape == (32, 32, 3)
    assert a[0]["mask"].shape == (32, 32)
    assert a[0]["mask"].sum() > 0


def test_config_defaults_and_strictness():
    cfg = evfsam.default_config()
    assert evfsam.normalize_config(cfg) == cfg
    with pytest.raises(evfsam.ConfigError):
        evfsam.normalize_config({"train": {"no_such_key": 1}})


def test_gradcheck_losses():
    errors = evfsam.gradcheck("bce", configs=3)
    assert errors["bce"] < 1e-4
    with pytest.raises(evfsam.ConfigError):
        evfsam.gradcheck("nope", configs=1)


def test_train_predict_and_checkpoint(tmp_path):
    ckpt = tmp_path / "model.evf"
    model, metrics, log = evfsam.train(tiny_config(), checkpoint=ckpt)
    assert 0.0 <= metrics["giou"] <= 1.0
    assert len([r for r in log if "loss" in r]) == 4
    sample = evfsam.generate_dataset(seed=9, n=1, size=16)[0]
    mask = model.predict(sample["image"], sample["expression"])
    assert mask.shape == (16, 16)
    reloaded = evfsam.Model.load(ckpt)
    np.testing.assert_array_equal(reloaded.predict(sample["image"], sample["expression"]), mask)
    assert reloaded.config == model.config
