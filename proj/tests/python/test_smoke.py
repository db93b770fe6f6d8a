import numpy as np
import pytest

import rrwnet


def test_version():
    assert rrwnet.__version__ == "0.1.0"


def test_gt_codec_round_trip():
    rgb = np.zeros((2, 4, 3), np.uint8)
    combos = [(r, g, b) for r in (0, 255) for g in (0, 255) for b in (0, 255)]
    for i, c in enumerate(combos):
        rgb[i // 4, i % 4] = c
    d = rrwnet.decode_gt(rgb)
    assert d["crossing"][0, 3] == 0 and d["crossing"][1, 3] == 1  # white
    assert d["uncertain"][0, 1] == 1  # pure blue
    maps = np.stack([d["artery"], d["vein"], d["vessel"]]).astype(np.float32)
    back = rrwnet.encode_gt(maps)
    # Red or green alone implies a vessel, so B is filled in on re-encode.
    expected = rgb.copy()
    expected[..., 2] = np.where(rgb.max(axis=2) > 0, 255, 0)
    np.testing.assert_array_equal(back, expected)


def test_iteration_weights():
    w = rrwnet.iteration_weights(3)
    assert w == pytest.approx([1, 1 / 6, 2 / 6, 3 / 6])
    with pytest.raises(Exception):
        rrwnet.iteration_weights(-1)


def test_synth_sample_deterministic():
    a = rrwnet.synth_sample(seed=4, index=2)
    b = rrwnet.synth_sample(seed=4, index=2)
    assert a["image"].shape == (3, 64, 64)
    assert a["gt"].shape == (3, 64, 64)
    np.testing.assert_array_equal(a["image"], b["image"])
    assert a["gt"][2].sum() > 0


def test_model_predict_and_refine(tmp_path):
    m = rrwnet.Model("rrwnet", base_channels=4, depth=3, K=2, seed=1)
    s = rrwnet.synth_sample(seed=0)
    image = s["image"][:, :30, :27]  # not a multiple of 4: padded internally
    stages = m.predict_stages(image)
    assert len(stages) == 3
    assert all(st.shape == (3, 30, 27) for st in stages)
    assert np.all((stages[-1] >= 0) & (stages[-1] <= 1))
    np.testing.assert_array_equal(m.predict(image), stages[-1])
    # Vessel channel is passed through unchanged by the refiner.
    np.testing.assert_array_equal(stages[-1][2], stages[0][2])
    np.testing.assert_array_equal(m.refine(stages[0], K=0), stages[0])

    path = tmp_path / "m.ckpt"
    m.save(path)
    m2 = rrwnet.Model.load(path)
    assert (m2.variant, m2.K, m2.depth, m2.base_channels) == ("rrwnet", 2, 3, 4)
    np.testing.assert_array_equal(m2.predict(image), stages[-1])


def test_evaluate_perfect_prediction():
    s = rrwnet.synth_sample(seed=5)
    r = rrwnet.evaluate(s["gt"], s, n_paths=50)
    assert r["auroc_artery"] == pytest.approx(1.0)
    assert r["auroc_vein"] == pytest.approx(1.0)
    assert r["av_all_gt_accuracy"] == pytest.approx(100.0)
    assert (r["cor_artery"], r["inf_artery"]) == (100.0, 0.0)
    assert rrwnet.av_accuracy(s["gt"], s) == pytest.approx(100.0)


def test_curves_and_wilcoxon():
    labels = np.array([0, 0, 1, 1], np.uint8)
    assert rrwnet.roc_auc(np.array([0.1, 0.2, 0.8, 0.9], np.float32), labels) == pytest.approx(1.0)
    assert rrwnet.roc_auc(np.array([0.5, 0.5, 0.5, 0.5], np.float32), labels) == pytest.approx(0.5)
    assert rrwnet.pr_auc(np.array([0.1, 0.2, 0.8, 0.9], np.float32), labels) == pytest.approx(1.0)
    p = rrwnet.wilcoxon_greater([2, 3, 4, 5, 6, 7], [1, 1, 1, 1, 1, 1])
    assert p == pytest.approx(1 / 64)


def test_config_and_errors(tmp_path):
    text = rrwnet.parse_train_config("K = 3\nlearning_rate = 0.001\n")
    assert "K = 3" in text
    with pytest.raises(rrwnet.ConfigError, match="unknown key"):
        rrwnet.parse_train_config("lerning_rate = 1\n")
    with pytest.raises(rrwnet.DataError):
        rrwnet.load_dataset(tmp_path / "missing")
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"nope")
    with pytest.raises(rrwnet.CheckpointError):
        rrwnet.Model.load(bad)


def test_synthetic_dataset_and_training(tmp_path):
    rrwnet.write_synthetic_dataset(tmp_path / "d", train_count=3, test_count=2, seed=5, size=32)
    train = rrwnet.load_dataset(tmp_path / "d", "train")
    test = rrwnet.load_dataset(tmp_path / "d", "test")
    assert len(train) == 3 and len(test) == 2
    model, log = rrwnet.train(
        train[:2], train[2:], "K = 1\nbase_channels = 4\ndepth = 2\nmax_epochs = 2\nlearning_rate = 0.001\n"
    )
    assert [e for e, _, _ in log] == [1, 2]
    assert all(np.isfinite(t) and np.isfinite(v) for _, t, v in log)
    assert model.predict(test[0]["image"]).shape == (3, 32, 32)
