import json

import numpy as np
import pytest

import tracewarp as tw


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    checksum = tw.synth({"image_size": 32, "n_pairs": 6, "seed": 3}, str(out))
    return out, checksum


def test_generate_pairs_shapes_and_range():
    pairs = tw.generate_pairs({"image_size": 32, "n_pairs": 3, "seed": 1})
    assert [p["id"] for p in pairs] == sorted(p["id"] for p in pairs)
    for p in pairs:
        assert p["source"].shape == (32, 32)
        assert p["reference"].shape == (32, 32)
        assert p["displacement"].shape == (2, 32, 32)
        assert p["source"].min() >= -1.0 and p["source"].max() <= 1.0


def test_generate_pairs_is_deterministic():
    a = tw.generate_pairs({"image_size": 32, "n_pairs": 2, "seed": 9})
    b = tw.generate_pairs({"image_size": 32, "n_pairs": 2, "seed": 9})
    for p, q in zip(a, b):
        np.testing.assert_array_equal(p["source"], q["source"])
        np.testing.assert_array_equal(p["displacement"], q["displacement"])


def test_bad_config_raises():
    with pytest.raises(ValueError):
        tw.generate_pairs({"image_size": 48})
    with pytest.raises(ValueError):
        tw.generate_pairs({"no_such_key": 1})


def test_synth_checksum_reproducible(dataset, tmp_path):
    _, checksum = dataset
    assert tw.synth({"image_size": 32, "n_pairs": 6, "seed": 3}, str(tmp_path)) == checksum
    assert len(tw.load_dataset(str(tmp_path))) == 6


def test_metrics_on_identical_images():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 255, size=(24, 24))
    assert tw.ssim(img, img) == 1.0
    assert tw.mae(img, img) == 0.0
    assert tw.psnr(img, img) == float("inf")
    assert tw.nmi(img, img) == pytest.approx(2.0)
    assert tw.edge_dice(img, img) == 1.0
    assert tw.mae(img, img + 10.0) == pytest.approx(10.0)


def test_zero_field_is_identity():
    img = np.linspace(-1, 1, 32 * 32, dtype=np.float32).reshape(32, 32)
    zero = np.zeros((2, 32, 32), dtype=np.float32)
    np.testing.assert_array_equal(tw.integrate_velocity(zero), zero)
    np.testing.assert_array_equal(tw.warp(img, zero), img)
    np.testing.assert_allclose(tw.jacobian_determinant(zero), 1.0)
    assert tw.fold_fraction(zero) == 0.0


def test_constant_velocity_integrates_to_translation():
    v = np.zeros((2, 32, 32), dtype=np.float32)
    v[0] = 1.5
    v[1] = -0.5
    u = tw.integrate_velocity(v)
    interior = u[:, 8:-8, 8:-8]
    np.testing.assert_allclose(interior[0], 1.5, atol=1e-5)
    np.testing.assert_allclose(interior[1], -0.5, atol=1e-5)


def test_train_infer_evaluate(dataset, tmp_path):
    data, _ = dataset
    cfg = {"image_size": 32, "epochs": 2, "batch_size": 2, "seed": 5}
    log = tw.train(cfg, str(data), str(tmp_path))
    assert len(log.strip().splitlines()) == 3

    model = tw.Model(str(tmp_path / "final.ttck"))
    assert model.epoch == 2
    assert model.config["image_size"] == 32
    src = tw.load_dataset(str(data))[0]["source"]
    out = model.infer(src)
    assert out["y_trans"].shape == (32, 32)
    assert out["displacement"].shape == (2, 32, 32)
    assert np.isfinite(out["y_warp"]).all()

    csv = tw.evaluate(str(tmp_path / "final.ttck"), str(data), "standard")
    assert csv.splitlines()[0] == "id,ssim,mae,psnr,nmi"


def test_missing_checkpoint_raises(tmp_path):
    with pytest.raises(OSError):
        tw.Model(str(tmp_path / "absent.ttck"))


def test_config_survives_json_round_trip(tmp_path, dataset):
    data, _ = dataset
    cfg = {"image_size": 32, "epochs": 1, "batch_size": 2, "alpha": 0.25}
    tw.train(cfg, str(data), str(tmp_path))
    resolved = tw.Model(str(tmp_path / "final.ttck")).config
    assert resolved["alpha"] == 0.25
    json.dumps(resolved)
