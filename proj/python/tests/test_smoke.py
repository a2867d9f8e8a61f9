import numpy as np
import pytest

import menet


def test_subpixel_roundtrip():
    rng = np.random.default_rng(0)
    for r in (1, 2, 3):
        x = rng.standard_normal((2, 3, 6 * r, 3 * r))
        y = menet.desubpixel(x, r)
        assert y.shape == (2, 3 * r * r, 6, 3)
        assert np.array_equal(menet.subpixel(y, r), x)


def test_conv2d_hand_example():
    y = menet.conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)))
    assert y[0, 0, 1, 1] == 9.0
    assert y[0, 0, 0, 0] == 4.0


def test_losses():
    ones, zeros = np.ones((3, 4, 4)), np.zeros((3, 4, 4))
    assert menet.pixel_loss(ones, zeros) == 1.0
    assert menet.pixel_loss(ones, np.full((3, 4, 4), 0.75)) == 0.0625
    x = np.random.default_rng(1).random((3, 8, 8))
    assert menet.pixel_loss(x, x) == 0.0
    assert menet.edge_aware_loss(x, x) == 0.0
    assert menet.texture_matching_loss(x, x) == 0.0
    with pytest.raises(menet.ShapeError):
        menet.pixel_loss(ones, np.ones((3, 4, 5)))


def test_weights():
    assert menet.lb_weights([3.0, 1.0, 0.0]) == pytest.approx([0.25, 0.75, 1.0], abs=1e-12)
    w = menet.gb_weights([3.0, 1.0, 0.0], [True, True, False])
    assert w == pytest.approx([0.25, 0.75, 0.0], abs=1e-12)
    assert sum(menet.lb_weights([0.3, 0.1, 0.7])) == 2.0
    with pytest.raises(menet.NumericError):
        menet.lb_weights([1.0, -1.0, 0.0])


def test_metrics():
    a = np.zeros((3, 16, 16))
    assert menet.psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)
    assert menet.ssim(a, np.ones_like(a)) == pytest.approx(1e-4 / (1 + 1e-4), abs=1e-7)


def test_rain_synthesis_and_image_io(tmp_path):
    clean = menet.procedural_image("blobs", 32, 32, seed=3).astype(np.float32)
    rainy = menet.synthesize_rain(clean, "heavy", seed=5)
    assert rainy.shape == clean.shape
    assert np.all(rainy >= clean) and np.all(rainy <= 1.0)
    assert np.array_equal(menet.synthesize_rain(clean, "light", intensity=0.0), clean)
    menet.write_image(str(tmp_path / "x.png"), rainy)
    back = menet.read_image(str(tmp_path / "x.png"))
    assert np.max(np.abs(back - rainy)) <= 1 / 510 + 1e-7
    with pytest.raises(menet.DataError):
        menet.read_image(str(tmp_path / "missing.png"))


def test_parameter_count():
    assert menet.parameter_count() == 793363
    assert menet.parameter_count(menet.ModelConfig(use_channel_attention=False)) < 793363
    with pytest.raises(menet.ConfigError):
        menet.ModelConfig(trunk_channels=64, ca_reduction=5)


def test_train_and_derain(tmp_path):
    pairs = []
    for i in range(2):
        clean = menet.procedural_image("gradient", 16, 16, seed=i).astype(np.float32)
        pairs.append((menet.synthesize_rain(clean, "heavy", seed=10 + i), clean))
    model = menet.ModelConfig(base_channels=4, trunk_channels=8, num_residual_blocks=1,
                              ca_reduction=2, seed=1)
    ckpt = str(tmp_path / "m.ckpt")
    log = menet.train(pairs, ckpt, model=model, max_steps=4, batch_size=2, crop=0,
                      edge_loss=True, texture_loss=True, weighting="lb", seed=3)
    assert [row["step"] for row in log] == [0, 1, 2, 3]
    assert all(row["w_p"] + row["w_e"] + row["w_t"] == 2.0 for row in log)
    info = menet.load_checkpoint_info(ckpt)
    assert info["step"] == 4 and info["has_optimizer_state"]
    restored, residual = menet.derain(ckpt, np.random.default_rng(0).random((3, 13, 18)))
    assert restored.shape == (3, 13, 18) and residual.shape == (3, 13, 18)
    with pytest.raises(menet.CheckpointError):
        menet.derain(str(tmp_path / "nope.ckpt"), restored)


def test_gradcheck_suite_without_model():
    entries = menet.gradcheck_suite(include_model=False, trials=5)
    assert entries and all(e["passed"] for e in entries)


def test_cli(tmp_path):
    code, out, _ = menet.run_cli(["synth", "--out", str(tmp_path / "d"), "--count", "2",
                                  "--size", "16"])
    assert code == 0 and "2 pairs" in out
    assert menet.run_cli(["no-such-command"])[0] == 1
