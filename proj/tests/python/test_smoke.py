import numpy as np
import pytest

import osdsr

TINY = """
[run]
seed = 5
lr = 1e-3
steps = 3
checkpoint_every = 0
synthetic_pairs = 4
eval_pairs = 2
[dtsm]
conv_channels = 8
resblocks = 1
mlp_hidden = 16
[degrade]
crop_size = 16
[lora]
rank = 2
[model]
provider_dim = 16
provider_resolution = 16
"""


def test_seed_golden_values():
    assert osdsr.derive_sample_seed(0, 0) == 0x8209B480FAED1B10
    assert osdsr.derive_sample_seed(42, 7) == 0x67D6AAD286339380


def test_metrics():
    rng = np.random.default_rng(0)
    a = rng.uniform(0.1, 0.8, size=(3, 24, 24))
    assert osdsr.ssim_y(a, a) == 1.0
    assert osdsr.psnr_y(a, a) == 100.0
    assert osdsr.psnr_y(a + 0.1, a) == pytest.approx(20.0, abs=1e-9)
    y = osdsr.rgb_to_y(a)
    assert y.shape == (1, 1, 24, 24)
    np.testing.assert_allclose(y[0, 0], 0.299 * a[0] + 0.587 * a[1] + 0.114 * a[2], atol=1e-15)


def test_losses_and_selection():
    assert osdsr.total_loss((0.1, 0.2, 0.3, 0.4)) == pytest.approx(1.7, abs=1e-9)
    assert osdsr.pair_normalize(0.3, 0.3) == 0.5
    assert [a[0] for a in osdsr.default_attributes()] == [
        "Quality", "Sharpness", "Edge Clarity", "Resolution", "Noise", "Clarity"]
    hard, soft = osdsr.gumbel_softmax_select([2.0, 1.0, 0.0], noise=False)
    assert hard == 0
    e = np.exp([2.0, 1.0, 0.0])
    np.testing.assert_allclose(soft, e / e.sum(), atol=1e-12)


def test_degrade_shapes_and_errors():
    gt = osdsr.synthesize_gt(32, 32, seed=1)
    assert gt.shape == (3, 32, 32)
    lr = osdsr.degrade(gt, seed=3)
    assert lr.shape == (3, 8, 8)
    np.testing.assert_array_equal(lr, osdsr.degrade(gt, seed=3))
    assert lr.min() >= 0.0 and lr.max() <= 1.0
    with pytest.raises(osdsr.Error):
        osdsr.degrade(gt, downscale=0)
    with pytest.raises(osdsr.Error):
        osdsr.normalize_config("[run]\nnot_a_key = 1\n")


def test_config_round_trip():
    text = osdsr.normalize_config(TINY, ["run.seed=9"])
    assert "seed = 9" in text
    assert osdsr.normalize_config(text) == text
    assert "[paths]" in osdsr.default_config()


def test_train_infer_eval(tmp_path):
    rc, log, err = osdsr.commands.train(TINY, tmp_path / "run")
    assert rc == 0, err
    model = osdsr.Model.load(tmp_path / "run" / "final")
    lr = osdsr.degrade(osdsr.synthesize_gt(16, 16, seed=2), seed=1)
    sr, t_star = model.super_resolve(lr)
    assert sr.shape == (3, 16, 16)
    assert t_star[0] in model.candidates
    sr2, t2 = model.super_resolve(lr)
    np.testing.assert_array_equal(sr, sr2)
    assert t2 == t_star

    (tmp_path / "lr").mkdir()
    osdsr.save_image(lr, tmp_path / "lr" / "x.png")
    gt = osdsr.synthesize_gt(16, 16, seed=2)
    (tmp_path / "gt").mkdir()
    osdsr.save_image(gt, tmp_path / "gt" / "x.png")
    rc, log, err = osdsr.commands.infer(tmp_path / "run" / "final", tmp_path / "lr", tmp_path / "sr")
    assert rc == 0, err
    assert "x.png t*=" in log
    rc, log, err = osdsr.commands.eval(tmp_path / "sr", tmp_path / "gt", tmp_path / "m.csv")
    assert rc == 0, err
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "image_id,psnr_y,ssim_y,perceptual"


def test_command_failure_names_path(tmp_path):
    rc, _, err = osdsr.commands.degrade(tmp_path / "missing", TINY, tmp_path / "out")
    assert rc != 0
    assert "missing" in err
