import json
import math

import numpy as np
import pytest

import uegformer as ueg

SMALL = {
    "embed_dim": 8,
    "num_blocks": 1,
    "geb_widths": [8, 8],
    "geb_hidden": 8,
    "geb_pool": 8,
    "eaf_width": 4,
}


def test_image_round_trip(tmp_path):
    img = ueg.procedural_image(12, 10, 3)
    assert img.shape == (12, 10, 3)
    ueg.save_image(img, str(tmp_path / "a.png"))
    back = ueg.load_image(str(tmp_path / "a.png"))
    assert np.array_equal(back, np.round(img * 255) / 255)


def test_luminance_and_otsu():
    img = np.zeros((4, 4, 3))
    img[:, 2:] = 1.0
    lum = ueg.rgb_to_luminance(img)
    assert lum.shape == (4, 4)
    assert np.allclose(lum[:, 2:], 1.0)
    t = ueg.otsu_threshold(lum)
    assert 0 < t <= 1
    labels = ueg.exposure_labels(lum, 0.3, 0.7, {"downsample": 1, "blur_sigma": 0.0, "mode": "mixed"})
    assert set(np.unique(labels)) == {1.0, 2.0}


def test_metrics():
    y = np.full((16, 16, 3), 0.5)
    assert ueg.psnr(y, y) == math.inf
    assert ueg.psnr(y, y + 0.1) == pytest.approx(20.0, abs=1e-9)
    assert ueg.ssim(y, y) == pytest.approx(1.0)
    assert ueg.ssim_map(y, y).shape == (16, 16)


def test_model_forward_and_checkpoint(tmp_path):
    default = ueg.Model()
    assert 80_000 <= default.parameter_count() <= 125_000
    assert set(default.parameter_breakdown()) == {"gamg", "leb", "geb", "eaf"}

    m = ueg.Model(SMALL)
    img = ueg.procedural_image(9, 13, 1)
    out = m.enhance(img)
    assert out["image"].shape == img.shape
    assert out["attention"].shape == (9, 13, 2)
    assert 0.0 <= out["image"].min() and out["image"].max() <= 1.0
    m.save(tmp_path / "m.ckpt")
    again = ueg.Model.load(tmp_path / "m.ckpt")
    assert again.config["embed_dim"] == 8
    assert np.array_equal(again.enhance(img)["image"], out["image"])


def test_config_errors_surface():
    with pytest.raises(ueg.ConfigError):
        ueg.Model({"embed_dimension": 8})
    with pytest.raises(ueg.ConfigError):
        ueg.synth_degrade(np.zeros((4, 4, 3)), {"mode": "sideways"})
    with pytest.raises(ueg.IoError):
        ueg.load_image("/nonexistent/file.png")


def test_synth_and_schedule():
    img = ueg.procedural_image(16, 16, 2)
    a = ueg.synth_degrade(img, {"mode": "grad", "seed": 4})
    b = ueg.synth_degrade(img, {"mode": "grad", "seed": 4})
    assert np.array_equal(a, b)
    assert ueg.lr_at(0, 10, {"epochs_pretrain": 50}) == 0.0
    assert ueg.lr_at(150, 10, {"epochs_pretrain": 50}) == pytest.approx(1e-4)
    assert ueg.lr_at(499, 10, {"epochs_pretrain": 50}) == pytest.approx(1e-5)


def test_run_smoke(tmp_path):
    root = tmp_path / "data"
    for side in ("low", "high"):
        (root / side).mkdir(parents=True)
    for i in range(2):
        clean = ueg.procedural_image(16, 16, 10 + i)
        ueg.save_image(clean, str(root / "high" / f"p{i}.png"))
        ueg.save_image(ueg.synth_degrade(clean, {"seed": i}), str(root / "low" / f"p{i}.png"))
    cfg = {
        "model": SMALL,
        "train": {"epochs_pretrain": 1, "epochs_finetune": 1, "warmup_epochs": 0, "batch_size": 2,
                  "lr_base": 1e-3, "eta_min": 1e-4},
        "data": {"low_dir": str(root / "low"), "high_dir": str(root / "high")},
    }
    dry = ueg.run(cfg, tmp_path / "dry", dry_run=True)
    assert dry["dry_run"] and not (tmp_path / "dry").exists()
    res = ueg.run(cfg, tmp_path / "run")
    report = json.loads(open(res["eval_report"]).read())
    assert report["schema"] == 1
    assert report["aggregate"]["evaluated"] == 2
