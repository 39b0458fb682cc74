import csv
import json

import numpy as np
import pytest

from relightkit.raster import RasterError
from relightkit.scene import make_dataset
from relightkit.training import TrainConfig, TrainingData, train
from relightkit.evalbench import (mse, ssim, dssim, shadow_iou, tune_tau,
                                  parse_sweep, run_ablation, format_report)


def test_mse_identity_and_hand_value():
    a = np.zeros((4, 4))
    b = np.full((4, 4), 0.5)
    assert mse(a, a) == 0.0
    assert mse(a, b) == pytest.approx(0.25)
    with pytest.raises(RasterError):
        mse(a, np.zeros((3, 3)))


def checkerboard(n=32):
    y, x = np.mgrid[:n, :n]
    return ((x // 4 + y // 4) % 2).astype(np.float64)


def test_ssim_identity_and_inversion():
    a = checkerboard()
    assert ssim(a, a) == pytest.approx(1.0)
    assert dssim(a, a) == pytest.approx(0.0)
    assert dssim(a, 1.0 - a) > 0.5  # anticorrelated structure


def test_ssim_matches_skimage():
    skimage = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(0)
    a = rng.random((40, 37))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    ref = skimage.structural_similarity(
        a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
        data_range=1.0)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-10)


def test_ssim_color_averages_channels():
    rng = np.random.default_rng(1)
    a = rng.random((20, 20, 3))
    b = rng.random((20, 20, 3))
    per = np.mean([ssim(a[..., c], b[..., c]) for c in range(3)])
    assert ssim(a, b) == pytest.approx(per)


def test_shadow_iou_cases():
    a = np.ones((4, 4))
    assert shadow_iou(a, a) == 1.0  # no zero-shadow pixels anywhere
    b = a.copy()
    b[0, 0] = 0.0
    c = a.copy()
    c[3, 3] = 0.0
    assert shadow_iou(b, c) == 0.0
    assert shadow_iou(b, b) == 1.0
    d = b.copy()
    d[3, 3] = 0.0
    assert shadow_iou(b, d) == pytest.approx(0.5)


def test_parse_sweep():
    taus = parse_sweep("0.01:0.1:3")
    assert taus[0] == pytest.approx(0.01)
    assert taus[-1] == pytest.approx(0.1)
    assert len(taus) == 3
    assert taus[1] == pytest.approx(np.sqrt(0.01 * 0.1))
    assert len(parse_sweep("0.05:0.05:1")) == 1
    with pytest.raises(RasterError):
        parse_sweep("0:0.1:3")


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    data = root / "data"
    make_dataset(4, 2, data, seed=2, width=32, height=32)
    cks = {}
    for method in ("our", "2d", "p2p"):
        cfg = TrainConfig(steps=2, z=8, f=4, batch_size=2, method=method,
                          eval_every=100, checkpoint_every=100, eval_views=2)
        cks[method] = train(data, cfg, root / method)
    return data, cks


def test_tune_tau_returns_grid_member(bench):
    data_dir, _ = bench
    data = TrainingData(data_dir)
    taus = parse_sweep("0.01:0.1:4")
    tau, iou = tune_tau(data, data.train_idx[:2], 8, taus)
    assert any(tau == pytest.approx(t) for t in taus)
    assert 0.0 <= iou <= 1.0


def test_run_ablation_report_and_csv(bench, tmp_path):
    data_dir, cks = bench
    report, rows = run_ablation(data_dir, cks, tau_sweep="0.01:0.1:3",
                                out_dir=tmp_path)
    assert set(report["methods"]) == {"p2p", "2d", "direct", "our"}
    assert report["methods"]["p2p"]["shadow_mse"] is None
    for m in ("2d", "direct", "our"):
        assert report["methods"][m]["shadow_mse"] > 0
    # CSV rows aggregate back to the report means
    with open(tmp_path / "per_image.csv") as f:
        got = list(csv.DictReader(f))
    assert len(got) == len(rows)
    for m, entry in report["methods"].items():
        vals = [float(r["relight_mse"]) for r in got if r["method"] == m]
        assert np.mean(vals) == pytest.approx(entry["relight_mse"], abs=1e-9)
        shadows = [float(r["shadow_mse"]) for r in got
                   if r["method"] == m and r["shadow_mse"]]
        if entry["shadow_mse"] is None:
            assert not shadows
        else:
            assert np.mean(shadows) == pytest.approx(entry["shadow_mse"],
                                                     abs=1e-9)
    saved = json.loads((tmp_path / "report.json").read_text())
    assert saved["tau"] == report["tau"]
    text = format_report(report)
    assert "our" in text and "direct" in text
    assert (tmp_path / "report.txt").read_text() == text


def test_run_ablation_deterministic(bench):
    data_dir, cks = bench
    r1, rows1 = run_ablation(data_dir, cks, tau_sweep="0.01:0.1:3")
    r2, rows2 = run_ablation(data_dir, cks, tau_sweep="0.01:0.1:3")
    assert r1 == r2
    assert rows1 == rows2


def test_run_ablation_skips_missing_checkpoints(bench):
    data_dir, cks = bench
    report, _ = run_ablation(data_dir, {"our": cks["our"]},
                             tau_sweep="0.01:0.1:2")
    assert set(report["methods"]) == {"direct", "our"}
    assert sorted(report["skipped"]) == ["2d", "p2p"]


def test_run_ablation_rejects_mismatched_method(bench):
    data_dir, cks = bench
    with pytest.raises(RasterError):
        run_ablation(data_dir, {"our": cks["2d"]}, tau_sweep="0.01:0.1:2")
