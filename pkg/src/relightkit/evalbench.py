"""Metrics and the four-way ablation harness.

Methods compared on held-out scenes, all consuming corrupted depth only:
  * p2p    - relighting net trained without shadow inputs (Pix2Pix-like)
  * 2d     - learned 2D shadow CNN feeding the full pipeline
  * direct - non-learned thresholded ray marching feeding the pipeline
             (refine/relight weights borrowed from the "our" checkpoint)
  * our    - full learned 3D-2D shadow pipeline

The direct method's threshold is tuned by IoU grid search on a validation
slice of the training scenes and frozen before touching the test set.
Relighting error is reported as MSE and DSSIM in linear space; LPIPS-style
perceptual metrics are deliberately omitted (they would need a pretrained
net) and the report says so.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import click
import numpy as np

from .raster import ColorImage, ShadowImage, _require
from .geometry import backproject, normals_from_depth, direction_map
from .training import (TrainingData, load_bundle, predict_shadow_image,
                       direct_shadow_image, generator_forward)
from .models import relight, refine_old_shadow

_METHOD_ORDER = ("p2p", "2d", "direct", "our")


def mse(a, b):
    """Mean squared channel difference of two arrays or image objects."""
    a = np.asarray(a.data if hasattr(a, "data") else a, dtype=np.float64)
    b = np.asarray(b.data if hasattr(b, "data") else b, dtype=np.float64)
    _require(a.shape == b.shape, f"mse shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


_SSIM_SIGMA = 1.5
_SSIM_RADIUS = 5          # 11-tap window


def _gauss_filter(a):
    x = np.arange(-_SSIM_RADIUS, _SSIM_RADIUS + 1)
    k = np.exp(-x * x / (2.0 * _SSIM_SIGMA ** 2))
    k /= k.sum()
    pad = _SSIM_RADIUS
    ap = np.pad(a, pad, mode="edge")
    ap = np.apply_along_axis(lambda r: np.convolve(r, k, mode="valid"), 0, ap)
    return np.apply_along_axis(lambda r: np.convolve(r, k, mode="valid"), 1, ap)


def ssim(a, b, data_range=1.0):
    """Standard single-scale SSIM, Gaussian 11x11 window, sigma 1.5.

    Matches the common implementation (population covariance, border crop of
    one window radius before averaging).  Color images average over channels.
    """
    a = np.asarray(a.data if hasattr(a, "data") else a, dtype=np.float64)
    b = np.asarray(b.data if hasattr(b, "data") else b, dtype=np.float64)
    _require(a.shape == b.shape, f"ssim shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        return float(np.mean([ssim(a[..., c], b[..., c], data_range)
                              for c in range(a.shape[2])]))
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a = _gauss_filter(a)
    mu_b = _gauss_filter(b)
    saa = _gauss_filter(a * a) - mu_a * mu_a
    sbb = _gauss_filter(b * b) - mu_b * mu_b
    sab = _gauss_filter(a * b) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / \
        ((mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2))
    r = _SSIM_RADIUS
    return float(s[r:-r, r:-r].mean())


def dssim(a, b, data_range=1.0):
    return (1.0 - ssim(a, b, data_range)) / 2.0


# ---------------------------------------------------------------------------
# Threshold tuning


def shadow_iou(pred, gt, eps=1e-9):
    """IoU of the zero-shadow sets of two shadow images."""
    p = np.asarray(pred.data if hasattr(pred, "data") else pred) <= eps
    g = np.asarray(gt.data if hasattr(gt, "data") else gt) <= eps
    union = (p | g).sum()
    return 1.0 if union == 0 else float((p & g).sum() / union)


def tune_tau(data, view_indices, z, taus):
    """Pick the direct-shadow threshold maximizing mean IoU on `view_indices`."""
    best_tau, best = None, -1.0
    for tau in taus:
        scores = []
        for i in view_indices:
            view = data.view(i)
            for li in range(len(view["lights"])):
                pred = direct_shadow_image(view, li, z, tau)
                scores.append(shadow_iou(pred, view["lights"][li]["shadow"]))
        m = float(np.mean(scores))
        if m > best:
            best_tau, best = float(tau), m
    return best_tau, best


def parse_sweep(spec):
    """'lo:hi:n' -> n thresholds, geometrically spaced."""
    lo, hi, n = spec.split(":")
    lo, hi, n = float(lo), float(hi), int(n)
    _require(0 < lo <= hi and n >= 1, f"bad tau sweep {spec!r}")
    return np.geomspace(lo, hi, n)


# ---------------------------------------------------------------------------
# Ablation harness


def _relight_with(bundle, view, i_old, i_new, s_new, s_old_refined):
    """Run the relighting net with externally supplied shadow images."""
    cam = view["cam"]
    img = view["lights"][i_old]["color"]
    h, w = img.data.shape[:2]
    normals = normals_from_depth(backproject(view["corrupted"], cam))
    psi = direction_map(cam, w, h)
    return relight(bundle.nets["relight"], img, s_old_refined, s_new, normals,
                   psi, view["lights"][i_old]["dir"], view["lights"][i_new]["dir"])


def _refined_old(bundle, view, i_old, s_old_raw):
    return refine_old_shadow(bundle.nets["refine"], s_old_raw,
                             view["lights"][i_old]["color"],
                             view["lights"][i_old]["dir"])


def evaluate_pair(method, bundle, view, i_old, i_new, z, tau):
    """(relight image, predicted new shadow or None) for one light pair."""
    if method == "p2p":
        zero = ShadowImage(np.zeros(view["corrupted"].data.shape))
        ex = {
            "cam": view["cam"], "depth_gt": view["corrupted"],
            "depth_est": view["corrupted"],
            "color_old": view["lights"][i_old]["color"],
            "color_new": view["lights"][i_new]["color"],
            "shadow_old": zero, "shadow_new": zero,
            "l_old": view["lights"][i_old]["dir"],
            "l_new": view["lights"][i_new]["dir"],
        }
        out = generator_forward(bundle, ex, use_gt_depth=False)
        relit = ColorImage(np.maximum(
            out["fake"].data[0].transpose(1, 2, 0).astype(np.float64), 0.0))
        return relit, None
    if method == "direct":
        s_new = direct_shadow_image(view, i_new, z, tau)
        s_old = direct_shadow_image(view, i_old, z, tau)
        s_ref = _refined_old(bundle, view, i_old, s_old)
        return _relight_with(bundle, view, i_old, i_new, s_new, s_ref), s_new
    # learned shadow methods ("our", "2d")
    s_new = predict_shadow_image(bundle, view, i_old, i_new)
    s_old = predict_shadow_image(bundle, view, i_old, i_old)
    s_ref = _refined_old(bundle, view, i_old, s_old)
    return _relight_with(bundle, view, i_old, i_new, s_new, s_ref), s_new


def run_ablation(data_dir, checkpoints, tau_sweep="0.003:0.1:8",
                 pairs_per_view=1, out_dir=None):
    """Full Table-1-shaped comparison; returns the report dict.

    checkpoints: {"our": path, "2d": path, "p2p": path}; missing entries are
    skipped and marked in the report.
    """
    bundles = {}
    for name in ("our", "2d", "p2p"):
        path = checkpoints.get(name)
        if path:
            bundle, meta = load_bundle(path)
            _require(bundle.method == name,
                     f"checkpoint {path} was trained as {bundle.method!r}, "
                     f"expected {name!r}")
            bundles[name] = bundle
    _require(bundles, "no checkpoints given")
    ref = next(iter(bundles.values()))
    z = ref.cfg.z
    data = TrainingData(data_dir, test_fraction=ref.cfg.test_fraction)

    # validation slice = tail of the train split, frozen before test
    n_val = max(1, len(data.train_idx) // 5)
    val_idx = data.train_idx[len(data.train_idx) - n_val:]
    taus = parse_sweep(tau_sweep)
    tau, tau_iou = tune_tau(data, val_idx, z, taus)

    methods = [m for m in _METHOD_ORDER
               if m in bundles or (m == "direct" and "our" in bundles)]
    rows = []
    for m in methods:
        bundle = bundles["our"] if m == "direct" else bundles[m]
        for i in data.test_idx:
            view = data.view(i)
            n_lights = len(view["lights"])
            for p in range(pairs_per_view):
                i_old, i_new = p % n_lights, (p + 1) % n_lights
                relit, s_new = evaluate_pair(m, bundle, view, i_old, i_new,
                                             z, tau)
                gt_color = view["lights"][i_new]["color"]
                gt_shadow = view["lights"][i_new]["shadow"]
                rows.append({
                    "method": m, "view": i, "i_old": i_old, "i_new": i_new,
                    "relight_mse": mse(relit, gt_color),
                    "relight_dssim": dssim(np.clip(relit.data, 0, 1),
                                           np.clip(gt_color.data, 0, 1)),
                    "shadow_mse": mse(s_new, gt_shadow)
                    if s_new is not None else None,
                })

    report = {
        "dataset": str(data_dir),
        "checkpoints": {k: str(v) for k, v in checkpoints.items() if v},
        "skipped": [m for m in ("our", "2d", "p2p") if m not in bundles],
        "tau": tau, "tau_validation_iou": tau_iou,
        "tau_sweep": tau_sweep,
        "notes": "LPIPS-style perceptual metric omitted "
                 "(needs a pretrained network); MSE/DSSIM in linear space.",
        "methods": {},
    }
    for m in methods:
        mrows = [r for r in rows if r["method"] == m]
        entry = {
            "relight_mse": float(np.mean([r["relight_mse"] for r in mrows])),
            "relight_dssim": float(np.mean([r["relight_dssim"] for r in mrows])),
            "n_images": len(mrows),
        }
        shadows = [r["shadow_mse"] for r in mrows if r["shadow_mse"] is not None]
        entry["shadow_mse"] = float(np.mean(shadows)) if shadows else None
        report["methods"][m] = entry

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.json", "w") as f:
            json.dump(report, f, indent=1, sort_keys=True)
        with open(out / "per_image.csv", "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
            w.writeheader()
            w.writerows(rows)
        with open(out / "report.txt", "w") as f:
            f.write(format_report(report))
    return report, rows


def format_report(report):
    lines = [f"ablation on {report['dataset']}  "
             f"(tau={report['tau']:.4g}, val IoU={report['tau_validation_iou']:.3f})",
             f"{'method':8s} {'relight DSSIM':>14s} {'relight MSE':>12s} "
             f"{'shadow MSE':>11s}"]
    for m in _METHOD_ORDER:
        e = report["methods"].get(m)
        if e is None:
            continue
        sh = "---" if e["shadow_mse"] is None else f"{e['shadow_mse']:.4f}"
        lines.append(f"{m:8s} {e['relight_dssim']:14.4f} "
                     f"{e['relight_mse']:12.4f} {sh:>11s}")
    if report["skipped"]:
        lines.append(f"skipped (no checkpoint): {', '.join(report['skipped'])}")
    lines.append(report["notes"])
    return "\n".join(lines) + "\n"


@click.command()
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--ckpt-our", type=click.Path(exists=True))
@click.option("--ckpt-2d", "ckpt_2d", type=click.Path(exists=True))
@click.option("--ckpt-p2p", "ckpt_p2p", type=click.Path(exists=True))
@click.option("--tau-sweep", default="0.003:0.1:8", help="lo:hi:n geometric grid")
@click.option("--out", "out_dir", type=click.Path())
def main(data_dir, ckpt_our, ckpt_2d, ckpt_p2p, tau_sweep, out_dir):
    """Run the four-way ablation benchmark and print the report table."""
    report, _ = run_ablation(
        data_dir, {"our": ckpt_our, "2d": ckpt_2d, "p2p": ckpt_p2p},
        tau_sweep=tau_sweep, out_dir=out_dir)
    click.echo(format_report(report), nl=False)


if __name__ == "__main__":
    main()
