"""Training loop: four-term loss, 5:1 adversarial schedule, depth coin.

One generator step minimizes

    L = lambda_c * L_C + lambda_s * L_S + lambda_r * L_R + lambda_a * L_A

where L_C supervises the cast shadow for the new light, L_S the refined old
shadow, L_R the relit image and L_A is the LSGAN generator term.  Every 5th
step also updates the discriminator.  Each step flips an 80/20 coin deciding
whether the new-direction volume is built from ground-truth or corrupted
depth; the old-direction volume and the normals always use corrupted depth.
The refiner consumes a detached cast output, so no gradient reaches the cast
network through it.

Determinism: the RNG for step i is seeded with (seed, i), so an interrupted
and resumed run replays the exact same sample stream.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import nn
from .nn import Tensor, Adam, save_checkpoint, load_checkpoint
from .raster import (ColorImage, DepthMap, ShadowImage, CameraModel,
                     LightDirection, read_pfm, _require)
from .geometry import backproject, normals_from_depth, lambert_guide, \
    direction_map, two_d_features
from .raymarch import RayMarchConfig, march_ratios, direct_shadow
from .scene import CorruptionConfig, corrupt_depth, load_manifest
from .models import (CastShadowNet, RefineNet, RelightNet, PatchDiscriminator,
                     volume_tensor)

METHODS = ("our", "2d", "p2p")


@dataclass
class TrainConfig:
    lambda_c: float = 10.0
    lambda_s: float = 2.0
    lambda_r: float = 10.0
    lambda_a: float = 0.1
    lr: float = 1e-4
    gen_per_disc: int = 5        # generator steps per discriminator step
    batch_size: int = 4
    p_gt: float = 0.8            # chance the new-direction volume uses GT depth
    light_noise_deg: float = 3.0
    steps: int = 2000
    seed: int = 0
    z: int = 32                  # ray-march steps / volume depth
    f: int = 8                   # base feature width
    method: str = "our"          # our | 2d | p2p
    tau: float = 0.01            # direct-baseline threshold used in monitoring
    eval_every: int = 200
    checkpoint_every: int = 500
    test_fraction: float = 0.2
    eval_views: int = 8

    def __post_init__(self):
        _require(min(self.lambda_c, self.lambda_s, self.lambda_r,
                     self.lambda_a) >= 0, "loss weights must be >= 0")
        _require(0.0 <= self.p_gt <= 1.0, "p_gt must lie in [0, 1]")
        _require(self.method in METHODS, f"method must be one of {METHODS}")
        _require(self.batch_size >= 1 and self.steps >= 1 and self.z >= 8,
                 "batch_size/steps/z out of range")

    def to_json(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        _require(not unknown, f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# Dataset access


class TrainingData:
    """Lazy view over a scenegen output directory with split bookkeeping."""

    def __init__(self, data_dir, test_fraction=0.2):
        self.root = Path(data_dir)
        self.manifest = load_manifest(data_dir)
        self.samples = self.manifest["samples"]
        _require(all(len(s["lights"]) >= 2 for s in self.samples),
                 "training needs at least 2 lighting conditions per viewpoint")
        scenes = sorted({s["scene"] for s in self.samples})
        n_test = max(1, math.ceil(test_fraction * len(scenes))) \
            if len(scenes) > 1 else 0
        test_scenes = set(scenes[len(scenes) - n_test:])
        self.train_idx = [i for i, s in enumerate(self.samples)
                          if s["scene"] not in test_scenes]
        self.test_idx = [i for i, s in enumerate(self.samples)
                         if s["scene"] in test_scenes]
        _require(self.train_idx, "dataset has no training scenes")
        self._cache = {}

    def _load(self, key, loader):
        if key not in self._cache:
            self._cache[key] = loader()
        return self._cache[key]

    def view(self, idx):
        """Loaded viewpoint: depth (GT + corrupted), camera, per-light images."""
        s = self.samples[idx]

        def build():
            depth = DepthMap(read_pfm(self.root / s["depth"]).astype(np.float64))
            corrupted = corrupt_depth(
                depth, [self.manifest["seed"], s["scene"], s["viewpoint"]])
            cam = CameraModel.from_json(s["camera"])
            lights = []
            for li in s["lights"]:
                lights.append({
                    "dir": LightDirection(li["dir_cam"]),
                    "color": ColorImage(read_pfm(self.root / li["color"])
                                        .astype(np.float64)),
                    "shadow": ShadowImage(np.clip(
                        read_pfm(self.root / li["shadow"]).astype(np.float64),
                        0.0, 1.0)),
                })
            return {"depth": depth, "corrupted": corrupted, "cam": cam,
                    "lights": lights}
        return self._load(idx, build)


# ---------------------------------------------------------------------------
# Sampling, augmentation, light noise


def augment_colors(imgs, rng):
    """Shared random exposure / saturation / gamma for a list of images."""
    e = rng.uniform(0.8, 1.25)
    sat = rng.uniform(0.7, 1.3)
    gam = rng.uniform(0.8, 1.25)
    out = []
    for im in imgs:
        x = im.data * e
        lum = x.mean(axis=-1, keepdims=True)
        x = np.clip(lum + (x - lum) * sat, 0.0, None)
        out.append(ColorImage(x ** gam))
    return out


def perturb_light(light, sigma_deg, rng):
    """Rotate the direction by a Gaussian angle around a random normal axis."""
    if sigma_deg == 0.0:
        return light
    angle = math.radians(rng.normal(0.0, sigma_deg))
    v = rng.standard_normal(3)
    v = v - np.dot(v, light.vec) * light.vec
    n = np.linalg.norm(v)
    if n < 1e-12:
        return light
    axis = v / n
    rotated = math.cos(angle) * light.vec + math.sin(angle) * \
        np.cross(axis, light.vec)
    return LightDirection.from_vector(rotated)


def sample_pair(data, rng, cfg, pool=None):
    """One training example: a viewpoint and an ordered pair of lights."""
    pool = data.train_idx if pool is None else pool
    idx = pool[int(rng.integers(len(pool)))]
    view = data.view(idx)
    k = len(view["lights"])
    i_old, i_new = rng.choice(k, size=2, replace=False)
    old, new = view["lights"][int(i_old)], view["lights"][int(i_new)]
    c_old, c_new = augment_colors([old["color"], new["color"]], rng)
    return {
        "cam": view["cam"],
        "depth_gt": view["depth"],
        "depth_est": view["corrupted"],
        "color_old": c_old, "color_new": c_new,
        "shadow_old": old["shadow"], "shadow_new": new["shadow"],
        "l_old": perturb_light(old["dir"], cfg.light_noise_deg, rng),
        "l_new": new["dir"],
    }


# ---------------------------------------------------------------------------
# Model bundle


class ModelBundle:
    """The generator nets plus discriminator for one training method."""

    def __init__(self, cfg, dtype=np.float32):
        seq = np.random.SeedSequence([cfg.seed, 7])
        rngs = [np.random.default_rng(c) for c in seq.spawn(4)]
        self.method = cfg.method
        self.cfg = cfg
        self.nets = {}
        if cfg.method == "our":
            self.nets["cast"] = CastShadowNet(z=cfg.z, f=cfg.f, rng=rngs[0],
                                              dtype=dtype)
        elif cfg.method == "2d":
            self.nets["cast2d"] = RefineNet(f=cfg.f, in_ch=8, rng=rngs[0],
                                            dtype=dtype)
        if cfg.method != "p2p":
            self.nets["refine"] = RefineNet(f=cfg.f, rng=rngs[1], dtype=dtype)
        self.nets["relight"] = RelightNet(f=cfg.f, rng=rngs[2], dtype=dtype)
        self.disc = PatchDiscriminator(f=cfg.f, rng=rngs[3], dtype=dtype)

    def generator_params(self):
        out = []
        for name in sorted(self.nets):
            out.extend(self.nets[name].parameters())
        return out

    def named_tensors(self):
        named = {}
        for name in sorted(self.nets):
            for k, p in self.nets[name].named_parameters():
                named[f"{name}.{k}"] = p
        for k, p in self.disc.named_parameters():
            named[f"disc.{k}"] = p
        return named

    def zero_grad(self):
        for p in self.generator_params():
            p.zero_grad()
        for p in self.disc.parameters():
            p.zero_grad()


# ---------------------------------------------------------------------------
# Forward pass and losses


def _const(arr, dtype):
    return Tensor(np.ascontiguousarray(arr, dtype=dtype))


def _chw(img):
    a = img.data if hasattr(img, "data") else np.asarray(img)
    return a[None, None] if a.ndim == 2 else a.transpose(2, 0, 1)[None]


def _light_chans(light, h, w):
    return np.broadcast_to(np.asarray(light.vec)[:, None, None],
                           (3, h, w))[None]


def _predict_shadows(bundle, ex, use_gt_depth, dtype):
    """Tensor shadow predictions (s_new, s_old) for the configured method."""
    cfg = bundle.cfg
    h, w = ex["depth_est"].height, ex["depth_est"].width
    normals = normals_from_depth(backproject(ex["depth_est"], ex["cam"]))
    mcfg = RayMarchConfig(steps=cfg.z)
    if bundle.method == "our":
        depth_new = ex["depth_gt"] if use_gt_depth else ex["depth_est"]
        vol_new = march_ratios(depth_new, ex["color_old"], ex["l_new"],
                               ex["cam"], mcfg)
        vol_old = march_ratios(ex["depth_est"], ex["color_old"], ex["l_old"],
                               ex["cam"], mcfg)
        f_new = two_d_features(ex["color_old"], normals, ex["l_new"])
        f_old = two_d_features(ex["color_old"], normals, ex["l_old"])
        net = bundle.nets["cast"]
        s_new = net(volume_tensor(vol_new, dtype),
                    _const(f_new.transpose(2, 0, 1)[None], dtype))
        s_old = net(volume_tensor(vol_old, dtype),
                    _const(f_old.transpose(2, 0, 1)[None], dtype))
    else:  # 2d ablation: plain CNN on image-space features plus raw depth
        dnorm = ex["depth_est"].data / ex["depth_est"].data.mean()
        net = bundle.nets["cast2d"]

        def run(light):
            cosine = lambert_guide(normals, light).data
            x = np.concatenate([_chw(ex["color_old"]),
                                _light_chans(light, h, w),
                                cosine[None, None], dnorm[None, None]], axis=1)
            return net(_const(x, dtype))
        s_new = run(ex["l_new"])
        s_old = run(ex["l_old"])
    return s_new, s_old, normals


def generator_forward(bundle, ex, use_gt_depth):
    """All loss terms (as Tensors) plus the pieces the GAN needs."""
    cfg = bundle.cfg
    dtype = bundle.nets["relight"].out.weight.data.dtype
    h, w = ex["depth_est"].height, ex["depth_est"].width
    gt_new = _const(_chw(ex["shadow_new"]), dtype)
    gt_old = _const(_chw(ex["shadow_old"]), dtype)
    zero = Tensor(np.zeros((1, 1, h, w), dtype=dtype))

    if bundle.method == "p2p":
        normals = normals_from_depth(backproject(ex["depth_est"], ex["cam"]))
        s_new_t, s_old_t = zero, zero
        l_c = l_s = Tensor(np.zeros((), dtype=dtype))
        s_ref = zero
    else:
        s_new_t, s_old_t, normals = _predict_shadows(bundle, ex, use_gt_depth,
                                                     dtype)
        l_c = nn.mse(s_new_t, gt_new)
        refine_in = nn.concat([
            s_old_t.detach(), _const(_chw(ex["color_old"]), dtype),
            _const(_light_chans(ex["l_old"], h, w), dtype)], axis=1)
        s_ref = bundle.nets["refine"](refine_in)
        l_s = nn.mse(s_ref, gt_old)

    psi = direction_map(ex["cam"], w, h)
    relight_in = nn.concat([
        _const(_chw(ex["color_old"]), dtype),
        s_ref, s_new_t,
        _const(_chw(normals), dtype),
        _const(_chw(psi), dtype),
        _const(_light_chans(ex["l_old"], h, w), dtype),
        _const(_light_chans(ex["l_new"], h, w), dtype)], axis=1)
    relit = bundle.nets["relight"](relight_in)
    real = _const(_chw(ex["color_new"]), dtype)
    l_r = nn.mse(relit, real)
    cond = nn.concat([_const(_chw(ex["color_old"]), dtype),
                      s_new_t.detach()], axis=1)
    return {"l_c": l_c, "l_s": l_s, "l_r": l_r,
            "fake": relit, "real": real, "cond": cond,
            "s_new": s_new_t, "s_old_refined": s_ref}


def train_step(bundle, batch, opt_gen, opt_disc, cfg, rng, step):
    """One generator update (and a discriminator update every 5th call)."""
    use_gt = bool(rng.random() < cfg.p_gt)
    bundle.zero_grad()
    terms = {"l_c": 0.0, "l_s": 0.0, "l_r": 0.0, "l_a": 0.0}
    gen_losses = []
    gan_pairs = []
    for ex in batch:
        out = generator_forward(bundle, ex, use_gt)
        gen_l, disc_l = None, None
        if cfg.lambda_a > 0:
            gen_l, disc_l = _lsgan(bundle.disc, out["real"], out["fake"],
                                   out["cond"])
            gan_pairs.append((gen_l, disc_l))
        total = cfg.lambda_c * out["l_c"] + cfg.lambda_s * out["l_s"] \
            + cfg.lambda_r * out["l_r"]
        if gen_l is not None:
            total = total + cfg.lambda_a * gen_l
        gen_losses.append(total)
        terms["l_c"] += float(out["l_c"].data) / len(batch)
        terms["l_s"] += float(out["l_s"].data) / len(batch)
        terms["l_r"] += float(out["l_r"].data) / len(batch)
        if gen_l is not None:
            terms["l_a"] += float(gen_l.data) / len(batch)

    loss = gen_losses[0]
    for t in gen_losses[1:]:
        loss = loss + t
    loss = loss * (1.0 / len(batch))
    loss.backward()
    # discard any gradient the generator pass pushed into the critic
    for p in bundle.disc.parameters():
        p.zero_grad()
    opt_gen.step()

    disc_stepped = False
    if cfg.lambda_a > 0 and step % cfg.gen_per_disc == 0:
        bundle.zero_grad()
        dl = gan_pairs[0][1]
        for _, d in gan_pairs[1:]:
            dl = dl + d
        dl = dl * (1.0 / len(gan_pairs))
        dl.backward()
        for p in _gen_param_list(bundle):
            p.zero_grad()
        opt_disc.step()
        terms["l_disc"] = float(dl.data)
        disc_stepped = True
    terms["total"] = float(loss.data)
    terms["used_gt_depth"] = use_gt
    terms["disc_stepped"] = disc_stepped
    return terms


def _gen_param_list(bundle):
    return bundle.generator_params()


def _lsgan(disc, real, fake, cond):
    from .models import lsgan_losses
    return lsgan_losses(disc, real, fake, cond)


# ---------------------------------------------------------------------------
# Evaluation helpers (shadow prediction from estimated depth only)


def predict_shadow_image(bundle, view, i_old, i_new):
    """Inference-path new-direction shadow from corrupted depth."""
    ex = {
        "cam": view["cam"], "depth_gt": view["corrupted"],
        "depth_est": view["corrupted"],
        "color_old": view["lights"][i_old]["color"],
        "l_old": view["lights"][i_old]["dir"],
        "l_new": view["lights"][i_new]["dir"],
    }
    dtype = bundle.nets["relight"].out.weight.data.dtype
    s_new, _, _ = _predict_shadows(bundle, ex, use_gt_depth=False, dtype=dtype)
    return ShadowImage(np.clip(s_new.data[0, 0].astype(np.float64), 0.0, 1.0))


def direct_shadow_image(view, i_new, z, tau):
    """Non-learned baseline on the same corrupted depth."""
    light = view["lights"][i_new]["dir"]
    cfg = RayMarchConfig(steps=z, threshold=tau)
    vol = march_ratios(view["corrupted"], view["lights"][i_new]["color"],
                       light, view["cam"], cfg)
    normals = normals_from_depth(backproject(view["corrupted"], view["cam"]))
    return direct_shadow(vol, lambert_guide(normals, light), cfg)


def eval_shadows(bundle, data, cfg):
    """Mean held-out shadow MSE for the model and the direct baseline."""
    idx = data.test_idx[:cfg.eval_views] or data.train_idx[:cfg.eval_views]
    ours, direct = [], []
    for i in idx:
        view = data.view(i)
        gt = view["lights"][1]["shadow"].data
        if bundle.method != "p2p":
            pred = predict_shadow_image(bundle, view, 0, 1)
            ours.append(float(np.mean((pred.data - gt) ** 2)))
        base = direct_shadow_image(view, 1, cfg.z, cfg.tau)
        direct.append(float(np.mean((base.data - gt) ** 2)))
    return {"shadow_mse_model": float(np.mean(ours)) if ours else None,
            "shadow_mse_direct": float(np.mean(direct))}


# ---------------------------------------------------------------------------
# Checkpointing and the loop


def save_training_checkpoint(path, bundle, opt_gen, opt_disc, step, cfg):
    tensors = {k: p.data for k, p in bundle.named_tensors().items()}
    for i, a in enumerate(opt_gen.state_arrays()):
        tensors[f"opt_gen.{i}"] = a
    for i, a in enumerate(opt_disc.state_arrays()):
        tensors[f"opt_disc.{i}"] = a
    meta = {"step": step, "config": cfg.to_json(),
            "opt_t": [opt_gen.t, opt_disc.t]}
    save_checkpoint(path, tensors, meta)


def load_bundle(path, dtype=np.float32):
    """Rebuild a ModelBundle (and config) from a checkpoint."""
    tensors, meta = load_checkpoint(path)
    cfg = TrainConfig.from_json(meta["config"])
    bundle = ModelBundle(cfg, dtype=dtype)
    named = bundle.named_tensors()
    for k, p in named.items():
        _require(k in tensors, f"checkpoint missing tensor {k!r}")
        _require(tuple(tensors[k].shape) == p.data.shape,
                 f"shape mismatch for {k!r}: checkpoint {tensors[k].shape} "
                 f"vs model {p.data.shape}")
        p.data = tensors[k].astype(p.data.dtype)
    return bundle, meta


def restore_optimizers(tensors, meta, bundle, opt_gen, opt_disc):
    n_gen = 2 * len(opt_gen.params)
    opt_gen.load_state([tensors[f"opt_gen.{i}"] for i in range(n_gen)],
                       meta["opt_t"][0])
    n_disc = 2 * len(opt_disc.params)
    opt_disc.load_state([tensors[f"opt_disc.{i}"] for i in range(n_disc)],
                        meta["opt_t"][1])


def train(data_dir, cfg, out_dir, resume=None, log=None):
    """Full training run; returns the path of the final checkpoint."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = TrainingData(data_dir, test_fraction=cfg.test_fraction)
    start_step = 0
    if resume is not None:
        bundle, meta = load_bundle(resume)
        _require(meta["config"] == cfg.to_json(),
                 "resume config differs from checkpoint config: "
                 f"{json.dumps(meta['config'], sort_keys=True)} vs "
                 f"{json.dumps(cfg.to_json(), sort_keys=True)}")
        opt_gen = Adam(bundle.generator_params(), lr=cfg.lr)
        opt_disc = Adam(bundle.disc.parameters(), lr=cfg.lr)
        tensors, _ = load_checkpoint(resume)
        restore_optimizers(tensors, meta, bundle, opt_gen, opt_disc)
        start_step = meta["step"]
    else:
        bundle = ModelBundle(cfg)
        opt_gen = Adam(bundle.generator_params(), lr=cfg.lr)
        opt_disc = Adam(bundle.disc.parameters(), lr=cfg.lr)

    metrics_path = out / "metrics.jsonl"
    mode = "a" if start_step > 0 else "w"
    with open(metrics_path, mode) as mf:
        for step in range(start_step + 1, cfg.steps + 1):
            rng = np.random.default_rng([cfg.seed, step])
            batch = [sample_pair(data, rng, cfg)
                     for _ in range(cfg.batch_size)]
            report = train_step(bundle, batch, opt_gen, opt_disc, cfg, rng,
                                step)
            _require(np.isfinite(report["total"]),
                     f"non-finite loss at step {step}: {report}")
            if step % cfg.eval_every == 0 or step == cfg.steps:
                report.update(eval_shadows(bundle, data, cfg))
            record = {"step": step, **report}
            mf.write(json.dumps(record, sort_keys=True) + "\n")
            mf.flush()
            if log is not None:
                log(record)
            if step % cfg.checkpoint_every == 0 or step == cfg.steps:
                save_training_checkpoint(out / f"ckpt_{step:06d}.bin",
                                         bundle, opt_gen, opt_disc, step, cfg)
    final = out / "model_final.bin"
    save_training_checkpoint(final, bundle, opt_gen, opt_disc, cfg.steps, cfg)
    return final


@click.command()
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--config", "config_file", type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--resume", type=click.Path(exists=True))
@click.option("--deterministic", is_flag=True,
              help="serial data loading (the default; kept for interface parity)")
def main(data_dir, config_file, out_dir, resume, deterministic):
    """Train the relighting pipeline on a scenegen dataset."""
    if config_file:
        with open(config_file) as f:
            cfg = TrainConfig.from_json(json.load(f))
    else:
        cfg = TrainConfig()
    final = train(data_dir, cfg, out_dir, resume=resume,
                  log=lambda r: click.echo(json.dumps(r, sort_keys=True)))
    click.echo(f"final checkpoint: {final}")


if __name__ == "__main__":
    main()
