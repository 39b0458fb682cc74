"""Screen-space shadow casting over a scale-invariant depth-ratio volume.

For every pixel we march equally spaced screen samples from the pixel toward
the image border, along the image-plane projection of the 3D ray to the sun.
At each sample the stored quantity is the *depth ratio*: observed depth-map
value divided by the camera-space depth of the marched 3D point.  The ratio is
1 where the ray touches the visible surface, > 1 while the ray is in front of
it and < 1 once the ray passes behind it.

The ratio is computed with the depth scale cancelled algebraically: sampled
depths are divided by the marching pixel's own depth before interpolation, and
the remaining factor depends only on camera geometry.  Multiplying the depth
map by any constant (exactly) therefore reproduces the ratio volume bit for
bit.

Derivation used throughout, for pixel center q_p and in-plane offset D along
the marched axis a (u or v, whichever is better conditioned):

    A_a   = f_a * l_a - (q_pa - c_a) * l_z        (projected direction, un-normalized)
    t     = z_p * D / (A_a - D * l_z)             (ray parameter hitting the sample)
    z_ray = z_p * A_a / (A_a - D * l_z)
    ratio = interp(depth)(q) / z_ray
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .raster import ColorImage, DepthMap, CameraModel, LightDirection, ShadowImage, _require

_DEGENERATE_EPS = 1e-12


class DegenerateProjectionError(ValueError):
    """The light ray through this pixel projects to a point on screen."""


@dataclass(frozen=True)
class RayMarchConfig:
    steps: int = 256
    start_bias: float = 0.5          # fraction of the first step skipped
    threshold: float = 0.1           # ratio-space thickness for direct mode; may be inf
    border_sentinel: float = 10.0    # ratio written for samples leaving the image

    def __post_init__(self):
        _require(self.steps >= 2, "need at least 2 ray-march steps")
        _require(self.threshold > 0, "threshold must be positive (or inf)")
        _require(0.0 <= self.start_bias < 1.0, "start_bias must lie in [0, 1)")

    def to_json(self):
        return {"steps": self.steps, "start_bias": self.start_bias,
                "threshold": None if math.isinf(self.threshold) else self.threshold,
                "border_sentinel": self.border_sentinel}


@dataclass
class EpipolarVolume:
    """H x W x Z x 4 stack of (R, G, B, depth ratio) along light-projected rays."""

    data: np.ndarray            # (H, W, Z, 4) float64
    valid: np.ndarray           # (H, W, Z) bool, in-bounds non-degenerate samples
    config: RayMarchConfig = field(default_factory=RayMarchConfig)

    @property
    def ratios(self):
        return self.data[..., 3]

    @property
    def rgb(self):
        return self.data[..., :3]

    def save(self, path):
        """Raw float blob with a JSON header (dims, channel order, config)."""
        header = {
            "format": "epipolar-volume/1",
            "shape": list(self.data.shape),
            "channels": ["r", "g", "b", "ratio"],
            "dtype": "<f8",
            "config": self.config.to_json(),
        }
        blob = json.dumps(header).encode("utf-8")
        with open(path, "wb") as f:
            f.write(len(blob).to_bytes(8, "little"))
            f.write(blob)
            f.write(np.ascontiguousarray(self.data, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(self.valid, dtype=np.uint8).tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            hlen = int.from_bytes(f.read(8), "little")
            header = json.loads(f.read(hlen).decode("utf-8"))
            _require(header.get("format") == "epipolar-volume/1",
                     f"unknown volume format {header.get('format')!r}")
            shape = tuple(header["shape"])
            n = int(np.prod(shape))
            data = np.frombuffer(f.read(n * 8), dtype="<f8").reshape(shape)
            valid = np.frombuffer(f.read(n // 4), dtype=np.uint8).reshape(shape[:3])
        cfg_d = header["config"]
        cfg = RayMarchConfig(
            steps=cfg_d["steps"], start_bias=cfg_d["start_bias"],
            threshold=math.inf if cfg_d["threshold"] is None else cfg_d["threshold"],
            border_sentinel=cfg_d["border_sentinel"])
        return cls(data=data.copy(), valid=valid.astype(bool), config=cfg)


def _screen_axes(light, cam, qx, qy):
    """Un-normalized projected direction components A_u, A_v at pixel centers."""
    lx, ly, lz = light.vec
    au = cam.fx * lx - (qx - cam.cx) * lz
    av = cam.fy * ly - (qy - cam.cy) * lz
    return au, av


def project_light_dir(light, cam, at_pixel):
    """Unit 2D screen direction of the projected sun ray at one pixel."""
    u, v = at_pixel
    au, av = _screen_axes(light, cam, u + 0.5, v + 0.5)
    norm = math.hypot(au, av)
    scale = max(abs(cam.fx), abs(cam.fy), abs(u + 0.5 - cam.cx), abs(v + 0.5 - cam.cy))
    if norm <= _DEGENERATE_EPS * scale:
        raise DegenerateProjectionError(
            f"light direction projects onto pixel ({u}, {v}) itself")
    return np.array([au / norm, av / norm])


def _bilinear_weights(q, size):
    """Clamp-to-edge bilinear indices/weights for coordinates with centers at i+0.5."""
    g = q - 0.5
    i0 = np.floor(g).astype(np.int64)
    frac = g - i0
    i0c = np.clip(i0, 0, size - 1)
    i1c = np.clip(i0 + 1, 0, size - 1)
    return i0c, i1c, frac


def march_ratios(depth, img, light, cam, cfg=RayMarchConfig()):
    """Build the epipolar RGB + depth-ratio volume for one light direction.

    Step length per pixel is (distance from the pixel to the image border along
    the projected direction) / steps, with the first start_bias fraction of a
    step skipped.  Out-of-image or past-the-horizon samples get the border
    sentinel ratio, zero RGB and an invalid mask entry.
    """
    _require(depth.data.shape == img.data.shape[:2],
             f"depth {depth.data.shape} and image {img.data.shape[:2]} differ")
    h, w = depth.height, depth.width
    z_steps = cfg.steps
    lz = light.vec[2]

    qx = np.arange(w) + 0.5
    qy = np.arange(h) + 0.5
    qx = np.broadcast_to(qx, (h, w)).astype(np.float64)
    qy = np.broadcast_to(qy[:, None], (h, w)).astype(np.float64)
    au, av = _screen_axes(light, cam, qx, qy)

    norm = np.hypot(au, av)
    scale = max(abs(cam.fx), abs(cam.fy), w + abs(cam.cx), h + abs(cam.cy))
    degenerate = norm <= _DEGENERATE_EPS * scale
    norm_safe = np.where(degenerate, 1.0, norm)
    dx = au / norm_safe
    dy = av / norm_safe

    # distance from each pixel center to the image border along (dx, dy)
    big = 4.0 * (w + h)
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(dx > 0, (w - qx) / dx, np.where(dx < 0, -qx / dx, big))
        ty = np.where(dy > 0, (h - qy) / dy, np.where(dy < 0, -qy / dy, big))
    dist = np.minimum(tx, ty)
    dist = np.where(degenerate, 0.0, dist)

    step = dist / z_steps
    offsets = (np.arange(z_steps) + cfg.start_bias)          # (Z,)
    s = step[..., None] * offsets                            # (H, W, Z)
    sx = qx[..., None] + s * dx[..., None]
    sy = qy[..., None] + s * dy[..., None]

    # choose the better-conditioned axis per pixel for the ray parameter
    use_u = np.abs(au) >= np.abs(av)
    a_coef = np.where(use_u, au, av)
    delta = np.where(use_u[..., None], sx - qx[..., None], sy - qy[..., None])

    denom = a_coef[..., None] - delta * lz       # z_ray = z_p * a_coef / denom
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_ray_factor = denom / a_coef[..., None]
    # valid: in front of the camera and before the vanishing point (t > 0)
    valid = (inv_ray_factor > 0) & ~degenerate[..., None] & (dist[..., None] > 0)

    # bilinear sampling of normalized depth and RGB
    ix0, ix1, fx_ = _bilinear_weights(sx, w)
    iy0, iy1, fy_ = _bilinear_weights(sy, h)
    w00 = (1 - fy_) * (1 - fx_)
    w01 = (1 - fy_) * fx_
    w10 = fy_ * (1 - fx_)
    w11 = fy_ * fx_

    center = depth.data[..., None]   # (H, W, 1)
    d = depth.data

    def gather(a2d):
        return (w00 * a2d[iy0, ix0] + w01 * a2d[iy0, ix1]
                + w10 * a2d[iy1, ix0] + w11 * a2d[iy1, ix1])

    # normalized depth: divide each gathered neighbour by the center depth first,
    # so a global depth rescale cancels exactly in floating point
    dn = (w00 * (d[iy0, ix0] / center) + w01 * (d[iy0, ix1] / center)
          + w10 * (d[iy1, ix0] / center) + w11 * (d[iy1, ix1] / center))

    ratio = np.where(valid, dn * inv_ray_factor, cfg.border_sentinel)

    rgb = np.empty((h, w, z_steps, 3))
    for c in range(3):
        rgb[..., c] = np.where(valid, gather(img.data[..., c]), 0.0)

    data = np.concatenate([rgb, ratio[..., None]], axis=-1)
    return EpipolarVolume(data=data, valid=valid, config=cfg)


def occlusion_mask(vol):
    """Boolean per-pixel mask: some valid sample hits the occupied band.

    A sample occludes when the marched ray sits behind the visible surface by
    at most the configured ratio-space thickness: ratio in [1/(1+tau), 1).
    tau = inf means any ratio < 1 occludes (geometry extends indefinitely away
    from the camera).
    """
    tau = vol.config.threshold
    lower = 0.0 if math.isinf(tau) else 1.0 / (1.0 + tau)
    r = vol.ratios
    hit = vol.valid & (r >= lower) & (r < 1.0)
    return hit.any(axis=-1)


def direct_shadow(vol, lambert, cfg=None):
    """Non-learned thresholded caster: (1 - occluded) * clamped cosine."""
    if cfg is not None and cfg.threshold != vol.config.threshold:
        vol = EpipolarVolume(data=vol.data, valid=vol.valid, config=cfg)
    occluded = occlusion_mask(vol)
    lam = lambert.data if isinstance(lambert, ShadowImage) else np.asarray(lambert)
    return ShadowImage(np.where(occluded, 0.0, lam))


def shadow_image_from_visibility(vis, lambert):
    """Elementwise product of a binary visibility mask with the cosine term."""
    vis = np.asarray(vis, dtype=np.float64)
    _require(np.isin(vis, (0.0, 1.0)).all(), "visibility must be binary")
    lam = lambert.data if isinstance(lambert, ShadowImage) else np.asarray(lambert)
    return ShadowImage(vis * lam)
