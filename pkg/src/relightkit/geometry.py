"""Position maps, normals, Lambert guides and the per-pixel view-direction map.

Everything here is a pure per-pixel or per-window map derived from a depth map
and pinhole intrinsics.  Normals are computed so that they are *bit-identical*
under a global rescaling of the depth map: each Sobel window is divided by its
center depth before building positions, which cancels the scale exactly
(including its floating-point representation) and leaves the normal direction
unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import CameraModel, DepthMap, ColorImage, LightDirection, ShadowImage, _require

# Sobel kernels with 1/8 normalization; the scale cancels under normalization
# but keeps gradient magnitudes in depth units.
_SOBEL_U = np.array([[-1.0, 0.0, 1.0],
                     [-2.0, 0.0, 2.0],
                     [-1.0, 0.0, 1.0]]) / 8.0
_SOBEL_V = _SOBEL_U.T

_FALLBACK_NORMAL = np.array([0.0, 0.0, -1.0])


@dataclass(frozen=True)
class PositionMap:
    """Camera-space x,y,z per pixel; z equals the source depth exactly.

    Keeps a reference to the source depth and camera so that downstream
    consumers (normals) can work in scale-cancelled coordinates.
    """

    data: np.ndarray
    depth: DepthMap
    cam: CameraModel

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class NormalMap:
    """Unit camera-space normals, facing the camera (negative z in front)."""

    data: np.ndarray

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class DirectionMap:
    """Unit direction from the camera center through each pixel center."""

    data: np.ndarray


def pixel_center_grids(cam, width, height):
    """Per-pixel ((u+0.5-cx)/fx, (v+0.5-cy)/fy) coefficient grids."""
    u = (np.arange(width) + 0.5 - cam.cx) / cam.fx
    v = (np.arange(height) + 0.5 - cam.cy) / cam.fy
    return np.broadcast_to(u, (height, width)), np.broadcast_to(v[:, None], (height, width))


def backproject(depth, cam):
    """Depth map -> camera-space position map.

    Pixel (u,v) maps to ((u+0.5-cx)/fx*z, (v+0.5-cy)/fy*z, z).
    """
    cam.check_principal_point(depth.width, depth.height)
    cu, cv = pixel_center_grids(cam, depth.width, depth.height)
    z = depth.data
    pos = np.stack([cu * z, cv * z, z], axis=-1)
    return PositionMap(data=pos, depth=depth, cam=cam)


def normals_from_depth(pos):
    """Sobel-gradient normals of a position map, replicate-padded at borders.

    Each 3x3 window is normalized by its center depth before building the
    positions fed to the Sobel filter.  This does not change the normal
    (uniform scaling of a window scales the cross product by s^2, which the
    final normalization removes) but makes the result exactly invariant to a
    global depth rescale.  Zero-magnitude cross products fall back to (0,0,-1).
    """
    depth = pos.depth
    cam = pos.cam
    h, w = depth.height, depth.width
    cu, cv = pixel_center_grids(cam, w, h)
    dpad = np.pad(depth.data, 1, mode="edge")
    cupad = np.pad(cu, 1, mode="edge")
    cvpad = np.pad(cv, 1, mode="edge")
    center = depth.data

    grad_u = np.zeros((h, w, 3))
    grad_v = np.zeros((h, w, 3))
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            ku = _SOBEL_U[dy + 1, dx + 1]
            kv = _SOBEL_V[dy + 1, dx + 1]
            if ku == 0.0 and kv == 0.0:
                continue
            dshift = dpad[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
            dn = dshift / center  # scale cancels exactly here
            px = cupad[1 + dy:1 + dy + h, 1 + dx:1 + dx + w] * dn
            py = cvpad[1 + dy:1 + dy + h, 1 + dx:1 + dx + w] * dn
            p = np.stack([px, py, dn], axis=-1)
            if ku != 0.0:
                grad_u += ku * p
            if kv != 0.0:
                grad_v += kv * p

    n = np.cross(grad_v, grad_u)  # ordered so front-facing surfaces get -z
    mag = np.linalg.norm(n, axis=-1, keepdims=True)
    degenerate = mag[..., 0] == 0.0
    mag[degenerate] = 1.0
    n = n / mag
    n[degenerate] = _FALLBACK_NORMAL
    return NormalMap(data=n)


def lambert_guide(normals, light):
    """Clamped cosine max(0, <N, l>) per pixel."""
    cos = np.einsum("hwc,c->hw", normals.data, light.vec)
    return ShadowImage(np.clip(cos, 0.0, 1.0))


def direction_map(cam, width, height):
    """Unit view ray through each pixel center (backprojection at depth 1)."""
    cam.check_principal_point(width, height)
    cu, cv = pixel_center_grids(cam, width, height)
    d = np.stack([cu, cv, np.ones_like(cu)], axis=-1)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    return DirectionMap(data=d)


def two_d_features(img, normals, light):
    """Channel concatenation [R, G, B, clamped cosine], shape (H, W, 4)."""
    _require(img.data.shape[:2] == normals.data.shape[:2],
             f"dimension mismatch: image {img.data.shape[:2]} vs "
             f"normals {normals.data.shape[:2]}")
    guide = lambert_guide(normals, light)
    return np.concatenate([img.data, guide.data[..., None]], axis=-1)
