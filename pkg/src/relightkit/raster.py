"""Image containers, camera model and bit-exact file IO.

Conventions shared by every module:
  * images are row-major, origin top-left, y grows downward
  * the camera looks down +z, x right, y down
  * pixel centers sit at integer + 0.5 continuous coordinates
  * depth is camera-space z (distance along the optical axis), not ray length

Float images travel as PFM (little-endian, bit-exact round trip); PNG is used
for human-viewable output and is always sRGB-encoded on write.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage


class RasterError(ValueError):
    """Invalid image data or malformed file."""


class PfmParseError(RasterError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _require(cond, message):
    if not cond:
        raise RasterError(message)


# ---------------------------------------------------------------------------
# sRGB <-> linear


def srgb_decode(v):
    """8-bit-style sRGB in [0,1] -> linear radiance."""
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def srgb_encode(v):
    """Linear radiance in [0,1] -> sRGB in [0,1]."""
    v = np.asarray(v, dtype=np.float64)
    v = np.clip(v, 0.0, 1.0)
    return np.where(v <= 0.0031308, v * 12.92, 1.055 * v ** (1.0 / 2.4) - 0.055)


# ---------------------------------------------------------------------------
# Domain types


class _ImageBase:
    """Immutable raster. `data` is float64, shape (H, W) or (H, W, 3)."""

    _channels = None

    def __init__(self, data):
        data = np.asarray(data, dtype=np.float64)
        if self._channels == 3:
            _require(data.ndim == 3 and data.shape[2] == 3,
                     f"{type(self).__name__} expects (H, W, 3), got {data.shape}")
        else:
            _require(data.ndim == 2,
                     f"{type(self).__name__} expects (H, W), got {data.shape}")
        _require(data.shape[0] > 0 and data.shape[1] > 0, "empty image")
        _require(np.isfinite(data).all(), f"{type(self).__name__} has non-finite values")
        self._validate(data)
        self.data = data
        self.data.setflags(write=False)

    def _validate(self, data):
        pass

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape


class ColorImage(_ImageBase):
    """Linear-radiance RGB image, all channels finite and >= 0."""

    _channels = 3

    def _validate(self, data):
        _require((data >= 0).all(), "ColorImage channels must be non-negative")


class DepthMap(_ImageBase):
    """Camera-space z per pixel, strictly positive, arbitrary global scale."""

    _channels = 1

    def _validate(self, data):
        _require((data > 0).all(), "DepthMap values must be strictly positive")

    def scaled(self, s):
        return DepthMap(self.data * s)


class ShadowImage(_ImageBase):
    """Visibility times clamped cosine, per pixel in [0, 1]."""

    _channels = 1

    def _validate(self, data):
        _require((data >= 0).all() and (data <= 1).all(),
                 "ShadowImage values must lie in [0, 1]")


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        _require(self.fx > 0 and self.fy > 0, "focal lengths must be positive")
        _require(np.isfinite([self.fx, self.fy, self.cx, self.cy]).all(),
                 "camera intrinsics must be finite")

    def check_principal_point(self, width, height):
        if not (0 <= self.cx <= width and 0 <= self.cy <= height):
            warnings.warn(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{width}x{height} image bounds", stacklevel=2)

    def to_json(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_json(cls, d):
        return cls(fx=float(d["fx"]), fy=float(d["fy"]),
                   cx=float(d["cx"]), cy=float(d["cy"]))


class LightDirection:
    """Unit 3-vector in camera space pointing from the scene toward the sun."""

    def __init__(self, vec):
        vec = np.asarray(vec, dtype=np.float64).reshape(3)
        _require(np.isfinite(vec).all(), "light direction must be finite")
        norm = float(np.linalg.norm(vec))
        _require(abs(norm - 1.0) <= 1e-6,
                 f"light direction must be unit length, |v| = {norm}")
        self.vec = vec
        self.vec.setflags(write=False)

    @classmethod
    def from_vector(cls, vec):
        """Normalize an arbitrary non-zero vector."""
        vec = np.asarray(vec, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(vec)
        _require(norm > 0, "cannot normalize a zero light vector")
        return cls(vec / norm)

    def __repr__(self):
        return f"LightDirection({self.vec.tolist()})"


# ---------------------------------------------------------------------------
# PFM

_PFM_HEADERS = {b"PF": 3, b"Pf": 1}


def write_pfm(path, data):
    """Write float32 PFM, little-endian, bottom-up scanlines per the format."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise RasterError(f"PFM supports (H,W) or (H,W,3), got {data.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale -> little endian
        f.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path):
    """Read a PFM file, returning a float32 array (H,W) or (H,W,3)."""
    with open(path, "rb") as f:
        raw = f.read()

    def _token(offset):
        # skip whitespace, return (token_bytes, next_offset)
        while offset < len(raw) and raw[offset:offset + 1].isspace():
            offset += 1
        start = offset
        while offset < len(raw) and not raw[offset:offset + 1].isspace():
            offset += 1
        if start == offset:
            raise PfmParseError("unexpected end of PFM header", start)
        return raw[start:offset], offset

    magic, off = _token(0)
    if magic not in _PFM_HEADERS:
        raise PfmParseError(f"bad PFM magic {magic!r}", 0)
    channels = _PFM_HEADERS[magic]
    wtok, off = _token(off)
    htok, off = _token(off)
    stok, off = _token(off)
    try:
        w, h = int(wtok), int(htok)
        scale = float(stok)
    except ValueError:
        raise PfmParseError("malformed PFM dimensions or scale", off) from None
    if w <= 0 or h <= 0:
        raise PfmParseError(f"non-positive PFM dimensions {w}x{h}", off)
    off += 1  # single whitespace byte after the scale line
    count = w * h * channels
    payload = raw[off:off + count * 4]
    if len(payload) != count * 4:
        raise PfmParseError(
            f"PFM payload truncated, expected {count * 4} bytes got {len(payload)}",
            off)
    endian = "<" if scale < 0 else ">"
    data = np.frombuffer(payload, dtype=endian + "f4").astype(np.float32)
    data = data.reshape((h, w, channels) if channels == 3 else (h, w))
    return data[::-1].copy()  # PFM scanlines are stored bottom-up


# ---------------------------------------------------------------------------
# Unified read / write

_KINDS = {"color": ColorImage, "depth": DepthMap, "shadow": ShadowImage}


def read_image(path, kind):
    """Read PNG or PFM as the requested kind of image.

    Color PNGs are sRGB-decoded to linear; PFM payloads are taken verbatim.
    """
    _require(kind in _KINDS, f"unknown image kind {kind!r}")
    path = str(path)
    if path.lower().endswith(".pfm"):
        data = read_pfm(path).astype(np.float64)
        if kind == "color" and data.ndim == 2:
            raise RasterError("color image requires a 3-channel PFM")
        if kind in ("depth", "shadow") and data.ndim == 3:
            raise RasterError(f"{kind} image requires a single-channel PFM")
        return _KINDS[kind](data)
    img = PILImage.open(path)
    if kind == "color":
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
        return ColorImage(srgb_decode(arr))
    arr = np.asarray(img.convert("I" if img.mode == "I;16" else "L"),
                     dtype=np.float64)
    arr = arr / (65535.0 if img.mode in ("I", "I;16") else 255.0)
    if kind == "shadow":
        return ShadowImage(srgb_decode(arr))
    return DepthMap(arr)


def write_image(img, path, format=None):
    """Write an image; PFM is bit-exact, PNG clamps to [0,1] and sRGB-encodes."""
    path = str(path)
    if format is None:
        format = "pfm" if path.lower().endswith(".pfm") else "png"
    if format == "pfm":
        write_pfm(path, img.data)
        return
    if format != "png":
        raise RasterError(f"unknown format {format!r}")
    encoded = srgb_encode(np.clip(img.data, 0.0, 1.0))
    quantized = np.round(encoded * 255.0).astype(np.uint8)
    PILImage.fromarray(quantized).save(path)
