"""Session-oriented HTTP API for interactive alignment and relighting.

A session holds one uploaded (color, depth, camera) triple plus caches of
derived maps and rendered responses.  The sun is parameterized as azimuth /
elevation in a camera-level frame (roll assumed zero, azimuth 0 = camera
forward, elevation up); angles are quantized to 1 degree for cache keys, so
repeated queries return byte-identical PNGs.

Flow: POST /session, drag with GET .../shadow, commit POST .../align, then
GET .../relight.  Depth is a required upload; monocular estimation is out of
scope and the API says so with a 422.
"""

from __future__ import annotations

import io
import math
import tempfile
import threading
import uuid
from pathlib import Path

import click
import numpy as np
from fastapi import FastAPI, UploadFile, File, Form, HTTPException
from fastapi.responses import Response
from PIL import Image as PILImage

from .raster import (CameraModel, ColorImage, DepthMap, LightDirection,
                     RasterError, ShadowImage, read_image, srgb_encode)
from .geometry import (backproject, normals_from_depth, lambert_guide,
                       direction_map, two_d_features)
from .raymarch import RayMarchConfig, march_ratios, direct_shadow
from .models import cast_shadow, refine_old_shadow, relight
from .training import load_bundle


def light_from_view_angles(azimuth_deg, elevation_deg):
    """Camera-level sun angles -> camera-frame direction toward the sun."""
    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    return LightDirection.from_vector([
        math.cos(el) * math.sin(az), -math.sin(el), math.cos(el) * math.cos(az)])


def _png_bytes(data):
    """Encode a (H,W) or (H,W,3) linear image as sRGB PNG bytes."""
    encoded = srgb_encode(np.clip(data, 0.0, 1.0))
    quantized = np.round(encoded * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(quantized).save(buf, format="png")
    return buf.getvalue()


class Session:
    def __init__(self, color, depth, cam):
        self.id = uuid.uuid4().hex
        self.color = color
        self.depth = depth
        self.cam = cam
        h, w = depth.data.shape
        self.normals = normals_from_depth(backproject(depth, cam))
        self.psi = direction_map(cam, w, h)
        self.aligned = None          # (azimuth, elevation) once committed
        self.lock = threading.Lock()
        self._cache = {}

    def cached(self, key, fn):
        with self.lock:
            if key not in self._cache:
                self._cache[key] = fn()
                if len(self._cache) > 256:
                    self._cache.pop(next(iter(self._cache)))
            return self._cache[key]


def _read_upload(upload, kind):
    suffix = Path(upload.filename or "x.png").suffix.lower() or ".png"
    with tempfile.NamedTemporaryFile(suffix=suffix) as f:
        f.write(upload.file.read())
        f.flush()
        return read_image(f.name, kind)


def create_app(checkpoint=None, max_dim=512):
    """App factory; `checkpoint` may be a path or an already loaded bundle."""
    bundle = None
    if checkpoint is not None:
        bundle = checkpoint if hasattr(checkpoint, "nets") \
            else load_bundle(checkpoint)[0]
        if bundle.method != "our":
            raise ValueError(
                f"service needs an 'our' checkpoint, got {bundle.method!r}")
    app = FastAPI(title="relightkit", version="1")
    sessions = {}
    registry_lock = threading.Lock()

    def get_session(sid):
        with registry_lock:
            s = sessions.get(sid)
        if s is None:
            raise HTTPException(404, f"unknown session {sid!r}")
        return s

    def parse_angles(azimuth, elevation):
        if not (0.0 < elevation < 90.0):
            raise HTTPException(
                422, f"elevation must lie in (0, 90) degrees, got {elevation}")
        # 1 degree quantization, below UI drag precision, keys the caches
        return round(azimuth) % 360, round(elevation)

    @app.post("/session", status_code=201)
    def create_session(color: UploadFile = File(...),
                       depth: UploadFile = File(None),
                       camera: str = Form(...)):
        import json
        if depth is None:
            raise HTTPException(
                422, "depth image is required: this server runs in "
                     "depth-required mode; supply externally estimated depth")
        try:
            cam = CameraModel.from_json(json.loads(camera))
            color_img = _read_upload(color, "color")
            depth_img = _read_upload(depth, "depth")
        except (RasterError, ValueError, KeyError) as e:
            raise HTTPException(400, f"invalid input: {e}") from None
        if color_img.data.shape[:2] != depth_img.data.shape:
            raise HTTPException(
                400, f"dimension mismatch: color {color_img.data.shape[:2]} "
                     f"vs depth {depth_img.data.shape}")
        if max(depth_img.data.shape) > max_dim:
            raise HTTPException(
                413, f"image exceeds max dimension {max_dim}")
        s = Session(color_img, depth_img, cam)
        with registry_lock:
            sessions[s.id] = s
        return {"id": s.id, "width": depth_img.width, "height": depth_img.height}

    @app.get("/session/{sid}")
    def session_info(sid: str):
        s = get_session(sid)
        return {"id": s.id, "width": s.depth.width, "height": s.depth.height,
                "aligned": None if s.aligned is None
                else {"azimuth_deg": s.aligned[0], "elevation_deg": s.aligned[1]}}

    def shadow_for(s, az, el, mode, tau):
        light = light_from_view_angles(az, el)
        lam = lambert_guide(s.normals, light)
        if mode == "direct":
            cfg = RayMarchConfig(steps=256, threshold=tau)
            vol = march_ratios(s.depth, s.color, light, s.cam, cfg)
            return direct_shadow(vol, lam, cfg)
        if bundle is None:
            raise HTTPException(503, "no checkpoint loaded; learned mode "
                                     "unavailable")
        cfg = RayMarchConfig(steps=bundle.cfg.z)
        vol = march_ratios(s.depth, s.color, light, s.cam, cfg)
        feat = two_d_features(s.color, s.normals, light)
        return cast_shadow(bundle.nets["cast"], vol, feat)

    @app.get("/session/{sid}/shadow")
    def shadow(sid: str, azimuth: float, elevation: float,
               mode: str = "direct", tau: float = 0.01):
        if mode not in ("direct", "learned"):
            raise HTTPException(422, f"mode must be direct|learned, got {mode!r}")
        s = get_session(sid)
        az, el = parse_angles(azimuth, elevation)
        png = s.cached(("shadow", az, el, mode, tau),
                       lambda: _png_bytes(shadow_for(s, az, el, mode, tau).data))
        return Response(png, media_type="image/png")

    @app.post("/session/{sid}/align")
    def align(sid: str, payload: dict):
        s = get_session(sid)
        try:
            azimuth = float(payload["azimuth_deg"])
            elevation = float(payload["elevation_deg"])
        except (KeyError, TypeError, ValueError):
            raise HTTPException(
                422, "payload must carry azimuth_deg and elevation_deg") from None
        az, el = parse_angles(azimuth, elevation)
        with s.lock:
            s.aligned = (az, el)
        return {"azimuth_deg": az, "elevation_deg": el}

    @app.get("/session/{sid}/relight")
    def relight_endpoint(sid: str, azimuth: float, elevation: float):
        s = get_session(sid)
        if s.aligned is None:
            raise HTTPException(409, "align the source light first "
                                     "(POST /session/{id}/align)")
        if bundle is None:
            raise HTTPException(503, "no checkpoint loaded")
        az, el = parse_angles(azimuth, elevation)

        def run():
            l_old = light_from_view_angles(*s.aligned)
            l_new = light_from_view_angles(az, el)
            cfg = RayMarchConfig(steps=bundle.cfg.z)
            vol_old = march_ratios(s.depth, s.color, l_old, s.cam, cfg)
            vol_new = march_ratios(s.depth, s.color, l_new, s.cam, cfg)
            c = bundle.nets["cast"]
            s_old = cast_shadow(c, vol_old,
                                two_d_features(s.color, s.normals, l_old))
            s_new = cast_shadow(c, vol_new,
                                two_d_features(s.color, s.normals, l_new))
            s_ref = refine_old_shadow(bundle.nets["refine"], s_old, s.color,
                                      l_old)
            out = relight(bundle.nets["relight"], s.color, s_ref, s_new,
                          s.normals, s.psi, l_old, l_new)
            return _png_bytes(out.data)
        png = s.cached(("relight", s.aligned, az, el), run)
        return Response(png, media_type="image/png")

    return app


@click.command()
@click.option("--ckpt", type=click.Path(exists=True),
              help="trained checkpoint; omit for direct-mode-only serving")
@click.option("--port", type=int, default=8000)
@click.option("--max-dim", type=int, default=512)
@click.option("--host", default="127.0.0.1")
def main(ckpt, port, max_dim, host):
    """Serve the relighting HTTP API."""
    import uvicorn
    uvicorn.run(create_app(ckpt, max_dim=max_dim), host=host, port=port)


if __name__ == "__main__":
    main()
