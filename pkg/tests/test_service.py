import io
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from relightkit.raster import CameraModel, write_image, write_pfm, ColorImage
from relightkit.scene import make_dataset
from relightkit.training import TrainConfig, train, load_bundle
from relightkit.service import create_app, light_from_view_angles, _png_bytes
from relightkit.geometry import (backproject, normals_from_depth,
                                 two_d_features)
from relightkit.raymarch import RayMarchConfig, march_ratios
from relightkit.models import cast_shadow


@pytest.fixture(scope="module")
def assets(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    data = root / "data"
    make_dataset(2, 2, data, seed=3, width=32, height=32)
    cfg = TrainConfig(steps=2, z=8, f=4, batch_size=2, eval_every=100,
                      checkpoint_every=100, eval_views=1)
    ckpt = train(data, cfg, root / "run")

    rng = np.random.default_rng(0)
    color = ColorImage(rng.random((32, 32, 3)))
    depth = 2.0 + rng.random((32, 32))
    write_image(color, root / "color.png")
    write_pfm(root / "depth.pfm", depth.astype(np.float32))
    cam = CameraModel(fx=28.0, fy=28.0, cx=16.0, cy=16.0)
    return {"ckpt": ckpt, "root": root, "cam": cam}


def open_session(client, assets, cam=None):
    cam = cam or assets["cam"]
    r = client.post("/session", files={
        "color": ("c.png", (assets["root"] / "color.png").read_bytes(),
                  "image/png"),
        "depth": ("d.pfm", (assets["root"] / "depth.pfm").read_bytes(),
                  "application/octet-stream"),
    }, data={"camera": json.dumps(cam.to_json())})
    return r


@pytest.fixture(scope="module")
def client(assets):
    return TestClient(create_app(assets["ckpt"], max_dim=64))


def test_session_create_and_info(client, assets):
    r = open_session(client, assets)
    assert r.status_code == 201
    sid = r.json()["id"]
    assert r.json()["width"] == 32
    info = client.get(f"/session/{sid}")
    assert info.status_code == 200
    assert info.json()["aligned"] is None
    assert client.get("/session/nope").status_code == 404


def test_session_missing_depth_422(client, assets):
    r = client.post("/session", files={
        "color": ("c.png", (assets["root"] / "color.png").read_bytes(),
                  "image/png")},
        data={"camera": json.dumps(assets["cam"].to_json())})
    assert r.status_code == 422
    assert "depth" in r.json()["detail"]


def test_session_bad_camera_400(client, assets):
    r = client.post("/session", files={
        "color": ("c.png", (assets["root"] / "color.png").read_bytes(),
                  "image/png"),
        "depth": ("d.pfm", (assets["root"] / "depth.pfm").read_bytes(),
                  "application/octet-stream")},
        data={"camera": json.dumps({"fx": -3})})
    assert r.status_code == 400


def test_session_too_large_413(assets):
    client = TestClient(create_app(assets["ckpt"], max_dim=16))
    assert open_session(client, assets).status_code == 413


def test_shadow_cache_and_quantization(client, assets):
    sid = open_session(client, assets).json()["id"]
    a = client.get(f"/session/{sid}/shadow",
                   params={"azimuth": 20.0, "elevation": 40.0})
    assert a.status_code == 200
    assert a.headers["content-type"] == "image/png"
    b = client.get(f"/session/{sid}/shadow",
                   params={"azimuth": 20.4, "elevation": 39.8})
    assert b.content == a.content  # 1 degree quantization -> same cache key
    c = client.get(f"/session/{sid}/shadow",
                   params={"azimuth": 25.0, "elevation": 40.0})
    assert c.content != a.content


def test_shadow_validation(client, assets):
    sid = open_session(client, assets).json()["id"]
    r = client.get(f"/session/{sid}/shadow",
                   params={"azimuth": 0.0, "elevation": 95.0})
    assert r.status_code == 422
    r = client.get(f"/session/{sid}/shadow",
                   params={"azimuth": 0.0, "elevation": 40.0, "mode": "magic"})
    assert r.status_code == 422


def test_learned_mode_differs_from_direct(client, assets):
    sid = open_session(client, assets).json()["id"]
    d = client.get(f"/session/{sid}/shadow",
                   params={"azimuth": 30.0, "elevation": 45.0})
    l = client.get(f"/session/{sid}/shadow",
                   params={"azimuth": 30.0, "elevation": 45.0,
                           "mode": "learned"})
    assert l.status_code == 200
    assert l.content != d.content


def test_learned_mode_503_without_checkpoint(assets):
    client = TestClient(create_app(None, max_dim=64))
    sid = open_session(client, assets).json()["id"]
    r = client.get(f"/session/{sid}/shadow",
                   params={"azimuth": 30.0, "elevation": 45.0,
                           "mode": "learned"})
    assert r.status_code == 503
    assert client.get(f"/session/{sid}/shadow",
                      params={"azimuth": 30.0, "elevation": 45.0}
                      ).status_code == 200


def test_relight_requires_align_then_works(client, assets):
    sid = open_session(client, assets).json()["id"]
    r = client.get(f"/session/{sid}/relight",
                   params={"azimuth": 90.0, "elevation": 50.0})
    assert r.status_code == 409
    r = client.post(f"/session/{sid}/align", json={"azimuth_deg": 10.0,
                                                   "elevation_deg": 35.0})
    assert r.status_code == 200
    assert r.json() == {"azimuth_deg": 10, "elevation_deg": 35}
    out = client.get(f"/session/{sid}/relight",
                     params={"azimuth": 90.0, "elevation": 50.0})
    assert out.status_code == 200
    assert out.headers["content-type"] == "image/png"
    again = client.get(f"/session/{sid}/relight",
                       params={"azimuth": 90.0, "elevation": 50.0})
    assert again.content == out.content


def test_align_last_write_wins(client, assets):
    sid = open_session(client, assets).json()["id"]
    client.post(f"/session/{sid}/align", json={"azimuth_deg": 10.0,
                                               "elevation_deg": 35.0})
    client.post(f"/session/{sid}/align", json={"azimuth_deg": 200.0,
                                               "elevation_deg": 60.0})
    info = client.get(f"/session/{sid}").json()
    assert info["aligned"] == {"azimuth_deg": 200, "elevation_deg": 60}
    bad = client.post(f"/session/{sid}/align", json={"azimuth_deg": 5.0})
    assert bad.status_code == 422
    assert client.get(f"/session/{sid}").json()["aligned"] == \
        {"azimuth_deg": 200, "elevation_deg": 60}


def test_direct_shadow_matches_offline_pipeline(client, assets):
    from relightkit.raster import read_image
    from relightkit.geometry import lambert_guide
    from relightkit.raymarch import direct_shadow
    sid = open_session(client, assets).json()["id"]
    resp = client.get(f"/session/{sid}/shadow",
                      params={"azimuth": 15.0, "elevation": 55.0,
                              "tau": 0.02})
    color = read_image(assets["root"] / "color.png", "color")
    depth = read_image(assets["root"] / "depth.pfm", "depth")
    cam = assets["cam"]
    light = light_from_view_angles(15, 55)
    lam = lambert_guide(normals_from_depth(backproject(depth, cam)), light)
    cfg = RayMarchConfig(steps=256, threshold=0.02)
    vol = march_ratios(depth, color, light, cam, cfg)
    expect = _png_bytes(direct_shadow(vol, lam, cfg).data)
    assert resp.content == expect


def test_learned_shadow_matches_offline_pipeline(client, assets):
    from relightkit.raster import read_image
    sid = open_session(client, assets).json()["id"]
    resp = client.get(f"/session/{sid}/shadow",
                      params={"azimuth": 40.0, "elevation": 30.0,
                              "mode": "learned"})
    bundle, _ = load_bundle(assets["ckpt"])
    color = read_image(assets["root"] / "color.png", "color")
    depth = read_image(assets["root"] / "depth.pfm", "depth")
    cam = assets["cam"]
    light = light_from_view_angles(40, 30)
    n = normals_from_depth(backproject(depth, cam))
    vol = march_ratios(depth, color, light, cam,
                       RayMarchConfig(steps=bundle.cfg.z))
    s = cast_shadow(bundle.nets["cast"], vol, two_d_features(color, n, light))
    assert resp.content == _png_bytes(s.data)


def test_create_app_rejects_non_our_checkpoint(tmp_path, assets):
    cfg = TrainConfig(steps=1, z=8, f=4, batch_size=1, method="p2p",
                      eval_every=100, checkpoint_every=100, eval_views=1)
    ckpt = train(assets["root"] / "data", cfg, tmp_path / "p2p")
    with pytest.raises(ValueError):
        create_app(ckpt)


def test_light_from_view_angles_frame():
    l = light_from_view_angles(0.0, 30.0)
    assert np.allclose(l.vec, [0.0, -0.5, np.sqrt(3) / 2])
    l = light_from_view_angles(90.0, 0.0)
    assert np.allclose(l.vec, [1.0, 0.0, 0.0], atol=1e-12)
