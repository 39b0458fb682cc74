import dataclasses
import json
import math

import numpy as np
import pytest

from relightkit.raster import LightDirection, RasterError
from relightkit.scene import make_dataset
from relightkit.training import (TrainConfig, TrainingData, ModelBundle,
                                 sample_pair, perturb_light, augment_colors,
                                 generator_forward, train_step, train,
                                 eval_shadows, load_bundle,
                                 predict_shadow_image, direct_shadow_image)
from relightkit.nn import Adam, load_checkpoint


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    make_dataset(4, 2, d, seed=1, width=32, height=32)
    return d


def small_cfg(**kw):
    base = dict(steps=4, z=8, f=4, batch_size=2, eval_every=100,
                checkpoint_every=100, eval_views=2)
    base.update(kw)
    return TrainConfig(**base)


def test_config_defaults_snapshot():
    cfg = TrainConfig()
    assert (cfg.lambda_c, cfg.lambda_s, cfg.lambda_r, cfg.lambda_a) == \
        (10.0, 2.0, 10.0, 0.1)
    assert cfg.lr == 1e-4
    assert cfg.gen_per_disc == 5
    assert cfg.p_gt == 0.8
    assert cfg.batch_size == 4
    assert cfg.light_noise_deg == 3.0


def test_config_validation_and_json():
    with pytest.raises(RasterError):
        TrainConfig(p_gt=1.5)
    with pytest.raises(RasterError):
        TrainConfig(method="gan")
    with pytest.raises(RasterError):
        TrainConfig(lambda_c=-1.0)
    cfg = TrainConfig(steps=7, f=3)
    back = TrainConfig.from_json(json.loads(json.dumps(cfg.to_json())))
    assert back == cfg
    with pytest.raises(RasterError):
        TrainConfig.from_json({"stepz": 7})


def test_training_data_split_disjoint(data_dir):
    data = TrainingData(data_dir, test_fraction=0.25)
    train_scenes = {data.samples[i]["scene"] for i in data.train_idx}
    test_scenes = {data.samples[i]["scene"] for i in data.test_idx}
    assert test_scenes
    assert not (train_scenes & test_scenes)


def test_perturb_light_sigma_zero_is_identity():
    l = LightDirection.from_vector([0.3, -0.5, 0.8])
    rng = np.random.default_rng(0)
    assert perturb_light(l, 0.0, rng) is l
    angles = []
    for _ in range(200):
        p = perturb_light(l, 3.0, rng)
        angles.append(math.degrees(math.acos(
            np.clip(np.dot(p.vec, l.vec), -1, 1))))
    assert 1.0 < np.mean(angles) < 5.0


def test_augment_colors_shared_across_pair(data_dir):
    data = TrainingData(data_dir)
    v = data.view(0)
    a = v["lights"][0]["color"]
    out1 = augment_colors([a, a], np.random.default_rng(5))
    assert np.array_equal(out1[0].data, out1[1].data)
    out2 = augment_colors([a], np.random.default_rng(5))
    assert np.array_equal(out1[0].data, out2[0].data)


def test_sample_pair_distinct_lights(data_dir):
    data = TrainingData(data_dir)
    cfg = small_cfg()
    for seed in range(5):
        ex = sample_pair(data, np.random.default_rng(seed), cfg)
        assert not np.array_equal(ex["l_old"].vec, ex["l_new"].vec)
        assert ex["color_old"].data.shape == (32, 32, 3)


def test_loss_report_matches_weighted_sum(data_dir):
    data = TrainingData(data_dir)
    cfg = small_cfg()
    bundle = ModelBundle(cfg)
    opt_g = Adam(bundle.generator_params(), lr=cfg.lr)
    opt_d = Adam(bundle.disc.parameters(), lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 1])
    batch = [sample_pair(data, rng, cfg) for _ in range(cfg.batch_size)]
    rep = train_step(bundle, batch, opt_g, opt_d, cfg, rng, 1)
    expect = cfg.lambda_c * rep["l_c"] + cfg.lambda_s * rep["l_s"] \
        + cfg.lambda_r * rep["l_r"] + cfg.lambda_a * rep["l_a"]
    assert rep["total"] == pytest.approx(expect, rel=1e-4)


def test_detach_contract_cast_gets_zero_grad_with_only_ls(data_dir):
    # with only the refinement loss active, the cast network must receive
    # exactly zero gradient: the refiner consumes a detached cast output
    data = TrainingData(data_dir)
    cfg = small_cfg(lambda_c=0.0, lambda_r=0.0, lambda_a=0.0, lambda_s=2.0)
    bundle = ModelBundle(cfg)
    ex = sample_pair(data, np.random.default_rng(0), cfg)
    out = generator_forward(bundle, ex, use_gt_depth=True)
    (cfg.lambda_s * out["l_s"]).backward()
    for _, p in bundle.nets["cast"].named_parameters():
        assert p.grad is None or not np.any(p.grad)
    refine_grads = [p.grad for _, p in bundle.nets["refine"].named_parameters()]
    assert any(g is not None and np.any(g) for g in refine_grads)


def test_lambda_a_zero_freezes_discriminator(data_dir, tmp_path):
    cfg = small_cfg(lambda_a=0.0, steps=3)
    before = {k: p.data.copy()
              for k, p in ModelBundle(cfg).named_tensors().items()
              if k.startswith("disc.")}
    ckpt = train(data_dir, cfg, tmp_path / "run")
    tensors, meta = load_checkpoint(ckpt)
    for k, v in before.items():
        assert np.array_equal(tensors[k], v.astype(np.float32))
    # generator did move
    assert not all(np.array_equal(tensors[k], p.data)
                   for k, p in ModelBundle(cfg).named_tensors().items()
                   if not k.startswith("disc."))


def test_disc_steps_on_schedule(data_dir, tmp_path):
    cfg = small_cfg(steps=6, gen_per_disc=5)
    train(data_dir, cfg, tmp_path / "run")
    rows = [json.loads(l) for l in open(tmp_path / "run" / "metrics.jsonl")]
    assert [r["disc_stepped"] for r in rows] == \
        [False, False, False, False, True, False]


def test_resume_is_byte_identical(data_dir, tmp_path):
    cfg = small_cfg(steps=4, checkpoint_every=2)
    full = train(data_dir, cfg, tmp_path / "full")
    part = train(data_dir, cfg, tmp_path / "part")  # writes ckpt_000002.bin
    resumed = train(data_dir, cfg, tmp_path / "part",
                    resume=tmp_path / "part" / "ckpt_000002.bin")
    t_full, _ = load_checkpoint(full)
    t_res, _ = load_checkpoint(resumed)
    assert t_full.keys() == t_res.keys()
    for k in t_full:
        assert np.array_equal(t_full[k], t_res[k]), k


def test_resume_rejects_config_mismatch(data_dir, tmp_path):
    cfg = small_cfg(steps=2, checkpoint_every=2)
    train(data_dir, cfg, tmp_path / "run")
    other = small_cfg(steps=3, checkpoint_every=2)
    with pytest.raises(RasterError):
        train(data_dir, other, tmp_path / "run2",
              resume=tmp_path / "run" / "ckpt_000002.bin")


@pytest.mark.parametrize("method", ["our", "2d", "p2p"])
def test_all_methods_train_and_reload(data_dir, tmp_path, method):
    cfg = small_cfg(method=method, steps=2)
    ckpt = train(data_dir, cfg, tmp_path / method)
    bundle, meta = load_bundle(ckpt)
    assert bundle.method == method
    assert meta["step"] == 2
    data = TrainingData(data_dir)
    if method != "p2p":
        s = predict_shadow_image(bundle, data.view(0), 0, 1)
        assert s.data.shape == (32, 32)
    ev = eval_shadows(bundle, data, cfg)
    assert ev["shadow_mse_direct"] > 0
    if method == "p2p":
        assert ev["shadow_mse_model"] is None


def test_cast_loss_decreases_on_single_batch(data_dir):
    # sanity: the graph actually learns; overfit one example with L_C only
    data = TrainingData(data_dir)
    cfg = small_cfg(lambda_s=0.0, lambda_r=0.0, lambda_a=0.0,
                    batch_size=1, light_noise_deg=0.0)
    bundle = ModelBundle(cfg)
    opt_g = Adam(bundle.generator_params(), lr=1e-3)
    opt_d = Adam(bundle.disc.parameters(), lr=cfg.lr)
    ex = sample_pair(data, np.random.default_rng(3), cfg)
    first = last = None
    for step in range(1, 41):
        rep = train_step(bundle, [ex], opt_g, opt_d, cfg,
                         np.random.default_rng([0, step]), step)
        if first is None:
            first = rep["l_c"]
        last = rep["l_c"]
    assert last < 0.5 * first


def test_direct_shadow_image_runs(data_dir):
    data = TrainingData(data_dir)
    out = direct_shadow_image(data.view(0), 1, 8, 0.05)
    assert out.data.shape == (32, 32)
    assert out.data.min() >= 0.0 and out.data.max() <= 1.0
