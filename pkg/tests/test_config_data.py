import json

import numpy as np
import pytest

from innstab import config, data, render
from innstab.config import ExperimentConfig, default_config
from innstab.errors import ConfigError, ShapeError


def tiny(task="denoise"):
    cfg = default_config(task)
    cfg.data.n_train, cfg.data.n_val, cfg.data.n_test = 4, 2, 3
    cfg.n_eval = 3
    if task == "ct":
        cfg.data.image_size = 32
        cfg.geometry.num_angles = 60
    return cfg.validate()


@pytest.mark.parametrize("task", ["denoise", "ct"])
def test_config_json_round_trip(task):
    cfg = default_config(task)
    back = ExperimentConfig.from_json(cfg.to_json())
    assert back == cfg and back.to_json() == cfg.to_json()


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        default_config("mri")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"trian": {}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"train": {"epochs": 1, "momentum": 0.9}})
    for field, value in [("mcdrop.T", 1), ("n_eval", 1000), ("ood.mode", "dove"), ("runs", 0),
                         ("schema_version", 99), ("methods", ["inn", "ensembles"])]:
        cfg = default_config()
        config.set_path(cfg, field, value)
        with pytest.raises(ConfigError):
            cfg.validate()
    with pytest.raises(ConfigError):
        config.set_path(default_config(), "train.nope", 1)
    with pytest.raises(ConfigError):
        config.set_path(default_config(), "nope.epochs", 1)


def test_derive_seed():
    a = config.derive_seed(0, "ct", "run", 1)
    assert a == config.derive_seed(0, "ct", "run", 1)
    assert a != config.derive_seed(0, "ct", "run", 2)
    assert a != config.derive_seed(0, "denoise", "run", 1)
    assert 0 <= a < 2**63


@pytest.mark.parametrize("task", ["denoise", "ct"])
def test_corpus_splits_are_disjoint_and_deterministic(task):
    cfg = tiny(task)
    c = data.generate_corpus(cfg)
    ids = np.concatenate([c[s].ids for s in data.SPLITS])
    assert len(set(ids.tolist())) == len(ids)
    seeds = np.concatenate([c[s].image_seeds for s in data.SPLITS])
    assert len(set(seeds.tolist())) == len(seeds)
    c2 = data.generate_corpus(cfg)
    for s in data.SPLITS:
        assert np.array_equal(c[s].inputs, c2[s].inputs) and np.array_equal(c[s].clean, c2[s].clean)
        assert c[s].inputs.min() >= 0 and c[s].inputs.max() <= 1
    assert len(c["test"]) == 3


def test_ct_input_scaling_is_lossless_on_corpus():
    cfg = tiny("ct")
    geom = data.geometry(cfg)
    from innstab import operators as op
    test = data.generate_split(cfg, "test")
    raw = op.fbp(op.radon(test.clean, geom), geom)
    back = test.inputs * cfg.data.fbp_scale + cfg.data.fbp_offset
    np.testing.assert_allclose(back, raw, atol=1e-12)


def test_denoise_inputs_are_noisy_and_clipped():
    cfg = tiny()
    test = data.generate_split(cfg, "test")
    resid = test.inputs - test.clean
    assert 0.5 * cfg.data.noise_sigma < resid.std() < 1.2 * cfg.data.noise_sigma


def test_corpus_save_load(tmp_path):
    cfg = tiny("ct")
    c = data.generate_corpus(cfg)
    data.save_corpus(c, cfg, tmp_path)
    back = data.load_corpus(tmp_path)
    for s in data.SPLITS:
        assert np.array_equal(back[s].inputs, c[s].inputs)
        assert np.array_equal(back[s].noise_seeds, c[s].noise_seeds)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["input_scaling"] == {"offset": cfg.data.fbp_offset, "scale": cfg.data.fbp_scale}
    assert {e["kind"] for e in manifest["samples"]} == {"random_ellipses"}
    with pytest.raises(ConfigError):
        data.generate_split(cfg, "holdout")


def test_render_window_and_pgm(tmp_path):
    img = np.array([[-1.0, 0.0], [0.5, 2.0]])
    px = render.to_uint8(img, (0.0, 1.0))
    assert px.tolist() == [[0, 0], [128, 255]]
    path = render.render_heatmap(img, (0.0, 1.0), tmp_path / "a.pgm")
    assert np.array_equal(render.read_pgm(path), px)
    assert path.read_bytes().startswith(b"P5\n2 2\n255\n")
    with pytest.raises(ConfigError):
        render.to_uint8(img, (1.0, 1.0))
    with pytest.raises(ShapeError):
        render.to_uint8(np.zeros((2, 2, 2)), (0, 1))
    strip = render.panel([img, img], [(0, 1), (0, 2)], gap=3)
    assert strip.shape == (2, 7) and np.all(strip[:, 2:5] == 255)
    assert render.robust_window(np.zeros((4, 4))) == (0.0, 1.0)
