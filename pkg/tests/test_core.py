import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from dgan.core import (ConfigError, RunConfig, ShapeError, denormalize_image, derived_seed, differential,
                       load_config, normalize_image, parse_config_text)


def test_normalize_endpoints():
    assert np.all(normalize_image(np.zeros((64, 64, 3), np.uint8)) == -1.0)
    assert np.all(normalize_image(np.full((64, 64, 3), 255, np.uint8)) == 1.0)


def test_normalize_midpoint_hand_value():
    out = normalize_image(np.full((64, 64, 3), 127, np.uint8))
    assert out[0, 0, 0] == pytest.approx(127 / 127.5 - 1, abs=1e-15)
    assert out[0, 0, 0] == pytest.approx(-0.00392156862745098, abs=1e-15)


def test_normalize_shape_error_names_dims():
    with pytest.raises(ShapeError, match="64x64x3.*32x32x3"):
        normalize_image(np.zeros((32, 32, 3)))


def test_denormalize_endpoints_and_half():
    assert denormalize_image(np.array([-1.0, 1.0, 0.5])).tolist() == [0, 255, 191]


def test_denormalize_clamps():
    assert denormalize_image(np.array([-3.0, 7.0])).tolist() == [0, 255]


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.uint8, (64, 64, 3)))
def test_round_trip_on_lattice(raw):
    assert np.array_equal(denormalize_image(normalize_image(raw)), raw)


def test_differential_examples():
    x = torch.ones(1, 3, 4, 4)
    assert torch.equal(differential(x, -x), torch.full_like(x, 2.0))
    assert torch.equal(differential(x, x), torch.zeros_like(x))
    with pytest.raises(ShapeError):
        differential(x, torch.ones(1, 3, 4, 5))


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (2, 3, 4), elements=st.floats(-1, 1)),
       hnp.arrays(np.float64, (2, 3, 4), elements=st.floats(-1, 1)))
def test_differential_antisymmetric(a, b):
    x, y = torch.from_numpy(a), torch.from_numpy(b)
    d = differential(x, y)
    assert torch.equal(d, -differential(y, x))
    assert d.abs().max() <= 2.0


@pytest.mark.parametrize("field,value", [("lambda_diff", -0.1), ("lambda_standard", -1), ("lambda_recon", -5),
                                         ("learning_rate", -1e-3), ("batch_size", 0), ("image_size", 48)])
def test_config_rejects_invalid(field, value):
    with pytest.raises(ConfigError):
        RunConfig(**{field: value})


def test_config_defaults():
    cfg = RunConfig()
    assert (cfg.lambda_diff, cfg.lambda_standard, cfg.lambda_recon) == (0.5, 1.0, 100.0)
    assert (cfg.learning_rate, cfg.momentum_beta1) == (0.0002, 0.5)
    assert cfg.image_size == 64 and cfg.label_count == 7 and cfg.depth == 6


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nlambda_recon = 50   # trailing\nmax_iterations = 20\n"
                 "dropout_at_synthesis = false\ngen_depth = none\n")
    cfg = load_config(p, {"seed": "3", "lambda_recon": 10})
    assert cfg.lambda_recon == 10 and cfg.max_iterations == 20 and cfg.seed == 3
    assert cfg.dropout_at_synthesis is False and cfg.gen_depth is None


def test_config_text_round_trip():
    cfg = RunConfig(max_iterations=7, seed=5, base_width=16, use_diff_d=False)
    assert parse_config_text(cfg.to_text()) == cfg


@pytest.mark.parametrize("text", ["nonsense_key = 1", "batch_size = many", "seed"])
def test_config_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_derived_seeds_distinct():
    seeds = {derived_seed(s, r) for s in range(5) for r in ("generator", "embed", "d_standard", "d_diff", "train")}
    assert len(seeds) == 25
