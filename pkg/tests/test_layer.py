import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sinefm import functional as F
from sinefm.errors import ShapeError
from sinefm.gradcheck import layer_gradcheck
from sinefm.layer import (SineFMConfig, SineFMLayer, channel_plan, fit_alpha,
                          transform_channel_assignment)
from sinefm.tensor import Tensor
from sinefm.transforms import TransformFamily, apply_family, sample_hyperparams

Fam = TransformFamily


# -- channel plan -------------------------------------------------------------------

@pytest.mark.parametrize("c_out,c_s,k,expect", [
    (64, 16, 5, (48, 80, 48)),
    (16, 16, 5, (0, 80, 0)),
    (17, 16, 3, (16, 48, 1)),
])
def test_channel_plan_examples(c_out, c_s, k, expect):
    assert tuple(channel_plan(c_out, c_s, k)) == expect


def test_degenerate_plan():
    assert channel_plan(16, 16, 5).degenerate
    assert not channel_plan(17, 16, 5).degenerate


@given(c_out=st.integers(1, 300), c_s=st.integers(1, 300), k=st.integers(1, 9))
def test_channel_plan_formula(c_out, c_s, k):
    if c_s > c_out:
        with pytest.raises(ValueError):
            channel_plan(c_out, c_s, k)
        return
    plan = channel_plan(c_out, c_s, k)
    assert plan.c_g == c_s * (math.ceil(c_out / c_s) - 1)
    assert plan.combine_in == k * c_s and plan.combine_out == c_out - c_s


def test_assignment_examples():
    plan = channel_plan(8, 2, 3)
    assert [s for _, s in transform_channel_assignment(plan, 2)] == [0, 1, 0, 1, 0, 1]
    assert {s for _, s in transform_channel_assignment(channel_plan(16, 1, 5), 1)} == {0}
    src = [s for _, s in transform_channel_assignment(channel_plan(64, 16, 5), 16)]
    assert len(src) == 80 and np.bincount(src).tolist() == [5] * 16


def test_config_validation():
    with pytest.raises(ValueError):
        SineFMConfig(3, 8, 2, kernel=4)
    with pytest.raises(ValueError):
        SineFMConfig(3, 8, 9)
    with pytest.raises(ValueError):
        SineFMConfig(3, 8, 2, fanout=0)


# -- normalization ------------------------------------------------------------------

def test_normalize_hand_case():
    y = Tensor(np.array([1.0, 2.0, 3.0]).reshape(1, 1, 1, 3))
    out = F.normalize_maps(y).data.reshape(-1)
    np.testing.assert_allclose(out, [-0.70710, 0.0, 0.70710], atol=1e-4)


def test_normalize_constant_map():
    out = F.normalize_maps(Tensor(np.full((1, 1, 1, 3), 5.0))).data
    np.testing.assert_array_equal(out, np.zeros((1, 1, 1, 3)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), loc=st.floats(-50, 50), spread=st.floats(0.1, 20))
def test_normalize_moments(seed, loc, spread):
    r = np.random.default_rng(seed)
    out = F.normalize_maps(Tensor(loc + spread * r.standard_normal((2, 3, 5, 7)))).data
    assert np.abs(out.mean(axis=(2, 3))).max() <= 1e-9
    np.testing.assert_allclose(np.sqrt((out ** 2).sum(axis=(2, 3))), 1.0, atol=1e-4)


# -- forward ------------------------------------------------------------------------

def _layer(config, dtype=np.float64, seed=0):
    return SineFMLayer(config, rng=np.random.default_rng(seed), dtype=dtype)


def test_degenerate_layer_is_seed_conv(rng):
    layer = _layer(SineFMConfig(3, 4, 4, 3, 1, 1, 5))
    x = Tensor(rng.standard_normal((2, 3, 6, 6)))
    np.testing.assert_array_equal(layer(x).data, F.conv2d(x, layer.seed_filters, 1, 1).data)


def test_forward_shape_and_seed_channel(rng):
    layer = _layer(SineFMConfig(3, 16, 1, 3, 1, 1, 5))
    x = Tensor(rng.standard_normal((1, 3, 8, 8)))
    out = layer(x)
    assert out.shape == (1, 16, 8, 8)
    np.testing.assert_array_equal(out.data[:, :1], F.conv2d(x, layer.seed_filters, 1, 1).data)


def test_zero_combine_zeroes_generated_channels(rng):
    layer = _layer(SineFMConfig(3, 10, 2, 3, 1, 1, 4, Fam.GAUSSIAN))
    layer.combine.data[...] = 0
    out = layer(Tensor(rng.standard_normal((2, 3, 5, 5)))).data
    assert not np.any(out[:, 2:])


def test_forward_rejects_wrong_channels():
    with pytest.raises(ShapeError):
        _layer(SineFMConfig(3, 8, 2))(Tensor(np.zeros((1, 4, 5, 5))))


def test_forward_matches_manual_pipeline(rng):
    cfg = SineFMConfig(2, 7, 3, 3, 2, 1, 2, Fam.HERMITE, seed=17)
    layer = _layer(cfg)
    x = rng.standard_normal((2, 2, 9, 9))
    seed = F.conv2d(Tensor(x), layer.seed_filters, 2, 1).data
    maps = []
    for j in range(6):
        one = {k: v[j:j + 1] for k, v in layer.transform.params.items()}
        v, _ = apply_family(Fam.HERMITE, one, seed[:, j % 3][:, None], axis=1)
        v = v - v.mean(axis=(2, 3), keepdims=True)
        maps.append(v / (np.sqrt((v ** 2).sum(axis=(2, 3), keepdims=True)) + 1e-5))
    gen = np.concatenate(maps, axis=1)
    mixed = np.einsum("oc,nchw->nohw", layer.combine.data[:, :, 0, 0], gen)
    np.testing.assert_allclose(layer(Tensor(x)).data, np.concatenate([seed, mixed], axis=1),
                               atol=1e-12)


def test_layer_determinism(rng):
    cfg = SineFMConfig(3, 12, 4, 3, 1, 1, 3, Fam.SINUSOIDAL, seed=5)
    x = Tensor(rng.standard_normal((2, 3, 6, 6)), dtype=np.float32)
    a, b = _layer(cfg, np.float32, 9), _layer(cfg, np.float32, 9)
    assert a.transform.param_bytes() == b.transform.param_bytes()
    assert a(x).data.tobytes() == b(x).data.tobytes()


@settings(max_examples=50, deadline=None)
@given(c_in=st.integers(1, 64), c_out=st.integers(1, 256), c_s=st.integers(1, 64),
       kernel=st.sampled_from([1, 3, 5]), k=st.integers(1, 8))
def test_param_count_property(c_in, c_out, c_s, kernel, k):
    if c_s > c_out:
        return
    cfg = SineFMConfig(c_in, c_out, c_s, kernel, 1, kernel // 2, k)
    count = c_s * c_in * kernel ** 2 + (c_out - c_s) * k * c_s
    assert cfg.param_count() == count
    standard = c_out * c_in * kernel ** 2
    if c_s < c_out:
        assert (count < standard) == (k * c_s < c_in * kernel ** 2)


def test_param_count_below_standard_on_backbones():
    from sinefm.network import BUILTINS, SineFMSpec, convert_to_sinefm

    for name in ("tiny-vgg", "tiny-resnet", "tiny-unet"):
        make = BUILTINS[name]
        for spec in convert_to_sinefm(make(), 16, 5).layers:
            if isinstance(spec, SineFMSpec):
                c = spec.config
                assert c.param_count() < c.c_out * c.c_in * c.kernel ** 2, (name, c)


def test_param_count_matches_tensors():
    cfg = SineFMConfig(16, 64, 16, 3, 1, 1, 5)
    layer = _layer(cfg)
    assert sum(p.data.size for p in layer.parameters()) == cfg.param_count()


@pytest.mark.parametrize("fam", list(Fam))
def test_layer_gradients_every_family(fam):
    assert layer_gradcheck(fam) < 1e-4


# -- fit_alpha ------------------------------------------------------------------------

def _patches(seed=0, count=200, size=9):
    return np.random.default_rng(seed).standard_normal((count, size))


def test_fit_alpha_identity_case():
    r = np.random.default_rng(3)
    w = r.standard_normal((1, 1, 3, 3))
    spec = sample_hyperparams(0, Fam.MONOMIAL, 1, {"beta": (1.0, 1.0)})
    fit = fit_alpha(w, spec, w, _patches())
    np.testing.assert_allclose(fit.alpha, [1.0], atol=1e-6)
    assert fit.residual < 1e-6 and not fit.degenerate


def test_fit_alpha_zero_target():
    r = np.random.default_rng(4)
    spec = sample_hyperparams(1, Fam.SINUSOIDAL, 4)
    fit = fit_alpha(r.standard_normal((1, 1, 3, 3)), spec, np.zeros((1, 1, 3, 3)), _patches())
    np.testing.assert_allclose(fit.alpha, 0, atol=1e-12)
    assert fit.residual < 1e-12


def test_fit_alpha_degenerate_design():
    spec = sample_hyperparams(1, Fam.MONOMIAL, 2, {"beta": (1.0, 1.0)})
    target = np.ones((1, 1, 3, 3))
    patches = np.abs(_patches())
    fit = fit_alpha(-np.ones((1, 1, 3, 3)), spec, target, patches)
    assert fit.degenerate
    np.testing.assert_array_equal(fit.alpha, [0.0, 0.0])
    assert fit.residual == pytest.approx(np.sqrt(np.mean((patches @ target.reshape(-1)) ** 2)))


def test_fit_alpha_needs_enough_patches():
    spec = sample_hyperparams(1, Fam.SINUSOIDAL, 8)
    with pytest.raises(ValueError):
        fit_alpha(np.ones(9), spec, np.ones(9), _patches(count=4))


@pytest.mark.parametrize("fam", [Fam.SINUSOIDAL, Fam.GAUSSIAN, Fam.LEGENDRE])
def test_fit_alpha_matches_lstsq(fam):
    r = np.random.default_rng(5)
    ws, wt = r.standard_normal(9), r.standard_normal(9)
    x = _patches(6)
    spec = sample_hyperparams(8, fam, 4)
    fit = fit_alpha(ws, spec, wt, x)
    vals, _ = apply_family(fam, spec.params, np.tile((x @ ws)[:, None], (1, 4)), axis=1)
    design = np.maximum(vals, 0)
    target = np.maximum(x @ wt, 0)
    # ridge oracle through an augmented least-squares system, no normal equations
    aug = np.vstack([design, np.sqrt(1e-8) * np.eye(4)])
    ref, *_ = np.linalg.lstsq(aug, np.concatenate([target, np.zeros(4)]), rcond=None)
    np.testing.assert_allclose(design @ fit.alpha, design @ ref, rtol=0, atol=1e-5)
    assert fit.residual == pytest.approx(np.sqrt(np.mean((design @ ref - target) ** 2)), rel=1e-6)
    best, *_ = np.linalg.lstsq(design, target, rcond=None)
    assert fit.residual >= np.sqrt(np.mean((design @ best - target) ** 2)) - 1e-12


def test_fit_alpha_residual_non_increasing_in_m():
    r = np.random.default_rng(12)
    ws, wt, x = r.standard_normal(9), r.standard_normal(9), _patches(13, 400)
    res = [fit_alpha(ws, sample_hyperparams(21, Fam.SINUSOIDAL, m), wt, x).residual
           for m in (1, 2, 4, 8)]
    assert all(b <= a + 1e-12 for a, b in zip(res, res[1:])), res
