"""SineFM convolution layer.

One small bank of learnable seed filters produces seed maps; fixed random
transforms expand them ``fanout``-fold, the expansions are normalized, and a
learnable 1x1 convolution mixes them into the remaining output channels.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import functional as F
from .errors import ShapeError
from .functional import normalize_maps
from .tensor import Tensor
from .transforms import (TransformFamily, apply_family, generate_maps,
                         resolve_bounds, sample_hyperparams)

__all__ = ["SineFMConfig", "ChannelPlan", "SineFMLayer", "AlphaFit", "channel_plan",
           "transform_channel_assignment", "normalize_maps", "fit_alpha", "init_uniform"]


@dataclass(frozen=True)
class SineFMConfig:
    c_in: int
    c_out: int
    c_s: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    fanout: int = 5
    family: TransformFamily = TransformFamily.SINUSOIDAL
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", TransformFamily.parse(self.family))
        if self.c_in < 1:
            raise ValueError("c_in must be >= 1")
        if not 1 <= self.c_s <= self.c_out:
            raise ValueError(f"need 1 <= c_s <= c_out, got c_s={self.c_s}, c_out={self.c_out}")
        if self.fanout < 1:
            raise ValueError("fanout must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd, got {self.kernel}")
        if self.stride < 1 or self.padding < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must fit in 64 unsigned bits")

    @property
    def plan(self):
        return channel_plan(self.c_out, self.c_s, self.fanout)

    def param_count(self):
        p = self.plan
        return self.c_s * self.c_in * self.kernel ** 2 + p.combine_out * p.combine_in


class ChannelPlan(NamedTuple):
    c_g: int
    combine_in: int
    combine_out: int

    @property
    def degenerate(self):
        return self.combine_out == 0


def channel_plan(c_out, c_s, k):
    if c_s < 1 or c_s > c_out:
        raise ValueError(f"need 1 <= c_s <= c_out, got c_s={c_s}, c_out={c_out}")
    if k < 1:
        raise ValueError(f"fan-out must be >= 1, got {k}")
    return ChannelPlan(c_s * (math.ceil(c_out / c_s) - 1), k * c_s, c_out - c_s)


def transform_channel_assignment(plan, c_s):
    """``(generated_index, source_seed_channel)`` pairs, round-robin over seeds."""
    return [(j, j % c_s) for j in range(plan.combine_in)]


def init_uniform(rng, shape, fan_in, dtype):
    """Fan-in scaled uniform init, rounded through float32 so packing is lossless."""
    bound = math.sqrt(1.0 / fan_in)
    w = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return w.astype(dtype)


class SineFMLayer:
    """Drop-in replacement for a bias-free ``c_in -> c_out`` convolution."""

    def __init__(self, config, rng=None, dtype=np.float32, bounds=None):
        self.config = config
        self.plan = config.plan
        self.bounds = resolve_bounds(bounds)
        c = config
        rng = rng if rng is not None else np.random.default_rng(c.seed)
        self.seed_filters = Tensor(
            init_uniform(rng, (c.c_s, c.c_in, c.kernel, c.kernel), c.c_in * c.kernel ** 2, dtype),
            requires_grad=True, name="seed_filters")
        self.combine = Tensor(
            init_uniform(rng, (self.plan.combine_out, self.plan.combine_in, 1, 1),
                         self.plan.combine_in, dtype),
            requires_grad=True, name="combine")
        self.transform = sample_hyperparams(c.seed, c.family, self.plan.combine_in, self.bounds)

    def parameters(self):
        return [self.seed_filters, self.combine]

    def forward(self, x):
        c = self.config
        if x.ndim != 4 or x.shape[1] != c.c_in:
            raise ShapeError(f"SineFM layer expects {c.c_in} input channels, got shape {x.shape}")
        seed = F.conv2d(x, self.seed_filters, c.stride, c.padding)
        if self.plan.degenerate:
            return seed
        generated = generate_maps(seed, self.transform, c.fanout)
        mixed = F.conv2d(normalize_maps(generated), self.combine)
        return F.concat([seed, mixed], axis=1)

    __call__ = forward


class AlphaFit(NamedTuple):
    alpha: np.ndarray
    residual: float
    degenerate: bool


def fit_alpha(seed_filter, spec, target_filter, patches, ridge=1e-8):
    """Least-squares combination weights approximating one standard filter.

    Rows of the design matrix are ``relu(phi_i(w_s . x))`` over the patch
    vectors ``x``; the targets are ``relu(w . x)``. Solved through the
    ridge-regularized normal equations.
    """
    ws = np.asarray(getattr(seed_filter, "data", seed_filter), dtype=np.float64).reshape(-1)
    wt = np.asarray(getattr(target_filter, "data", target_filter), dtype=np.float64).reshape(-1)
    x = np.asarray(getattr(patches, "data", patches), dtype=np.float64)
    x = x.reshape(x.shape[0], -1)
    m = spec.count
    if x.shape[0] < m:
        raise ValueError(f"need at least {m} patches for {m} transforms, got {x.shape[0]}")
    if x.shape[1] != ws.size or ws.size != wt.size:
        raise ValueError("patch length must match both filter sizes")
    s = x @ ws
    vals, _ = apply_family(spec.family, spec.params, np.tile(s[:, None], (1, m)), axis=1)
    design = np.maximum(vals, 0.0)
    target = np.maximum(x @ wt, 0.0)
    if not np.any(design):
        return AlphaFit(np.zeros(m), float(np.sqrt(np.mean(target ** 2))), True)
    gram = design.T @ design + ridge * np.eye(m)
    rhs = design.T @ target
    try:
        alpha = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        # repeated columns (same polynomial degree twice) can swamp the ridge
        alpha = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    resid = design @ alpha - target
    return AlphaFit(alpha, float(np.sqrt(np.mean(resid ** 2))), False)
