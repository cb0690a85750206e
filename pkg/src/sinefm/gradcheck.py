"""Central finite-difference check of analytic gradients."""

import numpy as np

from . import functional
from .errors import ValidationError

KINK_TOL = 1e-6


def _evaluate(forward_fn, probe):
    functional._relu_probe = probe
    try:
        out = forward_fn()
    finally:
        functional._relu_probe = None
    return float(np.asarray(out.data).reshape(-1)[0])


def _straddles_kink(base, plus, minus):
    for b, p, m in zip(base, plus, minus):
        moved = p != m
        if np.any(moved & (np.abs(b) < KINK_TOL)):
            return True
        if np.any((p > 0) != (m > 0)):
            return True
    return False


def grad_check(forward_fn, params, eps=1e-5, return_details=False):
    """Max relative error between backprop and central differences.

    ``forward_fn`` takes no arguments and returns a scalar tensor built from
    ``params``. Elements whose perturbation moves any relu input across (or
    onto) its kink are left out, since the subgradient there is not a
    derivative.
    """
    for p in params:
        if p.dtype != np.float64:
            raise ValidationError("grad_check requires 64-bit parameters")
        p.zero_grad()

    base_relu = []
    loss = forward_fn()
    first = float(loss.data)
    functional._relu_probe = base_relu
    try:
        again = forward_fn()
    finally:
        functional._relu_probe = None
    if float(again.data) != first:
        raise ValidationError("forward_fn is not deterministic: two evaluations differ")
    loss.backward()

    worst = 0.0
    checked = skipped = 0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            plus_relu, minus_relu = [], []
            flat[i] = orig + eps
            f_plus = _evaluate(forward_fn, plus_relu)
            flat[i] = orig - eps
            f_minus = _evaluate(forward_fn, minus_relu)
            flat[i] = orig
            if base_relu and _straddles_kink(base_relu, plus_relu, minus_relu):
                skipped += 1
                continue
            numeric = (f_plus - f_minus) / (2 * eps)
            a = float(aflat[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
            checked += 1
    if return_details:
        return worst, checked, skipped
    return worst


def layer_gradcheck(family, seed=0, eps=1e-5):
    """Check one small SineFM layer (3 -> 8 channels, 2 seeds, fan-out 3) in 64-bit.

    The loss is a fixed random projection of the layer output, so every
    output element contributes an O(1) gradient.
    """
    from .layer import SineFMConfig, SineFMLayer
    from .rng import derive_seed
    from .tensor import Tensor

    rng = np.random.default_rng(derive_seed(seed, 2))
    x = Tensor(rng.standard_normal((2, 3, 8, 8)))
    probe = Tensor(rng.standard_normal((2, 8, 8, 8)))
    layer = SineFMLayer(SineFMConfig(3, 8, 2, 3, 1, 1, 3, family, derive_seed(seed, 1)),
                        rng=np.random.default_rng(derive_seed(seed, 0)), dtype=np.float64)
    return grad_check(lambda: (layer(x) * probe).sum(), layer.parameters(), eps)
