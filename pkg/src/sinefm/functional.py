"""Differentiable operations on :class:`~sinefm.tensor.Tensor`.

Every op computes its forward result with numpy and registers a closure that
maps the output gradient to one gradient per parent (``None`` for parents
that need none).
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ShapeError
from .tensor import Tensor

# Inputs seen by relu while a probe is active; grad_check uses this to find kinks.
_relu_probe = None


def _need4(x, what):
    if x.ndim != 4:
        raise ShapeError(f"{what} expects a rank-4 (N, C, H, W) tensor, got shape {x.shape}")


# -- elementwise ----------------------------------------------------------------

def add(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ (no broadcasting)")
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ (no broadcasting)")
    ad, bd = a.data, b.data
    return Tensor._from_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a, factor):
    f = a.data.dtype.type(factor)
    return Tensor._from_op(a.data * f, (a,), lambda g: (g * f,))


def total(a):
    shape, dtype = a.shape, a.dtype
    return Tensor._from_op(np.asarray(a.data.sum(), dtype=dtype).reshape(()), (a,),
                           lambda g: (np.full(shape, g, dtype=dtype),))


def relu(x):
    """Elementwise ``max(0, x)``; the subgradient at 0 is taken as 0."""
    xd = x.data
    if _relu_probe is not None:
        _relu_probe.append(xd.copy())
    mask = xd > 0
    # np.maximum keeps NaN visible so divergence is not silently masked
    return Tensor._from_op(np.maximum(xd, xd.dtype.type(0)), (x,),
                           lambda g: (g * mask,))


def pointwise(x, fn):
    """Apply ``fn(array) -> (value, derivative)`` elementwise."""
    value, deriv = fn(x.data)
    return Tensor._from_op(value.astype(x.dtype, copy=False), (x,),
                           lambda g: (g * deriv,))


def concat(tensors, axis=1):
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} along axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                           lambda g: tuple(np.ascontiguousarray(p) for p in np.split(g, cuts, axis=axis)))


# -- convolution ----------------------------------------------------------------

def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def _patches(xp, k, stride, ho, wo):
    n, c, _, _ = xp.shape
    s0, s1, s2, s3 = xp.strides
    return as_strided(xp, shape=(n, c, k, k, ho, wo),
                      strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
                      writeable=False)


def conv2d(x, w, stride=1, padding=0):
    """Cross-correlation of ``x`` (N, Ci, H, W) with ``w`` (Co, Ci, K, K), no bias."""
    _need4(x, "conv2d input")
    _need4(w, "conv2d weights")
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise ValueError(f"conv2d: stride must be a positive integer, got {stride!r}")
    if padding < 0:
        raise ValueError(f"conv2d: padding must be non-negative, got {padding!r}")
    n, ci, h, wd = x.shape
    co, wci, kh, kw = w.shape
    if kh != kw:
        raise ShapeError(f"conv2d: only square kernels are supported, got {kh}x{kw}")
    if wci != ci:
        raise ShapeError(f"conv2d: input has {ci} channels but weights expect {wci}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kh, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh} with padding {padding} does not fit input {h}x{wd}")
    xd, wdat = x.data, w.data
    if padding:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = xd
    cols = _patches(xp, kh, stride, ho, wo)
    if kh == 1 and stride == 1:
        out = np.einsum("oc,nchw->nohw", wdat[:, :, 0, 0], xp, optimize=True)
    else:
        out = np.tensordot(wdat, cols, axes=([1, 2, 3], [1, 2, 3])).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out)

    def backward(g):
        gx = gw = None
        if w.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5]))
        if x.requires_grad:
            # dcols[c, ki, kj, n, i, j]
            dcols = np.tensordot(wdat, g, axes=([0], [1]))
            gxp = np.zeros_like(xp)
            span_h = stride * (ho - 1) + 1
            span_w = stride * (wo - 1) + 1
            for ki in range(kh):
                for kj in range(kw):
                    gxp[:, :, ki:ki + span_h:stride, kj:kj + span_w:stride] += \
                        dcols[:, ki, kj].transpose(1, 0, 2, 3)
            gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
            gx = np.ascontiguousarray(gx)
        return gx, gw

    return Tensor._from_op(out, (x, w), backward)


# -- spatial ----------------------------------------------------------------------

def max_pool2(x):
    """2x2 max pooling with stride 2; odd trailing rows/cols are dropped."""
    _need4(x, "max_pool2")
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    if ho < 1 or wo < 1:
        raise ShapeError(f"max_pool2: input {h}x{w} too small")
    xd = x.data[:, :, :2 * ho, :2 * wo]
    blocks = xd.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        onehot = np.zeros_like(blocks)
        np.put_along_axis(onehot, idx[..., None], g[..., None], axis=-1)
        gx = onehot.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
        if (2 * ho, 2 * wo) != (h, w):
            gx = np.pad(gx, ((0, 0), (0, 0), (0, h - 2 * ho), (0, w - 2 * wo)))
        return (np.ascontiguousarray(gx),)

    return Tensor._from_op(np.ascontiguousarray(out), (x,), backward)


def upsample_nearest2(x):
    _need4(x, "upsample_nearest2")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor._from_op(out, (x,), backward)


def global_avg_pool(x):
    """(N, C, H, W) -> (N, C)."""
    _need4(x, "global_avg_pool")
    n, c, h, w = x.shape
    inv = x.dtype.type(1.0 / (h * w))

    def backward(g):
        return (np.broadcast_to((g * inv)[:, :, None, None], (n, c, h, w)).copy(),)

    return Tensor._from_op(x.data.mean(axis=(2, 3)), (x,), backward)


# -- normalization ------------------------------------------------------------------

def normalize_maps(y, eps=1e-5):
    """Center each (sample, channel) map and divide by its L2 norm plus ``eps``.

    The divisor is the square root of the summed squared deviations (not the
    standard deviation), so a non-constant output map has unit L2 norm up to
    the ``eps`` guard.
    """
    _need4(y, "normalize_maps")
    n, c, h, w = y.shape
    if h * w < 1:
        raise ShapeError("normalize_maps: empty spatial extent")
    yd = y.data
    centered = yd - yd.mean(axis=(2, 3), keepdims=True)
    norm = np.sqrt((centered * centered).sum(axis=(2, 3), keepdims=True))
    denom = norm + yd.dtype.type(eps)
    out = centered / denom

    def backward(g):
        proj = (g * centered).sum(axis=(2, 3), keepdims=True)
        safe = np.where(norm > 0, norm, 1)
        coef = np.where(norm > 0, proj / (denom * denom * safe), 0)
        gc = g / denom - centered * coef
        return (gc - gc.mean(axis=(2, 3), keepdims=True),)

    return Tensor._from_op(out, (y,), backward)


# -- heads and losses ------------------------------------------------------------------

def linear(x, w, b):
    """(N, In) @ (Out, In)^T + b."""
    if x.ndim != 2:
        raise ShapeError(f"linear expects (N, features), got {x.shape}")
    if w.shape[1] != x.shape[1]:
        raise ShapeError(f"linear: {x.shape[1]} features in, weights expect {w.shape[1]}")
    xd, wd = x.data, w.data

    def backward(g):
        return g @ wd, g.T @ xd, g.sum(axis=0)

    return Tensor._from_op(xd @ wd.T + b.data, (x, w, b), backward)


def add_channel_bias(x, b):
    _need4(x, "add_channel_bias")
    return Tensor._from_op(x.data + b.data[None, :, None, None], (x, b),
                           lambda g: (g, g.sum(axis=(0, 2, 3))))


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy.

    ``logits`` is (N, K) with integer ``labels`` (N,), or (N, K, H, W) with
    labels (N, H, W) for pixelwise segmentation.
    """
    labels = np.asarray(labels)
    z = logits.data
    if z.ndim == 4:
        z = z.transpose(0, 2, 3, 1).reshape(-1, z.shape[1])
    elif z.ndim != 2:
        raise ShapeError(f"cross_entropy: unsupported logits shape {logits.shape}")
    flat = labels.reshape(-1).astype(np.int64)
    if flat.shape[0] != z.shape[0]:
        raise ShapeError(f"cross_entropy: {z.shape[0]} predictions but {flat.shape[0]} labels")
    shifted = z - z.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    sums = expz.sum(axis=1, keepdims=True)
    rows = np.arange(flat.shape[0])
    m = flat.shape[0]
    loss = (np.log(sums[:, 0]) - shifted[rows, flat]).mean()
    shape4 = logits.shape

    def backward(g):
        p = expz / sums
        p[rows, flat] -= 1
        p *= g / m
        if len(shape4) == 4:
            n, k, h, w = shape4
            p = p.reshape(n, h, w, k).transpose(0, 3, 1, 2)
        return (np.ascontiguousarray(p.astype(logits.dtype, copy=False)),)

    return Tensor._from_op(np.asarray(loss, dtype=logits.dtype).reshape(()), (logits,), backward)
