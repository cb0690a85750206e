"""Pointwise nonlinear families used to generate feature maps from a seed map.

Hyperparameters are never learned. They are drawn from a
:class:`~sinefm.rng.Xoshiro256StarStar` stream keyed by a 64-bit seed, so a
:class:`TransformSpec` can always be rebuilt from ``(family, count, seed,
bounds)`` alone.
"""

import enum
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, VersionError
from .rng import Xoshiro256StarStar
from .tensor import Tensor
from . import functional as F


class TransformFamily(enum.IntEnum):
    MONOMIAL = 0
    CHEBYSHEV = 1
    HERMITE = 2
    LEGENDRE = 3
    GAUSSIAN = 4
    MULTIQUADRATIC = 5
    INVERSE_QUADRATIC = 6
    INVERSE_MULTIQUADRATIC = 7
    SINUSOIDAL = 8

    @property
    def label(self):
        return self.name.lower().replace("_", "-")

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("_", "-")
        for fam in cls:
            if fam.label == key or fam.label.replace("-", "") == key.replace("-", ""):
                return fam
        aliases = {"sine": cls.SINUSOIDAL, "sin": cls.SINUSOIDAL, "rbf": cls.GAUSSIAN,
                   "poly": cls.LEGENDRE, "mono": cls.MONOMIAL}
        if key in aliases:
            return aliases[key]
        raise ValueError(f"unknown transform family {text!r}; expected one of "
                         + ", ".join(f.label for f in cls))

    @classmethod
    def from_tag(cls, tag):
        try:
            return cls(tag)
        except ValueError:
            raise VersionError(f"unknown transform family tag {tag}") from None


POLYNOMIALS = (TransformFamily.CHEBYSHEV, TransformFamily.HERMITE, TransformFamily.LEGENDRE)
RBFS = (TransformFamily.GAUSSIAN, TransformFamily.MULTIQUADRATIC,
        TransformFamily.INVERSE_QUADRATIC, TransformFamily.INVERSE_MULTIQUADRATIC)


@dataclass(frozen=True)
class HyperBounds:
    lower: float
    upper: float

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ValueError("bounds must be finite")
        if self.lower > self.upper:
            raise ValueError(f"lower bound {self.lower} exceeds upper bound {self.upper}")


DEFAULT_BOUNDS = {
    "beta": HyperBounds(1.0, 5.0),
    "degree": HyperBounds(1.0, 5.0),
    "epsilon": HyperBounds(1.0, 2.0),
    "omega": HyperBounds(1.0, 2.0),
    "psi": HyperBounds(1.0, 5.0),
}

# Quantities drawn per generated channel, in draw order.
_QUANTITIES = {
    TransformFamily.MONOMIAL: ("beta",),
    TransformFamily.SINUSOIDAL: ("omega", "psi"),
    **{f: ("degree",) for f in POLYNOMIALS},
    **{f: ("epsilon",) for f in RBFS},
}


def quantities(family):
    return _QUANTITIES[TransformFamily(family)]


def resolve_bounds(overrides=None):
    bounds = dict(DEFAULT_BOUNDS)
    for name, value in (overrides or {}).items():
        if name not in DEFAULT_BOUNDS:
            raise ValueError(f"unknown hyperparameter {name!r}")
        bounds[name] = value if isinstance(value, HyperBounds) else HyperBounds(*map(float, value))
    return bounds


@dataclass(frozen=True)
class TransformSpec:
    family: TransformFamily
    seed: int
    count: int
    bounds: dict
    params: dict = field(compare=False, repr=False)

    def __len__(self):
        return self.count

    def channel_params(self, index):
        return {k: v[index] for k, v in self.params.items()}

    def param_bytes(self):
        """Concatenated raw bytes of every sampled array (for bit comparisons)."""
        return b"".join(self.params[k].tobytes() for k in sorted(self.params))

    def to_bytes(self):
        """``family u8 | count u32 | seed u64 | (lower f64, upper f64) per quantity``, little-endian."""
        out = struct.pack("<BIQ", int(self.family), self.count, self.seed)
        for q in quantities(self.family):
            b = self.bounds[q]
            out += struct.pack("<dd", b.lower, b.upper)
        return out

    @classmethod
    def from_bytes(cls, buf):
        if len(buf) < 13:
            raise FormatError("transform record truncated")
        tag, count, seed = struct.unpack_from("<BIQ", buf, 0)
        family = TransformFamily.from_tag(tag)
        names = quantities(family)
        need = 13 + 16 * len(names)
        if len(buf) < need:
            raise FormatError("transform record truncated")
        overrides = {}
        for i, q in enumerate(names):
            overrides[q] = HyperBounds(*struct.unpack_from("<dd", buf, 13 + 16 * i))
        return sample_hyperparams(seed, family, count, overrides)


def sample_hyperparams(seed, family, count, bounds=None):
    """Draw per-channel hyperparameters for ``count`` generated channels.

    Channels are drawn in order and, within a channel, quantities in the order
    given by :func:`quantities` (omega before psi). A prefix of a longer draw
    therefore equals a shorter draw with the same seed.
    """
    family = TransformFamily.parse(family)
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    bounds = resolve_bounds(bounds)
    names = quantities(family)
    gen = Xoshiro256StarStar(seed)
    cols = {q: [] for q in names}
    for _ in range(count):
        for q in names:
            b = bounds[q]
            if q == "degree":
                cols[q].append(gen.randint(int(math.ceil(b.lower)), int(math.floor(b.upper))))
            else:
                cols[q].append(gen.uniform(b.lower, b.upper))
    params = {q: np.asarray(v, dtype=np.int64 if q == "degree" else np.float64)
              for q, v in cols.items()}
    for arr in params.values():
        arr.setflags(write=False)
    used = {q: bounds[q] for q in names}
    return TransformSpec(family, int(seed) & ((1 << 64) - 1), int(count), used, params)


# -- evaluation ---------------------------------------------------------------------

def eval_polynomial_recurrence(family, n, x):
    """Degree-``n`` Chebyshev (T), physicists' Hermite (H) or Legendre (P) at ``x``."""
    family = TransformFamily.parse(family)
    if family not in POLYNOMIALS:
        raise ValueError(f"{family.label} is not a polynomial family")
    if n < 0:
        raise ValueError(f"degree must be non-negative, got {n}")
    values, _ = _poly_table(family, n, np.asarray(x, dtype=np.float64))
    out = values[n]
    return float(out) if np.ndim(out) == 0 else out


def _poly_table(family, max_degree, x):
    """Values and x-derivatives of degrees 0..max_degree, by three-term recurrence."""
    one = np.ones_like(x)
    zero = np.zeros_like(x)
    vals, ders = [one], [zero]
    if max_degree >= 1:
        if family is TransformFamily.HERMITE:
            vals.append(2 * x)
            ders.append(2 * one)
        else:
            vals.append(x.copy())
            ders.append(one.copy())
    for k in range(1, max_degree):
        p, pm = vals[k], vals[k - 1]
        d, dm = ders[k], ders[k - 1]
        if family is TransformFamily.CHEBYSHEV:
            vals.append(2 * x * p - pm)
            ders.append(2 * p + 2 * x * d - dm)
        elif family is TransformFamily.HERMITE:
            vals.append(2 * x * p - 2 * k * pm)
            ders.append(2 * p + 2 * x * d - 2 * k * dm)
        else:
            vals.append(((2 * k + 1) * x * p - k * pm) / (k + 1))
            ders.append(((2 * k + 1) * (p + x * d) - k * dm) / (k + 1))
    return vals, ders


def _broadcast(arr, ndim, axis):
    shape = [1] * ndim
    shape[axis] = arr.shape[0]
    return arr.reshape(shape)


def apply_family(family, params, x, axis=1):
    """Evaluate a family on array ``x`` with one parameter set per slice along ``axis``.

    Returns ``(value, derivative)`` in the dtype of ``x``.
    """
    dt = x.dtype
    nd = x.ndim

    def p(name):
        return _broadcast(params[name], nd, axis).astype(dt)

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if family is TransformFamily.SINUSOIDAL:
            w, s = p("omega"), p("psi")
            arg = w * x + s
            return np.sin(arg), w * np.cos(arg)
        if family is TransformFamily.MONOMIAL:
            beta = p("beta")
            ax = np.abs(x)
            nz = x != 0
            safe = np.where(nz, ax, 1)
            val = np.where(nz, np.sign(x) * safe ** beta, 0)
            der = np.where(nz, beta * safe ** (beta - 1), np.where(beta == 1, 1, 0))
            return val.astype(dt), der.astype(dt)
        if family in POLYNOMIALS:
            deg = _broadcast(params["degree"], nd, axis)
            vals, ders = _poly_table(family, int(params["degree"].max()), x)
            val = np.zeros(np.broadcast_shapes(x.shape, deg.shape), dtype=dt)
            der = np.zeros_like(val)
            for d in np.unique(params["degree"]):
                sel = deg == d
                val = np.where(sel, vals[d], val)
                der = np.where(sel, ders[d], der)
            return val, der
        e = p("epsilon")
        e2 = e * e
        r2 = e2 * x * x
        if family is TransformFamily.GAUSSIAN:
            val = np.exp(-r2)
            return val, -2 * e2 * x * val
        if family is TransformFamily.MULTIQUADRATIC:
            val = np.sqrt(1 + r2)
            return val, e2 * x / val
        if family is TransformFamily.INVERSE_QUADRATIC:
            val = 1 / (1 + r2)
            return val, -2 * e2 * x * val * val
        if family is TransformFamily.INVERSE_MULTIQUADRATIC:
            val = 1 / np.sqrt(1 + r2)
            return val, -e2 * x * val ** 3
    raise ValueError(f"unhandled family {family!r}")


def eval_transform(spec, channel_index, x):
    """Apply channel ``channel_index`` of ``spec`` elementwise to tensor ``x``."""
    if not 0 <= channel_index < spec.count:
        raise IndexError(f"channel {channel_index} out of range for {spec.count} channels")
    one = {k: v[channel_index:channel_index + 1] for k, v in spec.params.items()}
    flat_axis = 0

    def fn(arr):
        v, d = apply_family(spec.family, one, arr.reshape(1, -1), axis=flat_axis)
        return v.reshape(arr.shape), d.reshape(arr.shape)

    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=np.float64))
    return F.pointwise(x, fn)


def generate_maps(seed_maps, spec, fanout):
    """Apply all ``fanout * C_s`` transforms of ``spec`` to a (N, C_s, H, W) seed tensor.

    Generated channel ``j`` reads seed channel ``j mod C_s``.
    """
    n, cs, h, w = seed_maps.shape
    if spec.count != fanout * cs:
        raise ValueError(f"spec has {spec.count} channels, need {fanout * cs}")
    src = seed_maps.data
    tiled = np.tile(src, (1, fanout, 1, 1))
    val, der = apply_family(spec.family, spec.params, tiled, axis=1)

    def backward(g):
        return ((g * der).reshape(n, fanout, cs, h, w).sum(axis=1),)

    return Tensor._from_op(np.ascontiguousarray(val, dtype=src.dtype), (seed_maps,), backward)
