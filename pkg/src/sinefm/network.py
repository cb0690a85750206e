"""Architecture descriptors, model construction and SineFM conversion.

A descriptor is a flat list of layer specs executed in order against a
current activation plus a small stack, which is enough for residual blocks
(``push`` ... ``add``) and U-Net skips (``push`` ... ``concat``).

Text format, one layer per line::

    input C H W
    conv c_in c_out K stride pad
    sinefm c_in c_out c_s K stride pad k family seed
    pool | up | relu | gap
    dense in classes
    seghead in classes
    push                       # save the current activation
    proj c_in c_out stride     # 1x1 projection applied to the saved activation
    add                        # pop and add the saved activation
    concat                     # pop and append the saved activation's channels
    bounds name lower upper    # transform hyperparameter range override

``#`` starts a comment.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from . import functional as F
from .errors import ShapeError, ValidationError
from .layer import SineFMConfig, SineFMLayer, init_uniform
from .rng import derive_seed
from .tensor import DEFAULT_DTYPE, Tensor
from .transforms import HyperBounds, TransformFamily, resolve_bounds

# -- layer specs ------------------------------------------------------------------


@dataclass(frozen=True)
class ConvSpec:
    c_in: int
    c_out: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1

    def to_line(self):
        return f"conv {self.c_in} {self.c_out} {self.kernel} {self.stride} {self.padding}"


@dataclass(frozen=True)
class SineFMSpec:
    config: SineFMConfig

    def to_line(self):
        c = self.config
        return (f"sinefm {c.c_in} {c.c_out} {c.c_s} {c.kernel} {c.stride} {c.padding} "
                f"{c.fanout} {c.family.label} {c.seed}")


@dataclass(frozen=True)
class DenseSpec:
    c_in: int
    classes: int

    def to_line(self):
        return f"dense {self.c_in} {self.classes}"


@dataclass(frozen=True)
class SegHeadSpec:
    c_in: int
    classes: int

    def to_line(self):
        return f"seghead {self.c_in} {self.classes}"


@dataclass(frozen=True)
class ProjSpec:
    c_in: int
    c_out: int
    stride: int = 1

    def to_line(self):
        return f"proj {self.c_in} {self.c_out} {self.stride}"


@dataclass(frozen=True)
class SimpleSpec:
    kind: str

    def to_line(self):
        return self.kind


POOL, UP, RELU, GAP = SimpleSpec("pool"), SimpleSpec("up"), SimpleSpec("relu"), SimpleSpec("gap")
PUSH, ADD, CONCAT = SimpleSpec("push"), SimpleSpec("add"), SimpleSpec("concat")
_SIMPLE = {s.kind: s for s in (POOL, UP, RELU, GAP, PUSH, ADD, CONCAT)}

LEARNABLE = (ConvSpec, SineFMSpec, DenseSpec, SegHeadSpec, ProjSpec)


@dataclass(frozen=True)
class ArchDescriptor:
    input_shape: Tuple[int, int, int]
    layers: Tuple = ()
    bounds: Tuple = field(default=())  # sorted (name, HyperBounds) overrides

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        b = self.bounds.items() if isinstance(self.bounds, dict) else self.bounds
        object.__setattr__(self, "bounds", tuple(sorted((k, v if isinstance(v, HyperBounds)
                                                          else HyperBounds(*v)) for k, v in b)))

    @property
    def bounds_dict(self):
        return resolve_bounds(dict(self.bounds))

    @property
    def head(self):
        for spec in reversed(self.layers):
            if isinstance(spec, DenseSpec):
                return "class"
            if isinstance(spec, SegHeadSpec):
                return "seg"
        return None

    def with_bounds(self, **overrides):
        merged = dict(self.bounds)
        merged.update(overrides)
        return replace(self, bounds=merged)

    def to_text(self):
        lines = ["input {} {} {}".format(*self.input_shape)]
        for name, b in self.bounds:
            lines.append(f"bounds {name} {b.lower!r} {b.upper!r}")
        lines.extend(spec.to_line() for spec in self.layers)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        return parse_descriptor(text)


def parse_descriptor(text):
    input_shape = None
    layers, bounds = [], {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        kind, args = tok[0].lower(), tok[1:]
        try:
            if kind == "input":
                _arity(args, 3)
                input_shape = tuple(int(a) for a in args)
            elif kind == "bounds":
                _arity(args, 3)
                bounds[args[0]] = HyperBounds(float(args[1]), float(args[2]))
            elif kind == "conv":
                _arity(args, 5)
                layers.append(ConvSpec(*map(int, args)))
            elif kind == "sinefm":
                _arity(args, 9)
                c_in, c_out, c_s, k, stride, pad, fan = map(int, args[:7])
                layers.append(SineFMSpec(SineFMConfig(c_in, c_out, c_s, k, stride, pad, fan,
                                                      TransformFamily.parse(args[7]), int(args[8]))))
            elif kind == "dense":
                _arity(args, 2)
                layers.append(DenseSpec(*map(int, args)))
            elif kind == "seghead":
                _arity(args, 2)
                layers.append(SegHeadSpec(*map(int, args)))
            elif kind == "proj":
                _arity(args, 3)
                layers.append(ProjSpec(*map(int, args)))
            elif kind in _SIMPLE:
                _arity(args, 0)
                layers.append(_SIMPLE[kind])
            else:
                raise ValueError(f"unknown layer kind {kind!r}")
        except (ValueError, TypeError) as exc:
            raise ValidationError(f"descriptor line {lineno}: {exc}") from None
    if input_shape is None:
        raise ValidationError("descriptor has no 'input C H W' header")
    try:
        resolve_bounds(bounds)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    return ArchDescriptor(input_shape, tuple(layers), bounds)


def _arity(args, n):
    if len(args) != n:
        raise ValueError(f"expected {n} arguments, got {len(args)}")


# -- shape walking ----------------------------------------------------------------


@dataclass(frozen=True)
class LayerShape:
    index: int
    spec: object
    in_shape: Tuple      # (C, H, W), or (C,) after global pooling
    out_shape: Tuple
    side_in: Optional[Tuple] = None   # stack-top shape consumed by proj/add/concat


def walk(descriptor, hw=None):
    """Validate channel/spatial chaining and return a :class:`LayerShape` per layer."""
    c, h, w = descriptor.input_shape
    if hw is not None:
        h, w = hw
    cur = (c, h, w)
    stack, rows, seeds = [], [], set()

    def fail(i, msg):
        raise ValidationError(f"layer {i}: {msg}")

    for i, spec in enumerate(descriptor.layers):
        side = None
        if isinstance(spec, (ConvSpec, SineFMSpec)):
            cfg = spec.config if isinstance(spec, SineFMSpec) else spec
            if len(cur) != 3:
                fail(i, "convolution after global pooling")
            if cfg.c_in != cur[0]:
                fail(i, f"expects {cfg.c_in} input channels but receives {cur[0]}")
            if cfg.kernel % 2 == 0:
                fail(i, f"kernel {cfg.kernel} is even")
            ho = F.conv_output_size(cur[1], cfg.kernel, cfg.stride, cfg.padding)
            wo = F.conv_output_size(cur[2], cfg.kernel, cfg.stride, cfg.padding)
            if ho < 1 or wo < 1:
                fail(i, f"kernel does not fit {cur[1]}x{cur[2]} input")
            if isinstance(spec, SineFMSpec):
                if cfg.seed in seeds:
                    fail(i, f"transform seed {cfg.seed} reused")
                seeds.add(cfg.seed)
            new = (cfg.c_out, ho, wo)
        elif spec is POOL:
            if len(cur) != 3 or cur[1] < 2 or cur[2] < 2:
                fail(i, f"cannot pool activation of shape {cur}")
            new = (cur[0], cur[1] // 2, cur[2] // 2)
        elif spec is UP:
            if len(cur) != 3:
                fail(i, "upsampling after global pooling")
            new = (cur[0], cur[1] * 2, cur[2] * 2)
        elif spec is RELU:
            new = cur
        elif spec is GAP:
            if len(cur) != 3:
                fail(i, "global pooling applied twice")
            new = (cur[0],)
        elif isinstance(spec, DenseSpec):
            if len(cur) != 1:
                fail(i, "dense head needs a pooled (C,) activation; add 'gap'")
            if spec.c_in != cur[0]:
                fail(i, f"dense expects {spec.c_in} features but receives {cur[0]}")
            new = (spec.classes,)
        elif isinstance(spec, SegHeadSpec):
            if len(cur) != 3 or spec.c_in != cur[0]:
                fail(i, f"seghead expects {spec.c_in} channels but receives {cur}")
            new = (spec.classes, cur[1], cur[2])
        elif spec is PUSH:
            stack.append(cur)
            new = cur
        elif isinstance(spec, ProjSpec):
            if not stack:
                fail(i, "proj with nothing pushed")
            top = stack[-1]
            if len(top) != 3 or top[0] != spec.c_in:
                fail(i, f"proj expects {spec.c_in} channels on the stack but finds {top}")
            side = top
            stack[-1] = (spec.c_out, F.conv_output_size(top[1], 1, spec.stride, 0),
                         F.conv_output_size(top[2], 1, spec.stride, 0))
            new = cur
        elif spec is ADD:
            if not stack:
                fail(i, "add with nothing pushed")
            side = stack.pop()
            if side != cur:
                fail(i, f"residual shape {side} does not match {cur}")
            new = cur
        elif spec is CONCAT:
            if not stack:
                fail(i, "concat with nothing pushed")
            side = stack.pop()
            if len(side) != 3 or len(cur) != 3 or side[1:] != cur[1:]:
                fail(i, f"cannot concatenate {cur} with {side}")
            new = (cur[0] + side[0], cur[1], cur[2])
        else:
            fail(i, f"unsupported spec {spec!r}")
        rows.append(LayerShape(i, spec, cur, new, side))
        cur = new
    if stack:
        raise ValidationError(f"{len(stack)} pushed activation(s) never consumed")
    return rows


def validate(descriptor):
    walk(descriptor)
    return descriptor


def output_shape(descriptor, hw=None):
    rows = walk(descriptor, hw)
    return rows[-1].out_shape if rows else descriptor.input_shape


# -- conversion ---------------------------------------------------------------------


def convert_to_sinefm(descriptor, c_s=16, k=5, family=TransformFamily.SINUSOIDAL, seed=0):
    """Swap every standard conv wider than ``c_s`` for a SineFM layer of the same shape.

    Layer ``i`` gets transform seed ``derive_seed(seed, i)``. Projection
    shortcuts and heads are left alone.
    """
    family = TransformFamily.parse(family)
    layers = []
    for i, spec in enumerate(descriptor.layers):
        if isinstance(spec, ConvSpec) and spec.c_out > c_s:
            spec = SineFMSpec(SineFMConfig(spec.c_in, spec.c_out, min(c_s, spec.c_out), spec.kernel,
                                           spec.stride, spec.padding, k, family,
                                           derive_seed(seed, i)))
        layers.append(spec)
    return replace(descriptor, layers=tuple(layers))


def to_standard(descriptor):
    """Replace each SineFM layer by a plain conv with identical geometry."""
    layers = []
    for spec in descriptor.layers:
        if isinstance(spec, SineFMSpec):
            c = spec.config
            spec = ConvSpec(c.c_in, c.c_out, c.kernel, c.stride, c.padding)
        layers.append(spec)
    return replace(descriptor, layers=tuple(layers))


# -- reference backbones ----------------------------------------------------------------

def _seq(*parts):
    out = []
    for p in parts:
        out.extend(p if isinstance(p, (list, tuple)) else [p])
    return tuple(out)


def _conv_relu(c_in, c_out, k=3, stride=1, pad=None):
    return [ConvSpec(c_in, c_out, k, stride, k // 2 if pad is None else pad), RELU]


def tiny_vgg(hw=32, classes=4):
    return ArchDescriptor((3, hw, hw), _seq(
        _conv_relu(3, 16), POOL,
        _conv_relu(16, 64), _conv_relu(64, 64), POOL,
        _conv_relu(64, 128), _conv_relu(128, 128), _conv_relu(128, 128),
        GAP, DenseSpec(128, classes)))


def _basic_block(c):
    return [PUSH, *_conv_relu(c, c), ConvSpec(c, c, 3, 1, 1), ADD, RELU]


def tiny_resnet(hw=32, classes=4):
    return ArchDescriptor((3, hw, hw), _seq(
        _conv_relu(3, 16), POOL,
        _conv_relu(16, 64), _basic_block(64), POOL,
        _conv_relu(64, 128), _basic_block(128),
        GAP, DenseSpec(128, classes)))


def tiny_unet(hw=32, classes=2):
    return ArchDescriptor((3, hw, hw), _seq(
        _conv_relu(3, 16), _conv_relu(16, 16), PUSH, POOL,
        _conv_relu(16, 32), _conv_relu(32, 32), PUSH, POOL,
        _conv_relu(32, 64),
        UP, CONCAT, _conv_relu(96, 32),
        UP, CONCAT, _conv_relu(48, 16),
        SegHeadSpec(16, classes)))


def resnet50(hw=224, classes=1000):
    layers = [*_conv_relu(3, 64, 7, 2, 3), POOL]
    c_in = 64
    for mid, n_blocks, stride in ((64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)):
        out = mid * 4
        for b in range(n_blocks):
            s = stride if b == 0 else 1
            layers += [PUSH, *_conv_relu(c_in, mid, 1), *_conv_relu(mid, mid, 3, s, 1),
                       ConvSpec(mid, out, 1, 1, 0)]
            if b == 0:
                layers.append(ProjSpec(c_in, out, s))
            layers += [ADD, RELU]
            c_in = out
    layers += [GAP, DenseSpec(c_in, classes)]
    return ArchDescriptor((3, hw, hw), tuple(layers))


BUILTINS = {
    "tiny-vgg": tiny_vgg,
    "tiny-resnet": tiny_resnet,
    "tiny-unet": tiny_unet,
    "resnet50": resnet50,
}


def load_descriptor(name_or_path):
    """Builtin name (``tiny-vgg`` ...) or a path to a descriptor text file."""
    key = str(name_or_path)
    if key in BUILTINS:
        return BUILTINS[key]()
    path = Path(key)
    if not path.exists():
        raise ValidationError(f"no builtin architecture or file named {key!r}; "
                              f"builtins: {', '.join(BUILTINS)}")
    return parse_descriptor(path.read_text())


# -- models -------------------------------------------------------------------------------


class _Conv:
    def __init__(self, spec, rng, dtype):
        self.spec = spec
        k = spec.kernel
        self.weight = Tensor(init_uniform(rng, (spec.c_out, spec.c_in, k, k), spec.c_in * k * k, dtype),
                             requires_grad=True, name="weight")

    def parameters(self):
        return [self.weight]

    def __call__(self, x):
        return F.conv2d(x, self.weight, self.spec.stride, self.spec.padding)


class _Proj:
    def __init__(self, spec, rng, dtype):
        self.spec = spec
        self.weight = Tensor(init_uniform(rng, (spec.c_out, spec.c_in, 1, 1), spec.c_in, dtype),
                             requires_grad=True, name="weight")

    def parameters(self):
        return [self.weight]

    def __call__(self, x):
        return F.conv2d(x, self.weight, self.spec.stride, 0)


class _Dense:
    def __init__(self, spec, rng, dtype):
        self.spec = spec
        self.weight = Tensor(init_uniform(rng, (spec.classes, spec.c_in), spec.c_in, dtype),
                             requires_grad=True, name="weight")
        self.bias = Tensor(np.zeros(spec.classes, dtype=dtype), requires_grad=True, name="bias")

    def parameters(self):
        return [self.weight, self.bias]

    def __call__(self, x):
        return F.linear(x, self.weight, self.bias)


class _SegHead:
    def __init__(self, spec, rng, dtype):
        self.spec = spec
        self.weight = Tensor(init_uniform(rng, (spec.classes, spec.c_in, 1, 1), spec.c_in, dtype),
                             requires_grad=True, name="weight")
        self.bias = Tensor(np.zeros(spec.classes, dtype=dtype), requires_grad=True, name="bias")

    def parameters(self):
        return [self.weight, self.bias]

    def __call__(self, x):
        return F.add_channel_bias(F.conv2d(x, self.weight), self.bias)


class Model:
    """Instantiated descriptor: learnable tensors plus fixed transform specs."""

    def __init__(self, descriptor, seed=0, dtype=DEFAULT_DTYPE):
        self.rows = walk(descriptor)
        self.descriptor = descriptor
        self.seed = seed
        self.dtype = np.dtype(dtype)
        init_seed = derive_seed(seed, 0)
        bounds = descriptor.bounds_dict
        self.modules = []
        for i, spec in enumerate(descriptor.layers):
            rng = np.random.default_rng(derive_seed(init_seed, i))
            if isinstance(spec, ConvSpec):
                mod = _Conv(spec, rng, self.dtype)
            elif isinstance(spec, SineFMSpec):
                mod = SineFMLayer(spec.config, rng, self.dtype, bounds)
            elif isinstance(spec, DenseSpec):
                mod = _Dense(spec, rng, self.dtype)
            elif isinstance(spec, SegHeadSpec):
                mod = _SegHead(spec, rng, self.dtype)
            elif isinstance(spec, ProjSpec):
                mod = _Proj(spec, rng, self.dtype)
            else:
                mod = None
            self.modules.append(mod)

    def parameters(self):
        return [p for m in self.modules if m is not None for p in m.parameters()]

    def sinefm_layers(self):
        return [m for m in self.modules if isinstance(m, SineFMLayer)]

    def transform_fingerprint(self):
        return b"".join(m.transform.param_bytes() for m in self.sinefm_layers())

    def state_dict(self):
        return {f"{i}.{p.name}": p.data.copy()
                for i, m in enumerate(self.modules) if m is not None for p in m.parameters()}

    def load_state_dict(self, state):
        for i, m in enumerate(self.modules):
            if m is None:
                continue
            for p in m.parameters():
                key = f"{i}.{p.name}"
                if key not in state:
                    raise ValidationError(f"state is missing {key}")
                arr = np.asarray(state[key])
                if arr.shape != p.shape:
                    raise ShapeError(f"{key}: expected shape {p.shape}, got {arr.shape}")
                p.data = np.ascontiguousarray(arr, dtype=self.dtype)

    def forward(self, x):
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        c = self.descriptor.input_shape[0]
        if x.ndim != 4 or x.shape[1] != c:
            raise ShapeError(f"model expects input (N, {c}, H, W), got {x.shape}")
        stack = []
        for spec, mod in zip(self.descriptor.layers, self.modules):
            if isinstance(spec, ProjSpec):
                stack[-1] = mod(stack[-1])
            elif mod is not None:
                x = mod(x)
            elif spec is RELU:
                x = F.relu(x)
            elif spec is POOL:
                x = F.max_pool2(x)
            elif spec is UP:
                x = F.upsample_nearest2(x)
            elif spec is GAP:
                x = F.global_avg_pool(x)
            elif spec is PUSH:
                stack.append(x)
            elif spec is ADD:
                x = F.add(x, stack.pop())
            elif spec is CONCAT:
                x = F.concat([x, stack.pop()], axis=1)
        return x

    __call__ = forward


def build(descriptor, seed=0, dtype=DEFAULT_DTYPE):
    """Instantiate ``descriptor``; weights come from sub-seeds of ``seed``."""
    return Model(descriptor, seed=seed, dtype=dtype)


def predict(model, x):
    """Logits (N, classes) for a dense head, score maps (N, classes, H, W) for a seg head."""
    return model.forward(x)
