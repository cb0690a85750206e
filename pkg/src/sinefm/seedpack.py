"""Binary update payload: descriptor, learnable weights and transform seeds.

Layout (all integers and floats little-endian)::

    magic      4 bytes  b"SFM1"
    version    u16
    desc_len   u32, then desc_len bytes of UTF-8 descriptor text
    per layer, in descriptor order:
        kind   u8
        conv / proj      weights f32[...]
        sinefm           seed filters f32[...], combine f32[...], seed u64, family u8
        dense / seghead  weights f32[...], bias f32[...]
    checksum   u64 FNV-1a over every preceding byte

Transform hyperparameters are never written; unpacking re-derives them from
the per-layer seeds.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ChecksumError, FormatError, ValidationError, VersionError
from .network import (ConvSpec, DenseSpec, ProjSpec, SegHeadSpec, SineFMSpec,
                      build, parse_descriptor, to_standard)
from .tensor import DEFAULT_DTYPE
from .transforms import TransformFamily

MAGIC = b"SFM1"
VERSION = 1

KIND_TAGS = {"conv": 1, "sinefm": 2, "dense": 3, "seghead": 4, "proj": 5, "pool": 6,
             "up": 7, "relu": 8, "gap": 9, "push": 10, "add": 11, "concat": 12}
_TAG_KIND = {v: k for k, v in KIND_TAGS.items()}

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data):
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def _kind(spec):
    return spec.to_line().split()[0]


def _float_counts(spec):
    """Float32 counts of each learnable array, in wire order."""
    if isinstance(spec, ConvSpec):
        return [spec.c_out * spec.c_in * spec.kernel ** 2]
    if isinstance(spec, SineFMSpec):
        c = spec.config
        plan = c.plan
        return [c.c_s * c.c_in * c.kernel ** 2, plan.combine_out * plan.combine_in]
    if isinstance(spec, (DenseSpec, SegHeadSpec)):
        return [spec.classes * spec.c_in, spec.classes]
    if isinstance(spec, ProjSpec):
        return [spec.c_out * spec.c_in]
    return []


def _layer_bytes(spec):
    n = 1 + 4 * sum(_float_counts(spec))
    if isinstance(spec, SineFMSpec):
        n += 9
    return n


def payload_size(descriptor):
    text = descriptor.to_text().encode("utf-8")
    return 4 + 2 + 4 + len(text) + sum(_layer_bytes(s) for s in descriptor.layers) + 8


def learnable_float_count(descriptor):
    return sum(sum(_float_counts(s)) for s in descriptor.layers)


def pack(model):
    """Serialize ``model``; weights are written as float32 regardless of compute dtype."""
    text = model.descriptor.to_text().encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(text)), text]
    for spec, mod in zip(model.descriptor.layers, model.modules):
        parts.append(struct.pack("<B", KIND_TAGS[_kind(spec)]))
        if mod is None:
            continue
        for p in mod.parameters():
            parts.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
        if isinstance(spec, SineFMSpec):
            parts.append(struct.pack("<QB", mod.transform.seed, int(mod.transform.family)))
    body = b"".join(parts)
    return body + struct.pack("<Q", fnv1a64(body))


def _read_header(buf):
    if len(buf) < 4 + 2 + 4 + 8:
        raise FormatError(f"payload truncated: {len(buf)} bytes is shorter than any valid pack")
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    version, desc_len = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise VersionError(f"unsupported pack version {version}")
    start = 10
    if start + desc_len > len(buf):
        raise FormatError(f"payload truncated inside descriptor (needs {start + desc_len} bytes)")
    return desc_len, bytes(buf[start:start + desc_len])


def _verify_checksum(buf):
    stored = struct.unpack_from("<Q", buf, len(buf) - 8)[0]
    if fnv1a64(buf[:-8]) != stored:
        raise ChecksumError(f"checksum mismatch: payload corrupt (checksum field at byte offset "
                            f"{len(buf) - 8})", offset=len(buf) - 8)


def unpack(buf, dtype=DEFAULT_DTYPE):
    """Rebuild a model from a pack. Raises before constructing anything on bad input."""
    buf = bytes(buf)
    desc_len, text = _read_header(buf)
    try:
        descriptor = parse_descriptor(text.decode("utf-8"))
        expected = payload_size(descriptor)
    except (UnicodeDecodeError, ValidationError, ValueError) as exc:
        _verify_checksum(buf)
        raise FormatError(f"embedded descriptor invalid: {exc}") from None
    if len(buf) < expected:
        raise FormatError(f"payload truncated: {len(buf)} bytes, layout needs {expected}")
    if len(buf) > expected:
        _verify_checksum(buf)
        raise FormatError(f"payload has {len(buf) - expected} trailing bytes")
    _verify_checksum(buf)

    arrays = []
    off = 10 + desc_len
    for i, spec in enumerate(descriptor.layers):
        tag = buf[off]
        off += 1
        if tag not in _TAG_KIND:
            raise VersionError(f"layer {i}: unknown kind tag {tag} at byte offset {off - 1}")
        if _TAG_KIND[tag] != _kind(spec):
            raise FormatError(f"layer {i}: kind tag {_TAG_KIND[tag]!r} disagrees with descriptor")
        layer_arrays = []
        for count in _float_counts(spec):
            layer_arrays.append(np.frombuffer(buf, dtype="<f4", count=count, offset=off))
            off += 4 * count
        if isinstance(spec, SineFMSpec):
            seed, fam = struct.unpack_from("<QB", buf, off)
            off += 9
            family = TransformFamily.from_tag(fam)
            if seed != spec.config.seed or family != spec.config.family:
                raise FormatError(f"layer {i}: transform seed/family disagree with descriptor")
        arrays.append(layer_arrays)

    model = build(descriptor, dtype=dtype)
    for mod, layer_arrays in zip(model.modules, arrays):
        if mod is None:
            continue
        for p, arr in zip(mod.parameters(), layer_arrays):
            p.data = np.ascontiguousarray(arr.reshape(p.shape), dtype=model.dtype)
    return model


@dataclass(frozen=True)
class SizeReport:
    sinefm_bytes: int
    full_conv_bytes: int

    @property
    def ratio(self):
        return self.full_conv_bytes / self.sinefm_bytes


def size_report(descriptor):
    """Pack size of ``descriptor`` versus the same network with plain convs."""
    return SizeReport(payload_size(descriptor), payload_size(to_standard(descriptor)))


def hex_dump(buf, width=16):
    """Section table followed by a hex view of the header; for debugging."""
    buf = bytes(buf)
    sections = [(0, 4, "magic"), (4, 2, "version"), (6, 4, "descriptor length")]
    desc_len = struct.unpack_from("<I", buf, 6)[0] if len(buf) >= 10 else 0
    sections.append((10, desc_len, "descriptor text"))
    off = 10 + desc_len
    try:
        descriptor = parse_descriptor(buf[10:10 + desc_len].decode("utf-8"))
        for i, spec in enumerate(descriptor.layers):
            sections.append((off, 1, f"layer {i} kind ({_kind(spec)})"))
            off += 1
            names = [p for p in ("seed filters", "combine")] if isinstance(spec, SineFMSpec) \
                else ["weights", "bias"]
            for name, count in zip(names, _float_counts(spec)):
                sections.append((off, 4 * count, f"layer {i} {name} f32[{count}]"))
                off += 4 * count
            if isinstance(spec, SineFMSpec):
                sections.append((off, 9, f"layer {i} transform seed u64 + family u8"))
                off += 9
    except (UnicodeDecodeError, ValidationError, ValueError):
        sections.append((off, max(len(buf) - off - 8, 0), "unparsed"))
    sections.append((len(buf) - 8, 8, "checksum fnv1a64"))
    lines = [f"{o:08x}  {n:>10}  {label}" for o, n, label in sections]
    lines.append("")
    for o in range(0, min(len(buf), 10 + min(desc_len, 64)), width):
        chunk = buf[o:o + width]
        lines.append(f"{o:08x}  {chunk.hex(' '):<{width * 3}} "
                     + "".join(chr(c) if 32 <= c < 127 else "." for c in chunk))
    return "\n".join(lines) + "\n"
