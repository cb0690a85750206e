import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sinefm.cost import model_cost
from sinefm.errors import ChecksumError, FormatError, VersionError
from sinefm.layer import SineFMConfig
from sinefm.network import (ArchDescriptor, SineFMSpec, build, convert_to_sinefm, predict,
                            tiny_resnet, tiny_unet, tiny_vgg, to_standard)
from sinefm.seedpack import (MAGIC, fnv1a64, hex_dump, learnable_float_count, pack,
                             payload_size, size_report, unpack)


@pytest.fixture(scope="module")
def small_model():
    return build(convert_to_sinefm(tiny_vgg(16), 8, 3, "chebyshev", 5), seed=11)


@pytest.fixture(scope="module")
def blob(small_model):
    return pack(small_model)


def test_fnv1a_reference_values():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_round_trip_bit_identical(small_model, blob, rng):
    model = unpack(blob)
    for _ in range(3):
        x = rng.standard_normal((2, 3, 16, 16)).astype(np.float32)
        assert predict(model, x).data.tobytes() == predict(small_model, x).data.tobytes()
    assert model.transform_fingerprint() == small_model.transform_fingerprint()


def test_pack_is_deterministic(small_model, blob):
    assert pack(small_model) == blob
    assert pack(unpack(blob)) == blob


def test_layout_header(blob, small_model):
    assert blob[:4] == MAGIC
    version, desc_len = struct.unpack_from("<HI", blob, 4)
    assert version == 1
    assert blob[10:10 + desc_len].decode() == small_model.descriptor.to_text()
    assert len(blob) == payload_size(small_model.descriptor)
    assert struct.unpack_from("<Q", blob, len(blob) - 8)[0] == fnv1a64(blob[:-8])


@settings(max_examples=40, deadline=None)
@given(data=st.data())
def test_any_flipped_payload_byte_rejected(blob, data):
    pos = data.draw(st.integers(10, len(blob) - 1))
    bit = data.draw(st.integers(0, 7))
    bad = bytearray(blob)
    bad[pos] ^= 1 << bit
    with pytest.raises(FormatError):
        unpack(bytes(bad))


def test_flipped_weight_byte_is_checksum_error(blob):
    bad = bytearray(blob)
    bad[len(blob) - 100] ^= 0x10
    with pytest.raises(ChecksumError, match="checksum") as info:
        unpack(bytes(bad))
    assert info.value.offset == len(blob) - 8


@pytest.mark.parametrize("cut", [0, 3, 9, 40, -9, -1])
def test_truncation_rejected(blob, cut):
    with pytest.raises(FormatError):
        unpack(blob[:cut] if cut else b"")


def test_trailing_bytes_rejected(blob):
    with pytest.raises(FormatError):
        unpack(blob + b"\0")


def test_bad_magic(blob):
    with pytest.raises(FormatError, match="magic"):
        unpack(b"XXXX" + blob[4:])


def test_bad_version(blob):
    with pytest.raises(VersionError):
        unpack(blob[:4] + struct.pack("<H", 2) + blob[6:])


def _resign(buf):
    return buf[:-8] + struct.pack("<Q", fnv1a64(buf[:-8]))


def test_unknown_family_tag():
    cfg = SineFMConfig(3, 6, 2, 3, 1, 1, 2, "gaussian", 77)
    model = build(ArchDescriptor((3, 8, 8), (SineFMSpec(cfg),)))
    blob = bytearray(pack(model))
    blob[-9] = 42                       # family byte sits just before the checksum
    with pytest.raises(VersionError):
        unpack(_resign(bytes(blob)))


def test_seed_mismatch_with_descriptor():
    cfg = SineFMConfig(3, 6, 2, 3, 1, 1, 2, "gaussian", 77)
    blob = bytearray(pack(build(ArchDescriptor((3, 8, 8), (SineFMSpec(cfg),)))))
    blob[-17] ^= 1                      # low byte of the transform seed
    with pytest.raises(FormatError, match="seed"):
        unpack(_resign(bytes(blob)))


def test_float64_model_packs_as_float32(rng):
    model = build(convert_to_sinefm(tiny_vgg(16), 8, 2), dtype=np.float64)
    again = unpack(pack(model), dtype=np.float64)
    x = rng.standard_normal((1, 3, 16, 16))
    assert predict(again, x).data.tobytes() == predict(model, x).data.tobytes()


def test_size_report_single_layer_hand_count():
    cfg = SineFMConfig(256, 256, 16, 3, 1, 1, 5, "sinusoidal", 1)
    desc = ArchDescriptor((256, 32, 32), (SineFMSpec(cfg),))
    assert learnable_float_count(desc) == 256 * 9 * 16 + 80 * 240 == 56064
    assert learnable_float_count(to_standard(desc)) == 589824
    rep = size_report(desc)
    overhead = payload_size(desc) - 4 * 56064
    assert rep.sinefm_bytes == 4 * 56064 + overhead
    assert rep.ratio == pytest.approx(589824 / 56064, rel=0.01)


def test_size_report_without_sinefm_is_unity():
    rep = size_report(tiny_vgg())
    assert rep.ratio == 1.0


@pytest.mark.parametrize("make", [tiny_vgg, tiny_resnet, tiny_unet])
def test_float_count_matches_cost_model(make):
    for desc in (make(), convert_to_sinefm(make(), 16, 5)):
        assert learnable_float_count(desc) == model_cost(desc).total_params
        assert learnable_float_count(desc) == sum(p.data.size for p in build(desc).parameters())


def test_converted_tiny_resnet_ratio():
    assert size_report(convert_to_sinefm(tiny_resnet(), 16, 5)).ratio >= 3.0


def test_payload_independent_of_input_size():
    a = convert_to_sinefm(tiny_vgg(16), 16, 5)
    b = convert_to_sinefm(tiny_vgg(64), 16, 5)
    assert payload_size(a) - len(a.to_text()) == payload_size(b) - len(b.to_text())


def test_hex_dump_sections(blob):
    text = hex_dump(blob)
    assert "magic" in text and "checksum fnv1a64" in text
    assert "transform seed u64 + family u8" in text
    assert text.splitlines()[0].startswith("00000000")
