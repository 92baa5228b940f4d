import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ndpp.errors import FormatError
from ndpp.io import (
    decode_factors,
    decode_tree,
    encode_factors,
    encode_tree,
    format_baskets,
    load_factors,
    load_metadata,
    load_tree,
    parse_baskets,
    read_baskets,
    save_factors,
    save_tree,
    write_baskets,
)
from ndpp.kernel import random_factors
from ndpp.tree import construct_tree


def test_header_layout(rng):
    f = random_factors(3, 2, rng, ondpp=True)
    buf = encode_factors(f)
    assert buf[:4] == b"NDPF"
    assert struct.unpack_from("<IQQB", buf, 4) == (1, 3, 2, 1)
    assert len(buf) == 25 + 8 * (3 * 2 * 2 + 4)
    V = np.frombuffer(buf, dtype="<f8", count=6, offset=25).reshape(3, 2)
    np.testing.assert_array_equal(V, f.V)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), M=st.integers(1, 20), half=st.integers(1, 3), ondpp=st.booleans())
def test_factor_round_trip(seed, M, half, ondpp):
    K = 2 * half
    if ondpp and M < K:
        M = K
    f = random_factors(M, K, np.random.default_rng(seed), ondpp=ondpp)
    g = decode_factors(encode_factors(f))
    assert g.ondpp == ondpp
    for a, b in ((f.V, g.V), (f.B, g.B), (f.D, g.D)):
        np.testing.assert_array_equal(a, b)


def test_truncation_reports_offset(rng):
    buf = encode_factors(random_factors(4, 2, rng))
    for cut in (0, 10, 25, 60, len(buf) - 1):
        with pytest.raises(FormatError) as info:
            decode_factors(buf[:cut])
        assert info.value.offset == cut
        assert f"byte offset {cut}" in str(info.value)


def test_corrupt_headers(rng):
    buf = bytearray(encode_factors(random_factors(4, 2, rng)))
    with pytest.raises(FormatError, match="magic"):
        decode_factors(b"XXXX" + bytes(buf[4:]))
    bad = bytearray(buf)
    bad[4] = 9
    with pytest.raises(FormatError, match="version"):
        decode_factors(bytes(bad))
    bad = bytearray(buf)
    bad[24] = 0x80
    with pytest.raises(FormatError, match="flag"):
        decode_factors(bytes(bad))
    with pytest.raises(FormatError, match="trailing"):
        decode_factors(bytes(buf) + b"\0")


def test_invalid_payload(rng):
    f = random_factors(4, 2, rng)
    buf = bytearray(encode_factors(f))
    buf[25:33] = np.array([np.nan]).astype("<f8").tobytes()
    with pytest.raises(FormatError, match="invalid factors"):
        decode_factors(bytes(buf))


def test_save_with_sidecar(tmp_path, rng):
    f = random_factors(5, 2, rng)
    p = tmp_path / "k.ndpf"
    save_factors(p, f, {"seed": 3, "generator": "test"})
    g = load_factors(p)
    np.testing.assert_array_equal(f.Z, g.Z)
    assert load_metadata(p) == {"seed": 3, "generator": "test"}
    save_factors(tmp_path / "bare.ndpf", f)
    assert load_metadata(tmp_path / "bare.ndpf") is None


# ---------------------------------------------------------------- trees


@pytest.mark.parametrize("leaf_size", [1, 5])
def test_tree_round_trip_is_bit_identical(tmp_path, rng, leaf_size):
    Z = np.linalg.qr(rng.standard_normal((23, 6)))[0]
    t = construct_tree(Z, leaf_size=leaf_size)
    save_tree(tmp_path / "t.ndpt", t)
    u = load_tree(tmp_path / "t.ndpt", Z)
    assert u.sigma.tobytes() == t.sigma.tobytes()
    for name in ("start", "stop", "left", "right", "level"):
        np.testing.assert_array_equal(getattr(u, name), getattr(t, name))
    assert u.leaf_size == leaf_size


def test_tree_errors(rng):
    Z = rng.standard_normal((9, 2))
    buf = encode_tree(construct_tree(Z))
    with pytest.raises(FormatError) as info:
        decode_tree(buf[:-3], Z)
    assert info.value.offset == len(buf) - 3
    with pytest.raises(FormatError, match="magic"):
        decode_tree(b"NDPF" + buf[4:], Z)
    bad = bytearray(buf)
    bad[32:40] = (999).to_bytes(8, "little")
    with pytest.raises(FormatError, match="node count"):
        decode_tree(bytes(bad), Z)
    with pytest.raises(ValueError, match="shape"):
        decode_tree(buf, Z[:5])


# ---------------------------------------------------------------- baskets


def test_parse_baskets():
    lines = ["# header\n", "3 1\n", "\n", "  7  \n"]
    parsed = parse_baskets(lines)
    assert [(n, b.tolist()) for n, b in parsed] == [(2, [1, 3]), (3, []), (4, [7])]


@pytest.mark.parametrize(
    "line,match",
    [("1 x 2", "non-integer"), ("1 -2", "negative"), ("2 2", "repeated"), ("1.5", "non-integer")],
)
def test_parse_errors_carry_line(line, match):
    with pytest.raises(FormatError, match=match) as info:
        parse_baskets(["0\n", line + "\n"])
    assert info.value.line == 2


def test_empty_basket_rejected_when_asked():
    with pytest.raises(FormatError, match="empty") as info:
        parse_baskets(["1\n", "\n"], allow_empty=False)
    assert info.value.line == 2


def test_basket_file_round_trip(tmp_path):
    baskets = [np.array([0, 4]), np.array([], dtype=np.int64), np.array([2])]
    p = tmp_path / "b.txt"
    write_baskets(p, baskets, header=["made by a test"])
    assert p.read_text().startswith("# made by a test\n")
    back = read_baskets(p)
    assert [b.tolist() for b in back] == [[0, 4], [], [2]]
    assert format_baskets([]) == ""
