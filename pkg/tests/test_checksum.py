import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mvbc.checksum import _crc_python, crc32c


def test_reference_check_value():
    # standard check value for the Castagnoli polynomial
    assert crc32c(b"123456789") == 0xE3069283


def test_empty_input():
    assert crc32c(b"") == 0


def test_known_values_stable():
    assert crc32c(b"\x00" * 32) == crc32c(b"\x00" * 32)
    assert crc32c(b"a") != crc32c(b"b")


@given(st.binary(max_size=300), st.integers(0, 300))
def test_chaining_equals_whole(data, split):
    split = min(split, len(data))
    whole = crc32c(data)
    first = crc32c(data[:split])
    assert crc32c(data[split:], value=first) == whole


@given(st.binary(min_size=1, max_size=200))
def test_python_fallback_matches_kernel(data):
    fallback = _crc_python(np.frombuffer(data, dtype=np.uint8), 0xFFFFFFFF)
    assert (fallback ^ 0xFFFFFFFF) == crc32c(data)


def test_ndarray_input_matches_bytes():
    arr = np.arange(256, dtype=np.uint8)
    assert crc32c(arr) == crc32c(arr.tobytes())
    f = np.linspace(0, 1, 64, dtype=np.float32)
    assert crc32c(f.view(np.uint8)) == crc32c(f.tobytes())


def test_single_bit_flip_changes_crc():
    data = bytearray(b"\x5a" * 100)
    base = crc32c(bytes(data))
    for byte_idx in (0, 50, 99):
        for bit in (0, 7):
            flipped = bytearray(data)
            flipped[byte_idx] ^= 1 << bit
            assert crc32c(bytes(flipped)) != base


def test_value_range():
    crc = crc32c(b"some data")
    assert 0 <= crc <= 0xFFFFFFFF
