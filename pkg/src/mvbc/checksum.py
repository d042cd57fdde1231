"""CRC32C (Castagnoli) checksums for dataset and model files.

Table-driven implementation of the reflected polynomial 0x82F63B78 with the
usual init/final xor of 0xFFFFFFFF, so ``crc32c(b"123456789") == 0xE3069283``.
A numba kernel handles multi-megabyte payloads; a pure-python loop serves as
fallback when numba is unavailable.
"""

from __future__ import annotations

import numpy as np

_POLY = 0x82F63B78


def _make_table() -> np.ndarray:
    table = np.empty(256, dtype=np.uint32)
    for i in range(256):
        c = i
        for _ in range(8):
            c = (_POLY ^ (c >> 1)) if (c & 1) else (c >> 1)
        table[i] = c
    return table


_TABLE = _make_table()

try:
    from numba import njit

    @njit(cache=True)
    def _crc_kernel(data, table, crc):  # pragma: no cover - compiled
        c = crc
        for i in range(data.shape[0]):
            c = (c >> np.uint32(8)) ^ table[(c ^ np.uint32(data[i])) & np.uint32(0xFF)]
        return c

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


def _crc_python(data: np.ndarray, crc: int) -> int:
    table = _TABLE
    c = crc
    for b in data.tobytes():
        c = (c >> 8) ^ int(table[(c ^ b) & 0xFF])
    return c


def crc32c(data, value: int = 0) -> int:
    """Checksum of ``data`` (bytes-like or uint8 array).

    ``value`` chains calls: crc32c(b, crc32c(a)) == crc32c(a + b).
    """
    arr = np.frombuffer(data, dtype=np.uint8) if not isinstance(data, np.ndarray) else data
    if arr.dtype != np.uint8:
        arr = arr.view(np.uint8)
    arr = np.ascontiguousarray(arr.ravel())
    crc = (value & 0xFFFFFFFF) ^ 0xFFFFFFFF
    if _HAVE_NUMBA:
        crc = int(_crc_kernel(arr, _TABLE, np.uint32(crc)))
    else:
        crc = _crc_python(arr, crc)
    return (crc ^ 0xFFFFFFFF) & 0xFFFFFFFF
