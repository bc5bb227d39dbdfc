"""
Capture files: the sniffer's matrix of intercepted feature rows.

    magic "SLKX" | version u16 | N u32 | d u32 | N*d binary32 | CRC32
"""
import logging
import struct

import numpy as np

from src.shared.exceptions import (
    BadMagic, ChecksumMismatch, IoFailure, Truncated, UnsupportedVersion,
)
from src.shared.utils import crc32

logger = logging.getLogger(__name__)

MAGIC = b'SLKX'
VERSION = 1
HEADER = struct.Struct('<4sHII')


def encode_capture(rows):
    rows = np.asarray(rows, dtype='<f4')
    if rows.ndim != 2:
        rows = rows.reshape(0, 0) if rows.size == 0 else rows.reshape(rows.shape[0], -1)
    n, d = rows.shape
    body = HEADER.pack(MAGIC, VERSION, n, d) + np.ascontiguousarray(rows).tobytes()
    return body + struct.pack('<I', crc32(body))


def decode_capture(data):
    """Capture bytes -> float32 array [N, d]"""
    if len(data) < HEADER.size + 4:
        raise Truncated(f"Capture is too short ({len(data)} bytes)")
    magic, version, n, d = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagic(f"Not a capture file (magic {magic!r})")
    if version != VERSION:
        raise UnsupportedVersion(f"Capture version {version} is not supported")
    expected = HEADER.size + 4 * n * d + 4
    if len(data) != expected:
        raise Truncated(f"Capture declares {n}x{d} values but holds {len(data)} bytes, expected {expected}")
    (stored,) = struct.unpack_from('<I', data, len(data) - 4)
    if crc32(data[:-4]) != stored:
        raise ChecksumMismatch('Capture CRC32 does not match its contents')
    return np.frombuffer(data, dtype='<f4', count=n * d, offset=HEADER.size).reshape(n, d).astype(np.float32)


def write_capture(path, rows):
    data = encode_capture(rows)
    try:
        with open(path, 'wb') as f:
            f.write(data)
    except OSError as e:
        raise IoFailure(f"Cannot write capture {path}: {e}")
    logger.info(f"Wrote capture {path}: {len(data)} bytes")


def read_capture(path):
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except OSError as e:
        raise IoFailure(f"Cannot read capture {path}: {e}")
    rows = decode_capture(data)
    logger.info(f"Read capture {path}: N={rows.shape[0]}, d={rows.shape[1]}")
    return rows
