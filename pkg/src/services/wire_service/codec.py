"""
Frame codec.

    magic "SLKF" | version u8 | msg_type u8 | session_id u32 | payload_len u32 | payload

All integers little-endian. Feature payloads are raw binary32 values with no
shape fields.
"""
import enum
import struct
from dataclasses import dataclass

import numpy as np

from src.shared.exceptions import (
    BadMagic, PayloadLengthMismatch, ShapeMismatch, SplitLeakError, Truncated, UnknownType,
    UnsupportedVersion,
)

MAGIC = b'SLKF'
VERSION = 1
HEADER = struct.Struct('<4sBBII')
HEADER_SIZE = HEADER.size
MAX_PAYLOAD = 64 * 1024 * 1024


class MessageType(enum.IntEnum):
    INPUT = 1
    FEATURE = 2
    OUTPUT_SCORE = 3
    OUTPUT_HARD = 4
    SESSION_HELLO = 5
    ACK = 6
    ERROR = 7


MODE_CODES = {'score': 0, 'hard': 1, 'none': 2}
MODES_BY_CODE = {code: mode for mode, code in MODE_CODES.items()}


@dataclass(frozen=True)
class Frame:
    msg_type: MessageType
    session_id: int
    payload: bytes = b''

    @property
    def payload_len(self):
        return len(self.payload)


def encode_frame(frame):
    if not 0 <= frame.session_id <= 0xFFFFFFFF:
        raise ShapeMismatch(f"session_id {frame.session_id} does not fit in u32")
    return HEADER.pack(MAGIC, VERSION, int(frame.msg_type), frame.session_id, len(frame.payload)) + bytes(frame.payload)


def parse_header(data):
    """Validate the fixed header; returns (msg_type, session_id, payload_len)"""
    if len(data) < HEADER_SIZE:
        raise Truncated(f"Frame header needs {HEADER_SIZE} bytes, got {len(data)}")
    magic, version, msg_type, session_id, payload_len = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagic(f"Bad frame magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"Frame version {version} is not supported", {'version': version})
    try:
        msg_type = MessageType(msg_type)
    except ValueError:
        raise UnknownType(f"Unknown message type {msg_type}", {'msg_type': msg_type})
    if payload_len > MAX_PAYLOAD:
        raise PayloadLengthMismatch(f"Declared payload of {payload_len} bytes exceeds {MAX_PAYLOAD}")
    return msg_type, session_id, payload_len


def decode_frame(data):
    """Decode exactly one frame; never reads past payload_len"""
    data = bytes(data)
    msg_type, session_id, payload_len = parse_header(data)
    available = len(data) - HEADER_SIZE
    if available < payload_len:
        raise Truncated(f"Payload declares {payload_len} bytes, only {available} present")
    if available > payload_len:
        raise PayloadLengthMismatch(f"{available - payload_len} trailing bytes after the payload")
    return Frame(msg_type, session_id, data[HEADER_SIZE:HEADER_SIZE + payload_len])


class FrameStream:
    """
    Reassembles frames from an arbitrarily chunked byte stream. A malformed
    header costs one byte and scanning resumes at the next magic.
    """

    def __init__(self):
        self.buffer = bytearray()
        self.errors = []

    def feed(self, data):
        self.buffer.extend(data)
        frames = []
        while True:
            start = self.buffer.find(MAGIC)
            if start < 0:
                del self.buffer[:max(0, len(self.buffer) - len(MAGIC) + 1)]
                return frames
            if start:
                del self.buffer[:start]
            if len(self.buffer) < HEADER_SIZE:
                return frames
            try:
                _, _, payload_len = parse_header(self.buffer)
            except SplitLeakError as e:
                self.errors.append(e)
                del self.buffer[:1]
                continue
            if len(self.buffer) < HEADER_SIZE + payload_len:
                return frames
            frames.append(decode_frame(self.buffer[:HEADER_SIZE + payload_len]))
            del self.buffer[:HEADER_SIZE + payload_len]


# Payload helpers

def encode_floats(values):
    return np.ascontiguousarray(np.asarray(values, dtype='<f4')).tobytes()


def decode_floats(payload):
    if len(payload) % 4:
        raise PayloadLengthMismatch(f"Float payload of {len(payload)} bytes is not a multiple of 4")
    return np.frombuffer(payload, dtype='<f4')


def encode_shape(shape):
    return struct.pack('<3I', *shape)


def decode_shape(payload):
    if len(payload) != 12:
        raise PayloadLengthMismatch(f"session_hello payload must be 12 bytes, got {len(payload)}")
    return tuple(struct.unpack('<3I', payload))


def encode_label(label):
    return struct.pack('<H', label)


def decode_label(payload):
    if len(payload) != 2:
        raise PayloadLengthMismatch(f"output_hard payload must be 2 bytes, got {len(payload)}")
    return struct.unpack('<H', payload)[0]
