"""
Binary checkpoint format (little-endian):

    magic "SLKC" | version u16 | header length u32 | header (UTF-8 JSON)
    per parameter: name length u16 | name | rank u8 | dims u32 x rank |
                   precision u8 (4 or 8) | raw elements
    CRC32 of every preceding byte (u32)

The header names a ``kind``; each kind registers a restore function that
rebuilds the module from the header and the parameter tensors.
"""
import json
import logging
import struct

import numpy as np
import torch

from src.services.autograd_service.tensor import ELEMENT_SIZE, dtype_for_size
from src.shared.exceptions import (
    ChecksumMismatch, FormatVersionMismatch, InvalidConfig, IoFailure, SplitLeakError,
)
from src.shared.utils import crc32

logger = logging.getLogger(__name__)

MAGIC = b'SLKC'
FORMAT_VERSION = 1
PREFIX = struct.Struct('<4sHI')

CHECKPOINT_KINDS = {}


def register_checkpoint_kind(kind, restore):
    """restore(header, tensors, dtype) -> module"""
    CHECKPOINT_KINDS[kind] = restore


def encode_checkpoint(model, metadata=None):
    header = {
        'kind': model.checkpoint_kind,
        'format_version': FORMAT_VERSION,
        **model.checkpoint_header(),
        'metadata': {**getattr(model, 'metadata', {}), **(metadata or {})},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')
    chunks = [PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)), header_bytes]
    for name, tensor in model.state_dict().items():
        name_bytes = name.encode('utf-8')
        width = ELEMENT_SIZE[tensor.dtype]
        chunks.append(struct.pack('<H', len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack('<B', tensor.dim()))
        chunks.append(struct.pack(f'<{tensor.dim()}I', *tensor.shape))
        chunks.append(struct.pack('<B', width))
        chunks.append(tensor.detach().cpu().numpy().astype(f'<f{width}').tobytes())
    body = b''.join(chunks)
    return body + struct.pack('<I', crc32(body))


def decode_checkpoint(data):
    """Split checkpoint bytes into (header, ordered parameter tensors)"""
    if len(data) < PREFIX.size + 4:
        raise FormatVersionMismatch(f"Checkpoint is too short ({len(data)} bytes)")
    magic, version, header_len = PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatVersionMismatch(f"Not a checkpoint (magic {magic!r})")
    (stored_crc,) = struct.unpack_from('<I', data, len(data) - 4)
    if crc32(data[:-4]) != stored_crc:
        raise ChecksumMismatch('Checkpoint CRC32 does not match its contents')
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"Checkpoint format version {version}, expected {FORMAT_VERSION}",
            {'found': version, 'expected': FORMAT_VERSION},
        )

    end = len(data) - 4
    offset = PREFIX.size
    try:
        header = json.loads(data[offset:offset + header_len].decode('utf-8'))
        offset += header_len
        tensors = {}
        while offset < end:
            (name_len,) = struct.unpack_from('<H', data, offset)
            offset += 2
            name = data[offset:offset + name_len].decode('utf-8')
            offset += name_len
            (rank,) = struct.unpack_from('<B', data, offset)
            offset += 1
            dims = struct.unpack_from(f'<{rank}I', data, offset)
            offset += 4 * rank
            (width,) = struct.unpack_from('<B', data, offset)
            offset += 1
            count = int(np.prod(dims)) if dims else 1
            raw = data[offset:offset + count * width]
            if len(raw) != count * width or offset + count * width > end:
                raise FormatVersionMismatch(f"Parameter '{name}' runs past the end of the file")
            offset += count * width
            values = np.frombuffer(raw, dtype=f'<f{width}').reshape(dims).copy()
            tensors[name] = torch.from_numpy(values).to(dtype_for_size(width))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, InvalidConfig) as e:
        raise FormatVersionMismatch(f"Checkpoint body is malformed: {e}")
    return header, tensors


def save_checkpoint(model, path, metadata=None):
    data = encode_checkpoint(model, metadata)
    try:
        with open(path, 'wb') as f:
            f.write(data)
    except OSError as e:
        raise IoFailure(f"Cannot write checkpoint {path}: {e}")
    logger.info(f"Saved {model.checkpoint_kind} checkpoint to {path} ({len(data)} bytes)")
    return len(data)


def load_checkpoint(path, expected_kind=None):
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except OSError as e:
        raise IoFailure(f"Cannot read checkpoint {path}: {e}")

    header, tensors = decode_checkpoint(data)
    kind = header.get('kind', 'classifier')
    if expected_kind and kind != expected_kind:
        raise FormatVersionMismatch(f"{path} holds a {kind} checkpoint, expected {expected_kind}")
    if kind not in CHECKPOINT_KINDS:
        raise FormatVersionMismatch(f"No loader registered for checkpoint kind '{kind}'")

    dtype = next(iter(tensors.values())).dtype if tensors else torch.float32
    try:
        model = CHECKPOINT_KINDS[kind](header, tensors, dtype)
    except SplitLeakError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise FormatVersionMismatch(f"Checkpoint header is incomplete: {e}")
    model.metadata = dict(header.get('metadata', {}))
    logger.info(f"Loaded {kind} checkpoint from {path}")
    return model


def load_split_model(path, split_index):
    """Classifier checkpoint partitioned at a layer position"""
    from .split import split_at

    return split_at(load_checkpoint(path, expected_kind='classifier'), split_index)
