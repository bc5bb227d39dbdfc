"""
Attacker query data: what the client observed for each input, paired with the
feature rows the sniffer intercepted for the same queries.

Query log file (.slkq, little-endian):

    magic "SLKQ" | version u16 | N u32 | C u32 | H u32 | W u32 | K u32 | flags u8
    N items of: C*H*W binary32 input [, K binary32 probs] [, u16 hard] [, u16 label]
    CRC32 of everything before it

flags: bit0 probs, bit1 hard labels, bit2 ground-truth labels.
"""
import logging
import struct
from dataclasses import dataclass

import numpy as np
import torch

from src.shared.exceptions import (
    BadMagic, ChecksumMismatch, DatasetEmpty, InconsistentDim, IoFailure, MissingSupervision,
    ShapeEstimateMissing, Truncated, UnsupportedVersion,
)
from src.shared.utils import crc32

logger = logging.getLogger(__name__)

MAGIC = b'SLKQ'
VERSION = 1
HEADER = struct.Struct('<4sHIIIIIB')

FLAG_PROBS = 1
FLAG_HARD = 2
FLAG_LABELS = 4


@dataclass
class QueryLog:
    """
    inputs: [N, C, H, W] float tensor
    probs: [N, K] target probabilities (score mode) or None
    hard: [N] target labels (score or hard mode) or None
    labels: [N] ground truth or None
    """
    inputs: torch.Tensor
    probs: torch.Tensor = None
    hard: torch.Tensor = None
    labels: torch.Tensor = None

    def __post_init__(self):
        n = self.inputs.shape[0]
        for name in ('probs', 'hard', 'labels'):
            value = getattr(self, name)
            if value is not None and value.shape[0] != n:
                raise InconsistentDim(
                    f"Query log has {n} inputs but {value.shape[0]} {name}",
                    {'inputs': n, name: value.shape[0]},
                )

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def flags(self):
        return (
            (FLAG_PROBS if self.probs is not None else 0)
            | (FLAG_HARD if self.hard is not None else 0)
            | (FLAG_LABELS if self.labels is not None else 0)
        )


def _item_dtype(volume, classes, flags):
    fields = [('input', '<f4', (volume,))]
    if flags & FLAG_PROBS:
        fields.append(('probs', '<f4', (classes,)))
    if flags & FLAG_HARD:
        fields.append(('hard', '<u2'))
    if flags & FLAG_LABELS:
        fields.append(('label', '<u2'))
    return np.dtype(fields)


def encode_query_log(log):
    n = len(log)
    c, h, w = log.inputs.shape[1:]
    classes = log.probs.shape[1] if log.probs is not None else 0
    flags = log.flags
    items = np.zeros(n, dtype=_item_dtype(c * h * w, classes, flags))
    items['input'] = log.inputs.reshape(n, -1).float().numpy()
    if flags & FLAG_PROBS:
        items['probs'] = log.probs.float().numpy()
    if flags & FLAG_HARD:
        items['hard'] = log.hard.numpy()
    if flags & FLAG_LABELS:
        items['label'] = log.labels.numpy()
    body = HEADER.pack(MAGIC, VERSION, n, c, h, w, classes, flags) + items.tobytes()
    return body + struct.pack('<I', crc32(body))


def decode_query_log(data):
    if len(data) < HEADER.size + 4:
        raise Truncated(f"Query log is too short ({len(data)} bytes)")
    magic, version, n, c, h, w, classes, flags = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagic(f"Not a query log (magic {magic!r})")
    if version != VERSION:
        raise UnsupportedVersion(f"Query log version {version} is not supported")
    dtype = _item_dtype(c * h * w, classes, flags)
    expected = HEADER.size + n * dtype.itemsize + 4
    if len(data) != expected:
        raise Truncated(f"Query log declares {n} items but holds {len(data)} bytes, expected {expected}")
    (stored,) = struct.unpack_from('<I', data, len(data) - 4)
    if crc32(data[:-4]) != stored:
        raise ChecksumMismatch('Query log CRC32 does not match its contents')

    items = np.frombuffer(data, dtype=dtype, count=n, offset=HEADER.size)
    return QueryLog(
        inputs=torch.from_numpy(items['input'].astype(np.float32)).reshape(n, c, h, w),
        probs=torch.from_numpy(items['probs'].astype(np.float32)) if flags & FLAG_PROBS else None,
        hard=torch.from_numpy(items['hard'].astype(np.int64)) if flags & FLAG_HARD else None,
        labels=torch.from_numpy(items['label'].astype(np.int64)) if flags & FLAG_LABELS else None,
    )


def write_query_log(path, log):
    data = encode_query_log(log)
    try:
        with open(path, 'wb') as f:
            f.write(data)
    except OSError as e:
        raise IoFailure(f"Cannot write query log {path}: {e}")
    logger.info(f"Wrote query log {path}: {len(log)} items, flags {log.flags:03b}")


def read_query_log(path):
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except OSError as e:
        raise IoFailure(f"Cannot read query log {path}: {e}")
    return decode_query_log(data)


@dataclass
class QueryDataset:
    """Distillation data; every sequence is aligned by query index"""
    inputs: torch.Tensor
    features: torch.Tensor = None
    probs: torch.Tensor = None
    hard: torch.Tensor = None
    labels: torch.Tensor = None

    def __post_init__(self):
        n = self.inputs.shape[0]
        for name in ('features', 'probs', 'hard', 'labels'):
            value = getattr(self, name)
            if value is not None and value.shape[0] != n:
                raise InconsistentDim(f"{name} holds {value.shape[0]} items for {n} inputs")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def feature_shape(self):
        return None if self.features is None else tuple(self.features.shape[1:])

    def require_items(self):
        if len(self) == 0:
            raise DatasetEmpty('Query dataset has no items')

    def supervision(self, mode):
        """Output targets for a supervision mode"""
        value = {'score': self.probs, 'hard': self.hard, 'label': self.labels}[mode]
        if value is None:
            raise MissingSupervision(f"Query dataset carries no {mode} supervision", {'mode': mode})
        return value

    def subset(self, indices):
        index = torch.as_tensor(indices, dtype=torch.long)

        def pick(value):
            return None if value is None else value[index]

        return QueryDataset(
            inputs=self.inputs[index],
            features=pick(self.features),
            probs=pick(self.probs),
            hard=pick(self.hard),
            labels=pick(self.labels),
        )

    def batches(self, batch_size, order=None):
        order = torch.arange(len(self)) if order is None else order
        for start in range(0, len(self), batch_size):
            yield self.subset(order[start:start + batch_size])


def _feature_shape(estimate):
    if estimate is None:
        raise ShapeEstimateMissing('Captured features cannot be reshaped without a shape estimate')
    return tuple(int(v) for v in getattr(estimate, 'shape', estimate))


def build_query_dataset(log, capture_rows, estimate):
    """
    Pair a query log with the capture rows of the same queries, reshaping each
    row to the estimated (C, H, W)
    """
    shape = _feature_shape(estimate)
    rows = np.asarray(capture_rows)
    if rows.ndim != 2 or rows.shape[0] != len(log):
        raise InconsistentDim(
            f"Capture holds {rows.shape[0] if rows.ndim else 0} rows for {len(log)} queries",
            {'rows': int(rows.shape[0]) if rows.ndim else 0, 'queries': len(log)},
        )
    volume = shape[0] * shape[1] * shape[2]
    if rows.shape[1] != volume:
        raise InconsistentDim(
            f"Capture width {rows.shape[1]} does not match the estimated shape {shape}",
            {'d': int(rows.shape[1]), 'shape': list(shape)},
        )
    features = torch.from_numpy(np.ascontiguousarray(rows, dtype=np.float32)).reshape(len(log), *shape)
    return QueryDataset(log.inputs, features, log.probs, log.hard, log.labels)


def issue_queries(client, inputs, labels=None):
    """Send every input once and record the observations; returns a QueryLog"""
    start = client.query_count
    probs, hard = [], []
    for image in inputs:
        observation = client.infer(image)
        if observation.probs is not None:
            probs.append(torch.from_numpy(observation.probs))
            hard.append(int(np.argmax(observation.probs)))
        elif observation.label is not None:
            hard.append(observation.label)
    issued = client.query_count - start
    if issued != len(inputs):
        raise InconsistentDim(f"Issued {issued} queries for {len(inputs)} inputs")

    log = QueryLog(
        inputs=torch.as_tensor(inputs).float(),
        probs=torch.stack(probs) if probs else None,
        hard=torch.as_tensor(hard, dtype=torch.long) if hard else None,
        labels=None if labels is None else torch.as_tensor(labels, dtype=torch.long),
    )
    logger.info(f"Issued {issued} queries in {client.mode} mode")
    return log


def collect_queries(client, sniffer, inputs, estimate, labels=None):
    """Query the deployment and build a dataset from the rows the sniffer captured meanwhile"""
    _feature_shape(estimate)
    first_row = sniffer.count
    log = issue_queries(client, inputs, labels)
    return build_query_dataset(log, sniffer.capture()[first_row:], estimate)
