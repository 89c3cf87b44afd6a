"""Sparse increments of faulty layer outputs relative to the TMR reference.

Wire layout of one packet (little-endian)::

    layer_id u16 | encoding u8 (0 raw, 1 sparse) | payload_len u64 | payload

A raw payload is the int8 tensor bytes. A sparse payload is a nonzero count
(u32) followed, per nonzero in flat order, by the index gap as an unsigned
LEB128 varint and the value as int16.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import kernels
from .errors import DecodeError, ShapeError

_PACKET_HEAD = struct.Struct("<HBQ")
PACKET_HEADER_SIZE = _PACKET_HEAD.size


class Encoding(IntEnum):
    RAW = 0
    SPARSE = 1


class Compressor:
    """Second-stage lossless byte compressor; the base class is the identity."""

    name = "identity"

    def compress(self, data: bytes) -> bytes:
        return data

    def decompress(self, data: bytes) -> bytes:
        return data


class ZlibCompressor(Compressor):
    name = "zlib"

    def __init__(self, level=1):
        self.level = level

    def compress(self, data):
        return zlib.compress(data, self.level)

    def decompress(self, data):
        try:
            return zlib.decompress(data)
        except zlib.error as exc:
            raise DecodeError("compressor", str(exc)) from None


IDENTITY = Compressor()


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeError("tensors differ in shape", None, (a.shape, b.shape))


def compute_increment(actual, reference):
    """``actual - reference`` in int16 (range [-255, 255])."""
    actual, reference = np.asarray(actual), np.asarray(reference)
    _same_shape(actual, reference)
    return actual.astype(np.int16) - reference.astype(np.int16)


def reconstruct(reference, inc, saturate=False):
    """Add an increment back onto its reference.

    Against the reference the increment was computed from, the sum always
    fits int8 and anything else is a decode error. A different reference
    (the server's clean recompute) can overshoot; ``saturate`` clips instead.
    """
    reference, inc = np.asarray(reference), np.asarray(inc)
    _same_shape(reference, inc)
    total = reference.astype(np.int16) + inc.astype(np.int16)
    if saturate:
        return np.clip(total, -128, 127).astype(np.int8)
    if total.size and (total.min() < -128 or total.max() > 127):
        raise DecodeError("range", "reconstructed value outside int8")
    return total.astype(np.int8)


def encode_sparse(inc) -> bytes:
    return kernels.encode_sparse(np.asarray(inc, dtype=np.int16).ravel())


def decode_sparse(payload, shape):
    size = int(np.prod(shape))
    return kernels.decode_sparse(payload, size).reshape(shape)


@dataclass(frozen=True)
class IncrementPacket:
    layer_id: int
    encoding: Encoding
    payload: bytes

    def to_bytes(self):
        return _PACKET_HEAD.pack(self.layer_id, int(self.encoding), len(self.payload)) + self.payload

    @property
    def size(self):
        return PACKET_HEADER_SIZE + len(self.payload)

    @classmethod
    def from_bytes(cls, buf, offset=0):
        """Parse one packet at ``offset``; returns ``(packet, next_offset)``."""
        if offset + PACKET_HEADER_SIZE > len(buf):
            raise DecodeError("truncated", "packet header")
        layer_id, enc, n = _PACKET_HEAD.unpack_from(buf, offset)
        if enc not in (0, 1):
            raise DecodeError("encoding", f"unknown packet encoding {enc}")
        start = offset + PACKET_HEADER_SIZE
        if n > len(buf) - start:
            raise DecodeError("truncated", f"packet payload of layer {layer_id}")
        return cls(layer_id, Encoding(enc), bytes(buf[start:start + n])), start + n

    def tensor(self, reference=None, shape=None, compressor=IDENTITY, saturate=False):
        """Recover the layer output: raw bytes, or ``reference`` + decoded increment."""
        if self.encoding == Encoding.RAW:
            shape = shape if shape is not None else reference.shape
            size = int(np.prod(shape))
            if len(self.payload) != size:
                raise DecodeError("size", f"raw layer {self.layer_id}: {len(self.payload)} != {size}")
            return np.frombuffer(self.payload, np.int8).reshape(shape).copy()
        inc = decode_sparse(compressor.decompress(self.payload), reference.shape)
        return reconstruct(reference, inc, saturate)


def choose_encoding(capture, layer_id, threshold, similarity=None, compressor=IDENTITY):
    """Pick the packet for one layer of a TMR capture.

    Sparse is used only for TMR-protected layers whose similarity reaches the
    threshold and whose encoded increment is strictly smaller than the raw
    tensor; otherwise the designated faulty output is sent raw.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    copy0 = np.ascontiguousarray(capture.copy0[layer_id])
    raw = copy0.tobytes()
    sim = capture.similarity[layer_id] if similarity is None else similarity
    protected = capture.protected[layer_id] if capture.protected else True
    if protected and sim >= threshold:
        payload = compressor.compress(encode_sparse(compute_increment(copy0, capture.voted[layer_id])))
        if len(payload) < len(raw):
            return IncrementPacket(layer_id, Encoding.SPARSE, payload)
    return IncrementPacket(layer_id, Encoding.RAW, raw)


def raw_packet(tensor, layer_id):
    return IncrementPacket(layer_id, Encoding.RAW, np.ascontiguousarray(tensor).tobytes())
