"""Body of a DataResponse message.

Layout (little-endian)::

    mode u8 | batch_size u16 | sample ids u64[batch] | input_len u64 | inputs
    | labels u16[batch] | packet count u16 | packets | output_len u64 | outputs

Inference-mode payloads carry no inputs and no packets. A batch size of zero
marks the end of the device's epoch.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..codec import IncrementPacket
from ..errors import DecodeError
from .messages import INFERENCE, TRAINING

_U8, _U16, _U64 = struct.Struct("<B"), struct.Struct("<H"), struct.Struct("<Q")


@dataclass
class BatchPayload:
    mode: int
    sample_ids: np.ndarray
    labels: np.ndarray
    inputs: bytes = b""
    packets: list = field(default_factory=list)
    outputs: bytes = b""

    @property
    def batch_size(self):
        return len(self.sample_ids)

    def validate(self):
        if self.mode not in (INFERENCE, TRAINING):
            raise DecodeError("mode", f"unknown mode {self.mode}")
        if len(self.labels) != len(self.sample_ids):
            raise DecodeError("count", "label count differs from batch size")
        ids = [p.layer_id for p in self.packets]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise DecodeError("order", "packet layer ids must be strictly increasing")
        if self.mode == INFERENCE and (self.inputs or self.packets):
            raise DecodeError("mode", "inference payload carries training data")
        return self

    def to_bytes(self):
        self.validate()
        n = self.batch_size
        parts = [_U8.pack(self.mode), _U16.pack(n),
                 np.asarray(self.sample_ids, dtype="<u8").tobytes(),
                 _U64.pack(len(self.inputs)), bytes(self.inputs),
                 np.asarray(self.labels, dtype="<u2").tobytes(),
                 _U16.pack(len(self.packets))]
        parts.extend(p.to_bytes() for p in self.packets)
        parts += [_U64.pack(len(self.outputs)), bytes(self.outputs)]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf):
        buf = bytes(buf)
        r = _Reader(buf)
        mode = r.unpack(_U8)
        n = r.unpack(_U16)
        ids = np.frombuffer(r.take(8 * n, "sample ids"), "<u8").astype(np.uint64)
        inputs = r.take(r.unpack(_U64), "inputs")
        labels = np.frombuffer(r.take(2 * n, "labels"), "<u2").astype(np.uint16)
        count = r.unpack(_U16)
        packets = []
        for _ in range(count):
            pkt, r.pos = IncrementPacket.from_bytes(buf, r.pos)
            packets.append(pkt)
        outputs = r.take(r.unpack(_U64), "outputs")
        if r.pos != len(buf):
            raise DecodeError("trailing", f"{len(buf) - r.pos} unused bytes")
        return cls(mode, ids, labels, inputs, packets, outputs).validate()


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if n > len(self.buf) - self.pos:
            raise DecodeError("truncated", what)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, st):
        return st.unpack(self.take(st.size, "field"))[0]
