"""Framed control/data messages exchanged between the trainer and a device.

Frame: ``"R2F1" | msg_type u8 | device_id u32 | payload_len u64 | payload``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

from ..errors import DecodeError

MAGIC = b"R2F1"
HEADER = struct.Struct("<4sBIQ")
HEADER_SIZE = HEADER.size

INFERENCE, TRAINING = 0, 1


class MsgType(IntEnum):
    SET_MODE = 1
    DEPLOY_MODEL = 2
    GET_DATA = 3
    DATA_RESPONSE = 4
    ACK = 5
    ERROR = 6


@dataclass(frozen=True)
class Message:
    msg_type: MsgType
    device_id: int
    payload: bytes = b""

    @property
    def size(self):
        return HEADER_SIZE + len(self.payload)


def encode_message(m: Message) -> bytes:
    return HEADER.pack(MAGIC, int(m.msg_type), m.device_id, len(m.payload)) + bytes(m.payload)


def decode_header(buf):
    """Validate a 17-byte header; returns ``(msg_type, device_id, payload_len)``."""
    if len(buf) < HEADER_SIZE:
        raise DecodeError("truncated", f"header needs {HEADER_SIZE} bytes, got {len(buf)}")
    magic, mtype, device, n = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise DecodeError("bad magic", repr(magic))
    try:
        mtype = MsgType(mtype)
    except ValueError:
        raise DecodeError("msg_type", f"unknown message type {mtype}") from None
    return mtype, device, n


def decode_message(buf) -> Message:
    buf = bytes(buf)
    mtype, device, n = decode_header(buf)
    if n != len(buf) - HEADER_SIZE:
        raise DecodeError("length", f"payload_len {n} but {len(buf) - HEADER_SIZE} bytes follow")
    return Message(mtype, device, buf[HEADER_SIZE:])


# Convenience constructors for the API set.

def set_mode(device_id, mode):
    return Message(MsgType.SET_MODE, device_id, bytes([mode & 0xFF]))


def deploy_model(device_id, model_bytes):
    return Message(MsgType.DEPLOY_MODEL, device_id, bytes(model_bytes))


GET_DATA = struct.Struct("<HB")
RESEND = 0x01


def get_data(device_id, batch_size, resend=False):
    return Message(MsgType.GET_DATA, device_id, GET_DATA.pack(batch_size, RESEND if resend else 0))


def ack(device_id):
    return Message(MsgType.ACK, device_id)


def error(device_id, reason):
    return Message(MsgType.ERROR, device_id, reason.encode("utf-8", "replace"))
