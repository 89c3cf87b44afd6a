"""Wire messages, channel model and transports."""
from .channel import DOWNLINK, PROFILES, UPLINK, ChannelConfig, SimChannel, profile, transmit_time
from .messages import (HEADER_SIZE, INFERENCE, MAGIC, TRAINING, Message, MsgType, decode_message,
                       encode_message)
from .payload import BatchPayload
from .transport import SimLink, SocketLink, TokenBucket, serve_device

__all__ = [
    "DOWNLINK", "PROFILES", "UPLINK", "ChannelConfig", "SimChannel", "profile", "transmit_time",
    "HEADER_SIZE", "INFERENCE", "MAGIC", "TRAINING", "Message", "MsgType", "decode_message",
    "encode_message", "BatchPayload", "SimLink", "SocketLink", "TokenBucket", "serve_device",
]
