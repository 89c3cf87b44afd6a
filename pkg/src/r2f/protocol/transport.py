"""Two transports behind one request/response contract.

``SimLink`` calls the device in-process and charges modeled airtime on a
virtual clock. ``SocketLink`` frames the same bytes over a TCP stream whose
sends pass through a token bucket set to the channel rate.
"""
from __future__ import annotations

import os
import socket
import threading
import time
from collections import defaultdict

from ..errors import DecodeError, TransportError
from .channel import DOWNLINK, UPLINK, ChannelConfig, SimChannel, transmit_time
from .messages import HEADER_SIZE, Message, decode_header, decode_message, encode_message, error

# Frames larger than this are rejected before allocating the payload.
MAX_PAYLOAD = 1 << 30


class TokenBucket:
    """Byte-rate limiter: ``consume(n)`` blocks until ``n`` tokens have accrued."""

    def __init__(self, rate_bytes, burst=None, clock=time.monotonic, sleep=time.sleep):
        if rate_bytes <= 0:
            raise ValueError("rate must be positive")
        self.rate = float(rate_bytes)
        self.burst = float(burst if burst is not None else max(1.0, self.rate / 50))
        self.clock, self.sleep = clock, sleep
        self.tokens = self.burst
        self.stamp = clock()
        self._lock = threading.Lock()

    def _refill(self):
        now = self.clock()
        self.tokens = min(self.burst, self.tokens + (now - self.stamp) * self.rate)
        self.stamp = now

    def consume(self, n):
        with self._lock:
            self._refill()
            self.tokens -= n
            # running into debt spreads a large chunk over the time it is owed
            if self.tokens < 0:
                self.sleep(-self.tokens / self.rate)
                self._refill()


class Meter:
    """Bytes and airtime per (direction, message type)."""

    def __init__(self, ch: ChannelConfig | None = None):
        self.ch = ch
        self.bytes = defaultdict(int)
        self.seconds = defaultdict(float)

    def record(self, direction, msg_type, nbytes):
        self.bytes[direction, msg_type] += nbytes
        if self.ch is not None:
            self.seconds[direction, msg_type] += transmit_time(nbytes, direction, self.ch)

    def total(self, direction, what="bytes"):
        table = self.bytes if what == "bytes" else self.seconds
        return sum(v for (d, _), v in table.items() if d == direction)

    def snapshot(self):
        return {UPLINK: self.total(UPLINK), DOWNLINK: self.total(DOWNLINK)}


class SimLink:
    """In-process transport on a virtual clock.

    ``tamper`` optionally rewrites uplink frames (used to exercise retransmission).
    """

    def __init__(self, device, ch: ChannelConfig, tamper=None):
        self.device = device
        self.channel = SimChannel(ch)
        self.meter = Meter(ch)
        self.tamper = tamper

    @property
    def clock(self):
        return self.channel.now

    def request(self, msg: Message) -> Message:
        down = encode_message(msg)
        self.meter.record(DOWNLINK, msg.msg_type, len(down))
        t = self.channel.send(len(down), DOWNLINK)
        reply = self.device.handle(decode_message(down))
        up = encode_message(reply)
        self.meter.record(UPLINK, reply.msg_type, len(up))
        t = self.channel.send(len(up), UPLINK, at=t)
        self.channel.advance(t)
        if self.tamper is not None:
            up = self.tamper(up)
        return decode_message(up)

    def close(self):
        pass


def _recv_exact(sock, n):
    buf = bytearray()
    while len(buf) < n:
        try:
            chunk = sock.recv(min(n - len(buf), 1 << 16))
        except OSError as exc:
            raise TransportError(f"receive failed: {exc}") from exc
        if not chunk:
            raise TransportError("connection closed by peer")
        buf += chunk
    return bytes(buf)


def recv_frame(sock):
    """Read one framed message; returns raw frame bytes."""
    head = _recv_exact(sock, HEADER_SIZE)
    _, _, n = decode_header(head)
    if n > MAX_PAYLOAD:
        raise DecodeError("length", f"payload_len {n} exceeds {MAX_PAYLOAD}")
    return head + _recv_exact(sock, n)


class FramedSocket:
    """Message framing plus optional send throttle over a connected stream socket."""

    CHUNK = 4096

    def __init__(self, sock, bucket: TokenBucket | None = None):
        self.sock = sock
        self.bucket = bucket

    def send_bytes(self, data):
        view = memoryview(data)
        try:
            for start in range(0, len(view), self.CHUNK):
                part = view[start:start + self.CHUNK]
                if self.bucket is not None:
                    self.bucket.consume(len(part))
                self.sock.sendall(part)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def send(self, msg: Message):
        self.send_bytes(encode_message(msg))

    def recv(self) -> Message:
        return decode_message(recv_frame(self.sock))

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


def _bucket(ch, direction):
    return TokenBucket(ch.rate(direction) / 8.0) if ch is not None else None


class SocketLink:
    """Server end of a socket session: sends requests, waits for each reply."""

    def __init__(self, sock, ch: ChannelConfig | None = None, throttle=True):
        self.framed = FramedSocket(sock, _bucket(ch, DOWNLINK) if throttle else None)
        self.meter = Meter(ch)
        self._t0 = time.monotonic()

    @property
    def clock(self):
        return time.monotonic() - self._t0

    def request(self, msg: Message) -> Message:
        data = encode_message(msg)
        self.meter.record(DOWNLINK, msg.msg_type, len(data))
        self.framed.send_bytes(data)
        raw = recv_frame(self.framed.sock)
        reply = decode_message(raw)
        self.meter.record(UPLINK, reply.msg_type, len(raw))
        return reply

    def close(self):
        self.framed.close()


def serve_device(device, sock, ch: ChannelConfig | None = None, throttle=True):
    """Device loop: answer framed requests until the peer disconnects."""
    framed = FramedSocket(sock, _bucket(ch, UPLINK) if throttle else None)
    try:
        while True:
            try:
                raw = recv_frame(sock)
            except TransportError:
                return
            except DecodeError as exc:
                framed.send(error(getattr(device, "device_id", 0), f"{exc.reason}: {exc.detail}"))
                return
            framed.send(device.handle(decode_message(raw)))
    finally:
        framed.close()


def parse_address(text, default_port=7070):
    host, _, port = text.rpartition(":")
    if not host:
        return text or "127.0.0.1", default_port
    return host, int(port)


def listen(address=None):
    """Bound listening socket; ``R2F_BIND`` overrides the address."""
    host, port = parse_address(os.environ.get("R2F_BIND") or address or "127.0.0.1:7070")
    srv = socket.create_server((host, port))
    return srv


def connect(address=None, retries=50, delay=0.1):
    """Connected socket; ``R2F_CONNECT`` overrides the address."""
    host, port = parse_address(os.environ.get("R2F_CONNECT") or address or "127.0.0.1:7070")
    last = None
    for _ in range(retries):
        try:
            return socket.create_connection((host, port))
        except OSError as exc:
            last = exc
            time.sleep(delay)
    raise TransportError(f"cannot connect to {host}:{port}: {last}")
