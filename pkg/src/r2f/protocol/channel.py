"""Bandwidth/latency link model and a virtual-time FIFO channel."""
from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError

UPLINK, DOWNLINK = "up", "down"


@dataclass(frozen=True)
class ChannelConfig:
    """Rates in bits per second (decimal), one-way latency in seconds."""

    uplink_bps: float
    downlink_bps: float
    latency_s: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        if self.uplink_bps <= 0 or self.downlink_bps <= 0:
            raise ConfigError("channel rates must be positive")
        if self.latency_s < 0:
            raise ConfigError("latency must be non-negative")

    def rate(self, direction):
        if direction == UPLINK:
            return self.uplink_bps
        if direction == DOWNLINK:
            return self.downlink_bps
        raise ValueError(f"unknown direction {direction!r}")


PROFILES = {
    "lora": ChannelConfig(50e3, 50e3, name="lora"),
    "wpan": ChannelConfig(800e3, 800e3, name="wpan"),
    "hspa": ChannelConfig(5.76e6, 21.1e6, name="hspa"),
    "lte": ChannelConfig(50e6, 150e6, name="lte"),
}


def profile(name, latency_s=0.0):
    try:
        base = PROFILES[name]
    except KeyError:
        raise ConfigError(f"unknown channel profile {name!r}; choose from {sorted(PROFILES)}") from None
    return ChannelConfig(base.uplink_bps, base.downlink_bps, latency_s, base.name)


def transmit_time(nbytes, direction, ch: ChannelConfig):
    return ch.latency_s + 8.0 * nbytes / ch.rate(direction)


class SimChannel:
    """Virtual clock; each direction serializes its messages in FIFO order."""

    def __init__(self, ch: ChannelConfig, start=0.0):
        self.ch = ch
        self.now = start
        self._free = {UPLINK: start, DOWNLINK: start}
        self.bytes = {UPLINK: 0, DOWNLINK: 0}
        self.airtime = {UPLINK: 0.0, DOWNLINK: 0.0}

    def send(self, nbytes, direction, at=None):
        """Queue ``nbytes`` at time ``at`` (default: now); returns the delivery time."""
        at = self.now if at is None else at
        start = max(at, self._free[direction])
        busy = 8.0 * nbytes / self.ch.rate(direction)
        self._free[direction] = start + busy
        self.bytes[direction] += nbytes
        self.airtime[direction] += busy + self.ch.latency_s
        return start + busy + self.ch.latency_s

    def advance(self, t):
        self.now = max(self.now, t)
        return self.now
