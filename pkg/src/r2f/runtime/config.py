"""Training-session configuration and the modeled stage-cost parameters."""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from ..codec import IDENTITY, ZlibCompressor
from ..errors import ConfigError
from ..faults import FaultConfig
from ..protocol.channel import profile
from ..tmr import TmrPolicy, Variant

STAGES = ("fp", "tmr", "increment", "codec", "uplink", "bp", "downlink")
COMPRESSORS = {"none": lambda: IDENTITY, "zlib": ZlibCompressor}


@dataclass(frozen=True)
class CostModel:
    """Throughputs used by the modeled clock.

    Device rates describe an accelerator (MAC/s) next to a slower host core
    (element ops/s); the server side is a workstation. Backward costs
    ``bp_factor`` times the forward MACs.
    """

    device_macs: float = 1e9
    device_elems: float = 1e8
    server_macs: float = 1e10
    server_elems: float = 1e9
    bp_factor: float = 2.0


@dataclass
class StageTiming:
    fp: float = 0.0
    tmr: float = 0.0
    increment: float = 0.0
    codec: float = 0.0
    uplink: float = 0.0
    bp: float = 0.0
    downlink: float = 0.0
    bytes_up: int = 0
    bytes_down: int = 0

    @property
    def total(self):
        return sum(getattr(self, s) for s in STAGES)

    def __add__(self, other):
        return StageTiming(**{f.name: getattr(self, f.name) + getattr(other, f.name)
                              for f in fields(self)})

    def as_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["total"] = self.total
        return d


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 16
    epochs: int = 1
    lr: float = 1e-3
    momentum: float = 0.9
    threshold: float = 0.6
    fault: FaultConfig = field(default_factory=FaultConfig)
    tmr: TmrPolicy = field(default_factory=lambda: TmrPolicy(Variant.LAYER_WISE))
    profile: str = "wpan"
    latency_s: float = 0.0
    seed: int = 0
    max_batches: int | None = None
    timing: str = "modeled"
    compressor: str = "none"
    designated: str = "copy0"
    costs: CostModel = field(default_factory=CostModel)
    device_id: int = 1

    def __post_init__(self):
        if self.batch_size < 1 or self.batch_size > 0xFFFF:
            raise ConfigError("batch_size must lie in [1, 65535]")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must lie in [0, 1]")
        if self.timing not in ("modeled", "measured"):
            raise ConfigError("timing must be 'modeled' or 'measured'")
        if self.compressor not in COMPRESSORS:
            raise ConfigError(f"unknown compressor {self.compressor!r}")
        if self.designated not in ("copy0", "independent"):
            raise ConfigError("designated must be 'copy0' or 'independent'")
        if self.max_batches is not None and self.max_batches < 0:
            raise ConfigError("max_batches must be non-negative")
        self.channel()

    def channel(self):
        return profile(self.profile, self.latency_s)

    def make_compressor(self):
        return COMPRESSORS[self.compressor]()


def data_rng(seed):
    """Generator behind the device's epoch permutations."""
    return np.random.default_rng([int(seed), 0xDA7A])
