"""BER-parameterized random bit flips on the data a layer consumes and produces."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import ConfigError, ShapeError
from .nn.forward import IDENTITY, MacHook

SITES = ("inputs", "weights", "outputs")
_SITE_CODE = {"inputs": 1, "weights": 2, "outputs": 3, "macs": 4}

# Above this many expected flips the per-bit Bernoulli path is cheaper.
FAST_PATH_LIMIT = 1e6


class Mode(str, Enum):
    PER_TENSOR = "per_tensor"
    PER_MAC = "per_mac"


@dataclass(frozen=True)
class FaultConfig:
    """Soft-error model.

    ``layer_ber`` overrides the global rate for specific layers, given as
    ``((layer_index, ber), ...)``.
    """

    ber: float = 0.0
    seed: int = 0
    sites: frozenset = field(default_factory=lambda: frozenset(SITES))
    mode: Mode = Mode.PER_TENSOR
    layer_ber: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "sites", frozenset(self.sites))
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "layer_ber", tuple((int(i), float(b)) for i, b in self.layer_ber))
        rates = [self.ber] + [b for _, b in self.layer_ber]
        if any(not 0.0 <= b <= 1.0 for b in rates):
            raise ConfigError(f"ber must lie in [0, 1], got {rates}")
        if not self.sites <= set(SITES):
            raise ConfigError(f"unknown fault sites {sorted(self.sites - set(SITES))}")
        if max(rates) > 0 and not self.sites:
            raise ConfigError("ber > 0 needs at least one fault site")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def ber_for(self, layer):
        for i, b in self.layer_ber:
            if i == layer:
                return b
        return self.ber

    @property
    def active(self):
        return self.ber > 0 or any(b > 0 for _, b in self.layer_ber)

    def derive(self, *keys):
        """Same fault model on an independent random stream keyed by ``keys``."""
        seq = np.random.SeedSequence([self.seed, *(int(k) for k in keys)])
        return replace(self, seed=int(seq.generate_state(1, np.uint64)[0]))

    def with_ber(self, ber):
        return replace(self, ber=float(ber))


def flip_bits(words, ber, rng):
    """Invert each of the 8 bits of every word independently with probability ``ber``.

    Accepts a scalar or an array of 8-bit values; returns the same kind.
    """
    arr = np.asarray(words)
    flat = arr.astype(np.uint8).ravel()
    if ber > 0:
        hits = rng.random((flat.size, 8)) < ber
        flat = flat ^ np.packbits(hits, axis=1, bitorder="little").ravel()
    out = flat.reshape(arr.shape).astype(arr.dtype if arr.dtype.kind in "iu" else np.uint8)
    return out if arr.ndim else out.item()


def flip_positions(nbits, ber, rng, fast=None):
    """Sorted positions of flipped bits among ``nbits`` Bernoulli(ber) trials."""
    if ber <= 0 or nbits == 0:
        return np.empty(0, dtype=np.int64)
    if fast is None:
        fast = ber * nbits < FAST_PATH_LIMIT
    if not fast:
        return np.flatnonzero(rng.random(nbits) < ber)
    k = int(rng.binomial(nbits, ber))
    if k == nbits:
        return np.arange(nbits, dtype=np.int64)
    return np.sort(rng.choice(nbits, size=k, replace=False))


def flip_tensor(t, ber, rng, fast=None):
    """Copy of an 8-bit tensor with bits flipped at rate ``ber``."""
    t = np.ascontiguousarray(t)
    if ber <= 0:
        return t.copy()
    raw = t.view(np.uint8).ravel().copy()
    pos = flip_positions(raw.size * 8, ber, rng, fast)
    if len(pos):
        np.bitwise_xor.at(raw, pos >> 3, (1 << (pos & 7)).astype(np.uint8))
    return raw.view(t.dtype).reshape(t.shape)


def effective_ber(clean, faulty):
    """Fraction of differing bits between two same-shape 8-bit tensors."""
    a = np.ascontiguousarray(clean)
    b = np.ascontiguousarray(faulty)
    if a.shape != b.shape:
        raise ShapeError("tensors differ in shape", None, (a.shape, b.shape))
    if a.size == 0:
        return 0.0
    diff = a.view(np.uint8) ^ b.view(np.uint8)
    return float(np.unpackbits(diff).sum()) / (8 * a.size)


def _entropy(execution_index):
    if isinstance(execution_index, (tuple, list)):
        return [int(v) for v in execution_index]
    return [int(execution_index)]


class FaultHook(MacHook):
    """Per-(layer, execution) fault injector. Immutable; every call derives
    its own generator from ``(seed, layer, execution..., site, slot)`` so the
    same inputs always produce the same flips."""

    def __init__(self, cfg: FaultConfig, layer_index, execution_index=0):
        self.cfg = cfg
        self.layer_index = int(layer_index)
        self.ber = cfg.ber_for(self.layer_index)
        self.key = [cfg.seed, self.layer_index, *_entropy(execution_index)]
        self.per_mac = cfg.mode == Mode.PER_MAC and self.ber > 0

    def _rng(self, site, slot=0):
        return np.random.default_rng(np.random.SeedSequence(self.key + [_SITE_CODE[site], slot]))

    def _apply(self, t, site, slot=0):
        if site not in self.cfg.sites or self.ber <= 0:
            return t
        return flip_tensor(t, self.ber, self._rng(site, slot))

    def on_input(self, t, slot=0):
        return self._apply(t, "inputs", slot)

    def on_weight(self, t):
        return self._apply(t, "weights")

    def on_output(self, t):
        return self._apply(t, "outputs")

    def mac_events(self, n_macs):
        """Transient operand flips: ``(mac_index, operand, bit)`` arrays.

        Each MAC reads one activation (operand 0) and one weight (operand 1).
        """
        ops = [o for o, site in enumerate(("inputs", "weights")) if site in self.cfg.sites]
        pos = flip_positions(n_macs * 16, self.ber, self._rng("macs"))
        mac = pos // 16
        operand = ((pos % 16) // 8).astype(np.uint8)
        bit = (pos % 8).astype(np.uint8)
        keep = np.isin(operand, ops)
        return mac[keep], operand[keep], bit[keep]


def make_fault_hook(cfg: FaultConfig, layer_index, execution_index=0) -> MacHook:
    if cfg.ber_for(layer_index) <= 0:
        return IDENTITY
    return FaultHook(cfg, layer_index, execution_index)


class FaultInjector:
    """Hook family for :func:`model_forward`: one fault stream per layer."""

    def __init__(self, cfg: FaultConfig, execution_index=0):
        self.cfg = cfg
        self.execution_index = execution_index

    def for_layer(self, index):
        return make_fault_hook(self.cfg, index, self.execution_index)


def forward_bits(model, batch):
    """Bits exposed to faults in one forward pass: inputs + weights + outputs."""
    shape = model.input_shape
    total = 0
    for i, layer in enumerate(model.layers):
        n_in = int(np.prod(shape))
        if layer.kind.name == "RESIDUAL_ADD":
            n_in *= 2
        n_out = int(np.prod(model.shapes[i]))
        total += 8 * batch * (n_in + n_out)
        if layer.weighted:
            total += 8 * layer.weight.size
        shape = model.shapes[i]
    return total
