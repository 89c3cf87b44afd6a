"""Temporal triple modular redundancy: network-wise and layer-wise variants."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, ShapeError
from .faults import FaultConfig, FaultInjector, make_fault_hook
from .nn.forward import check_input, layer_forward, model_forward
from .nn.model import Kind

INDEPENDENT_COPY = 3


class Variant(str, Enum):
    NONE = "none"
    NETWORK_WISE = "nw"
    LAYER_WISE = "lw"


@dataclass(frozen=True)
class TmrPolicy:
    """``protected_layers`` empty means every layer when the variant is not NONE."""

    variant: Variant = Variant.NONE
    protected_layers: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "protected_layers", frozenset(int(i) for i in self.protected_layers))

    def protects(self, index):
        if self.variant == Variant.NONE:
            return False
        return not self.protected_layers or index in self.protected_layers

    def check(self, n_layers):
        bad = [i for i in self.protected_layers if not 0 <= i < n_layers]
        if bad:
            raise ConfigError(f"protected layers {bad} outside [0, {n_layers})")


@dataclass
class TmrCapture:
    """Per-layer voted reference, designated faulty output and their similarity."""

    voted: list
    copy0: list
    similarity: list
    protected: list = field(default_factory=list)

    def __len__(self):
        return len(self.voted)


def vote3(a, b, c):
    """Bitwise two-of-three majority over 8-bit tensors."""
    a, b, c = (np.ascontiguousarray(t) for t in (a, b, c))
    if not a.shape == b.shape == c.shape:
        raise ShapeError("vote operands differ in shape", None, (a.shape, b.shape, c.shape))
    ua, ub, uc = (t.view(np.uint8) for t in (a, b, c))
    return ((ua & ub) | (ua & uc) | (ub & uc)).view(a.dtype)


def similarity(approx, actual):
    """Fraction of elementwise-identical entries."""
    approx, actual = np.asarray(approx), np.asarray(actual)
    if approx.shape != actual.shape:
        raise ShapeError("tensors differ in shape", None, (approx.shape, actual.shape))
    if approx.size == 0:
        return 1.0
    return float(np.count_nonzero(approx == actual)) / approx.size


def _exec_key(execution, copy):
    return (*execution, copy) if isinstance(execution, tuple) else (execution, copy)


def _run_layer(model, i, inp, outs, cfg, key):
    layer = model.layers[i]
    ref = outs[layer.ref] if layer.kind == Kind.RESIDUAL_ADD else None
    ref_exp = model.layers[layer.ref].out_exp if ref is not None else None
    try:
        return layer_forward(layer, inp, model.in_exp(i), make_fault_hook(cfg, i, key), ref, ref_exp)
    except ShapeError as exc:
        raise exc.at_layer(i) from None


def lw_tmr_forward(model, x, cfg: FaultConfig, policy: TmrPolicy, execution=0,
                   designated="copy0"):
    """Layer-wise TMR: vote after each protected layer and feed the vote forward.

    Unprotected layers run once; that output is both the reference and the
    designated copy. ``designated="independent"`` replaces copy 0 with a
    separate un-voted faulty forward of the whole network.
    """
    x = check_input(model, x)
    policy.check(len(model.layers))
    voted, copy0, protected = [], [], []
    cur = x
    for i in range(len(model.layers)):
        if policy.protects(i):
            runs = [_run_layer(model, i, cur, voted, cfg, _exec_key(execution, c)) for c in range(3)]
            out = vote3(*runs)
            copy0.append(runs[0])
            protected.append(True)
        else:
            out = _run_layer(model, i, cur, voted, cfg, _exec_key(execution, 0))
            copy0.append(out)
            protected.append(False)
        voted.append(out)
        cur = out
    if designated == "independent":
        copy0 = model_forward(model, x, FaultInjector(cfg, _exec_key(execution, INDEPENDENT_COPY)))
    sims = [similarity(v, c) for v, c in zip(voted, copy0)]
    return TmrCapture(voted, copy0, sims, protected)


def nw_tmr_forward(model, x, cfg: FaultConfig, execution=0, designated="copy0"):
    """Network-wise TMR: three independent full forwards, voted per layer afterwards."""
    x = check_input(model, x)
    runs = [model_forward(model, x, FaultInjector(cfg, _exec_key(execution, c))) for c in range(3)]
    voted = [vote3(a, b, c) for a, b, c in zip(*runs)]
    copy0 = runs[0]
    if designated == "independent":
        copy0 = model_forward(model, x, FaultInjector(cfg, _exec_key(execution, INDEPENDENT_COPY)))
    sims = [similarity(v, c) for v, c in zip(voted, copy0)]
    return TmrCapture(voted, copy0, sims, [True] * len(voted))


def plain_forward(model, x, cfg: FaultConfig, execution=0):
    """Single faulty forward packaged as a capture (copy0 is its own reference)."""
    # copy index 0 keeps the stream identical to TMR copy 0
    outs = model_forward(model, x, FaultInjector(cfg, _exec_key(execution, 0)))
    return TmrCapture(outs, outs, [1.0] * len(outs), [False] * len(outs))


def tmr_forward(model, x, cfg: FaultConfig, policy: TmrPolicy, execution=0, designated="copy0"):
    if policy.variant == Variant.LAYER_WISE:
        return lw_tmr_forward(model, x, cfg, policy, execution, designated)
    if policy.variant == Variant.NETWORK_WISE:
        return nw_tmr_forward(model, x, cfg, execution, designated)
    return plain_forward(model, x, cfg, execution)


def similarity_profile(model, sample_input, cfg: FaultConfig, variant=Variant.LAYER_WISE, execution=0):
    """Per-layer voted-vs-copy0 similarity from one TMR run on a single input."""
    x = np.asarray(sample_input)
    if x.ndim == 3:
        x = x[None]
    policy = TmrPolicy(Variant(variant))
    if policy.variant == Variant.NONE:
        raise ConfigError("similarity profile needs a TMR variant")
    return tmr_forward(model, x, cfg, policy, execution).similarity
