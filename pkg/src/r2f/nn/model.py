"""Layer descriptors and the paired fixed-point / float model containers."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from ..errors import ShapeError
from . import quant


class Kind(IntEnum):
    CONV2D = 0
    FC = 1
    RELU = 2
    MAXPOOL = 3
    AVGPOOL = 4
    RESIDUAL_ADD = 5
    FLATTEN = 6
    SOFTMAX_LOSS = 7


WEIGHTED = frozenset({Kind.CONV2D, Kind.FC})
# Kinds whose output keeps the input scale.
PASSTHROUGH = frozenset({Kind.RELU, Kind.MAXPOOL, Kind.AVGPOOL, Kind.FLATTEN, Kind.SOFTMAX_LOSS})


@dataclass
class Layer:
    kind: Kind
    out_channels: int = 0
    in_channels: int = 0
    kernel: int = 1
    stride: int = 1
    pad: int = 0
    ref: int = 0
    w_exp: int = 0
    out_exp: int = 0
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None

    @property
    def weighted(self):
        return self.kind in WEIGHTED

    def weight_shape(self):
        if self.kind == Kind.CONV2D:
            return (self.out_channels, self.in_channels, self.kernel, self.kernel)
        if self.kind == Kind.FC:
            return (self.out_channels, self.in_channels)
        return None


def conv(in_channels, out_channels, kernel, stride=1, pad=0):
    return Layer(Kind.CONV2D, out_channels, in_channels, kernel, stride, pad)


def fc(in_features, out_features):
    return Layer(Kind.FC, out_features, in_features)


def relu():
    return Layer(Kind.RELU)


def maxpool(kernel, stride=None):
    return Layer(Kind.MAXPOOL, kernel=kernel, stride=stride or kernel)


def avgpool(kernel, stride=None):
    return Layer(Kind.AVGPOOL, kernel=kernel, stride=stride or kernel)


def residual_add(ref):
    return Layer(Kind.RESIDUAL_ADD, ref=ref)


def flatten():
    return Layer(Kind.FLATTEN)


def softmax_loss():
    return Layer(Kind.SOFTMAX_LOSS)


def _out_shape(layer, index, shape, shapes):
    c, h, w = shape
    k = layer.kind
    if k == Kind.CONV2D:
        if c != layer.in_channels:
            raise ShapeError("input channels do not match weights", index, (c, layer.in_channels))
        ho = (h + 2 * layer.pad - layer.kernel) // layer.stride + 1
        wo = (w + 2 * layer.pad - layer.kernel) // layer.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError("kernel larger than padded input", index, (h, w, layer.kernel))
        return (layer.out_channels, ho, wo)
    if k == Kind.FC:
        if c * h * w != layer.in_channels:
            raise ShapeError("input features do not match weights", index, (c * h * w, layer.in_channels))
        return (layer.out_channels, 1, 1)
    if k in (Kind.MAXPOOL, Kind.AVGPOOL):
        ho = (h - layer.kernel) // layer.stride + 1
        wo = (w - layer.kernel) // layer.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError("pool window larger than input", index, (h, w, layer.kernel))
        return (c, ho, wo)
    if k == Kind.RESIDUAL_ADD:
        if not 0 <= layer.ref < index:
            raise ShapeError("residual source must be an earlier layer", index, (layer.ref,))
        if shapes[layer.ref] != shape:
            raise ShapeError("residual operands differ in shape", index, (shapes[layer.ref], shape))
        return shape
    if k == Kind.FLATTEN:
        return (c * h * w, 1, 1)
    return shape


def _op_count(layer, in_shape, out_shape):
    """Per-sample operation count; the analytic MAC count for weighted layers."""
    c, h, w = out_shape
    k = layer.kind
    if k == Kind.CONV2D:
        return layer.in_channels * layer.kernel * layer.kernel * c * h * w
    if k == Kind.FC:
        return layer.in_channels * layer.out_channels
    if k in (Kind.MAXPOOL, Kind.AVGPOOL):
        return c * h * w * layer.kernel * layer.kernel
    if k in (Kind.RELU, Kind.RESIDUAL_ADD):
        return c * h * w
    return 0


@dataclass
class _Model:
    input_shape: tuple
    input_exp: int
    layers: list
    shapes: list = field(init=False, repr=False)
    mac_counts: list = field(init=False, repr=False)

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.validate()

    def __len__(self):
        return len(self.layers)

    def validate(self):
        shapes, macs = [], []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            layer.kind = Kind(layer.kind)
            out = _out_shape(layer, i, shape, shapes)
            self._check_params(i, layer)
            macs.append(_op_count(layer, shape, out))
            shapes.append(out)
            shape = out
        self.shapes = shapes
        self.mac_counts = macs

    def _check_params(self, i, layer):
        if layer.weighted:
            ws = layer.weight_shape()
            if layer.weight is None or tuple(layer.weight.shape) != ws:
                got = None if layer.weight is None else tuple(layer.weight.shape)
                raise ShapeError("weight tensor has wrong shape", i, (got, ws))
            if layer.bias is None or tuple(layer.bias.shape) != (layer.out_channels,):
                raise ShapeError("bias tensor has wrong shape", i)
        for name in ("out_exp", "w_exp"):
            e = getattr(layer, name)
            if not quant.EXP_MIN <= e <= quant.EXP_MAX:
                raise ShapeError(f"{name} {e} outside [-16, 0]", i)

    def in_exp(self, i):
        return self.input_exp if i == 0 else self.layers[i - 1].out_exp

    def out_shape(self, batch):
        return (batch,) + self.shapes[-1]

    def clone(self):
        return copy.deepcopy(self)


@dataclass
class QuantModel(_Model):
    """Deployed model: int8 weights, int32 biases at accumulator scale."""

    def _check_params(self, i, layer):
        super()._check_params(i, layer)
        if layer.weighted:
            if layer.weight.dtype != np.int8 or layer.bias.dtype != np.int32:
                raise ShapeError("quantized layer needs int8 weights and int32 bias", i)
        if layer.kind in PASSTHROUGH and layer.out_exp != self.in_exp(i):
            raise ShapeError("pass-through layer must keep its input scale", i,
                             (layer.out_exp, self.in_exp(i)))


@dataclass
class FloatModel(_Model):
    """Server-side master copy; ``out_exp`` holds the calibrated activation scales."""

    def _check_params(self, i, layer):
        super()._check_params(i, layer)
        if layer.weighted:
            layer.weight = np.asarray(layer.weight, dtype=np.float64)
            layer.bias = np.asarray(layer.bias, dtype=np.float64)

    def same_topology(self, other):
        if len(self.layers) != len(other.layers) or self.input_shape != other.input_shape:
            return False
        return all(a.kind == b.kind and (a.weight_shape() == b.weight_shape())
                   for a, b in zip(self.layers, other.layers))


def sync_passthrough_exps(input_exp, layers):
    """Propagate scales through layers that cannot rescale."""
    prev = input_exp
    for layer in layers:
        if layer.kind in PASSTHROUGH:
            layer.out_exp = prev
        prev = layer.out_exp
    return layers


def init_float_model(input_shape, layers, input_exp=-7, seed=0):
    """He-initialized float model; activation scales default to 2**-4 until calibrated."""
    rng = np.random.default_rng(seed)
    layers = [copy.copy(l) for l in layers]
    shape = tuple(input_shape)
    shapes = []
    for i, layer in enumerate(layers):
        if layer.kind == Kind.FC and layer.in_channels == 0:
            layer.in_channels = int(np.prod(shape))
        if layer.kind == Kind.CONV2D and layer.in_channels == 0:
            layer.in_channels = shape[0]
        if layer.weighted:
            ws = layer.weight_shape()
            fan_in = int(np.prod(ws[1:]))
            layer.weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=ws)
            layer.bias = np.zeros(layer.out_channels)
        if layer.kind not in PASSTHROUGH:
            layer.out_exp = -4
        shape = _out_shape(layer, i, shape, shapes)
        shapes.append(shape)
    sync_passthrough_exps(input_exp, layers)
    return FloatModel(input_shape, input_exp, layers)


def quantize_model(fm: FloatModel) -> QuantModel:
    """Float master -> deployable int8 model (weight scales chosen per tensor)."""
    layers = []
    for i, layer in enumerate(fm.layers):
        q = replace(layer, weight=None, bias=None)
        if layer.weighted:
            q.w_exp = quant.choose_exp(float(np.max(np.abs(layer.weight))))
            q.weight = quant.quantize(layer.weight, q.w_exp)
            q.bias = quant.quantize_bias(layer.bias, fm.in_exp(i) + q.w_exp)
        layers.append(q)
    return QuantModel(fm.input_shape, fm.input_exp, layers)


def dequantize_model(qm: QuantModel) -> FloatModel:
    layers = []
    for i, layer in enumerate(qm.layers):
        f = replace(layer, weight=None, bias=None)
        if layer.weighted:
            f.weight = quant.dequantize(layer.weight, layer.w_exp)
            f.bias = quant.dequantize(layer.bias, qm.in_exp(i) + layer.w_exp)
        layers.append(f)
    return FloatModel(qm.input_shape, qm.input_exp, layers)
