"""Bit-exact binary container for quantized models.

Layout (little-endian)::

    "R2FM" | version u16 | layer count u16 | input C,H,W u16 | input exp i8
    per layer: kind u8 | out_ch, in_ch, kernel, stride, pad, ref u16
               | w_exp i8 | out_exp i8 | [weights int8 | bias int32]

Weights and bias are present only for Conv2D / FullyConnected layers; their
sizes follow from the shape fields.
"""
import struct

import numpy as np

from ..errors import DecodeError, ShapeError
from .model import Kind, Layer, QuantModel

MAGIC = b"R2FM"
VERSION = 1
_HEAD = struct.Struct("<4sHHHHHb")
_LAYER = struct.Struct("<BHHHHHHbb")


def model_to_bytes(model: QuantModel) -> bytes:
    parts = [_HEAD.pack(MAGIC, VERSION, len(model.layers), *model.input_shape, model.input_exp)]
    for layer in model.layers:
        parts.append(_LAYER.pack(int(layer.kind), layer.out_channels, layer.in_channels,
                                 layer.kernel, layer.stride, layer.pad, layer.ref,
                                 layer.w_exp, layer.out_exp))
        if layer.weighted:
            parts.append(np.ascontiguousarray(layer.weight, dtype=np.int8).tobytes())
            parts.append(np.ascontiguousarray(layer.bias, dtype="<i4").tobytes())
    return b"".join(parts)


def model_from_bytes(buf) -> QuantModel:
    buf = bytes(buf)
    if len(buf) < _HEAD.size:
        raise DecodeError("truncated", "model header")
    magic, version, count, c, h, w, in_exp = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise DecodeError("bad magic", repr(magic))
    if version != VERSION:
        raise DecodeError("version", f"unsupported model format {version}")
    pos = _HEAD.size
    layers = []
    for i in range(count):
        if pos + _LAYER.size > len(buf):
            raise DecodeError("truncated", f"layer {i} header")
        kind, oc, ic, k, s, p, ref, w_exp, out_exp = _LAYER.unpack_from(buf, pos)
        pos += _LAYER.size
        try:
            kind = Kind(kind)
        except ValueError:
            raise DecodeError("kind", f"layer {i} has unknown kind {kind}") from None
        if s == 0 and kind in (Kind.CONV2D, Kind.MAXPOOL, Kind.AVGPOOL):
            raise DecodeError("layer", f"layer {i} has zero stride")
        layer = Layer(kind, oc, ic, k, s, p, ref, w_exp, out_exp)
        if layer.weighted:
            nw = int(np.prod(layer.weight_shape()))
            end = pos + nw + 4 * oc
            if end > len(buf):
                raise DecodeError("truncated", f"layer {i} parameters")
            layer.weight = np.frombuffer(buf, np.int8, nw, pos).reshape(layer.weight_shape()).copy()
            layer.bias = np.frombuffer(buf, "<i4", oc, pos + nw).astype(np.int32)
            pos = end
        layers.append(layer)
    if pos != len(buf):
        raise DecodeError("trailing", f"{len(buf) - pos} unused bytes")
    try:
        return QuantModel((c, h, w), in_exp, layers)
    except ShapeError as exc:
        raise DecodeError("topology", str(exc)) from None


def save_float_model(path, fm):
    """Store a FloatModel as ``.npz`` (topology + float parameters)."""
    arrays = {"input_shape": np.array(fm.input_shape), "input_exp": np.array(fm.input_exp)}
    meta = []
    for i, layer in enumerate(fm.layers):
        meta.append([int(layer.kind), layer.out_channels, layer.in_channels, layer.kernel,
                     layer.stride, layer.pad, layer.ref, layer.w_exp, layer.out_exp])
        if layer.weighted:
            arrays[f"w{i}"] = layer.weight
            arrays[f"b{i}"] = layer.bias
    arrays["meta"] = np.array(meta, dtype=np.int64).reshape(-1, 9)
    np.savez(path, **arrays)


def load_float_model(path):
    from .model import FloatModel

    with np.load(path) as data:
        layers = []
        for i, row in enumerate(data["meta"]):
            layer = Layer(Kind(int(row[0])), *(int(v) for v in row[1:]))
            if layer.weighted:
                layer.weight = data[f"w{i}"].copy()
                layer.bias = data[f"b{i}"].copy()
            layers.append(layer)
        return FloatModel(tuple(int(v) for v in data["input_shape"]), int(data["input_exp"]), layers)
