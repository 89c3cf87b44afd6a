"""Fixed-point forward execution with per-layer value hooks, plus the float twin."""
import numpy as np

from .. import kernels
from ..errors import ShapeError
from . import ops, quant
from .model import Kind


class MacHook:
    """Value transformer applied around every layer execution.

    The base class is the identity. ``for_layer`` lets one object stand in
    for a per-layer family of hooks.
    """

    per_mac = False

    def on_input(self, t, slot=0):
        return t

    def on_weight(self, t):
        return t

    def on_output(self, t):
        return t

    def mac_events(self, n_macs):
        raise NotImplementedError

    def for_layer(self, index):
        return self


IDENTITY = MacHook()


def _pool_windows(x, layer):
    _, _, h, w = x.shape
    k, s = layer.kernel, layer.stride
    ho, wo = ops.out_size(h, k, s), ops.out_size(w, k, s)
    return ops.im2col(x, k, s, ho, wo)


def _weighted_forward(layer, x, in_exp, hook):
    per_mac = hook.per_mac
    if not per_mac:
        x = hook.on_input(x)
    w = layer.weight if per_mac else hook.on_weight(layer.weight)
    if layer.kind == Kind.FC:
        x4 = x.reshape(x.shape[0], -1, 1, 1)
        w4 = w.reshape(layer.out_channels, layer.in_channels, 1, 1)
        stride, pad = 1, 0
    else:
        x4, w4, stride, pad = x, w, layer.stride, layer.pad
    acc = kernels.conv_acc(np.ascontiguousarray(x4), np.ascontiguousarray(w4), layer.bias, stride, pad)
    if per_mac:
        events = hook.mac_events(acc.shape[0] * acc.shape[1] * acc.shape[2] * acc.shape[3]
                                 * w4.shape[1] * w4.shape[2] * w4.shape[3])
        if len(events[0]):
            kernels.permac_correct(acc, np.ascontiguousarray(ops.pad2d(x4, pad)),
                                   np.ascontiguousarray(w4), stride, *events)
    out = quant.requantize(acc, layer.out_exp - (in_exp + layer.w_exp))
    return out


def layer_forward(layer, x, in_exp, hook=IDENTITY, ref=None, ref_exp=None):
    """Run one quantized layer. ``ref`` is the residual operand for ResidualAdd."""
    k = layer.kind
    if k in (Kind.CONV2D, Kind.FC):
        out = _weighted_forward(layer, x, in_exp, hook)
    elif k == Kind.RESIDUAL_ADD:
        a = hook.on_input(x, 0).astype(np.int64)
        b = hook.on_input(ref, 1).astype(np.int64)
        m = min(in_exp, ref_exp)
        total = (a << (in_exp - m)) + (b << (ref_exp - m))
        out = quant.requantize(total, layer.out_exp - m)
    else:
        x = hook.on_input(x)
        if k == Kind.RELU:
            out = np.maximum(x, 0).astype(np.int8)
        elif k == Kind.MAXPOOL:
            out = _pool_windows(x, layer).max(axis=(2, 3))
        elif k == Kind.AVGPOOL:
            s = _pool_windows(x, layer).astype(np.int64).sum(axis=(2, 3))
            kk = layer.kernel * layer.kernel
            mag = (2 * np.abs(s) + kk) // (2 * kk)
            out = np.where(s < 0, -mag, mag).astype(np.int8)
        elif k == Kind.FLATTEN:
            out = x.reshape(x.shape[0], -1, 1, 1)
        else:
            out = x
    return hook.on_output(np.ascontiguousarray(out))


def check_input(model, x, dtype=np.int8):
    x = np.asarray(x)
    if x.ndim != 4 or tuple(x.shape[1:]) != model.input_shape:
        raise ShapeError("input does not match model input shape", None,
                         (tuple(x.shape), model.input_shape))
    return x.astype(dtype, copy=False)


def model_forward(model, x, hook=None):
    """Run every layer; returns the list of per-layer int8 outputs.

    ``hook`` is a :class:`MacHook` or any object with ``for_layer(i)``.
    """
    hook = hook or IDENTITY
    x = check_input(model, x)
    outs = []
    cur = x
    for i, layer in enumerate(model.layers):
        try:
            ref = outs[layer.ref] if layer.kind == Kind.RESIDUAL_ADD else None
            ref_exp = model.layers[layer.ref].out_exp if ref is not None else None
            cur = layer_forward(layer, cur, model.in_exp(i), hook.for_layer(i), ref, ref_exp)
        except ShapeError as exc:
            raise exc.at_layer(i) from None
        outs.append(cur)
    return outs


def float_layer_forward(layer, x, ref=None):
    k = layer.kind
    if k == Kind.CONV2D:
        return ops.conv_float(x, layer.weight, layer.bias, layer.stride, layer.pad)
    if k == Kind.FC:
        y = x.reshape(x.shape[0], -1) @ layer.weight.T + layer.bias
        return y.reshape(x.shape[0], -1, 1, 1)
    if k == Kind.RELU:
        return np.maximum(x, 0.0)
    if k == Kind.MAXPOOL:
        return _pool_windows(x, layer).max(axis=(2, 3))
    if k == Kind.AVGPOOL:
        return _pool_windows(x, layer).mean(axis=(2, 3))
    if k == Kind.RESIDUAL_ADD:
        return x + ref
    if k == Kind.FLATTEN:
        return x.reshape(x.shape[0], -1, 1, 1)
    return x


def float_forward(model, x):
    """Unquantized forward of a FloatModel (used for pretraining and gradient checks)."""
    x = check_input(model, x, np.float64)
    outs = []
    cur = x
    for layer in model.layers:
        ref = outs[layer.ref] if layer.kind == Kind.RESIDUAL_ADD else None
        cur = float_layer_forward(layer, cur, ref)
        outs.append(cur)
    return outs


def predict(final):
    """Top-1 class per sample from final-layer outputs (ties go to the lower index)."""
    return np.asarray(final).reshape(final.shape[0], -1).argmax(axis=1)
