"""Loss, backward propagation through recorded activations, and momentum SGD."""
import numpy as np

from ..errors import ShapeError, TrainingError
from . import ops
from .model import FloatModel, Kind


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _logits2d(logits):
    logits = np.asarray(logits, dtype=np.float64)
    return logits.reshape(logits.shape[0], -1)


def _check_labels(labels, n, classes):
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if len(labels) != n:
        raise ShapeError("label count does not match batch size", None, (len(labels), n))
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ShapeError(f"label outside [0, {classes})", None, (int(labels.min()), int(labels.max())))
    return labels


def loss_forward(logits, labels):
    """Mean softmax cross-entropy over the batch."""
    z = _logits2d(logits)
    labels = _check_labels(labels, z.shape[0], z.shape[1])
    return float(-log_softmax(z)[np.arange(len(labels)), labels].mean())


def loss_grad(logits, labels):
    z = _logits2d(logits)
    labels = _check_labels(labels, z.shape[0], z.shape[1])
    p = np.exp(log_softmax(z))
    p[np.arange(len(labels)), labels] -= 1.0
    return p / len(labels)


def _maxpool_backward(x, dout, layer):
    k, s = layer.kernel, layer.stride
    n, c, ho, wo = dout.shape
    cols = ops.im2col(x, k, s, ho, wo).reshape(n, c, k * k, ho, wo)
    pick = cols.argmax(axis=2)
    dcols = np.zeros(cols.shape, dtype=np.float64)
    np.put_along_axis(dcols, pick[:, :, None], dout[:, :, None], axis=2)
    return ops.col2im(dcols.reshape(n, c, k, k, ho, wo), x.shape, k, s)


def _conv_backward(layer, x, dout):
    o, c, k, _ = layer.weight.shape
    s, p = layer.stride, layer.pad
    n, _, ho, wo = dout.shape
    xp = ops.pad2d(x, p)
    mat = ops.cols_matrix(ops.im2col(xp, k, s, ho, wo))
    dmat = dout.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (dmat.T @ mat).reshape(layer.weight.shape)
    db = dmat.sum(axis=0)
    dcols = (dmat @ layer.weight.reshape(o, -1)).reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    dxp = ops.col2im(np.ascontiguousarray(dcols), xp.shape, k, s)
    dx = dxp[:, :, p:p + x.shape[2], p:p + x.shape[3]] if p else dxp
    return dx, dw, db


def backward(model: FloatModel, x, activations, labels):
    """Gradients of the mean loss, taken through externally supplied activations.

    ``x`` is the (dequantized) network input and ``activations[i]`` the
    recorded output of layer ``i``; nothing is recomputed, so whatever
    perturbation those tensors carry flows into the gradients. Quantization
    is treated as identity. Returns ``(loss, grads)`` where ``grads[i]`` is
    ``(dW, db)`` for weighted layers and ``None`` otherwise.
    """
    if len(activations) != len(model.layers):
        raise ShapeError("activation count does not match layer count", None,
                         (len(activations), len(model.layers)))
    x = np.asarray(x, dtype=np.float64)
    acts = [np.asarray(a, dtype=np.float64) for a in activations]
    for i, a in enumerate(acts):
        if a.shape[1:] != model.shapes[i] or a.shape[0] != x.shape[0]:
            raise ShapeError("activation shape does not match topology", i,
                             (a.shape, model.shapes[i]))
    loss = loss_forward(acts[-1], labels)
    grads = [None] * len(model.layers)
    douts = [None] * len(model.layers)
    douts[-1] = loss_grad(acts[-1], labels).reshape(acts[-1].shape)
    for i in range(len(model.layers) - 1, -1, -1):
        d = douts[i]
        if d is None:
            continue
        layer = model.layers[i]
        inp = acts[i - 1] if i > 0 else x
        k = layer.kind
        if k == Kind.CONV2D:
            dx, dw, db = _conv_backward(layer, inp, d)
            grads[i] = (dw, db)
        elif k == Kind.FC:
            flat = inp.reshape(inp.shape[0], -1)
            d2 = d.reshape(d.shape[0], -1)
            grads[i] = (d2.T @ flat, d2.sum(axis=0))
            dx = (d2 @ layer.weight).reshape(inp.shape)
        elif k == Kind.RELU:
            dx = d * (inp > 0)
        elif k == Kind.MAXPOOL:
            dx = _maxpool_backward(inp, d, layer)
        elif k == Kind.AVGPOOL:
            kk = layer.kernel
            n, c, ho, wo = d.shape
            dcols = np.broadcast_to((d / (kk * kk))[:, :, None, None], (n, c, kk, kk, ho, wo))
            dx = ops.col2im(np.ascontiguousarray(dcols), inp.shape, kk, layer.stride)
        elif k == Kind.RESIDUAL_ADD:
            dx = d
            r = layer.ref
            douts[r] = d.copy() if douts[r] is None else douts[r] + d
        elif k == Kind.FLATTEN:
            dx = d.reshape(inp.shape)
        else:
            dx = d
        if i > 0:
            douts[i - 1] = dx if douts[i - 1] is None else douts[i - 1] + dx
    return loss, grads


class SGD:
    """Momentum SGD (``v = m*v + g``; ``w -= lr*v``) holding its own velocity."""

    def __init__(self, lr=1e-3, momentum=0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity = {}

    def step(self, model, grads):
        new, self.velocity = sgd_update(model, grads, self.lr, self.momentum, self.velocity)
        return new


def sgd_update(model, grads, lr, momentum=0.0, velocity=None):
    """Return ``(updated_model, velocity)``; the input model is not modified."""
    velocity = dict(velocity or {})
    for i, g in enumerate(grads):
        if g is None:
            continue
        if not all(np.all(np.isfinite(part)) for part in g):
            bad = [j for j, gg in enumerate(grads) if gg is not None
                   and not all(np.all(np.isfinite(p)) for p in gg)]
            raise TrainingError(f"non-finite gradient in layers {bad}")
    new = model.clone()
    for i, g in enumerate(grads):
        if g is None:
            continue
        layer = new.layers[i]
        if g[0].shape != layer.weight.shape or g[1].shape != layer.bias.shape:
            raise ShapeError("gradient shape does not match parameters", i)
        vw, vb = velocity.get(i, (np.zeros_like(layer.weight), np.zeros_like(layer.bias)))
        vw = momentum * vw + g[0]
        vb = momentum * vb + g[1]
        velocity[i] = (vw, vb)
        layer.weight = layer.weight - lr * vw
        layer.bias = layer.bias - lr * vb
    return new, velocity
