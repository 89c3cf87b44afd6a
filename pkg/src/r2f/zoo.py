"""Desk-scale benchmark networks and their float pretraining."""
from __future__ import annotations

import os

import numpy as np

from . import data
from .errors import ConfigError
from .nn import model as M
from .nn.forward import float_forward, model_forward, predict
from .nn.quant import choose_exp
from .nn.serialize import load_float_model, save_float_model
from .nn.train import SGD, backward

INPUT_SHAPE = (1, data.SIDE, data.SIDE)


def tiny_net_layers(classes=10):
    return [M.conv(1, 8, 3, pad=1), M.relu(), M.maxpool(2),
            M.conv(8, 16, 3, pad=1), M.relu(), M.maxpool(2),
            M.flatten(), M.fc(16 * 7 * 7, classes)]


def tiny_resnet_layers(classes=10):
    return [M.conv(1, 8, 3, stride=2, pad=1), M.relu(),
            M.conv(8, 8, 3, pad=1), M.relu(), M.conv(8, 8, 3, pad=1),
            M.residual_add(ref=1), M.relu(), M.avgpool(2),
            M.flatten(), M.fc(8 * 7 * 7, classes)]


ZOO = {"tiny-net": tiny_net_layers, "tiny-resnet": tiny_resnet_layers}


def build(name, seed=0):
    try:
        layers = ZOO[name]()
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(ZOO)}") from None
    return M.init_float_model(INPUT_SHAPE, layers, data.INPUT_EXP, seed)


def calibrate(fm, x_float, headroom=1.0):
    """Set each rescaling layer's ``out_exp`` from the peak activation on ``x_float``."""
    fm = fm.clone()
    acts = float_forward(fm, x_float)
    for layer, a in zip(fm.layers, acts):
        if layer.kind not in M.PASSTHROUGH:
            layer.out_exp = choose_exp(headroom * float(np.max(np.abs(a))))
    M.sync_passthrough_exps(fm.input_exp, fm.layers)
    fm.validate()
    return fm


def float_train(fm, ds, epochs=8, batch_size=32, lr=0.02, momentum=0.9, seed=0):
    """Plain float SGD on the quantization-grid inputs."""
    rng = np.random.default_rng(seed)
    opt = SGD(lr, momentum)
    x_all = data.to_float_input(ds.images)
    for _ in range(epochs):
        order = rng.permutation(len(ds))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            x = x_all[idx]
            _, grads = backward(fm, x, float_forward(fm, x), ds.labels[idx])
            fm = opt.step(fm, grads)
    return fm


def pretrain(name, train_ds, seed=0, epochs=8):
    fm = float_train(build(name, seed), train_ds, epochs=epochs, seed=seed)
    calib = data.to_float_input(train_ds.images[:256])
    return calibrate(fm, calib)


def cache_dir():
    return os.environ.get("R2F_CACHE", os.path.join(os.path.expanduser("~"), ".cache", "r2f"))


def pretrained(name, train_ds=None, seed=0, epochs=8, cache=True):
    """Pretrained, calibrated float master, cached as ``.npz``."""
    path = os.path.join(cache_dir(), f"{name}-s{seed}-e{epochs}.npz")
    if cache and os.path.exists(path):
        return load_float_model(path)
    if train_ds is None:
        train_ds, _ = data.ensure_digits(data.default_root())
    fm = pretrain(name, train_ds, seed, epochs)
    if cache:
        os.makedirs(cache_dir(), exist_ok=True)
        save_float_model(path, fm)
    return fm


def clean_accuracy(qm, ds):
    outs = model_forward(qm, data.to_input(ds.images))
    return float(np.mean(predict(outs[-1]) == ds.labels))
