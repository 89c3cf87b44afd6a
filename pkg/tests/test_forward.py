import numpy as np
import pytest

from r2f.errors import ShapeError
from r2f.nn import model as M
from r2f.nn import quant
from r2f.nn.forward import IDENTITY, MacHook, layer_forward, model_forward
from r2f.nn.model import Kind, QuantModel

from conftest import rand_q8, toy_quant


def qconv(w, bias, out_exp=0, w_exp=0, stride=1, pad=0):
    w = np.asarray(w, dtype=np.int8)
    layer = M.conv(w.shape[1], w.shape[0], w.shape[2], stride, pad)
    layer.weight, layer.bias = w, np.asarray(bias, dtype=np.int32)
    layer.w_exp, layer.out_exp = w_exp, out_exp
    return layer


def test_conv_example_dot_product():
    layer = qconv([[[[1, 0], [0, 1]]]], [0])
    x = np.array([[[[1, 2], [3, 4]]]], dtype=np.int8)
    assert layer_forward(layer, x, 0).tolist() == [[[[5]]]]


def test_zero_weights_give_requantized_bias(rng):
    layer = qconv(np.zeros((2, 1, 3, 3)), [37, -300], out_exp=2)
    x = rand_q8(rng, (3, 1, 5, 5))
    out = layer_forward(layer, x, 0)
    expect = quant.requantize(np.array([37, -300]), 2)
    assert np.all(out[:, 0] == expect[0]) and np.all(out[:, 1] == expect[1])


def test_accumulator_clamps():
    layer = qconv([[[[1]]]], [0])
    assert layer_forward(layer, np.array([[[[100]]]], np.int8), 0).item() == 100
    layer.bias = np.array([60], np.int32)
    assert layer_forward(layer, np.array([[[[100]]]], np.int8), 0).item() == 127  # 160 clamps


def test_conv_matches_float_oracle(rng):
    w = rand_q8(rng, (4, 3, 3, 3))
    b = rng.integers(-1000, 1000, 4).astype(np.int32)
    x = rand_q8(rng, (2, 3, 7, 7))
    layer = qconv(w, b, out_exp=6, stride=2, pad=1)
    out = layer_forward(layer, x, 0)
    from r2f.nn.ops import conv_float
    acc = conv_float(x.astype(float), w.astype(float), b.astype(float), 2, 1)
    assert np.array_equal(out, quant.requantize(np.rint(acc).astype(np.int64), 6))


def test_hook_sees_input_weight_output():
    seen = []

    class Spy(MacHook):
        def on_input(self, t, slot=0):
            seen.append("in")
            return t

        def on_weight(self, t):
            seen.append("w")
            return np.zeros_like(t)

        def on_output(self, t):
            seen.append("out")
            return t + 1

    layer = qconv([[[[3]]]], [0])
    out = layer_forward(layer, np.array([[[[2]]]], np.int8), 0, Spy())
    assert seen == ["in", "w", "out"] and out.item() == 1


def test_model_forward_deterministic(rng):
    qm = toy_quant(3)
    x = rand_q8(rng, (4, 1, 6, 6))
    a, b = model_forward(qm, x), model_forward(qm, x)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert len(a) == len(qm.layers)


def test_relu_zeroes_negative_preactivations(rng):
    conv = qconv(rand_q8(rng, (2, 1, 3, 3)), [0, 0])
    qm = QuantModel((1, 5, 5), 0, [conv, M.relu()])
    outs = model_forward(qm, rand_q8(rng, (2, 1, 5, 5)))
    pre, post = outs
    assert np.all(post[pre < 0] == 0) and np.array_equal(post[pre >= 0], pre[pre >= 0])


def test_residual_add_oracle(rng):
    c1 = qconv(rand_q8(rng, (2, 2, 3, 3)), [0, 0], out_exp=-4, pad=1)
    c2 = qconv(rand_q8(rng, (2, 2, 3, 3)), [5, -5], out_exp=-2, pad=1)
    add = M.residual_add(ref=0)
    add.out_exp = -2
    qm = QuantModel((2, 4, 4), -8, [c1, c2, add])
    x = rand_q8(rng, (3, 2, 4, 4))
    o = model_forward(qm, x)
    # align layer 1 (scale 2^-2) to layer 0 (scale 2^-4): exact sum at 2^-4, then requantize by 2
    total = o[0].astype(np.int64) + (o[1].astype(np.int64) << 2)
    assert np.array_equal(o[2], quant.requantize(total, 2))


def test_residual_must_reference_earlier_layer():
    with pytest.raises(ShapeError):
        QuantModel((1, 2, 2), 0, [M.relu(), M.residual_add(ref=1)])


def test_shape_error_names_layer(rng):
    qm = toy_quant(0)
    with pytest.raises(ShapeError) as exc:
        model_forward(qm, rand_q8(rng, (1, 1, 5, 5)))
    assert exc.value.layer is None and "input" in str(exc.value)
    bad = qm.clone()
    bad.layers[4].weight = np.zeros((3, 5), np.int8)
    with pytest.raises(ShapeError) as exc:
        bad.validate()
    assert exc.value.layer == 4


def test_mac_count_formula():
    fm = M.init_float_model((3, 9, 9), [M.conv(3, 5, 3, stride=2, pad=1), M.relu(), M.flatten(),
                                        M.fc(5 * 5 * 5, 7)])
    c_in, k, c_out, h_out, w_out = 3, 3, 5, 5, 5
    assert fm.mac_counts[0] == c_in * k * k * c_out * h_out * w_out
    assert fm.mac_counts[3] == 125 * 7
    assert all(fm.mac_counts[i] > 0 for i, l in enumerate(fm.layers) if l.weighted)


def test_pooling_layers(rng):
    x = rand_q8(rng, (2, 3, 4, 4))
    mp = layer_forward(M.maxpool(2), x, 0)
    assert np.array_equal(mp, x.reshape(2, 3, 2, 2, 2, 2).max(axis=(3, 5)))
    ap = layer_forward(M.avgpool(2), x, 0)
    s = x.astype(np.int64).reshape(2, 3, 2, 2, 2, 2).sum(axis=(3, 5))
    assert np.array_equal(ap, quant.round_half_away(s / 4).astype(np.int8))
