import numpy as np
import pytest
from scipy import stats

from r2f.errors import ConfigError, ShapeError
from r2f.faults import (FaultConfig, FaultHook, FaultInjector, effective_ber, flip_bits,
                        flip_positions, flip_tensor, forward_bits, make_fault_hook)
from r2f.nn.forward import IDENTITY, model_forward

from conftest import rand_q8, toy_quant


def test_flip_bits_extremes(rng):
    words = rand_q8(rng, 1000)
    assert np.array_equal(flip_bits(words, 0.0, rng), words)
    assert np.array_equal(flip_bits(words, 1.0, rng), ~words)
    assert flip_bits(0b1010_0101, 1.0, rng) == 0b0101_1010


def test_flip_bits_binomial_count():
    rng = np.random.default_rng(99)
    words = np.zeros(10**6, np.uint8)
    flipped = np.unpackbits(flip_bits(words, 1e-3, rng).view(np.uint8)).sum()
    assert abs(int(flipped) - 8000) <= 400


def test_flip_tensor_rate(rng):
    t = rand_q8(rng, 200_000)
    for ber in (1e-4, 1e-3, 1e-2):
        n = 8 * t.size
        sd = np.sqrt(n * ber * (1 - ber))
        got = effective_ber(t, flip_tensor(t, ber, rng)) * n
        assert abs(got - n * ber) <= 4.5 * sd


def test_fast_and_bernoulli_paths_agree():
    nbits, ber = 4000, 2e-3
    r1, r2 = np.random.default_rng(1), np.random.default_rng(2)
    fast = [flip_positions(nbits, ber, r1, fast=True) for _ in range(3000)]
    slow = [flip_positions(nbits, ber, r2, fast=False) for _ in range(3000)]
    counts = stats.ks_2samp([len(p) for p in fast], [len(p) for p in slow])
    where = stats.ks_2samp(np.concatenate(fast), np.concatenate(slow))
    assert counts.pvalue > 1e-3 and where.pvalue > 1e-3
    assert all(np.all(np.diff(p) > 0) for p in fast)


def test_fast_path_threshold():
    rng = np.random.default_rng(0)
    assert len(flip_positions(10, 1.0, rng)) == 10
    assert len(flip_positions(0, 0.5, rng)) == 0


def test_effective_ber_examples(rng):
    t = rand_q8(rng, 100)
    assert effective_ber(t, t) == 0.0
    assert effective_ber(t, ~t) == 1.0
    u = t.copy()
    u[17] ^= 0b0001_0000
    assert effective_ber(t, u) == 1 / 800
    with pytest.raises(ShapeError):
        effective_ber(t, t[:50])


def test_zero_ber_hook_is_identity(rng):
    assert make_fault_hook(FaultConfig(0.0, 3), 2, 0) is IDENTITY
    hook = FaultHook(FaultConfig(0.0, 3), 2, 0)
    t = rand_q8(rng, (4, 8))
    assert np.array_equal(hook.on_input(t), t) and np.array_equal(hook.on_output(t), t)


def test_hook_determinism_and_independence(rng):
    cfg = FaultConfig(0.5, 11)
    t = rand_q8(rng, 64)  # 512 bits
    a = make_fault_hook(cfg, 1, 0).on_output(t)
    assert np.array_equal(a, make_fault_hook(cfg, 1, 0).on_output(t))
    assert not np.array_equal(a, make_fault_hook(cfg, 1, 1).on_output(t))
    assert not np.array_equal(a, make_fault_hook(cfg, 2, 0).on_output(t))
    assert not np.array_equal(a, make_fault_hook(cfg, 1, 0).on_input(t))


def test_sites_switch(rng):
    t = rand_q8(rng, 256)
    hook = make_fault_hook(FaultConfig(0.5, 1, sites={"weights"}), 0, 0)
    assert np.array_equal(hook.on_input(t), t) and np.array_equal(hook.on_output(t), t)
    assert not np.array_equal(hook.on_weight(t), t)


@pytest.mark.parametrize("kw", [dict(ber=-0.1), dict(ber=1.5), dict(ber=0.1, sites=()),
                                dict(sites={"bogus"}), dict(mode="sometimes"), dict(seed=-1)])
def test_config_validation(kw):
    with pytest.raises((ConfigError, ValueError)):
        FaultConfig(**kw)


def test_ber_zero_forward_bit_exact(rng):
    for seed in range(5):
        qm = toy_quant(seed)
        x = rand_q8(rng, (3, 1, 6, 6))
        clean = model_forward(qm, x)
        faulty = model_forward(qm, x, FaultInjector(FaultConfig(0.0, seed), 0))
        assert all(np.array_equal(a, b) for a, b in zip(clean, faulty))


def test_layer_override():
    cfg = FaultConfig(0.0, 1, layer_ber=((2, 0.3),))
    assert cfg.active and cfg.ber_for(2) == 0.3 and cfg.ber_for(1) == 0.0
    assert make_fault_hook(cfg, 1) is IDENTITY and make_fault_hook(cfg, 2) is not IDENTITY


def test_per_mac_mode(rng):
    qm = toy_quant(2)
    x = rand_q8(rng, (2, 1, 6, 6))
    clean = model_forward(qm, x)
    zero = model_forward(qm, x, FaultInjector(FaultConfig(0.0, 1, mode="per_mac")))
    assert all(np.array_equal(a, b) for a, b in zip(clean, zero))
    cfg = FaultConfig(0.05, 1, mode="per_mac")
    a = model_forward(qm, x, FaultInjector(cfg, 0))
    b = model_forward(qm, x, FaultInjector(cfg, 0))
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert not np.array_equal(a[0], clean[0])


def test_mac_events_rate():
    hook = FaultHook(FaultConfig(1e-3, 5, mode="per_mac"), 0, 0)
    mac, operand, bit = hook.mac_events(100_000)
    n = 100_000 * 16
    assert abs(len(mac) - n * 1e-3) <= 4.5 * np.sqrt(n * 1e-3)
    assert set(np.unique(operand)) <= {0, 1} and bit.max() < 8


def test_forward_bits_counts_all_sites():
    qm = toy_quant(0)
    per_sample = forward_bits(qm, 1)
    weights = sum(8 * l.weight.size for l in qm.layers if l.weighted)
    assert forward_bits(qm, 2) - per_sample == per_sample - weights


def test_accuracy_degrades_with_ber(tiny_q, digits):
    from r2f.runtime.evaluate import evaluate

    test = digits[1]
    means = []
    for ber in (1e-6, 1e-5, 1e-4, 1e-3):
        accs = [evaluate(tiny_q, test, FaultConfig(ber, s), n=200, stream=s)["top1"] for s in range(20)]
        means.append((np.mean(accs), np.std(accs, ddof=1) / np.sqrt(20)))
    for (m0, s0), (m1, s1) in zip(means, means[1:]):
        # non-increasing in expectation: allow 3 standard errors of noise
        assert m1 <= m0 + 3 * np.hypot(s0, s1)
    assert means[-1][0] < means[0][0]
