import os
import subprocess
import sys

import numpy as np
import pytest

from r2f import kernels
from r2f.errors import DecodeError

from conftest import rand_q8

BACKENDS = list(kernels.available().values())
ids = [b.NAME for b in BACKENDS]


def test_compiled_backend_is_selected_when_built():
    if kernels.compiled_backend is None:
        pytest.skip("compiled extension not built")
    assert kernels.BACKEND == "cython"


def test_env_var_forces_fallback():
    env = dict(os.environ, R2F_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import r2f; print(r2f.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "numpy"


def _direct_conv(x, w, b, s, p):
    xp = np.pad(x.astype(np.int64), ((0, 0), (0, 0), (p, p), (p, p)))
    n, c, h, wd = xp.shape
    o, _, k, _ = w.shape
    ho, wo = (h - k) // s + 1, (wd - k) // s + 1
    out = np.zeros((n, o, ho, wo), np.int64)
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * s:i * s + k, j * s:j * s + k]
            out[:, :, i, j] = np.tensordot(patch, w.astype(np.int64), axes=([1, 2, 3], [1, 2, 3]))
    return out + b[None, :, None, None]


@pytest.mark.parametrize("be", BACKENDS, ids=ids)
@pytest.mark.parametrize("s,p,k", [(1, 0, 1), (1, 1, 3), (2, 1, 3), (2, 0, 2)])
def test_conv_acc_matches_direct(be, s, p, k, rng):
    x = rand_q8(rng, (2, 3, 7, 7))
    w = rand_q8(rng, (4, 3, k, k))
    b = rng.integers(-5000, 5000, 4).astype(np.int32)
    assert np.array_equal(be.conv_acc(x, w, b, s, p), _direct_conv(x, w, b, s, p))


def _permac_oracle(acc, xp, w, s, mac, operand, bit):
    acc = acc.astype(np.int64).copy()
    n, o, ho, wo = acc.shape
    _, c, k, _ = w.shape
    hits = {}
    for m, op, b in zip(mac, operand, bit):
        xm, wm = hits.get(int(m), (0, 0))
        hits[int(m)] = (xm ^ (1 << b), wm) if op == 0 else (xm, wm ^ (1 << b))
    for m, (xm, wm) in hits.items():
        bn, bo, by, bx, bc, ky, kx = np.unravel_index(m, (n, o, ho, wo, c, k, k))
        xv = int(xp[bn, bc, by * s + ky, bx * s + kx])
        wv = int(w[bo, bc, ky, kx])
        flip = lambda v, msk: int(np.array(v & 0xFF ^ msk, np.uint8).view(np.int8))
        acc[bn, bo, by, bx] += flip(xv, xm) * flip(wv, wm) - xv * wv
    return acc


@pytest.mark.parametrize("be", BACKENDS, ids=ids)
def test_permac_correction_matches_oracle(be, rng):
    x = rand_q8(rng, (2, 2, 5, 5))
    w = rand_q8(rng, (3, 2, 3, 3))
    b = np.zeros(3, np.int32)
    acc = be.conv_acc(x, w, b, 1, 1)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    n_macs = acc.size * 2 * 9
    mac = rng.integers(0, n_macs, 300)
    mac[:20] = mac[20:40]  # force collisions on the same MAC
    operand = rng.integers(0, 2, 300).astype(np.uint8)
    bit = rng.integers(0, 8, 300).astype(np.uint8)
    expect = _permac_oracle(acc, xp, w, 1, mac, operand, bit)
    got = be.permac_correct(acc.copy(), xp, w, 1, mac, operand, bit)
    assert np.array_equal(got, expect)


@pytest.mark.parametrize("be", BACKENDS, ids=ids)
def test_sparse_codec_example(be):
    assert be.encode_sparse(np.array([0, 0, 5, 0, -3], np.int16)).hex() == "0200000002050002fdff"
    assert be.encode_sparse(np.zeros(5, np.int16)) == b"\x00\x00\x00\x00"


def test_backends_agree_on_random_vectors(rng):
    if len(BACKENDS) < 2:
        pytest.skip("only one backend")
    py, cy = kernels.python_backend, kernels.compiled_backend
    for _ in range(200):
        n = int(rng.integers(1, 3000))
        v = np.where(rng.random(n) < rng.random(), rng.integers(-255, 256, n), 0).astype(np.int16)
        enc = py.encode_sparse(v)
        assert cy.encode_sparse(v) == enc
        assert np.array_equal(cy.decode_sparse(enc, n), v)
        assert np.array_equal(py.decode_sparse(enc, n), v)


def test_backends_agree_on_garbage(rng):
    if len(BACKENDS) < 2:
        pytest.skip("only one backend")
    for _ in range(3000):
        buf = rng.integers(0, 256, int(rng.integers(0, 40)), dtype=np.uint8).tobytes()
        size = int(rng.integers(0, 64))
        res = []
        for be in BACKENDS:
            try:
                res.append(("ok", be.decode_sparse(buf, size).tobytes()))
            except DecodeError as exc:
                res.append(("err", exc.reason))
        assert res[0] == res[1], (buf.hex(), size, res)
