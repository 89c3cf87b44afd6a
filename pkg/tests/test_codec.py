import numpy as np
import pytest

from r2f.codec import (PACKET_HEADER_SIZE, Encoding, IncrementPacket, ZlibCompressor, choose_encoding,
                       compute_increment, decode_sparse, encode_sparse, raw_packet, reconstruct)
from r2f.errors import DecodeError, ShapeError
from r2f.faults import FaultConfig
from r2f.nn.forward import model_forward
from r2f.tmr import TmrCapture, TmrPolicy, tmr_forward

from conftest import rand_q8, toy_quant


def _capture(voted, copy0, protected=True):
    from r2f.tmr import similarity

    return TmrCapture([voted], [copy0], [similarity(voted, copy0)], [protected])


def test_increment_examples():
    a = np.array([1, 2, 3], np.int8)
    assert not compute_increment(a, a).any()
    b = a.copy()
    b[1] += 5
    assert compute_increment(b, a).tolist() == [0, 5, 0]
    inc = compute_increment(np.array([-128], np.int8), np.array([127], np.int8))
    assert inc.dtype == np.int16 and inc[0] == -255
    with pytest.raises(ShapeError):
        compute_increment(a, a[:2])


def test_encode_examples():
    assert encode_sparse(np.zeros(5, np.int16)) == b"\x00\x00\x00\x00"
    assert encode_sparse(np.array([0, 0, 5, 0, -3])).hex() == "02000000" "02" "0500" "02" "fdff"


def test_multibyte_varint():
    inc = np.zeros(300, np.int16)
    inc[200] = 1
    assert encode_sparse(inc).hex() == "01000000" "c801" "0100"
    assert np.array_equal(decode_sparse(encode_sparse(inc), (300,)), inc)


def test_round_trip_random_sparse():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        size = int(rng.integers(1, 200))
        inc = np.zeros(size, np.int16)
        k = int(rng.integers(0, size + 1)) if rng.random() < 0.2 else int(rng.binomial(size, 0.05))
        pos = rng.choice(size, k, replace=False)
        inc[pos] = rng.choice(np.r_[-255:0, 1:256], k)
        assert np.array_equal(decode_sparse(encode_sparse(inc), inc.shape), inc)


@pytest.mark.parametrize("payload,why", [
    (bytes.fromhex("05000000" "00" "0100" "01" "0200"), "truncated"),
    (bytes.fromhex("01000000" "09" "0100"), "bounds"),
    (bytes.fromhex("0200000000010000010000"[:-2] + "00"), None),
    (bytes.fromhex("0100"), "truncated"),
    (bytes.fromhex("01000000" "ffffffffffffffffffff7f" "0100"), None),
])
def test_malformed_payloads(payload, why):
    with pytest.raises(DecodeError) as exc:
        decode_sparse(payload, (5,))
    if why:
        assert why in str(exc.value) or exc.value.reason == why


def test_non_monotone_gap_rejected():
    # second gap of zero repeats index 0
    with pytest.raises(DecodeError):
        decode_sparse(bytes.fromhex("02000000" "00" "0100" "00" "0100"), (5,))


def test_reconstruct_examples(rng):
    r, a = rand_q8(rng, 1000), rand_q8(rng, 1000)
    assert np.array_equal(reconstruct(r, compute_increment(a, r)), a)
    assert np.array_equal(reconstruct(r, np.zeros(1000, np.int16)), r)
    big = np.array([127], np.int8)
    with pytest.raises(DecodeError):
        reconstruct(big, np.array([5], np.int16))
    assert reconstruct(big, np.array([5], np.int16), saturate=True)[0] == 127


def test_choose_encoding_threshold(rng):
    v = rand_q8(rng, (2, 8))
    p = choose_encoding(_capture(v, v.copy()), 0, 0.6)
    assert p.encoding == Encoding.SPARSE and p.payload == b"\x00" * 4
    half = v.copy()
    half[0] += 1
    cap = _capture(v, half)
    assert cap.similarity[0] == 0.5
    p = choose_encoding(cap, 0, 0.6)
    assert p.encoding == Encoding.RAW and p.payload == half.tobytes()
    # at the boundary the threshold passes but 8 nonzeros (28 bytes) lose to 16 raw bytes
    assert choose_encoding(cap, 0, 0.5).encoding == Encoding.RAW
    w = rand_q8(rng, 400)
    w2 = w.copy()
    w2[:200] += 1
    assert choose_encoding(_capture(w, w2), 0, 0.5).encoding == Encoding.RAW
    w2[:199] = w[:199]
    assert choose_encoding(_capture(w, w2), 0, 0.5).encoding == Encoding.SPARSE
    assert choose_encoding(_capture(v, v, protected=False), 0, 0.0).encoding == Encoding.RAW
    with pytest.raises(ValueError):
        choose_encoding(cap, 0, 1.5)


def test_dense_increment_falls_back_to_raw(rng):
    v = rand_q8(rng, 64)
    c = v + np.int8(1)
    c[0] = v[0]  # similarity just above zero
    p = choose_encoding(_capture(v, c), 0, 0.0)
    assert p.encoding == Encoding.RAW and len(encode_sparse(compute_increment(c, v))) > c.size


def test_packet_round_trip(rng):
    packets = [raw_packet(rand_q8(rng, 10), 0), IncrementPacket(3, Encoding.SPARSE, b"\x00" * 4)]
    buf = b"".join(p.to_bytes() for p in packets)
    off, out = 0, []
    while off < len(buf):
        p, off = IncrementPacket.from_bytes(buf, off)
        out.append(p)
    assert out == packets
    assert PACKET_HEADER_SIZE == 11
    with pytest.raises(DecodeError):
        IncrementPacket.from_bytes(buf[:-1], len(packets[0].to_bytes()))
    bad = bytearray(packets[0].to_bytes())
    bad[2] = 7
    with pytest.raises(DecodeError):
        IncrementPacket.from_bytes(bytes(bad))


def test_packet_never_exceeds_raw_plus_header(rng):
    qm = toy_quant(0)
    x = rand_q8(rng, (3, 1, 6, 6))
    for ber in (0.0, 1e-3, 0.05, 0.5):
        cap = tmr_forward(qm, x, FaultConfig(ber, 1), TmrPolicy("lw"))
        for i in range(len(cap)):
            p = choose_encoding(cap, i, 0.0)
            assert p.size <= cap.copy0[i].size + PACKET_HEADER_SIZE


def test_client_exactness(rng):
    qm = toy_quant(0)
    x = rand_q8(rng, (3, 1, 6, 6))
    cap = tmr_forward(qm, x, FaultConfig(0.02, 9), TmrPolicy("lw"))
    for i in range(len(cap)):
        p = choose_encoding(cap, i, 0.0)
        got = p.tensor(reference=cap.voted[i])
        assert np.array_equal(got, cap.copy0[i])


def test_server_reconstruction_exact_at_zero_ber(rng):
    from r2f.runtime.server import reconstruct_activations

    qm = toy_quant(0)
    x = rand_q8(rng, (3, 1, 6, 6))
    cap = tmr_forward(qm, x, FaultConfig(0.0, 9), TmrPolicy("lw"))
    packets = [choose_encoding(cap, i, 0.6) for i in range(len(cap))]
    assert all(p.encoding == Encoding.SPARSE for p in packets)
    for got, want in zip(reconstruct_activations(qm, x, packets), cap.copy0):
        assert np.array_equal(got, want)


def test_server_error_equals_reference_gap(rng):
    # the server's error on a layer is exactly clean-recompute minus voted
    from r2f.nn.forward import layer_forward

    qm = toy_quant(0)
    x = rand_q8(rng, (3, 1, 6, 6))
    cap = tmr_forward(qm, x, FaultConfig(0.05, 2), TmrPolicy("lw"))
    clean0 = layer_forward(qm.layers[0], x, qm.in_exp(0))
    p = choose_encoding(cap, 0, 0.0)
    if p.encoding == Encoding.SPARSE:
        approx = p.tensor(reference=clean0, saturate=True).astype(np.int16)
        expected = np.clip(cap.copy0[0].astype(np.int16) + clean0 - cap.voted[0], -128, 127)
        assert np.array_equal(approx, expected)


def test_sparsity_grows_with_ber(tiny_q, digits):
    from r2f.data import to_input

    x = to_input(digits[1].images[:4])
    means = []
    for ber in (1e-6, 1e-5, 1e-4):
        fr = []
        for s in range(20):
            cap = tmr_forward(tiny_q, x, FaultConfig(ber, s), TmrPolicy("lw"))
            nz = sum(np.count_nonzero(compute_increment(c, v)) for c, v in zip(cap.copy0, cap.voted))
            fr.append(nz / sum(v.size for v in cap.voted))
        means.append(np.mean(fr))
    assert means[0] <= means[1] <= means[2]


def test_zlib_second_stage(rng):
    qm = toy_quant(0)
    x = rand_q8(rng, (3, 1, 6, 6))
    cap = tmr_forward(qm, x, FaultConfig(0.01, 2), TmrPolicy("lw"))
    z = ZlibCompressor()
    for i in range(len(cap)):
        p = choose_encoding(cap, i, 0.0, compressor=z)
        assert np.array_equal(p.tensor(reference=cap.voted[i], compressor=z), cap.copy0[i])
    with pytest.raises(DecodeError):
        z.decompress(b"not zlib")
