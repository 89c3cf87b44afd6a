"""Numpy reference implementations of the hot kernels.

Every function here has a bit-identical twin in ``_ckernels.pyx``.
"""
import numpy as np

from .errors import DecodeError
from .nn.ops import cols_matrix, im2col, out_size, pad2d

NAME = "numpy"


def conv_acc(x, w, bias, stride, pad):
    """Integer convolution accumulator: int8 x, int8 w, int32 bias -> int32.

    Products are summed in float64, which is exact for any int8 layer whose
    accumulator fits in 32 bits.
    """
    n, _, h, wd = x.shape
    o, c, k, _ = w.shape
    ho, wo = out_size(h, k, stride, pad), out_size(wd, k, stride, pad)
    cols = im2col(pad2d(x, pad), k, stride, ho, wo)
    mat = cols_matrix(cols).astype(np.float64)
    acc = mat @ w.reshape(o, -1).astype(np.float64).T
    acc = acc.astype(np.int64) + bias.astype(np.int64)
    acc = acc.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(acc).astype(np.int32)


def permac_correct(acc, xp, w, stride, mac, operand, bit):
    """Apply transient per-MAC operand flips to an accumulator in place.

    ``mac`` indexes the flattened (n, o, oy, ox, c, ky, kx) MAC space of the
    padded input ``xp``; ``operand`` is 0 for the activation and 1 for the
    weight; ``bit`` is the flipped bit position. Flips hitting the same MAC
    are combined before the product is recomputed.
    """
    if len(mac) == 0:
        return acc
    n, o, ho, wo = acc.shape
    _, c, k, _ = w.shape
    order = np.lexsort((operand, mac))
    mac, operand, bit = mac[order], operand[order], bit[order]
    uniq, first = np.unique(mac, return_index=True)
    masks = (np.uint8(1) << bit.astype(np.uint8)).astype(np.uint8)
    xmask = np.zeros(len(uniq), np.uint8)
    wmask = np.zeros(len(uniq), np.uint8)
    slot = np.searchsorted(uniq, mac)
    np.bitwise_xor.at(xmask, slot[operand == 0], masks[operand == 0])
    np.bitwise_xor.at(wmask, slot[operand == 1], masks[operand == 1])
    bn, bo, by, bx, bc, bky, bkx = np.unravel_index(uniq, (n, o, ho, wo, c, k, k))
    xv = xp[bn, bc, by * stride + bky, bx * stride + bkx]
    wv = w[bo, bc, bky, bkx]
    xf = (xv.view(np.uint8) ^ xmask).view(np.int8)
    wf = (wv.view(np.uint8) ^ wmask).view(np.int8)
    delta = xf.astype(np.int64) * wf.astype(np.int64) - xv.astype(np.int64) * wv.astype(np.int64)
    wide = acc.astype(np.int64)
    np.add.at(wide, (bn, bo, by, bx), delta)
    acc[...] = wide.astype(np.int32)
    return acc


def encode_sparse(flat):
    """Gap-varint + int16 LE encoding of a flat int16 vector."""
    flat = np.asarray(flat, dtype=np.int16).ravel()
    idx = np.flatnonzero(flat)
    count = np.array([len(idx)], dtype="<u4").tobytes()
    if len(idx) == 0:
        return count
    gaps = np.diff(idx, prepend=0).astype(np.uint64)
    nbytes = np.ones(len(gaps), dtype=np.int64)
    rest = gaps >> np.uint64(7)
    while rest.any():
        nbytes += rest > 0
        rest >>= np.uint64(7)
    rec = nbytes + 2
    start = np.concatenate(([0], np.cumsum(rec)[:-1]))
    out = np.zeros(int(rec.sum()), dtype=np.uint8)
    for j in range(int(nbytes.max())):
        live = nbytes > j
        chunk = (gaps[live] >> np.uint64(7 * j)) & np.uint64(0x7F)
        more = (nbytes[live] - 1 > j).astype(np.uint64) << np.uint64(7)
        out[start[live] + j] = (chunk | more).astype(np.uint8)
    vals = flat[idx].astype("<i2").view(np.uint8).reshape(-1, 2)
    out[start + nbytes] = vals[:, 0]
    out[start + nbytes + 1] = vals[:, 1]
    return count + out.tobytes()


def decode_sparse(buf, size):
    """Inverse of :func:`encode_sparse`; raises :class:`DecodeError` on bad input."""
    buf = bytes(buf)
    if len(buf) < 4:
        raise DecodeError("truncated", "missing nonzero count")
    count = int.from_bytes(buf[:4], "little")
    if count > size:
        raise DecodeError("bounds", f"count {count} exceeds {size} elements")
    if count * 3 > len(buf) - 4:
        raise DecodeError("truncated", f"{count} entries need at least {count * 3} bytes")
    out = np.zeros(size, dtype=np.int16)
    pos, prev = 4, -1
    end = len(buf)
    for e in range(count):
        gap, shift = 0, 0
        while True:
            if pos >= end:
                raise DecodeError("truncated", f"varint of entry {e}")
            byte = buf[pos]
            pos += 1
            gap |= (byte & 0x7F) << shift
            if byte < 0x80:
                break
            shift += 7
            if shift > 56:
                raise DecodeError("varint", f"overlong varint in entry {e}")
        if e > 0 and gap == 0:
            raise DecodeError("monotone", f"repeated index at entry {e}")
        index = gap if e == 0 else prev + gap
        if index >= size:
            raise DecodeError("bounds", f"index {index} >= {size}")
        if pos + 2 > end:
            raise DecodeError("truncated", f"value of entry {e}")
        value = int.from_bytes(buf[pos:pos + 2], "little", signed=True)
        pos += 2
        if value == 0:
            raise DecodeError("zero", f"explicit zero at index {index}")
        out[index] = value
        prev = index
    if pos != end:
        raise DecodeError("trailing", f"{end - pos} unused bytes")
    return out
