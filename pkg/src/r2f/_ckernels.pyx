# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; semantics match ``_pykernels`` bit for bit."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport int8_t, int16_t, int32_t, int64_t, uint8_t, uint32_t, uint64_t

from .errors import DecodeError

NAME = "cython"


def conv_acc(x, w, bias, int stride, int pad):
    # uint32 sums wrap modulo 2**32 like the int32 cast of the numpy twin
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t o = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t hp = h + 2 * pad, wp = wd + 2 * pad
    cdef Py_ssize_t ho = (hp - k) // stride + 1
    cdef Py_ssize_t wo = (wp - k) // stride + 1
    xp_arr = np.ascontiguousarray(np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x,
                                  dtype=np.int8)
    cdef const int8_t[:, :, :, ::1] xp = xp_arr
    cdef const int8_t[:, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.int8)
    cdef const int32_t[::1] bv = np.ascontiguousarray(bias, dtype=np.int32)
    out = np.empty((n, o, ho, wo), dtype=np.int32)
    cdef uint32_t[:, :, :, ::1] ov = out.view(np.uint32)
    cdef Py_ssize_t b, oc, oy, ox, ic, ky, kx, j, m = c * k * k
    cdef uint32_t wt, acc
    cdef const int8_t* xrow
    cdef const int8_t* xs
    cdef const int8_t* ws
    cdef uint32_t* orow
    if hp == k and wp == k:
        # the window is the whole input: one contiguous dot product per output
        for b in range(n):
            xs = &xp[b, 0, 0, 0]
            for oc in range(o):
                ws = &wv[oc, 0, 0, 0]
                acc = <uint32_t>bv[oc]
                for j in range(m):
                    acc += <uint32_t>(<int32_t>xs[j] * <int32_t>ws[j])
                ov[b, oc, 0, 0] = acc
        return out
    if stride != 1:
        for b in range(n):
            for oc in range(o):
                for oy in range(ho):
                    for ox in range(wo):
                        ov[b, oc, oy, ox] = <uint32_t>bv[oc]
                for ic in range(c):
                    for ky in range(k):
                        for kx in range(k):
                            wt = <uint32_t><int32_t>wv[oc, ic, ky, kx]
                            if wt == 0:
                                continue
                            for oy in range(ho):
                                xrow = &xp[b, ic, oy * stride + ky, kx]
                                orow = &ov[b, oc, oy, 0]
                                for ox in range(wo):
                                    orow[ox] += <uint32_t><int32_t>xrow[ox * stride] * wt
        return out
    # stride 1: accumulate whole padded rows so the inner loop is one long
    # contiguous run; the k - 1 wrap-around columns per row are dropped
    cdef Py_ssize_t span = (ho - 1) * wp + wo
    scratch_arr = np.empty(span, dtype=np.uint32)
    cdef uint32_t[::1] sc = scratch_arr
    cdef uint32_t* sp = &sc[0]
    for b in range(n):
        for oc in range(o):
            for j in range(span):
                sp[j] = <uint32_t>bv[oc]
            for ic in range(c):
                for ky in range(k):
                    for kx in range(k):
                        wt = <uint32_t><int32_t>wv[oc, ic, ky, kx]
                        if wt == 0:
                            continue
                        xrow = &xp[b, ic, ky, kx]
                        for j in range(span):
                            sp[j] += <uint32_t><int32_t>xrow[j] * wt
            for oy in range(ho):
                orow = &ov[b, oc, oy, 0]
                for ox in range(wo):
                    orow[ox] = sp[oy * wp + ox]
    return out


def permac_correct(acc, xp_arr, w, int stride, mac, operand, bit):
    cdef Py_ssize_t m = len(mac)
    if m == 0:
        return acc
    cdef Py_ssize_t n = acc.shape[0], o = acc.shape[1], ho = acc.shape[2], wo = acc.shape[3]
    cdef Py_ssize_t c = w.shape[1], k = w.shape[2]
    order = np.lexsort((operand, mac))
    cdef const int64_t[::1] mv = np.ascontiguousarray(np.asarray(mac)[order], dtype=np.int64)
    cdef const uint8_t[::1] opv = np.ascontiguousarray(np.asarray(operand)[order], dtype=np.uint8)
    cdef const uint8_t[::1] btv = np.ascontiguousarray(np.asarray(bit)[order], dtype=np.uint8)
    cdef const int8_t[:, :, :, ::1] xp = np.ascontiguousarray(xp_arr, dtype=np.int8)
    cdef const int8_t[:, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.int8)
    cdef int32_t[:, :, :, ::1] av = acc
    cdef Py_ssize_t i = 0, j
    cdef int64_t cur, r
    cdef uint8_t xm, wm
    cdef Py_ssize_t bn, bo, by, bx, bc, bky, bkx
    cdef int8_t xv, wq, xf, wf
    while i < m:
        cur = mv[i]
        xm = 0
        wm = 0
        j = i
        while j < m and mv[j] == cur:
            if opv[j] == 0:
                xm ^= <uint8_t>(1 << btv[j])
            else:
                wm ^= <uint8_t>(1 << btv[j])
            j += 1
        r = cur
        bkx = r % k; r //= k
        bky = r % k; r //= k
        bc = r % c; r //= c
        bx = r % wo; r //= wo
        by = r % ho; r //= ho
        bo = r % o; r //= o
        bn = r
        xv = xp[bn, bc, by * stride + bky, bx * stride + bkx]
        wq = wv[bo, bc, bky, bkx]
        xf = <int8_t>(<uint8_t>xv ^ xm)
        wf = <int8_t>(<uint8_t>wq ^ wm)
        av[bn, bo, by, bx] = <int32_t>(<int64_t>av[bn, bo, by, bx]
                                       + <int64_t>xf * wf - <int64_t>xv * wq)
        i = j
    return acc


def encode_sparse(flat):
    cdef const int16_t[::1] v = np.ascontiguousarray(np.asarray(flat, dtype=np.int16).ravel())
    cdef Py_ssize_t n = v.shape[0], i, nnz = 0, pos = 4
    for i in range(n):
        if v[i] != 0:
            nnz += 1
    out = bytearray(4 + nnz * 12)
    cdef unsigned char[::1] ob = out
    ob[0] = nnz & 0xFF
    ob[1] = (nnz >> 8) & 0xFF
    ob[2] = (nnz >> 16) & 0xFF
    ob[3] = (nnz >> 24) & 0xFF
    cdef uint64_t gap
    cdef Py_ssize_t prev = 0
    cdef unsigned short u
    for i in range(n):
        if v[i] == 0:
            continue
        gap = <uint64_t>(i - prev)
        prev = i
        while gap >= 0x80:
            ob[pos] = <unsigned char>((gap & 0x7F) | 0x80)
            pos += 1
            gap >>= 7
        ob[pos] = <unsigned char>gap
        pos += 1
        u = <unsigned short>v[i]
        ob[pos] = u & 0xFF
        ob[pos + 1] = u >> 8
        pos += 2
    return bytes(out[:pos])


def decode_sparse(buf, Py_ssize_t size):
    cdef bytes data = bytes(buf)
    cdef Py_ssize_t end = len(data)
    if end < 4:
        raise DecodeError("truncated", "missing nonzero count")
    cdef const unsigned char[:] b = data
    cdef uint64_t count = b[0] | (b[1] << 8) | (b[2] << 16) | (<uint64_t>b[3] << 24)
    if count > <uint64_t>size:
        raise DecodeError("bounds", f"count {count} exceeds {size} elements")
    if count * 3 > <uint64_t>(end - 4):
        raise DecodeError("truncated", f"{count} entries need at least {count * 3} bytes")
    out = np.zeros(size, dtype=np.int16)
    cdef int16_t[::1] ov = out
    cdef Py_ssize_t pos = 4, e
    cdef int64_t prev = -1, index
    cdef uint64_t gap
    cdef int shift
    cdef unsigned char byte
    cdef int16_t value
    for e in range(<Py_ssize_t>count):
        gap = 0
        shift = 0
        while True:
            if pos >= end:
                raise DecodeError("truncated", f"varint of entry {e}")
            byte = b[pos]
            pos += 1
            gap |= (<uint64_t>(byte & 0x7F)) << shift
            if byte < 0x80:
                break
            shift += 7
            if shift > 56:
                raise DecodeError("varint", f"overlong varint in entry {e}")
        if e > 0 and gap == 0:
            raise DecodeError("monotone", f"repeated index at entry {e}")
        if gap >= <uint64_t>size:
            raise DecodeError("bounds", f"gap {gap} >= {size}")
        index = <int64_t>gap if e == 0 else prev + <int64_t>gap
        if index >= size:
            raise DecodeError("bounds", f"index {index} >= {size}")
        if pos + 2 > end:
            raise DecodeError("truncated", f"value of entry {e}")
        value = <int16_t>(b[pos] | (b[pos + 1] << 8))
        pos += 2
        if value == 0:
            raise DecodeError("zero", f"explicit zero at index {index}")
        ov[index] = value
        prev = index
    if pos != end:
        raise DecodeError("trailing", f"{end - pos} unused bytes")
    return out
