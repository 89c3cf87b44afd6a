"""Window gather/scatter helpers shared by the float path and the numpy kernels."""
import numpy as np


def pad2d(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def out_size(n, k, stride, pad=0):
    return (n + 2 * pad - k) // stride + 1


def im2col(xp, k, stride, ho, wo):
    """(N, C, Hp, Wp) -> (N, C, k, k, ho, wo) windows, one strided copy per tap."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for ky in range(k):
        for kx in range(k):
            cols[:, :, ky, kx] = xp[:, :, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride]
    return cols


def col2im(cols, shape, k, stride):
    """Adjoint of :func:`im2col`: scatter-add windows back into a padded tensor."""
    out = np.zeros(shape, dtype=cols.dtype)
    ho, wo = cols.shape[4:]
    for ky in range(k):
        for kx in range(k):
            out[:, :, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride] += cols[:, :, ky, kx]
    return out


def cols_matrix(cols):
    """(N, C, k, k, ho, wo) -> (N*ho*wo, C*k*k)."""
    n, c, k, _, ho, wo = cols.shape
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * ho * wo, c * k * k)


def conv_float(x, w, b, stride, pad):
    o, c, k, _ = w.shape
    xp = pad2d(x, pad)
    ho = out_size(x.shape[2], k, stride, pad)
    wo = out_size(x.shape[3], k, stride, pad)
    mat = cols_matrix(im2col(xp, k, stride, ho, wo))
    y = mat @ w.reshape(o, -1).T + b
    return y.reshape(x.shape[0], ho, wo, o).transpose(0, 3, 1, 2)
