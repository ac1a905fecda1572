"""Numba-compiled inner loops with a pinned accumulation order.

Every reduction that feeds a bit-exactness guarantee accumulates in float32,
left to right, in the documented term order:

* conv2d: per output element, ``bias`` first, then terms in ascending
  ``(in_channel, ky, kx)`` order.
* matmul: per output element, terms in ascending ``k`` order.
* full/channel sums and average pooling: ascending row-major index order.

The loops are arranged so the innermost dimension runs over output columns
(independent accumulators), which lets LLVM vectorize without reassociating
any single accumulation chain; results are bit-identical to the naive
nested-loop evaluation of the same order.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_forward(xp, w, b, stride, oh, ow):
    """Cross-correlation on a pre-padded input ``xp`` (N,C,Hp,Wp)."""
    n = xp.shape[0]
    cin = xp.shape[1]
    cout = w.shape[0]
    kh = w.shape[2]
    kw = w.shape[3]
    y = np.empty((n, cout, oh, ow), dtype=np.float32)
    for ni in range(n):
        for oc in range(cout):
            bv = b[oc]
            for oy in range(oh):
                yrow = y[ni, oc, oy]
                for ox in range(ow):
                    yrow[ox] = bv
            for ic in range(cin):
                for ky in range(kh):
                    for kx in range(kw):
                        wv = w[oc, ic, ky, kx]
                        if stride == 1:
                            for oy in range(oh):
                                yrow = y[ni, oc, oy]
                                xrow = xp[ni, ic, oy + ky]
                                for ox in range(ow):
                                    yrow[ox] += xrow[ox + kx] * wv
                        else:
                            for oy in range(oh):
                                yrow = y[ni, oc, oy]
                                xrow = xp[ni, ic, oy * stride + ky]
                                for ox in range(ow):
                                    yrow[ox] += xrow[ox * stride + kx] * wv
    return y


@njit(cache=True)
def conv2d_backward_input(gy, w, stride, hp, wp):
    """Gradient w.r.t. the padded input; caller crops the padding off."""
    n = gy.shape[0]
    cout = gy.shape[1]
    oh = gy.shape[2]
    ow = gy.shape[3]
    cin = w.shape[1]
    kh = w.shape[2]
    kw = w.shape[3]
    gxp = np.zeros((n, cin, hp, wp), dtype=np.float32)
    for ni in range(n):
        for oc in range(cout):
            for ic in range(cin):
                for ky in range(kh):
                    for kx in range(kw):
                        wv = w[oc, ic, ky, kx]
                        if stride == 1:
                            for oy in range(oh):
                                gxrow = gxp[ni, ic, oy + ky]
                                gyrow = gy[ni, oc, oy]
                                for ox in range(ow):
                                    gxrow[ox + kx] += gyrow[ox] * wv
                        else:
                            for oy in range(oh):
                                gxrow = gxp[ni, ic, oy * stride + ky]
                                gyrow = gy[ni, oc, oy]
                                for ox in range(ow):
                                    gxrow[ox * stride + kx] += gyrow[ox] * wv
    return gxp


@njit(cache=True)
def conv2d_backward_weight(gy, xp, stride, cin, kh, kw):
    n = gy.shape[0]
    cout = gy.shape[1]
    oh = gy.shape[2]
    ow = gy.shape[3]
    gw = np.empty((cout, cin, kh, kw), dtype=np.float32)
    for oc in range(cout):
        for ic in range(cin):
            for ky in range(kh):
                for kx in range(kw):
                    acc = np.float32(0.0)
                    for ni in range(n):
                        for oy in range(oh):
                            gyrow = gy[ni, oc, oy]
                            xrow = xp[ni, ic, oy * stride + ky]
                            for ox in range(ow):
                                acc += gyrow[ox] * xrow[ox * stride + kx]
                    gw[oc, ic, ky, kx] = acc
    return gw


@njit(cache=True)
def conv2d_backward_bias(gy):
    n = gy.shape[0]
    cout = gy.shape[1]
    oh = gy.shape[2]
    ow = gy.shape[3]
    gb = np.empty(cout, dtype=np.float32)
    for oc in range(cout):
        acc = np.float32(0.0)
        for ni in range(n):
            for oy in range(oh):
                for ox in range(ow):
                    acc += gy[ni, oc, oy, ox]
        gb[oc] = acc
    return gb


@njit(cache=True)
def maxpool_forward(x, window, stride, oh, ow):
    """Max pooling; argmax index recorded with first occurrence on ties."""
    n = x.shape[0]
    c = x.shape[1]
    y = np.empty((n, c, oh, ow), dtype=np.float32)
    ay = np.empty((n, c, oh, ow), dtype=np.int32)
    ax = np.empty((n, c, oh, ow), dtype=np.int32)
    for ni in range(n):
        for ci in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    iy0 = oy * stride
                    ix0 = ox * stride
                    best = x[ni, ci, iy0, ix0]
                    by = iy0
                    bx = ix0
                    for ky in range(window):
                        for kx in range(window):
                            v = x[ni, ci, iy0 + ky, ix0 + kx]
                            if v > best:
                                best = v
                                by = iy0 + ky
                                bx = ix0 + kx
                    y[ni, ci, oy, ox] = best
                    ay[ni, ci, oy, ox] = by
                    ax[ni, ci, oy, ox] = bx
    return y, ay, ax


@njit(cache=True)
def maxpool_backward(gy, ay, ax, h, w):
    n = gy.shape[0]
    c = gy.shape[1]
    oh = gy.shape[2]
    ow = gy.shape[3]
    gx = np.zeros((n, c, h, w), dtype=np.float32)
    for ni in range(n):
        for ci in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    gx[ni, ci, ay[ni, ci, oy, ox], ax[ni, ci, oy, ox]] += gy[ni, ci, oy, ox]
    return gx


@njit(cache=True)
def avgpool_forward(x, window, stride, oh, ow):
    n = x.shape[0]
    c = x.shape[1]
    y = np.empty((n, c, oh, ow), dtype=np.float32)
    inv = np.float32(1.0) / np.float32(window * window)
    for ni in range(n):
        for ci in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    acc = np.float32(0.0)
                    iy0 = oy * stride
                    ix0 = ox * stride
                    for ky in range(window):
                        for kx in range(window):
                            acc += x[ni, ci, iy0 + ky, ix0 + kx]
                    y[ni, ci, oy, ox] = acc * inv
    return y


@njit(cache=True)
def avgpool_backward(gy, window, stride, h, w):
    n = gy.shape[0]
    c = gy.shape[1]
    oh = gy.shape[2]
    ow = gy.shape[3]
    gx = np.zeros((n, c, h, w), dtype=np.float32)
    inv = np.float32(1.0) / np.float32(window * window)
    for ni in range(n):
        for ci in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    g = gy[ni, ci, oy, ox] * inv
                    iy0 = oy * stride
                    ix0 = ox * stride
                    for ky in range(window):
                        for kx in range(window):
                            gx[ni, ci, iy0 + ky, ix0 + kx] += g
    return gx


@njit(cache=True)
def matmul_nn(a, b):
    """(M,K) @ (K,N) with per-element accumulation in ascending k order."""
    m = a.shape[0]
    k = a.shape[1]
    n = b.shape[1]
    y = np.zeros((m, n), dtype=np.float32)
    for i in range(m):
        yrow = y[i]
        for kk in range(k):
            av = a[i, kk]
            brow = b[kk]
            for j in range(n):
                yrow[j] += av * brow[j]
    return y


@njit(cache=True)
def sum_all(flat):
    acc = np.float32(0.0)
    for i in range(flat.shape[0]):
        acc += flat[i]
    return acc


@njit(cache=True)
def channel_sums(x):
    """Per-(batch, channel) spatial sums in row-major order."""
    n = x.shape[0]
    c = x.shape[1]
    h = x.shape[2]
    w = x.shape[3]
    out = np.empty((n, c), dtype=np.float32)
    for ni in range(n):
        for ci in range(c):
            acc = np.float32(0.0)
            for iy in range(h):
                row = x[ni, ci, iy]
                for ix in range(w):
                    acc += row[ix]
            out[ni, ci] = acc
    return out


def warmup():
    """Force compilation of every kernel on tiny inputs."""
    x = np.ones((1, 1, 4, 4), dtype=np.float32)
    w = np.ones((1, 1, 3, 3), dtype=np.float32)
    b = np.zeros(1, dtype=np.float32)
    y = conv2d_forward(x, w, b, 1, 2, 2)
    conv2d_backward_input(y, w, 1, 4, 4)
    conv2d_backward_weight(y, x, 1, 1, 3, 3)
    conv2d_backward_bias(y)
    p, ay, ax = maxpool_forward(x, 2, 2, 2, 2)
    maxpool_backward(p, ay, ax, 4, 4)
    avgpool_backward(avgpool_forward(x, 2, 2, 2, 2), 2, 2, 4, 4)
    matmul_nn(np.ones((2, 3), dtype=np.float32), np.ones((3, 2), dtype=np.float32))
    sum_all(x.ravel())
    channel_sums(x)
