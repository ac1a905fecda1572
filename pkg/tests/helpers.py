"""Shared test oracles: naive references and finite-difference checks.

The naive implementations below deliberately use plain Python loops with
float32 accumulators in the documented term order; the engine must match
them bit for bit where the contracts say so.
"""

from __future__ import annotations

import numpy as np

from nstlab.tensor import Tensor, backprop

F32 = np.float32


def naive_conv2d(x, w, b, stride=1, padding=0):
    """Six nested loops, float32 accumulation: bias, then (ic, ky, kx)."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    hp, wp = h + 2 * padding, wd + 2 * padding
    xp = np.zeros((n, cin, hp, wp), dtype=F32)
    xp[:, :, padding : padding + h, padding : padding + wd] = x
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    y = np.zeros((n, cout, oh, ow), dtype=F32)
    for ni in range(n):
        for oc in range(cout):
            for oy in range(oh):
                for ox in range(ow):
                    acc = F32(b[oc])
                    for ic in range(cin):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc = F32(
                                    acc
                                    + F32(
                                        xp[ni, ic, oy * stride + ky, ox * stride + kx]
                                        * w[oc, ic, ky, kx]
                                    )
                                )
                    y[ni, oc, oy, ox] = acc
    return y


def naive_gram(feature, normalized=False):
    """O(C^2 HW) double loop over channel pairs, float32, row-major (h, w)."""
    _, c, h, w = feature.shape
    flat = feature.reshape(c, h * w)
    g = np.zeros((c, c), dtype=F32)
    for i in range(c):
        for j in range(c):
            acc = F32(0.0)
            for k in range(h * w):
                acc = F32(acc + F32(flat[i, k] * flat[j, k]))
            g[i, j] = acc
    if normalized:
        g = (g / F32(c * h * w)).astype(F32)
    return g


def fd_grad(f, x, h=1e-3):
    """Central finite differences of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float32)
    g = np.zeros(x.shape, dtype=np.float64)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        gf[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * h)
    return g.reshape(x.shape)


def max_rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def gradcheck(build, x0, h=1e-3, tol=1e-3):
    """Compare reverse-mode and central-difference gradients.

    ``build`` maps a Tensor to a scalar loss Tensor. Returns the max
    relative error (normalized by the gradient's max magnitude).
    """
    leaf = Tensor(x0, requires_grad=True)
    loss = build(leaf)
    ad = backprop(loss, [leaf])[leaf].data
    fd = fd_grad(lambda a: build(Tensor(a)).item(), x0, h)
    err = max_rel_err(ad, fd)
    assert err < tol, f"gradient mismatch: rel err {err:.3e} >= {tol}"
    return err


def away_from_kinks(arr, margin=0.05):
    """Nudge values off zero so relu/max kinks do not poison FD checks."""
    arr = np.asarray(arr, dtype=np.float32).copy()
    small = np.abs(arr) < margin
    arr[small] = margin * np.where(arr[small] >= 0, 1.0, -1.0)
    return arr
