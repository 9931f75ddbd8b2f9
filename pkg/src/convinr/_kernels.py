"""Hot convolution loops, compiled with numba when available.

The forward kernel honours a fixed per-output-element summation order:

    out[i,j,co] = ((bias[co] + t(0,0,0)) + t(0,0,1)) + ... over (a, b, ci)
                  in lexicographic order, t(a,b,ci) = w[a,b,ci,co] * xpad[...]

with one rounding for each product and one for each addition. Results are
therefore bit-identical to a naive scalar loop in the same precision, and
independent of how the spatial traversal is batched or chunked. BLAS cannot
be used here: GEMM reassociates the reduction (measured on this project's
reference setup), which breaks the order contract.

The backward kernels carry no ordering contract (gradients are certified by
finite differences, not bit equality) but are still single-threaded and
deterministic. The *_np fallbacks implement the identical rounding sequence
for the forward path and are used when numba is not importable.
"""
from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on minimal installs
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return deco


@njit(cache=True)
def _conv2d_fwd_jit(xp, w, bias, out):
    H, W, cout = out.shape
    k = w.shape[0]
    cin = w.shape[2]
    for i in range(H):
        for j in range(W):
            for co in range(cout):
                out[i, j, co] = bias[co]
        for a in range(k):
            xri = xp[i + a]
            for b in range(k):
                # ci chunked by 4: same sequential chain, fewer row stores
                ci = 0
                while ci + 4 <= cin:
                    w0 = w[a, b, ci]
                    w1 = w[a, b, ci + 1]
                    w2 = w[a, b, ci + 2]
                    w3 = w[a, b, ci + 3]
                    for j in range(W):
                        xr = xri[j + b]
                        x0 = xr[ci]
                        x1 = xr[ci + 1]
                        x2 = xr[ci + 2]
                        x3 = xr[ci + 3]
                        o = out[i, j]
                        for co in range(cout):
                            t = o[co] + x0 * w0[co]
                            t = t + x1 * w1[co]
                            t = t + x2 * w2[co]
                            t = t + x3 * w3[co]
                            o[co] = t
                    ci += 4
                while ci < cin:
                    wv = w[a, b, ci]
                    for j in range(W):
                        xs = xri[j + b, ci]
                        o = out[i, j]
                        for co in range(cout):
                            o[co] += xs * wv[co]
                    ci += 1


@njit(cache=True)
def _conv2d_bwd_w_jit(xp, gout, gw, gb):
    H, W, cout = gout.shape
    k = gw.shape[0]
    cin = gw.shape[2]
    for co in range(cout):
        gb[co] = 0.0
    for i in range(H):
        for j in range(W):
            g = gout[i, j]
            for co in range(cout):
                gb[co] += g[co]
    for a in range(k):
        for b in range(k):
            for i in range(H):
                j = 0
                while j + 4 <= W:
                    x0 = xp[i + a, j + b]
                    x1 = xp[i + a, j + 1 + b]
                    x2 = xp[i + a, j + 2 + b]
                    x3 = xp[i + a, j + 3 + b]
                    g0 = gout[i, j]
                    g1 = gout[i, j + 1]
                    g2 = gout[i, j + 2]
                    g3 = gout[i, j + 3]
                    for ci in range(cin):
                        s0 = x0[ci]
                        s1 = x1[ci]
                        s2 = x2[ci]
                        s3 = x3[ci]
                        gwr = gw[a, b, ci]
                        for co in range(cout):
                            gwr[co] += s0 * g0[co] + s1 * g1[co] + s2 * g2[co] + s3 * g3[co]
                    j += 4
                while j < W:
                    xr = xp[i + a, j + b]
                    g = gout[i, j]
                    for ci in range(cin):
                        xs = xr[ci]
                        gwr = gw[a, b, ci]
                        for co in range(cout):
                            gwr[co] += xs * g[co]
                    j += 1


@njit(cache=True)
def _bn_stats_jit(x, mu, var):
    # f64 accumulators keep the normalized mean at the 1e-7 level
    H, W, C = x.shape
    for c in range(C):
        mu[c] = 0.0
        var[c] = 0.0
    for i in range(H):
        for j in range(W):
            r = x[i, j]
            for c in range(C):
                v = 1.0 * r[c]
                mu[c] += v
                var[c] += v * v
    n = 1.0 * H * W
    for c in range(C):
        m = mu[c] / n
        mu[c] = m
        q = var[c] / n - m * m
        var[c] = q if q > 0.0 else 0.0


@njit(cache=True)
def _bn_apply_jit(x, scale, shift, out):
    H, W, C = x.shape
    for i in range(H):
        for j in range(W):
            r = x[i, j]
            o = out[i, j]
            for c in range(C):
                o[c] = r[c] * scale[c] + shift[c]


@njit(cache=True)
def _bn_bwd_jit(x, g, mu, inv_std, gamma, gx, s1, s2):
    H, W, C = x.shape
    for c in range(C):
        s1[c] = 0.0
        s2[c] = 0.0
    for i in range(H):
        for j in range(W):
            xr = x[i, j]
            gr = g[i, j]
            for c in range(C):
                gv = 1.0 * gr[c]
                s1[c] += gv
                s2[c] += gv * (xr[c] - mu[c])
    n = 1.0 * H * W
    for i in range(H):
        for j in range(W):
            xr = x[i, j]
            gr = g[i, j]
            o = gx[i, j]
            for c in range(C):
                inv = inv_std[c]
                xhat = (xr[c] - mu[c]) * inv
                o[c] = inv * gamma[c] * (gr[c] - s1[c] / n - xhat * inv * s2[c] / n)


def _bn_stats_np(x, mu, var):
    x64 = x.astype(np.float64)
    mu[:] = x64.mean(axis=(0, 1))
    var[:] = np.maximum(x64.var(axis=(0, 1)), 0.0)


def _bn_apply_np(x, scale, shift, out):
    np.multiply(x, scale, out=out)
    out += shift


def _bn_bwd_np(x, g, mu, inv_std, gamma, gx, s1, s2):
    g64 = g.astype(np.float64)
    xc = x.astype(np.float64) - mu
    s1[:] = g64.sum(axis=(0, 1))
    s2[:] = (g64 * xc).sum(axis=(0, 1))
    n = x.shape[0] * x.shape[1]
    gx[...] = (inv_std * gamma) * (g64 - s1 / n - (xc * inv_std) * (inv_std * s2 / n))


def _conv2d_fwd_np(xp, w, bias, out):
    """Forward fallback with the same per-element rounding sequence."""
    H, W, _ = out.shape
    k = w.shape[0]
    cin = w.shape[2]
    out[:] = bias
    for a in range(k):
        for b in range(k):
            xwin = xp[a:a + H, b:b + W]
            for ci in range(cin):
                out += xwin[:, :, ci:ci + 1] * w[a, b, ci]


def _conv2d_bwd_w_np(xp, gout, gw, gb):
    H, W, _ = gout.shape
    k = gw.shape[0]
    gb[:] = gout.sum(axis=(0, 1))
    for a in range(k):
        for b in range(k):
            xwin = xp[a:a + H, b:b + W]
            gw[a, b] += np.einsum("ijc,ijo->co", xwin, gout)


if HAVE_NUMBA:
    conv2d_fwd = _conv2d_fwd_jit
    conv2d_bwd_w = _conv2d_bwd_w_jit
    bn_stats = _bn_stats_jit
    bn_apply = _bn_apply_jit
    bn_bwd = _bn_bwd_jit
else:  # pragma: no cover
    conv2d_fwd = _conv2d_fwd_np
    conv2d_bwd_w = _conv2d_bwd_w_np
    bn_stats = _bn_stats_np
    bn_apply = _bn_apply_np
    bn_bwd = _bn_bwd_np
