"""Convolution kernels behind the conv2d op.

Two interchangeable execution paths compute the same cross-correlation:

* a loop-built im2col followed by BLAS matrix products (any kernel size,
  stride, padding, dtype), and
* numba stencil kernels specialized for 3x3 / stride 1 on wide feature
  maps, where im2col is memory-bound on small channel counts.

Dispatch is by shape only; both paths are exercised by the test suite
against a naive direct-summation oracle. If numba is unavailable the
im2col path handles everything.
"""

import numpy as np

try:
    from numba import config as _numba_config
    from numba import njit, prange

    # skip the TBB probe (emits a version warning on this toolchain)
    _numba_config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

# numba wins on wide maps where C*k*k is small relative to the plane size;
# thresholds picked from benchmarks on a 2-core AVX box.
_STENCIL_MIN_W = 48
_STENCIL_DW_MIN_W = 96


def out_extent(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def _pad(x, padding):
    if padding == 0:
        return x
    p = padding
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


if HAVE_NUMBA:

    @njit(parallel=True, fastmath=True, cache=True)
    def _fwd3x3(xp, w, out):
        N, C, Hp, Wp = xp.shape
        O = w.shape[0]
        Ho = out.shape[2]
        Wo = out.shape[3]
        for no in prange(N * O):
            n = no // O
            o = no % O
            acc = np.zeros((Ho, Wo), xp.dtype)
            for i in range(C):
                w00 = w[o, i, 0, 0]; w01 = w[o, i, 0, 1]; w02 = w[o, i, 0, 2]
                w10 = w[o, i, 1, 0]; w11 = w[o, i, 1, 1]; w12 = w[o, i, 1, 2]
                w20 = w[o, i, 2, 0]; w21 = w[o, i, 2, 1]; w22 = w[o, i, 2, 2]
                for y in range(Ho):
                    r0 = xp[n, i, y]
                    r1 = xp[n, i, y + 1]
                    r2 = xp[n, i, y + 2]
                    arow = acc[y]
                    for x in range(Wo):
                        arow[x] += (w00 * r0[x] + w01 * r0[x + 1] + w02 * r0[x + 2]
                                    + w10 * r1[x] + w11 * r1[x + 1] + w12 * r1[x + 2]
                                    + w20 * r2[x] + w21 * r2[x + 1] + w22 * r2[x + 2])
            out[n, o] = acc

    @njit(parallel=True, fastmath=True, cache=True)
    def _dx3x3(gp, w, dx):
        # dx[n,i] = sum_o full-correlation of padded upstream grad with the
        # 180-degree-rotated kernel.
        N, O, Hp, Wp = gp.shape
        C = w.shape[1]
        H = dx.shape[2]
        W = dx.shape[3]
        for ni in prange(N * C):
            n = ni // C
            i = ni % C
            acc = np.zeros((H, W), dx.dtype)
            for o in range(O):
                w00 = w[o, i, 2, 2]; w01 = w[o, i, 2, 1]; w02 = w[o, i, 2, 0]
                w10 = w[o, i, 1, 2]; w11 = w[o, i, 1, 1]; w12 = w[o, i, 1, 0]
                w20 = w[o, i, 0, 2]; w21 = w[o, i, 0, 1]; w22 = w[o, i, 0, 0]
                for y in range(H):
                    r0 = gp[n, o, y]
                    r1 = gp[n, o, y + 1]
                    r2 = gp[n, o, y + 2]
                    arow = acc[y]
                    for x in range(W):
                        arow[x] += (w00 * r0[x] + w01 * r0[x + 1] + w02 * r0[x + 2]
                                    + w10 * r1[x] + w11 * r1[x + 1] + w12 * r1[x + 2]
                                    + w20 * r2[x] + w21 * r2[x + 1] + w22 * r2[x + 2])
            dx[n, i] = acc

    @njit(parallel=True, fastmath=True, cache=True)
    def _dw3x3(g, xp, dw):
        # Nine vector accumulators keep the reduction SIMD-friendly.
        N, O, Ho, Wo = g.shape
        C = dw.shape[1]
        for oi in prange(O * C):
            o = oi // C
            i = oi % C
            a00 = np.zeros(Wo, g.dtype); a01 = np.zeros(Wo, g.dtype); a02 = np.zeros(Wo, g.dtype)
            a10 = np.zeros(Wo, g.dtype); a11 = np.zeros(Wo, g.dtype); a12 = np.zeros(Wo, g.dtype)
            a20 = np.zeros(Wo, g.dtype); a21 = np.zeros(Wo, g.dtype); a22 = np.zeros(Wo, g.dtype)
            for n in range(N):
                for y in range(Ho):
                    d = g[n, o, y]
                    r0 = xp[n, i, y]
                    r1 = xp[n, i, y + 1]
                    r2 = xp[n, i, y + 2]
                    for x in range(Wo):
                        dv = d[x]
                        a00[x] += dv * r0[x]; a01[x] += dv * r0[x + 1]; a02[x] += dv * r0[x + 2]
                        a10[x] += dv * r1[x]; a11[x] += dv * r1[x + 1]; a12[x] += dv * r1[x + 2]
                        a20[x] += dv * r2[x]; a21[x] += dv * r2[x + 1]; a22[x] += dv * r2[x + 2]
            dw[o, i, 0, 0] = a00.sum(); dw[o, i, 0, 1] = a01.sum(); dw[o, i, 0, 2] = a02.sum()
            dw[o, i, 1, 0] = a10.sum(); dw[o, i, 1, 1] = a11.sum(); dw[o, i, 1, 2] = a12.sum()
            dw[o, i, 2, 0] = a20.sum(); dw[o, i, 2, 1] = a21.sum(); dw[o, i, 2, 2] = a22.sum()


def _stencil_ok(kh, kw, stride, wo):
    return HAVE_NUMBA and kh == 3 and kw == 3 and stride == 1 and wo >= _STENCIL_MIN_W


def _im2col(xp, kh, kw, stride, ho, wo):
    """Patch matrix (N, C*kh*kw, ho*wo) built from nine strided copies."""
    n, c = xp.shape[:2]
    col = np.empty((n, c, kh, kw, ho, wo), xp.dtype)
    for dy in range(kh):
        for dx in range(kw):
            col[:, :, dy, dx] = xp[:, :, dy:dy + stride * ho:stride, dx:dx + stride * wo:stride]
    return col.reshape(n, c * kh * kw, ho * wo)


def forward(x, w, stride, padding):
    """Cross-correlation of NCHW input with OIkk weights; no bias."""
    n = x.shape[0]
    o, _, kh, kw = w.shape
    ho = out_extent(x.shape[2], kh, stride, padding)
    wo = out_extent(x.shape[3], kw, stride, padding)
    xp = _pad(x, padding)
    out = np.empty((n, o, ho, wo), x.dtype)
    if _stencil_ok(kh, kw, stride, wo):
        _fwd3x3(xp, w, out)
        return out
    col = _im2col(xp, kh, kw, stride, ho, wo)
    w2 = w.reshape(o, -1)
    flat = out.reshape(n, o, ho * wo)
    for j in range(n):
        flat[j] = np.dot(col[j].T, w2.T).T
    return out


def backward(x, w, g, stride, padding, need_dx, need_dw):
    """Gradients w.r.t. input and weights for forward(); either may be skipped."""
    n, c, h, wdt = x.shape
    o, _, kh, kw = w.shape
    ho, wo = g.shape[2], g.shape[3]
    dx = dw = None
    col = None
    stencil = _stencil_ok(kh, kw, stride, wo)

    if need_dw:
        if stencil and wo >= _STENCIL_DW_MIN_W:
            xp = _pad(x, padding)
            dw = np.empty_like(w)
            _dw3x3(g, xp, dw)
        else:
            xp = _pad(x, padding)
            col = _im2col(xp, kh, kw, stride, ho, wo)
            g2 = g.reshape(n, o, ho * wo)
            acc = np.zeros((o, c * kh * kw), x.dtype)
            for j in range(n):
                acc += np.dot(g2[j], col[j].T)
            dw = acc.reshape(w.shape)

    if need_dx:
        if stencil:
            # pad upstream grad so the flipped-kernel correlation lands on
            # unpadded input coordinates: border = k - 1 - padding
            b = kh - 1 - padding
            gp = np.pad(g, ((0, 0), (0, 0), (b, b), (b, b)))
            dx = np.empty_like(x)
            _dx3x3(gp, w, dx)
        else:
            w2 = w.reshape(o, -1)
            g2 = g.reshape(n, o, ho * wo)
            hp, wp = h + 2 * padding, wdt + 2 * padding
            dxp = np.zeros((n, c, hp, wp), x.dtype)
            for j in range(n):
                dcol = np.dot(w2.T, g2[j]).reshape(c, kh, kw, ho, wo)
                for dy in range(kh):
                    for dxx in range(kw):
                        dxp[j, :, dy:dy + stride * ho:stride, dxx:dxx + stride * wo:stride] += dcol[:, dy, dxx]
            dx = dxp[:, :, padding:padding + h, padding:padding + wdt] if padding else dxp
            if padding:
                dx = np.ascontiguousarray(dx)
    return dx, dw
