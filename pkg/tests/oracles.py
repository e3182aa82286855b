"""Independent reference implementations used to check the fast paths.

Everything here is deliberately naive (explicit loops, float64) and shares
no code with the package.
"""

import math

import numpy as np


def naive_conv2d(x, w, b=None, stride=1, padding=0):
    """Direct quadruple-loop cross-correlation with zero padding."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, c, h, wid = x.shape
    o, ci, kh, kw = w.shape
    assert ci == c
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wid + 2 * padding - kw) // stride + 1
    xp = np.zeros((n, c, h + 2 * padding, wid + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wid] = x
    out = np.zeros((n, o, ho, wo))
    for nn in range(n):
        for oo in range(o):
            for y in range(ho):
                for xx in range(wo):
                    s = 0.0
                    for i in range(c):
                        for dy in range(kh):
                            for dx in range(kw):
                                s += xp[nn, i, y * stride + dy, xx * stride + dx] * w[oo, i, dy, dx]
                    out[nn, oo, y, xx] = s + (b[oo] if b is not None else 0.0)
    return out


def naive_maxpool2d(x, k, stride):
    """Window-scan max pool."""
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    out = np.zeros((n, c, ho, wo))
    for nn in range(n):
        for cc in range(c):
            for y in range(ho):
                for xx in range(wo):
                    out[nn, cc, y, xx] = x[nn, cc,
                                           y * stride:y * stride + k,
                                           xx * stride:xx * stride + k].max()
    return out


def naive_adaptive_avgpool(x, oh, ow):
    """Window-average pool with floor/ceil edges."""
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    out = np.zeros((n, c, oh, ow))
    for y in range(oh):
        y0, y1 = (y * h) // oh, math.ceil((y + 1) * h / oh)
        for xx in range(ow):
            x0, x1 = (xx * w) // ow, math.ceil((xx + 1) * w / ow)
            out[:, :, y, xx] = x[:, :, y0:y1, x0:x1].mean(axis=(2, 3))
    return out


def central_difference_grad(f, arrays, index, coord, h=1e-5, richardson=True):
    """Central finite difference of scalar f w.r.t. one coordinate.

    arrays is a list of float64 ndarrays that f reads; the probed array is
    arrays[index] at flat position coord. With richardson=True the h and
    h/2 estimates are extrapolated, cancelling the O(h^2) term.
    """
    a = arrays[index].reshape(-1)
    orig = a[coord]

    def probe(step):
        a[coord] = orig + step
        fp = f()
        a[coord] = orig - step
        fm = f()
        a[coord] = orig
        return (fp - fm) / (2.0 * step)

    d1 = probe(h)
    if not richardson:
        return d1
    d2 = probe(h / 2.0)
    return (4.0 * d2 - d1) / 3.0


def rel_error(analytic, numeric, floor=1e-4):
    """|a - n| scaled by max(|a|, |n|, floor)."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def naive_sobel(img):
    """Direct 3x3 valid-region Sobel on 0-255 pixel values.

    Returns (gx, gy, magnitude, score) with integer gradient planes.
    """
    p = np.asarray(img, dtype=np.int64)
    kx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    ky = [[-1, -2, -1], [0, 0, 0], [1, 2, 1]]
    h, w = p.shape
    gx = np.zeros((h - 2, w - 2), dtype=np.int64)
    gy = np.zeros((h - 2, w - 2), dtype=np.int64)
    for y in range(h - 2):
        for x in range(w - 2):
            sx = sy = 0
            for dy in range(3):
                for dx in range(3):
                    sx += p[y + dy, x + dx] * kx[dy][dx]
                    sy += p[y + dy, x + dx] * ky[dy][dx]
            gx[y, x] = sx
            gy[y, x] = sy
    mag = np.sqrt(gx.astype(np.float64) ** 2 + gy.astype(np.float64) ** 2)
    return gx, gy, mag, float(mag.mean())


def adam_reference(grads, alpha=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, theta0=0.0):
    """Scalar Adam recurrence evaluated step by step; returns theta history."""
    m = v = 0.0
    theta = theta0
    history = [theta]
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        theta = theta - alpha * mhat / (math.sqrt(vhat) + eps)
        history.append(theta)
    return history
