"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a row-major float array (float32 by default, float64 for
verification runs) and, while gradients are enabled, every op records a
node on the tape: the produced tensor keeps references to its inputs and a
closure that routes the upstream gradient to them. ``Tensor.backward`` on
a scalar walks the tape in reverse topological order, accumulating
gradients additively when a tensor is used more than once.

Only the ops needed by the three supported architectures exist; there is
no broadcasting beyond bias addition.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _conv
from .errors import ConfigError, ShapeError, UsageError

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


class no_grad:
    """Context manager that suspends tape recording (evaluation passes)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled():
    return _grad_enabled


class Tensor:
    """N-dimensional float array plus autodiff bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_prev", "_backward", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._prev = ()
        self._backward = None
        self._op = "leaf"

    @property
    def dims(self):
        return list(self.data.shape)

    @property
    def elements(self):
        """Flat row-major view of the underlying storage."""
        return self.data.reshape(-1)

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-mode sweep from a scalar; grads accumulate additively."""
        if self.data.size != 1:
            raise UsageError(
                f"backward requires a scalar loss, got tensor of dims {self.dims}")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(dims={self.dims}, dtype={self.data.dtype}, op={self._op})"


class Parameter(Tensor):
    """Named trainable tensor; the unit of transfer and freezing."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, name="", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.trainable = True


def _topo_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for prev in node._prev:
            if id(prev) not in seen:
                stack.append((prev, False))
    return order


def backward(loss):
    """Module-level alias: populate grads of everything reachable from loss."""
    loss.backward()


def _result(data, inputs, op, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._prev = tuple(inputs)
        out._backward = backward_fn
        out._op = op
    return out


def _accumulate(t, g):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _check_same_dtype(*tensors):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise UsageError(f"mixed tensor dtypes: {dt} vs {t.data.dtype}")


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a, b):
    """Elementwise sum; both inputs receive the upstream gradient."""
    if a.shape != b.shape:
        raise ShapeError(f"add dims mismatch: {a.dims} vs {b.dims}")
    _check_same_dtype(a, b)

    def bwd(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(a.data + b.data, (a, b), "add", bwd)


def relu(x):
    """max(0, x); gradient is 1 where x > 0 and 0 where x <= 0."""
    mask = x.data > 0

    def bwd(g):
        _accumulate(x, g * mask)

    return _result(np.where(mask, x.data, 0), (x,), "relu", bwd)


def reshape(x, shape):
    old = x.shape

    def bwd(g):
        _accumulate(x, g.reshape(old))

    return _result(x.data.reshape(shape), (x,), "reshape", bwd)


def concat_channels(xs):
    """Concatenate NCHW tensors along the channel axis, in argument order."""
    if not xs:
        raise UsageError("concat_channels needs at least one input")
    first = xs[0]
    for t in xs[1:]:
        if t.data.ndim != 4 or first.data.ndim != 4:
            raise ShapeError("concat_channels expects NCHW tensors")
        if (t.shape[0], t.shape[2], t.shape[3]) != (first.shape[0], first.shape[2], first.shape[3]):
            raise ShapeError(
                f"concat_channels spatial/batch mismatch: {first.dims} vs {t.dims}")
    _check_same_dtype(*xs)
    if len(xs) == 1:
        return xs[0]
    sizes = [t.shape[1] for t in xs]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            _accumulate(t, g[:, lo:hi])

    return _result(np.concatenate([t.data for t in xs], axis=1), tuple(xs),
                   "concat", bwd)


def dropout(x, rate, training, rng):
    """Zero each element with probability ``rate`` and rescale survivors.

    Identity in eval mode or at rate 0. The mask comes from the supplied
    generator, so a run is reproducible from its seed.
    """
    if not (0.0 <= rate < 1.0):
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate)
    scale = keep.astype(x.data.dtype) / (1.0 - rate)

    def bwd(g):
        _accumulate(x, g * scale)

    return _result(x.data * scale, (x,), "dropout", bwd)


def weighted_sum(x, coeffs):
    """Scalar dot of a tensor with fixed coefficients (verification helper)."""
    c = np.asarray(coeffs, dtype=x.data.dtype)
    if c.shape != x.shape:
        raise ShapeError(f"weighted_sum dims mismatch: {x.dims} vs {list(c.shape)}")

    def bwd(g):
        _accumulate(x, g * c)

    return _result(np.asarray((x.data * c).sum(), dtype=x.data.dtype),
                   (x,), "weighted_sum", bwd)


# ---------------------------------------------------------------------------
# linear algebra


def linear(x, w, b=None):
    """x @ w.T + b for x (N, F), w (G, F), b (G)."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeError(f"linear expects 2-d input and weight: {x.dims}, {w.dims}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear inner dims mismatch: {x.dims} vs {w.dims}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear bias dims {b.dims} do not match out features {w.shape[0]}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def bwd(g):
        _accumulate(x, g @ w.data)
        _accumulate(w, g.T @ x.data)
        if b is not None:
            _accumulate(b, g.sum(axis=0))

    inputs = (x, w) if b is None else (x, w, b)
    return _result(out, inputs, "linear", bwd)


# ---------------------------------------------------------------------------
# convolution / pooling


def conv2d(x, w, b=None, stride=1, padding=0):
    """Cross-correlate NCHW input with OIkk weights (zero padding).

    out[n,o,y,x] = bias[o] + sum_{i,dy,dx} input[n,i,y*s-p+dy,x*s-p+dx] * w[o,i,dy,dx]
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight: {x.dims}, {w.dims}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"conv2d padding must be >= 0, got {padding}")
    n, c, h, wid = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"conv2d channel mismatch: input dims {x.dims}, weight dims {w.dims}")
    ho = _conv.out_extent(h, kh, stride, padding)
    wo = _conv.out_extent(wid, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d output extent not positive: input dims {x.dims}, weight dims {w.dims},"
            f" stride {stride}, padding {padding}")
    if b is not None and b.shape != (o,):
        raise ShapeError(f"conv2d bias dims {b.dims} do not match out channels {o}")

    out = _conv.forward(x.data, w.data, stride, padding)
    if b is not None:
        out += b.data.reshape(1, o, 1, 1)

    def bwd(g):
        need_dx = x.requires_grad
        need_dw = w.requires_grad
        dx, dw = _conv.backward(x.data, w.data, g, stride, padding, need_dx, need_dw)
        if need_dx:
            _accumulate(x, dx)
        if need_dw:
            _accumulate(w, dw)
        if b is not None:
            _accumulate(b, g.sum(axis=(0, 2, 3)))

    inputs = (x, w) if b is None else (x, w, b)
    return _result(out, inputs, "conv2d", bwd)


def maxpool2d(x, k, stride):
    """Max over k x k windows; backward feeds only the first argmax per window."""
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d expects NCHW input, got dims {x.dims}")
    n, c, h, w = x.shape
    if k > h or k > w:
        raise ShapeError(f"maxpool2d window {k} larger than input dims {x.dims}")
    win = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(win.shape[:4] + (k * k,))
    out = flat.max(axis=-1)
    # first occurrence in row-major window order wins on ties
    arg = flat.argmax(axis=-1)
    ho, wo = out.shape[2], out.shape[3]

    def bwd(g):
        dx = np.zeros_like(x.data)
        for j in range(k * k):
            dy, dxx = divmod(j, k)
            sel = (arg == j)
            dx[:, :, dy:dy + stride * ho:stride, dxx:dxx + stride * wo:stride] += g * sel
        _accumulate(x, dx)

    return _result(np.ascontiguousarray(out), (x,), "maxpool2d", bwd)


def global_avgpool(x):
    """Mean over the spatial plane per channel: NCHW -> NC11."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_avgpool expects NCHW input, got dims {x.dims}")
    n, c, h, w = x.shape

    def bwd(g):
        _accumulate(x, np.tile(g / (h * w), (1, 1, h, w)))

    return _result(x.data.mean(axis=(2, 3), keepdims=True), (x,), "global_avgpool", bwd)


def _adaptive_edges(size, out):
    starts = [(y * size) // out for y in range(out)]
    stops = [-(-((y + 1) * size) // out) for y in range(out)]
    return starts, stops


def adaptive_avgpool(x, out_h, out_w):
    """Average pool to a fixed output grid.

    Cell (y, x) averages rows [floor(y*H/out_h), ceil((y+1)*H/out_h)) and the
    analogous columns. Output grids larger than the input are allowed (cells
    then repeat source pixels), which lets the fixed classifier geometry ride
    on small feature maps.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"adaptive_avgpool expects NCHW input, got dims {x.dims}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"adaptive_avgpool output extents must be >= 1, got {out_h}x{out_w}")
    n, c, h, w = x.shape
    if h % out_h == 0 and w % out_w == 0:
        fh, fw = h // out_h, w // out_w
        out = x.data.reshape(n, c, out_h, fh, out_w, fw).mean(axis=(3, 5))

        def bwd_even(g):
            dx = np.broadcast_to(
                g.reshape(n, c, out_h, 1, out_w, 1) / (fh * fw),
                (n, c, out_h, fh, out_w, fw)).reshape(x.shape)
            _accumulate(x, np.ascontiguousarray(dx))

        return _result(out, (x,), "adaptive_avgpool", bwd_even)

    ys0, ys1 = _adaptive_edges(h, out_h)
    xs0, xs1 = _adaptive_edges(w, out_w)
    out = np.empty((n, c, out_h, out_w), x.data.dtype)
    for y in range(out_h):
        for xx in range(out_w):
            out[:, :, y, xx] = x.data[:, :, ys0[y]:ys1[y], xs0[xx]:xs1[xx]].mean(axis=(2, 3))

    def bwd(g):
        dx = np.zeros_like(x.data)
        for y in range(out_h):
            for xx in range(out_w):
                area = (ys1[y] - ys0[y]) * (xs1[xx] - xs0[xx])
                dx[:, :, ys0[y]:ys1[y], xs0[xx]:xs1[xx]] += (g[:, :, y:y + 1, xx:xx + 1] / area)
        _accumulate(x, dx)

    return _result(out, (x,), "adaptive_avgpool", bwd)


# ---------------------------------------------------------------------------
# normalization / classification head


def batchnorm2d(x, gamma, beta, running_mean, running_var, training,
                momentum=0.1, eps=1e-5):
    """Per-channel batch normalization over N, H, W.

    Training mode normalizes by batch statistics and folds them into the
    running buffers with exponential momentum (new = (1-m)*old + m*batch);
    eval mode normalizes by the running buffers. Population (biased)
    variance is used for both, so the two modes agree at the fixed point.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batchnorm2d expects NCHW input, got dims {x.dims}")
    if eps <= 0:
        raise ConfigError(f"batchnorm2d eps must be > 0, got {eps}")
    c = x.shape[1]
    for t, what in ((gamma, "gamma"), (beta, "beta")):
        if t.shape != (c,):
            raise ShapeError(f"batchnorm2d {what} dims {t.dims} do not match channels {c}")

    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mean
        running_var *= (1.0 - momentum)
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)
    m = x.shape[0] * x.shape[2] * x.shape[3]

    def bwd(g):
        dbeta = g.sum(axis=(0, 2, 3))
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        _accumulate(gamma, dgamma)
        _accumulate(beta, dbeta)
        if x.requires_grad:
            k = (gamma.data * inv_std).reshape(1, c, 1, 1)
            if training:
                dx = k * (g - dbeta.reshape(1, c, 1, 1) / m
                          - xhat * dgamma.reshape(1, c, 1, 1) / m)
            else:
                dx = k * g
            _accumulate(x, dx)

    return _result(out.astype(x.data.dtype, copy=False), (x, gamma, beta),
                   "batchnorm2d", bwd)


def log_softmax(x):
    """Row-wise numerically stable log-softmax for logits (N, K)."""
    if x.data.ndim != 2:
        raise ShapeError(f"log_softmax expects 2-d logits, got dims {x.dims}")
    if x.shape[1] < 2:
        raise ShapeError(f"log_softmax needs at least 2 classes, got dims {x.dims}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def bwd(g):
        _accumulate(x, g - soft * g.sum(axis=1, keepdims=True))

    return _result(out, (x,), "log_softmax", bwd)


def nll_loss(log_probs, targets):
    """Mean negative log-likelihood of integer targets under log_probs (N, K)."""
    if log_probs.data.ndim != 2:
        raise ShapeError(f"nll_loss expects 2-d log-probs, got dims {log_probs.dims}")
    t = np.asarray(targets)
    n = log_probs.shape[0]
    if t.shape != (n,):
        raise UsageError(f"nll_loss targets shape {t.shape} does not match batch {n}")
    if n == 0:
        raise UsageError("nll_loss on an empty batch")
    idx = np.arange(n)
    loss = -log_probs.data[idx, t].mean()

    def bwd(g):
        d = np.zeros_like(log_probs.data)
        d[idx, t] = -float(g) / n
        _accumulate(log_probs, d)

    return _result(np.asarray(loss, dtype=log_probs.data.dtype), (log_probs,),
                   "nll_loss", bwd)
