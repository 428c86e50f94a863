"""Minimal dense tensor with reverse-mode autodiff.

The op set is exactly what the reconstruction networks and the SSIM loss
need: 3x3/1x1 convolutions (stride 1, zero pad, no bias), 2x2 stride-2
transposed convolutions, 2x2 pooling, leaky ReLU / sigmoid, fully connected
layers, global average pooling, elementwise arithmetic, channel-pair
magnitude, valid-region uniform filtering and full reductions.  Heavy work
is delegated to BLAS via im2col; graphs are built eagerly and traversed
once by ``Tensor.backward``.

Forward values use whatever float precision the leaf arrays carry (the
trainers use float32, gradient checks build float64 graphs).
"""

from __future__ import annotations

import numpy as np


from .errors import ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)


def _as_float_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """N-d float array participating in a reverse-mode differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        self.data = _as_float_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False, name=self.name)

    def backward(self):
        """Accumulate gradients of this scalar into every reachable tensor."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.data.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:  # iterative DFS; cascaded graphs overflow recursion
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            if not np.all(np.isfinite(node.grad)):
                raise FloatingPointError(
                    f"non-finite gradient produced at node {node.name or '<op>'}"
                )
            node._backward(node.grad)

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul_scalar(_wrap(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(mul_scalar(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other, self.dtype), self)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __repr__(self):
        grad = ", grad" if self.grad is not None else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{grad})"


def _wrap(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _make(data, parents, backward_fn, name):
    out = Tensor(data)
    out.name = name
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(tensor, grad):
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=tensor.data.dtype, copy=True)
    else:
        tensor.grad += grad


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class ParamStore:
    """Ordered map name -> trainable Tensor with stable iteration order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name, tensor):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if not isinstance(tensor, Tensor):
            raise TypeError("ParamStore holds Tensor values")
        tensor.requires_grad = True
        tensor.name = name
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def total_size(self, predicate=None):
        if predicate is None:
            return sum(t.data.size for t in self._params.values())
        return sum(t.data.size for name, t in self._params.items() if predicate(name))


# -- elementwise arithmetic ----------------------------------------------


def add(a, b):
    """Elementwise sum.  Tensor+Tensor demands equal shapes (or a scalar
    operand); constants may broadcast."""
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
            raise ShapeError(f"add: operand shapes differ, {a.data.shape} vs {b.data.shape}")
    else:
        if not isinstance(a, Tensor):
            a, b = b, a
        b = _wrap(b, a.dtype)
    data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward, "add")


def mul(a, b):
    """Elementwise (broadcasting) product."""
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _wrap(b, a.dtype)
    data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward, "mul")


def mul_scalar(a, s):
    s = float(s)
    data = a.data * a.data.dtype.type(s)

    def backward(g):
        _accum(a, g * s)

    return _make(data, (a,), backward, "mul_scalar")


def div(a, b):
    """Elementwise (broadcasting) quotient."""
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.dtype))
    b = _wrap(b, a.dtype)
    data = a.data / b.data

    def backward(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), backward, "div")


# -- activations -----------------------------------------------------------


def leaky_relu(x, slope=0.2):
    pos = x.data >= 0
    data = np.where(pos, x.data, x.data * x.data.dtype.type(slope))

    def backward(g):
        _accum(x, g * np.where(pos, x.data.dtype.type(1.0), x.data.dtype.type(slope)))

    return _make(data, (x,), backward, "leaky_relu")


def sigmoid(x):
    # tanh form is stable for large |x|
    data = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    data = data.astype(x.data.dtype, copy=False)

    def backward(g):
        _accum(x, g * data * (1.0 - data))

    return _make(data, (x,), backward, "sigmoid")


# -- convolutions ----------------------------------------------------------


def _shift_stack(arr, k):
    """[N,C,H,W] -> [N, C*k*k, H*W]: every kernel tap as a shifted copy."""
    n, c, h, w = arr.shape
    pad = k // 2
    padded = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=arr.dtype)
    padded[:, :, pad : pad + h, pad : pad + w] = arr
    stack = np.empty((n, c, k * k, h, w), dtype=arr.dtype)
    for i in range(k):
        for j in range(k):
            stack[:, :, i * k + j] = padded[:, :, i : i + h, j : j + w]
    return stack.reshape(n, c * k * k, h * w)


def _corr2d(arr, weight):
    """Stride-1 zero-padded cross-correlation with a [O,C,k,k] kernel, k odd."""
    n, c, h, w = arr.shape
    o, _, k, _ = weight.shape
    cols = _shift_stack(arr, k)  # [N, C*k*k, H*W]
    out = np.matmul(weight.reshape(o, c * k * k), cols)  # [N, O, H*W]
    return out.reshape(n, o, h, w), cols


def conv2d(x, w):
    """2D convolution, stride 1, zero padding k//2, no bias.

    ``w`` is [Cout, Cin, k, k] with k in {1, 3}; spatial extents are
    preserved.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d: input must be [N,C,H,W], got shape {x.data.shape}")
    if w.data.ndim != 4 or w.data.shape[2] != w.data.shape[3] or w.data.shape[2] not in (1, 3):
        raise ShapeError(f"conv2d: weight must be [Cout,Cin,k,k] with k in (1,3), got {w.data.shape}")
    if w.data.shape[1] != x.data.shape[1]:
        raise ShapeError(
            f"conv2d: input has {x.data.shape[1]} channels but weight {w.data.shape} expects {w.data.shape[1]}"
        )
    n, c, h, wd = x.data.shape
    o, _, k, _ = w.data.shape

    if k == 1:
        w2 = w.data.reshape(o, c)
        data = np.tensordot(x.data, w2, axes=([1], [1])).transpose(0, 3, 1, 2)

        def backward(g):
            if x.requires_grad:
                _accum(x, np.tensordot(g, w2, axes=([1], [0])).transpose(0, 3, 1, 2))
            if w.requires_grad:
                gw = np.einsum("nohw,nchw->oc", g, x.data)
                _accum(w, gw.reshape(o, c, 1, 1))

        return _make(data, (x, w), backward, "conv1x1")

    data, cols = _corr2d(x.data, w.data)

    def backward(g):
        if w.requires_grad:
            g3 = np.ascontiguousarray(g).reshape(n, o, h * wd)
            gw = np.matmul(g3, cols.swapaxes(1, 2)).sum(axis=0)
            _accum(w, gw.reshape(o, c, k, k))
        if x.requires_grad:
            flipped = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            gx, _ = _corr2d(np.ascontiguousarray(g), flipped)
            _accum(x, gx)

    return _make(data, (x, w), backward, "conv2d")


def conv_transpose2d(x, w):
    """Transposed convolution, 2x2 kernel, stride 2, no bias; doubles H and W.

    ``w`` is [Cin, Cout, 2, 2].
    """
    if x.data.ndim != 4:
        raise ShapeError(f"conv_transpose2d: input must be [N,C,H,W], got shape {x.data.shape}")
    if w.data.ndim != 4 or w.data.shape[2:] != (2, 2):
        raise ShapeError(f"conv_transpose2d: weight must be [Cin,Cout,2,2], got {w.data.shape}")
    if w.data.shape[0] != x.data.shape[1]:
        raise ShapeError(
            f"conv_transpose2d: input has {x.data.shape[1]} channels but weight {w.data.shape} expects {w.data.shape[0]}"
        )
    n, c, h, wd = x.data.shape
    _, o, _, _ = w.data.shape
    w2 = np.ascontiguousarray(w.data.reshape(c, o * 4).T)  # [O*4, C]
    x3 = np.ascontiguousarray(x.data).reshape(n, c, h * wd)
    t = np.matmul(w2, x3).reshape(n, o, 2, 2, h, wd)  # [N,O,i,j,H,W]
    data = np.ascontiguousarray(t.transpose(0, 1, 4, 2, 5, 3)).reshape(n, o, 2 * h, 2 * wd)

    def backward(g):
        g6 = np.ascontiguousarray(
            g.reshape(n, o, h, 2, wd, 2).transpose(0, 1, 3, 5, 2, 4)
        ).reshape(n, o * 4, h * wd)
        if x.requires_grad:
            _accum(x, np.matmul(w2.T, g6).reshape(n, c, h, wd))
        if w.requires_grad:
            gw = np.matmul(x3, g6.swapaxes(1, 2)).sum(axis=0)  # [C, O*4]
            _accum(w, gw.reshape(c, o, 2, 2))

    return _make(data, (x, w), backward, "conv_transpose2d")


# -- pooling ---------------------------------------------------------------


def _pool_view(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"pool: spatial extents must be even (no implicit padding), got {h}x{w}")
    return x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, h // 2, w // 2, 4
    )


def _unpool(grad5, shape):
    n, c, h, w = shape
    return grad5.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, h, w
    )


def maxpool2(x):
    """2x2 max pooling, stride 2.  Ties go to the first window index in
    row-major scan order, and the gradient routes there only."""
    pooled = _pool_view(x.data)
    idx = pooled.argmax(axis=-1)
    data = np.take_along_axis(pooled, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        scat = np.zeros_like(pooled)
        np.put_along_axis(scat, idx[..., None], g[..., None], axis=-1)
        _accum(x, _unpool(scat, x.data.shape))

    return _make(data, (x,), backward, "maxpool2")


def avgpool2(x):
    """2x2 average pooling, stride 2; gradient spreads uniformly."""
    pooled = _pool_view(x.data)
    data = pooled.mean(axis=-1)

    def backward(g):
        scat = np.broadcast_to((g * 0.25)[..., None], pooled.shape)
        _accum(x, _unpool(np.ascontiguousarray(scat), x.data.shape))

    return _make(data, (x,), backward, "avgpool2")


# -- dense / reductions ----------------------------------------------------


def linear(x, w, b):
    """Fully connected layer: x[N,C] @ w[O,C]^T + b[O]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"linear: incompatible shapes x={x.data.shape}, w={w.data.shape}")
    data = x.data @ w.data.T + b.data

    def backward(g):
        _accum(x, g @ w.data)
        _accum(w, g.T @ x.data)
        _accum(b, g.sum(axis=0))

    return _make(data, (x, w, b), backward, "linear")


def global_avg_pool(x):
    """[N,C,H,W] -> [N,C] spatial mean."""
    n, c, h, w = x.data.shape
    data = x.data.mean(axis=(2, 3))

    def backward(g):
        _accum(x, np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape))

    return _make(data, (x,), backward, "global_avg_pool")


def complex_magnitude(x, eps=1e-12):
    """[N,2,H,W] (re, im) -> [N,1,H,W] magnitude sqrt(re^2+im^2+eps)."""
    if x.data.ndim != 4 or x.data.shape[1] != 2:
        raise ShapeError(f"complex_magnitude: expected [N,2,H,W], got {x.data.shape}")
    mag = np.sqrt(x.data[:, 0] ** 2 + x.data[:, 1] ** 2 + x.data.dtype.type(eps))

    def backward(g):
        gx = np.empty_like(x.data)
        gx[:, 0] = g[:, 0] * x.data[:, 0] / mag
        gx[:, 1] = g[:, 0] * x.data[:, 1] / mag
        _accum(x, gx)

    return _make(mag[:, None], (x,), backward, "complex_magnitude")


def concat(tensors, axis=1):
    """Concatenate along ``axis``; gradient splits back."""
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return _make(data, tuple(tensors), backward, "concat")


def reshape(x, shape):
    data = x.data.reshape(shape)

    def backward(g):
        _accum(x, g.reshape(x.data.shape))

    return _make(data, (x,), backward, "reshape")


def _window_sum_valid(arr, win):
    """Sum over every win x win window of the last two axes (valid region)."""
    s = arr.cumsum(axis=-2).cumsum(axis=-1)
    pad = [(0, 0)] * (arr.ndim - 2) + [(1, 0), (1, 0)]
    s = np.pad(s, pad)
    return (
        s[..., win:, win:]
        - s[..., :-win, win:]
        - s[..., win:, :-win]
        + s[..., :-win, :-win]
    )


def uniform_filter_valid(x, win):
    """Valid-region window mean over the last two axes (the SSIM window)."""
    h, w = x.data.shape[-2:]
    if win > h or win > w:
        raise ShapeError(f"uniform_filter_valid: window {win} larger than image {h}x{w}")
    inv_area = 1.0 / (win * win)
    data = _window_sum_valid(x.data, win) * x.data.dtype.type(inv_area)

    def backward(g):
        # adjoint of a valid window sum = full correlation with a ones kernel
        pad = [(0, 0)] * (g.ndim - 2) + [(win - 1, win - 1), (win - 1, win - 1)]
        _accum(x, _window_sum_valid(np.pad(g, pad), win) * inv_area)

    return _make(data, (x,), backward, "uniform_filter_valid")


def sum_all(x):
    data = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def backward(g):
        _accum(x, np.broadcast_to(g, x.data.shape))

    return _make(data, (x,), backward, "sum_all")


def mean_all(x):
    size = x.data.size
    data = np.asarray(x.data.mean(), dtype=x.data.dtype)

    def backward(g):
        _accum(x, np.broadcast_to(g / size, x.data.shape))

    return _make(data, (x,), backward, "mean_all")


# -- gradient verification -------------------------------------------------


def grad_check(op, inputs, step=1e-4, seed=0):
    """Compare analytic gradients of ``op`` against central differences.

    ``op`` maps the given tensors to a Tensor of any shape; its output is
    contracted with a fixed random projection so a single scalar drives
    both routes.  All inputs must be float64 leaves with requires_grad.
    Returns the max abs gradient deviation over the max abs numeric
    gradient (a scale-free relative error).
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("grad_check requires float64 inputs")
        if not t.requires_grad:
            raise ValueError("grad_check inputs must require gradients")

    proj = {}

    def scalar():
        out = op(*inputs)
        key = out.data.shape
        if key not in proj:
            rng = np.random.Generator(np.random.PCG64(seed))
            proj[key] = rng.standard_normal(out.data.shape)
        return sum_all(mul(out, Tensor(proj[key])))

    loss = scalar()
    for t in inputs:
        t.zero_grad()
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    worst_abs = 0.0
    scale = 0.0
    for t, ana in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(scalar().data)
            flat[i] = orig - step
            lo = float(scalar().data)
            flat[i] = orig
            num[i] = (hi - lo) / (2.0 * step)
        num = num.reshape(t.data.shape)
        worst_abs = max(worst_abs, float(np.max(np.abs(ana - num))))
        scale = max(scale, float(np.max(np.abs(num))), float(np.max(np.abs(ana))))
    return worst_abs / max(scale, 1e-12)
