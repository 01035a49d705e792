"""Minimal reverse-mode autodiff over dense numpy arrays.

A Tensor wraps a float array together with the graph bookkeeping needed
for reverse mode: parent tensors and a backward closure. Only the
operations used by the models in this package exist; every op gets its
gradient checked against central finite differences in the test suite.
"""

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def grad_or_zeros(self):
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


def _node(data, parents, backward):
    """Wrap an op result; records the graph only when grads are live."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True) if g.dtype != t.data.dtype else g.copy()
    else:
        t.grad += g


def backward(loss):
    """Accumulate gradients of a scalar loss into every reachable tensor.

    Iterative topological order; each node's closure runs exactly once.
    """
    if loss.data.size != 1:
        raise ValueError("backward requires a scalar loss")
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        # min-routing zeroes most of the graph; skip subtrees that got nothing
        if not node.grad.any():
            node.grad = None
            continue
        node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise and reduction ops

def add(a, b):
    out = a.data + b.data

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    return _node(out, (a, b), bwd)


def sub(a, b):
    out = a.data - b.data

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    return _node(out, (a, b), bwd)


def mul(a, b):
    out = a.data * b.data

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _node(out, (a, b), bwd)


def neg(a):
    def bwd(g):
        _accum(a, -g)

    return _node(-a.data, (a,), bwd)


def scale(a, c):
    c = float(c)

    def bwd(g):
        _accum(a, g * c)

    return _node(a.data * c, (a,), bwd)


def cmul(a, const):
    """Elementwise product with a constant array (no gradient to const)."""
    const = np.asarray(const, dtype=a.data.dtype)

    def bwd(g):
        _accum(a, g * const)

    return _node(a.data * const, (a,), bwd)


def one_minus(a):
    def bwd(g):
        _accum(a, -g)

    return _node(1.0 - a.data, (a,), bwd)


def log(a):
    def bwd(g):
        _accum(a, g / a.data)

    return _node(np.log(a.data), (a,), bwd)


def clip(a, lo, hi):
    out = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)

    def bwd(g):
        _accum(a, g * mask)

    return _node(out, (a,), bwd)


def relu(a):
    mask = a.data > 0

    def bwd(g):
        _accum(a, g * mask)

    return _node(a.data * mask, (a,), bwd)


def sum_all(a):
    def bwd(g):
        _accum(a, np.full_like(a.data, g.reshape(-1)[0]))

    return _node(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), bwd)


def mean_all(a):
    n = a.data.size

    def bwd(g):
        _accum(a, np.full_like(a.data, g.reshape(-1)[0] / n))

    return _node(np.asarray(a.data.mean(), dtype=a.data.dtype), (a,), bwd)


# ---------------------------------------------------------------------------
# shape ops

def reshape(a, shape):
    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return _node(a.data.reshape(shape), (a,), bwd)


def rows_slice(a, start, stop):
    """Slice along axis 0."""

    def bwd(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        _accum(a, full)

    return _node(a.data[start:stop], (a,), bwd)


def stack_cols(ts):
    """Stack 1-d tensors of equal length into a (B, len(ts)) matrix."""
    out = np.stack([t.data for t in ts], axis=1)

    def bwd(g):
        for j, t in enumerate(ts):
            _accum(t, g[:, j])

    return _node(out, tuple(ts), bwd)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    out = a.data @ b.data

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _node(out, (a, b), bwd)


def add_rowvec(x, v):
    """(B, F) + (F,) bias."""

    def bwd(g):
        _accum(x, g)
        _accum(v, g.sum(axis=0))

    return _node(x.data + v.data, (x, v), bwd)


def softmax(a):
    """Row-wise softmax along the last axis, with max subtraction."""
    if not np.isfinite(a.data).all():
        raise ValueError("non-finite logits")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accum(a, (g - dot) * y)

    return _node(y, (a,), bwd)


# ---------------------------------------------------------------------------
# indexing ops

def gather_rows(w, idx):
    """Pick rows of a (R, K) matrix: out[b] = w[idx[b]]. Rows may repeat."""
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= w.data.shape[0]):
        raise IndexError("row index out of range")
    out = w.data[idx]

    def bwd(g):
        full = np.zeros_like(w.data)
        np.add.at(full, idx, g)
        _accum(w, full)

    return _node(out, (w,), bwd)


def take_cols(x, idx):
    """Per-row column pick: out[b] = x[b, idx[b]]."""
    idx = np.asarray(idx)
    rows = np.arange(x.data.shape[0])
    out = x.data[rows, idx]

    def bwd(g):
        full = np.zeros_like(x.data)
        full[rows, idx] = g
        _accum(x, full)

    return _node(out, (x,), bwd)


def row_min(x):
    """Per-row minimum with subgradient routed to the first minimal column."""
    arg = x.data.argmin(axis=1)
    rows = np.arange(x.data.shape[0])
    out = x.data[rows, arg]

    def bwd(g):
        full = np.zeros_like(x.data)
        full[rows, arg] = g
        _accum(x, full)

    return _node(out, (x,), bwd)


# ---------------------------------------------------------------------------
# convolution and pooling

def _corr2d(x, w):
    """Valid cross-correlation: x (B,C,H,W) with w (O,C,KH,KW) -> (B,O,OH,OW)."""
    kh, kw = w.shape[2], w.shape[3]
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    b, c, oh, ow = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * kh * kw)
    wmat = w.reshape(w.shape[0], -1)
    out = cols @ wmat.T
    return out.reshape(b, oh, ow, w.shape[0]).transpose(0, 3, 1, 2), cols


def conv2d(x, w, v):
    """Valid 2-d convolution (cross-correlation), stride 1, plus channel bias."""
    out, cols = _corr2d(x.data, w.data)
    out += v.data.reshape(1, -1, 1, 1)
    b, oc, oh, ow = out.shape
    kh, kw = w.data.shape[2], w.data.shape[3]

    def bwd(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(b * oh * ow, oc)
        _accum(w, (gmat.T @ cols).reshape(w.data.shape))
        _accum(v, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gpad = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            wswap = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            dx, _ = _corr2d(gpad, np.ascontiguousarray(wswap))
            _accum(x, dx)

    return _node(out, (x, w, v), bwd)


def maxpool2x2(x):
    """2x2 max pooling with stride 2; ties route to the first position."""
    b, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError("maxpool2x2 requires even spatial dims")
    oh, ow = h // 2, w // 2
    tiles = x.data.reshape(b, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, 4)
    arg = tiles.argmax(axis=-1)
    out = np.take_along_axis(tiles, arg[..., None], axis=-1)[..., 0]

    def bwd(g):
        full = np.zeros_like(tiles)
        np.put_along_axis(full, arg[..., None], g[..., None], axis=-1)
        dx = full.reshape(b, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        _accum(x, dx)

    return _node(out, (x,), bwd)
