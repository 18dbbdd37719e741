"""Reverse-mode automatic differentiation on dense numpy arrays.

A dynamic tape: every operation returns a new :class:`Tensor` that remembers
its parents and a closure propagating the output gradient to them.
``backward()`` walks the tape in exact reverse topological order and
accumulates ``.grad`` arrays on every reachable tensor with
``requires_grad=True``.

Two precisions are supported: float32 for training throughput and float64
for gradient checks. Operations never mix precisions silently; operands must
agree (python scalars adapt).
"""

from __future__ import annotations

import contextlib
import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "parameter",
    "no_grad",
    "is_grad_enabled",
    "backward",
    "grads_of",
    "concat",
    "stack",
    "where_mask",
    "GradcoreError",
]


class GradcoreError(ValueError):
    """Contract violation inside the autodiff core."""


_GRAD_ENABLED = True
_KINK_TRACE = None


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (pure numpy forward)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


_KINK_REPLAY = None


@contextlib.contextmanager
def trace_kinks():
    """Record every piecewise branch decision (relu/clip/max patterns).

    Finite differences are only meaningful on a smooth piece of the
    function; recording the branch decisions at the base point and replaying
    them during the probe evaluations (see :func:`replay_kinks`) restricts
    the probes to the piece whose gradient the tape actually computed.
    """
    global _KINK_TRACE
    prev = _KINK_TRACE
    _KINK_TRACE = trace = []
    try:
        yield trace
    finally:
        _KINK_TRACE = prev


@contextlib.contextmanager
def replay_kinks(trace):
    """Pin relu/clip/max branch decisions to a recorded trace."""
    global _KINK_REPLAY
    prev = _KINK_REPLAY
    _KINK_REPLAY = {"trace": trace, "pos": 0}
    try:
        yield
    finally:
        _KINK_REPLAY = prev


def _record_kink(kind, arr):
    _KINK_TRACE.append((kind, arr))


def _replay_kink(kind):
    state = _KINK_REPLAY
    k, arr = state["trace"][state["pos"]]
    if k != kind:
        raise GradcoreError(f"kink replay desync: expected {k}, got {kind}")
    state["pos"] += 1
    return arr


def choice_hook(kind, compute):
    """Record-or-replay for discrete selections made outside the tape."""
    if _KINK_REPLAY is not None:
        return _replay_kink(kind)
    value = compute()
    if _KINK_TRACE is not None:
        _record_kink(kind, value)
    return value


def is_grad_enabled():
    return _GRAD_ENABLED


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Dense array node of the computation graph.

    `data` is always a numpy array (float32 or float64). Leaf tensors with
    ``requires_grad=True`` are parameters; interior nodes carry a backward
    closure installed by the op that created them.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64 if arr.dtype == np.int64 else np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    # -- graph plumbing ------------------------------------------------------

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        backward(self, grad)

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return slice_(self, idx)

    # method mirrors used across the code base
    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return max_(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)


def tensor(data, dtype=np.float32):
    return Tensor(data, requires_grad=False, dtype=dtype)


def parameter(data, dtype=None, name=None):
    return Tensor(data, requires_grad=True, dtype=dtype, name=name)


def _as_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


# -- elementwise binary ------------------------------------------------------


def add(a, b):
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.dtype))
    b = _as_tensor(b, a.dtype)
    data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(data, (a, b), bwd)


def mul(a, b):
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.dtype))
    b = _as_tensor(b, a.dtype)
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), bwd)


def div(a, b):
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.dtype))
    b = _as_tensor(b, a.dtype)
    data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * data / b.data, b.shape))

    return _make(data, (a, b), bwd)


def maximum(a, b):
    """Elementwise maximum; gradient routes to `a` on ties."""
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.dtype))
    b = _as_tensor(b, a.dtype)
    if _KINK_REPLAY is not None:
        take_a = _replay_kink("maximum")
        data = np.where(take_a, a.data, b.data)
    else:
        take_a = a.data >= b.data
        data = np.maximum(a.data, b.data)
        if _KINK_TRACE is not None:
            _record_kink("maximum", take_a)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * ~take_a, b.shape))

    return _make(data, (a, b), bwd)


# -- elementwise unary -------------------------------------------------------


def relu(x):
    if _KINK_REPLAY is not None:
        mask = _replay_kink("relu")
        data = x.data * mask
    else:
        mask = x.data > 0
        data = np.maximum(x.data, 0)
        if _KINK_TRACE is not None:
            _record_kink("relu", mask)

    def bwd(g):
        if x.requires_grad:
            x._accum(g * mask)

    return _make(data, (x,), bwd)


def abs_(x):
    data = np.abs(x.data)

    def bwd(g):
        if x.requires_grad:
            x._accum(g * np.sign(x.data))

    return _make(data, (x,), bwd)


def sigmoid(x):
    # numerically stable split over sign
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        if x.requires_grad:
            x._accum(g * out * (1.0 - out))

    return _make(out, (x,), bwd)


def exp(x):
    data = np.exp(x.data)

    def bwd(g):
        if x.requires_grad:
            x._accum(g * data)

    return _make(data, (x,), bwd)


def log(x):
    data = np.log(x.data)

    def bwd(g):
        if x.requires_grad:
            x._accum(g / x.data)

    return _make(data, (x,), bwd)


def sqrt(x):
    data = np.sqrt(x.data)

    def bwd(g):
        if x.requires_grad:
            x._accum(g * 0.5 / data)

    return _make(data, (x,), bwd)


def sin(x):
    data = np.sin(x.data)

    def bwd(g):
        if x.requires_grad:
            x._accum(g * np.cos(x.data))

    return _make(data, (x,), bwd)


def cos(x):
    data = np.cos(x.data)

    def bwd(g):
        if x.requires_grad:
            x._accum(g * -np.sin(x.data))

    return _make(data, (x,), bwd)


def power(x, p):
    p = float(p)
    data = x.data**p

    def bwd(g):
        if x.requires_grad:
            x._accum(g * p * x.data ** (p - 1.0))

    return _make(data, (x,), bwd)


def clip(x, lo, hi):
    """Clamp to [lo, hi]; gradient is zero where clamped."""
    if _KINK_REPLAY is not None:
        region = _replay_kink("clip")  # -1 below, 0 inside, +1 above
        data = np.where(region == 0, x.data, np.where(region > 0, hi, lo))
        inside = region == 0
    else:
        data = np.clip(x.data, lo, hi)
        inside = (x.data >= lo) & (x.data <= hi)
        if _KINK_TRACE is not None:
            region = np.where(inside, 0, np.where(x.data > hi, 1, -1)).astype(np.int8)
            _record_kink("clip", region)

    def bwd(g):
        if x.requires_grad:
            x._accum(g * inside)

    return _make(data, (x,), bwd)


def where_mask(mask, a, b):
    """Select `a` where boolean `mask` else `b`; mask is constant."""
    mask = np.asarray(mask, dtype=bool)
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.dtype))
    b = _as_tensor(b, a.dtype)
    data = np.where(mask, a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * mask, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * ~mask, b.shape))

    return _make(data, (a, b), bwd)


# -- matmul ------------------------------------------------------------------

_SKINNY_K = 8


def _mm(a, b):
    # OpenBLAS is slow on very skinny inner dimensions; expand manually there.
    if a.ndim == 2 and b.ndim == 2 and a.shape[1] <= _SKINNY_K and a.shape[0] >= 1024:
        out = a[:, 0:1] * b[0]
        for k in range(1, a.shape[1]):
            out += a[:, k : k + 1] * b[k]
        return out
    return a @ b


def matmul(a, b):
    """Matrix product; supports 2-D and stacked (batched) operands."""
    data = _mm(a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            ga = _mm(g, np.swapaxes(b.data, -1, -2))
            a._accum(_unbroadcast(ga, a.shape) if ga.shape != a.shape else ga)
        if b.requires_grad:
            gb = _mm(np.swapaxes(a.data, -1, -2), g)
            b._accum(_unbroadcast(gb, b.shape) if gb.shape != b.shape else gb)

    return _make(data, (a, b), bwd)


# -- shape ops -----------------------------------------------------------------


def reshape(x, shape):
    data = x.data.reshape(shape)

    def bwd(g):
        if x.requires_grad:
            x._accum(g.reshape(x.shape))

    return _make(data, (x,), bwd)


def transpose(x, axes):
    axes = tuple(axes)
    data = np.transpose(x.data, axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        if x.requires_grad:
            x._accum(np.transpose(g, inv))

    return _make(data, (x,), bwd)


def concat(tensors, axis=0):
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accum(g[tuple(idx)])

    return _make(data, tuple(tensors), bwd)


def stack(tensors, axis=0):
    tensors = list(tensors)
    data = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        moved = np.moveaxis(g, axis, 0)
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accum(moved[i])

    return _make(data, tuple(tensors), bwd)


def slice_(x, idx):
    """Basic slicing / integer indexing view with scatter-add backward."""
    data = x.data[idx]

    def bwd(g):
        if x.requires_grad:
            buf = np.zeros(x.shape, dtype=x.dtype)
            np.add.at(buf, idx, g)
            x._accum(buf)

    return _make(data, (x,), bwd)


def take(x, indices, axis=0):
    """Gather rows along `axis` by integer array (duplicates allowed)."""
    indices = np.asarray(indices)
    data = np.take(x.data, indices, axis=axis)

    def bwd(g):
        if x.requires_grad:
            buf = np.zeros(x.shape, dtype=x.dtype)
            if axis == 0:
                np.add.at(buf, indices, g)
            else:
                idx = [slice(None)] * x.ndim
                idx[axis] = indices
                np.add.at(buf, tuple(idx), g)
            x._accum(buf)

    return _make(data, (x,), bwd)


# -- reductions ----------------------------------------------------------------


def sum_(x, axis=None, keepdims=False):
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if x.requires_grad:
            if axis is None:
                x._accum(np.broadcast_to(g, x.shape))
            else:
                if not keepdims:
                    g = np.expand_dims(g, axis)
                x._accum(np.broadcast_to(g, x.shape))

    return _make(data, (x,), bwd)


def mean(x, axis=None, keepdims=False):
    n = x.size if axis is None else (
        np.prod([x.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
    )
    return mul(sum_(x, axis, keepdims), 1.0 / float(n))


def max_(x, axis=None, keepdims=False):
    """Max reduction; subgradient routed to the first argmax element."""
    if _KINK_REPLAY is not None:
        am = _replay_kink("max")
    else:
        am = np.argmax(x.data, axis=axis)
        if _KINK_TRACE is not None:
            _record_kink("max", am)
    if axis is None:
        data = x.data.reshape(-1)[am]
        if keepdims:
            data = np.full((1,) * x.ndim, data)
    else:
        data = np.take_along_axis(x.data, np.expand_dims(am, axis), axis=axis)
        if not keepdims:
            data = np.squeeze(data, axis=axis)

    def bwd(g):
        if not x.requires_grad:
            return
        buf = np.zeros(x.shape, dtype=x.dtype)
        if axis is None:
            buf.flat[int(am)] = g
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            np.put_along_axis(buf, np.expand_dims(am, axis), gg, axis=axis)
        x._accum(buf)

    return _make(data, (x,), bwd)


def cumsum(x, axis):
    data = np.cumsum(x.data, axis=axis)

    def bwd(g):
        if x.requires_grad:
            x._accum(np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis))

    return _make(data, (x,), bwd)


def cumprod(x, axis):
    """Cumulative product with a zero-safe gradient.

    Transmittance products hit exact zeros whenever an occupancy value
    saturates to 1; the backward handles the first zero per lane explicitly
    (contributions beyond a second zero vanish on their own).
    """
    data = np.cumprod(x.data, axis=axis)

    def bwd(g):
        if not x.requires_grad:
            return
        xm = np.moveaxis(x.data, axis, -1)
        ym = np.moveaxis(data, axis, -1)
        gm = np.moveaxis(g, axis, -1)
        n = xm.shape[-1]
        zero = xm == 0
        has_zero = zero.any(axis=-1)

        # zero-free lanes: grad_i = sum_{k>=i} g_k y_k / x_i
        gy = gm * ym
        rcs = np.flip(np.cumsum(np.flip(gy, -1), -1), -1)
        with np.errstate(divide="ignore", invalid="ignore"):
            grad = rcs / xm
        if has_zero.any():
            first = np.where(has_zero, np.argmax(zero, axis=-1), n)
            pos = np.arange(n)
            before = pos < first[..., None]
            # i < z: y_k is already 0 for k >= z, so rcs/x is correct there.
            grad = np.where(before, np.where(np.isfinite(grad), grad, 0.0), 0.0)
            # i == z: grad_z = sum_{k>=z} g_k * prod_{j<=k, j!=z} x_j
            xprime = np.where(pos == first[..., None], 1.0, xm)
            cp = np.cumprod(xprime, axis=-1)
            tail = np.where(pos >= first[..., None], gm * cp, 0.0).sum(-1)
            at = (pos == first[..., None]) & has_zero[..., None]
            grad = np.where(at, tail[..., None], grad)
        grad = np.where(np.isfinite(grad), grad, 0.0).astype(x.dtype)
        x._accum(np.moveaxis(grad, -1, axis))

    return _make(data, (x,), bwd)


# -- softmax / layer norm --------------------------------------------------------


def softmax(x, axis=-1):
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if x.requires_grad:
            dot = (g * data).sum(axis=axis, keepdims=True)
            x._accum(data * (g - dot))

    return _make(data, (x,), bwd)


def layer_norm(x, axis=-1, eps=1e-5):
    """Normalize to zero mean / unit variance along `axis` (no affine)."""
    mu = x.data.mean(axis=axis, keepdims=True)
    var = x.data.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    n = x.shape[axis]

    def bwd(g):
        if x.requires_grad:
            gm = g.mean(axis=axis, keepdims=True)
            gx = (g * xhat).mean(axis=axis, keepdims=True)
            x._accum(inv * (g - gm - xhat * gx))

    return _make(xhat, (x,), bwd)


# -- autodiff driver ---------------------------------------------------------------


def _toposort(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss, grad=None):
    """Backpropagate from a scalar `loss` through the recorded tape."""
    if loss.data.size != 1:
        raise GradcoreError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GradcoreError("loss does not require grad (graph detached?)")
    if grad is None:
        grad = np.ones_like(loss.data)
    order = _toposort(loss)
    loss._accum(grad)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            # interior activations are not needed once propagated
            if node._parents:
                node.grad = None


def grads_of(loss, params):
    """Run backward and return {name_or_index: grad array} for `params`.

    Detached / unreachable parameters get zero gradients and are listed in
    the returned mapping under ``_unreached``.
    """
    for p in params:
        p.zero_grad()
    backward(loss)
    out = {}
    unreached = []
    for i, p in enumerate(params):
        key = p.name if p.name is not None else i
        if p.grad is None:
            out[key] = np.zeros_like(p.data)
            unreached.append(key)
        else:
            out[key] = p.grad
    if unreached:
        out["_unreached"] = unreached
    return out
