"""Minimal reverse-mode automatic differentiation over numpy arrays.

Dense float tensors, the handful of operations the networks and losses
need (elementwise arithmetic, 2-D convolution, pooling, padding,
reductions) and an Adam optimizer. Gradients are accumulated by walking
the recorded graph in reverse topological order. Everything runs in
float64 unless the caller supplies float32 arrays.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit


def _coerce(data) -> np.ndarray:
    arr = np.asarray(data)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """Array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data: np.ndarray = _coerce(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    # -- introspection ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    # -- graph -----------------------------------------------------------
    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        order = _toposort(self)
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is not None:
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    grads[key] = pg if key not in grads else grads[key] + pg

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _wrap(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic ----------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)
    return _wrap(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)
    return _wrap(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    def backward(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))
    return _wrap(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    def backward(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
    return _wrap(a.data / b.data, (a, b), backward)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    out = a.data ** p
    def backward(g):
        return (g * p * a.data ** (p - 1.0),)
    return _wrap(out, (a,), backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    def backward(g):
        return (g * 0.5 / out,)
    return _wrap(out, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    def backward(g):
        return (g * out,)
    return _wrap(out, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    def backward(g):
        return (g / a.data,)
    return _wrap(np.log(a.data), (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    def backward(g):
        return (g * (1.0 - out * out),)
    return _wrap(out, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    def backward(g):
        return (g * out * (1.0 - out),)
    return _wrap(out, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    def backward(g):
        return (g * (a.data > 0),)
    return _wrap(np.maximum(a.data, 0.0), (a,), backward)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    def backward(g):
        return (g * np.where(a.data > 0, 1.0, slope),)
    return _wrap(np.where(a.data > 0, a.data, slope * a.data), (a,), backward)


def absolute(a) -> Tensor:
    a = as_tensor(a)
    def backward(g):
        return (g * np.sign(a.data),)
    return _wrap(np.abs(a.data), (a,), backward)


def clamp(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    def backward(g):
        return (g * ((a.data >= lo) & (a.data <= hi)),)
    return _wrap(out, (a,), backward)


# -- reductions -----------------------------------------------------------

def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    def backward(g):
        return (_expand_reduced(np.asarray(g), a.data.shape, axis, keepdims).copy(),)
    return _wrap(out, (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.size / out.size
    def backward(g):
        return (_expand_reduced(np.asarray(g), a.data.shape, axis, keepdims) / count,)
    return _wrap(out, (a,), backward)


def amax(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.max(axis=axis, keepdims=keepdims)
    def backward(g):
        full = _expand_reduced(np.asarray(out), a.data.shape, axis, keepdims)
        mask = (a.data == full)
        counts = _expand_reduced(
            mask.sum(axis=axis, keepdims=keepdims), a.data.shape, axis, keepdims)
        gg = _expand_reduced(np.asarray(g), a.data.shape, axis, keepdims)
        return (gg * mask / counts,)
    return _wrap(out, (a,), backward)


def amin(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.min(axis=axis, keepdims=keepdims)
    def backward(g):
        full = _expand_reduced(np.asarray(out), a.data.shape, axis, keepdims)
        mask = (a.data == full)
        counts = _expand_reduced(
            mask.sum(axis=axis, keepdims=keepdims), a.data.shape, axis, keepdims)
        gg = _expand_reduced(np.asarray(g), a.data.shape, axis, keepdims)
        return (gg * mask / counts,)
    return _wrap(out, (a,), backward)


# -- shape ops --------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    def backward(g):
        return (g.reshape(a.data.shape),)
    return _wrap(a.data.reshape(shape), (a,), backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)
    def backward(g):
        return (g.transpose(inverse),)
    return _wrap(a.data.transpose(axes), (a,), backward)


def take(a, idx) -> Tensor:
    """Basic indexing with gradient scatter-add back into the source."""
    a = as_tensor(a)
    out = a.data[idx]
    def backward(g):
        da = np.zeros_like(a.data)
        np.add.at(da, idx, g)
        return (da,)
    return _wrap(out, (a,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in ts]
    out = np.concatenate([t.data for t in ts], axis=axis)
    def backward(g):
        splits = np.cumsum(sizes)[:-1]
        return tuple(np.split(g, splits, axis=axis))
    return _wrap(out, ts, backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    def backward(g):
        return g @ b.data.T, a.data.T @ g
    return _wrap(a.data @ b.data, (a, b), backward)


# -- spatial ops (NCHW) -----------------------------------------------------

def pad2d(a, pad: int, mode: str = "zero") -> Tensor:
    """Pad the two trailing axes by `pad` on each side (zero or reflect)."""
    a = as_tensor(a)
    if pad == 0:
        return a
    spec = [(0, 0)] * (a.data.ndim - 2) + [(pad, pad), (pad, pad)]
    if mode == "zero":
        out = np.pad(a.data, spec)
        def backward(g):
            sl = (Ellipsis, slice(pad, -pad), slice(pad, -pad))
            return (g[sl],)
        return _wrap(out, (a,), backward)
    if mode == "reflect":
        out = np.pad(a.data, spec, mode="reflect")
        h, w = a.data.shape[-2:]
        idx = np.pad(np.arange(h * w).reshape(h, w),
                     ((pad, pad), (pad, pad)), mode="reflect").ravel()
        def backward(g):
            lead = int(np.prod(g.shape[:-2], dtype=np.int64))
            gm = g.reshape(lead, -1)
            da = np.empty((lead, h * w), dtype=g.dtype)
            for r in range(lead):
                da[r] = np.bincount(idx, weights=gm[r], minlength=h * w)
            return (da.reshape(a.data.shape),)
        return _wrap(out, (a,), backward)
    raise ValueError(f"unknown pad mode {mode!r}")


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int):
    b, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols.reshape(b, c * kh * kw, oh * ow), oh, ow


def conv2d(x, w, b=None, stride: int = 1) -> Tensor:
    """2-D convolution (cross-correlation), valid padding; pad beforehand."""
    x, w = as_tensor(x), as_tensor(w)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        parents.append(b)
    bs, c, h, wd = x.data.shape
    f, cw, kh, kw = w.data.shape
    if cw != c:
        raise ValueError(f"conv2d channel mismatch: input {c}, weight {cw}")
    cols, oh, ow = _im2col(x.data, kh, kw, stride)
    w2 = w.data.reshape(f, -1)
    out = np.matmul(w2[None, :, :], cols)
    if b is not None:
        out = out + b.data.reshape(1, f, 1)
    out = out.reshape(bs, f, oh, ow)

    def backward(g):
        g2 = g.reshape(bs, f, oh * ow)
        dw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.data.shape)
        dcols = np.matmul(w2.T[None, :, :], g2)
        dcols = dcols.reshape(bs, c, kh, kw, oh, ow)
        dx = np.zeros_like(x.data)
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += dcols[:, :, i, j]
        grads = [dx, dw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _wrap(out, parents, backward)


def avg_pool2x2(a) -> Tensor:
    a = as_tensor(a)
    bs, c, h, w = a.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2x2 needs even spatial dims, got {h}x{w}")
    out = a.data.reshape(bs, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    def backward(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0,)
    return _wrap(out, (a,), backward)


def upsample_nearest2x(a) -> Tensor:
    a = as_tensor(a)
    out = np.repeat(np.repeat(a.data, 2, axis=2), 2, axis=3)
    bs, c, h, w = a.data.shape
    def backward(g):
        return (g.reshape(bs, c, h, 2, w, 2).sum(axis=(3, 5)),)
    return _wrap(out, (a,), backward)


def instance_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over the spatial axes."""
    c = x.data.shape[1]
    mu = tmean(x, axis=(2, 3), keepdims=True)
    xc = sub(x, mu)
    var = tmean(mul(xc, xc), axis=(2, 3), keepdims=True)
    xhat = div(xc, sqrt(add(var, eps)))
    g = reshape(gamma, (1, c, 1, 1))
    b = reshape(beta, (1, c, 1, 1))
    return add(mul(xhat, g), b)


# -- parameters and optimization ---------------------------------------------

def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


class frozen:
    """Context manager that temporarily removes params from the grad graph."""

    def __init__(self, params: dict[str, Tensor]):
        self._params = params
        self._saved: dict[str, bool] = {}

    def __enter__(self):
        for name, p in self._params.items():
            self._saved[name] = p.requires_grad
            p.requires_grad = False
        return self

    def __exit__(self, *exc):
        for name, p in self._params.items():
            p.requires_grad = self._saved[name]
        return False


class Adam:
    """Adaptive-moment optimizer over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4,
                 betas: tuple[float, float] = (0.5, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        zero_grads(self.params)

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * (p.grad * p.grad)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        for k in self.m:
            self.m[k] = np.array(state["m"][k], copy=True)
            self.v[k] = np.array(state["v"][k], copy=True)
