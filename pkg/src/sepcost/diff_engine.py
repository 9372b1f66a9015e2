"""Reverse-mode automatic differentiation over a closed set of array ops.

A Tensor wraps a float64 numpy array. Ops applied to tensors that
require gradients record a backward closure; `backward()` then walks the
tape in reverse topological order and accumulates exact derivatives into
`.grad`. Subtrees built purely from constants are folded (no closures),
so constant branches of a loss cost nothing at backward time.

The op set is exactly what the separation losses and network need:
strided 1-D convolution and its transpose, dense affine maps, softplus,
elementwise arithmetic / min / clamp / abs, inner products, L2 norms,
axis reductions, concatenation/stacking, basic slicing, and a linear
gather used for in-graph resampling. There is no dynamic control flow
and no higher-order differentiation.
"""

from __future__ import annotations

import contextlib
from functools import lru_cache
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import NotScalar, ShapeError, UnsupportedOp

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (forward values only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into .grad over the recorded tape."""
        if self.data.size != 1:
            raise NotScalar(f"backward() on tensor of shape {self.data.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # operator sugar; scalars and arrays are wrapped as constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, key):
        return getitem(self, key)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


# A graph is a scalar-valued function of named input tensors.
Graph = Callable[[Mapping[str, Tensor]], Tensor]


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    """Leaf tensor that owns its storage and receives gradients."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g over the axes numpy broadcasting introduced."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = _unbroadcast(np.asarray(g, dtype=np.float64), t.data.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def _result(data, parents: tuple, backward) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward=backward)
    return Tensor(data)


# ---------------------------------------------------------------------------
# elementwise ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _result(out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _result(out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _result(out, (a, b), bw)


def div(a, b) -> Tensor:
    """Elementwise division. No implicit epsilon: callers guard denominators."""
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        _accum(a, g / b.data)
        _accum(b, -g * a.data / (b.data * b.data))

    return _result(out, (a, b), bw)


def minimum(a, b) -> Tensor:
    """Elementwise min; on exact ties the gradient goes to the first argument."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data
    out = np.where(take_a, a.data, b.data)

    def bw(g):
        _accum(a, g * take_a)
        _accum(b, g * ~take_a)

    return _result(out, (a, b), bw)


def clamp(x, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes through on the closed interval."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    out = np.clip(x.data, lo, hi)

    def bw(g):
        _accum(x, g * inside)

    return _result(out, (x,), bw)


def abs_(x) -> Tensor:
    """Elementwise |x|; the subgradient at 0 is 0."""
    x = as_tensor(x)
    sign = np.sign(x.data)

    def bw(g):
        _accum(x, g * sign)

    return _result(np.abs(x.data), (x,), bw)


def square(x) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        _accum(x, g * (2.0 * x.data))

    return _result(x.data * x.data, (x,), bw)


def sqrt(x) -> Tensor:
    """Elementwise square root; the subgradient at 0 is 0."""
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0.0, 0.5 / out, 0.0)
        _accum(x, g * d)

    return _result(out, (x,), bw)


def softplus(x) -> Tensor:
    """log(1 + exp(x)), overflow-safe."""
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data)

    def bw(g):
        xv = x.data
        sig = np.where(xv >= 0, 1.0 / (1.0 + np.exp(-np.abs(xv))), np.exp(xv) / (1.0 + np.exp(xv)))
        _accum(x, g * sig)

    return _result(out, (x,), bw)


# ---------------------------------------------------------------------------
# reductions and contractions

def dot(a, b) -> Tensor:
    """Inner product of two equal-length 1-D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.size != b.data.size:
        raise ShapeError(f"dot needs equal-length vectors, got {a.data.shape} and {b.data.shape}")
    out = a.data @ b.data

    def bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _result(out, (a, b), bw)


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.data.shape))

    return _result(out, (x,), bw)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else x.data.shape[axis]

    def bw(g):
        g = np.asarray(g) / count
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.data.shape))

    return _result(out, (x,), bw)


def norm(x, axis=None, keepdims: bool = False) -> Tensor:
    """L2 norm, optionally along one axis; the subgradient at 0 is 0."""
    x = as_tensor(x)
    out = np.sqrt((x.data**2).sum(axis=axis, keepdims=keepdims))

    def bw(g):
        g = np.asarray(g)
        n = out
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
            n = np.expand_dims(n, axis)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(n > 0.0, x.data / n, 0.0)
        _accum(x, g * d)

    return _result(out, (x,), bw)


# ---------------------------------------------------------------------------
# shape ops

def getitem(x, key) -> Tensor:
    x = as_tensor(x)
    out = x.data[key]

    def bw(g):
        full = np.zeros_like(x.data)
        full[key] = g
        _accum(x, full)

    return _result(out.copy(), (x,), bw)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        _accum(x, np.asarray(g).reshape(x.data.shape))

    return _result(x.data.reshape(shape), (x,), bw)


def concatenate(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(ts, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _result(out, tuple(ts), bw)


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def bw(g):
        for i, t in enumerate(ts):
            _accum(t, np.take(g, i, axis=axis))

    return _result(out, tuple(ts), bw)


# ---------------------------------------------------------------------------
# linear maps

def matmul(a, b) -> Tensor:
    """2-D matrix product (the dense map; add a bias tensor for affine)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes {a.data.shape} and {b.data.shape} do not align")
    out = a.data @ b.data

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _result(out, (a, b), bw)


def _overlap_add(fg: np.ndarray, stride: int, out_len: int) -> np.ndarray:
    """Scatter fg[t, m] into out[t + stride*m] (the conv-transpose core)."""
    taps, n_frames = fg.shape
    cover = (n_frames - 1) * stride + taps
    out = np.zeros(out_len)
    if taps % stride == 0:
        q = taps // stride
        buf = out[:cover].reshape(n_frames - 1 + q, stride)
        blocks = fg.reshape(q, stride, n_frames)
        for a in range(q):
            buf[a : a + n_frames, :] += blocks[a].T
    else:
        for t in range(taps):
            out[t : t + (n_frames - 1) * stride + 1 : stride] += fg[t]
    return out


def _frames(x: np.ndarray, taps: int, stride: int) -> np.ndarray:
    # contiguous copy: BLAS-friendly for the matmuls that follow
    return np.ascontiguousarray(np.lib.stride_tricks.sliding_window_view(x, taps)[::stride])


def conv1d(x, filters, stride: int) -> Tensor:
    """Multi-filter strided 1-D convolution (no padding).

    x: (T,), filters: (K, taps) -> (K, L) with L = (T - taps)//stride + 1.
    """
    x, filters = as_tensor(x), as_tensor(filters)
    xv, fv = x.data, filters.data
    if xv.ndim != 1 or fv.ndim != 2:
        raise ShapeError("conv1d expects a 1-D signal and (K, taps) filters")
    taps = fv.shape[1]
    if xv.size < taps:
        raise ShapeError(f"signal of {xv.size} samples shorter than {taps}-tap filters")
    if stride <= 0:
        raise ValueError("stride must be positive")
    frames = _frames(xv, taps, stride)
    out = fv @ frames.T

    def bw(g):
        if filters.requires_grad:
            _accum(filters, g @ frames)
        if x.requires_grad:
            _accum(x, _overlap_add(fv.T @ g, stride, xv.size))

    return _result(out, (x, filters), bw)


def conv1d_transpose(coeffs, filters, stride: int) -> Tensor:
    """Transposed strided 1-D convolution (overlap-add synthesis).

    coeffs: (K, L), filters: (K, taps) -> (T,) with T = (L-1)*stride + taps.
    Adjoint of conv1d with the same filters and stride.
    """
    coeffs, filters = as_tensor(coeffs), as_tensor(filters)
    cv, fv = coeffs.data, filters.data
    if cv.ndim != 2 or fv.ndim != 2 or cv.shape[0] != fv.shape[0]:
        raise ShapeError(f"conv1d_transpose shapes {cv.shape} and {fv.shape} do not align")
    if stride <= 0:
        raise ValueError("stride must be positive")
    taps = fv.shape[1]
    out_len = (cv.shape[1] - 1) * stride + taps
    out = _overlap_add(fv.T @ cv, stride, out_len)

    def bw(g):
        g_frames = _frames(np.asarray(g), taps, stride)
        if coeffs.requires_grad:
            _accum(coeffs, fv @ g_frames.T)
        if filters.requires_grad:
            _accum(filters, cv @ g_frames)

    return _result(out, (coeffs, filters), bw)


def gather_linear(x, idx: np.ndarray, weights: np.ndarray) -> Tensor:
    """out[j] = sum_k x[idx[j, k]] * weights[j, k] (fixed sparse linear map).

    Used for in-graph band-limited resampling; the adjoint is the
    matching scatter-add.
    """
    x = as_tensor(x)
    if x.data.ndim != 1:
        raise ShapeError("gather_linear expects a 1-D signal")
    out = np.einsum("jk,jk->j", x.data[idx], weights)

    def bw(g):
        scattered = np.bincount(
            idx.ravel(), weights=(weights * np.asarray(g)[:, None]).ravel(), minlength=x.data.size
        )
        _accum(x, scattered)

    return _result(out, (x,), bw)


def stft_magnitude(x, frame_len: int, fft_len: int, hop: int, window: np.ndarray) -> Tensor:
    """|DFT| of windowed frames zero-padded to fft_len, shape (bins, frames).

    Forward runs on the FFT; backward applies the exact adjoint through
    the windowed cosine/sine matrices (subgradient 0 at zero-magnitude
    bins). Values match taking the magnitude of the padded rfft bin for
    bin.
    """
    x = as_tensor(x)
    xv = x.data
    if xv.ndim != 1:
        raise ShapeError("stft_magnitude expects a 1-D signal")
    if xv.size < frame_len:
        raise ShapeError(f"signal of {xv.size} samples shorter than one {frame_len}-sample frame")
    frames = _frames(xv, frame_len, hop)
    spec = np.fft.rfft(frames * window, n=fft_len, axis=1)
    mag = np.abs(spec).T  # (bins, frames)

    def bw(g):
        if not x.requires_grad:
            return
        cos_m, sin_m = _dft_matrices(frame_len, fft_len, window.tobytes())
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(mag > 0.0, 1.0 / mag, 0.0)
        ga = g * spec.real.T * inv
        gb = g * spec.imag.T * inv
        fg = cos_m.T @ ga - sin_m.T @ gb  # (frame_len, frames)
        _accum(x, _overlap_add(fg, hop, xv.size))

    return _result(mag, (x,), bw)


@lru_cache(maxsize=8)
def _dft_matrices(frame_len: int, fft_len: int, window_bytes: bytes):
    """Windowed DFT basis: cos rows give Re(rfft), sin rows give -Im(rfft)."""
    window = np.frombuffer(window_bytes, dtype=np.float64)
    t = np.arange(frame_len)
    k = np.arange(fft_len // 2 + 1)[:, None]
    phase = 2.0 * np.pi * k * t[None, :] / fft_len
    return window * np.cos(phase), window * np.sin(phase)


# ---------------------------------------------------------------------------
# graph evaluation

_OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "minimum": minimum,
    "clamp": clamp,
    "abs": abs_,
    "square": square,
    "sqrt": sqrt,
    "softplus": softplus,
    "dot": dot,
    "sum": sum_,
    "mean": mean,
    "norm": norm,
    "getitem": getitem,
    "reshape": reshape,
    "concatenate": concatenate,
    "stack": stack,
    "matmul": matmul,
    "conv1d": conv1d,
    "conv1d_transpose": conv1d_transpose,
    "gather_linear": gather_linear,
    "stft_magnitude": stft_magnitude,
}


def apply_op(name: str, *args, **kwargs) -> Tensor:
    """Dispatch an op by name; unknown names raise UnsupportedOp."""
    try:
        fn = _OPS[name]
    except KeyError:
        raise UnsupportedOp(f"no op named {name!r}") from None
    return fn(*args, **kwargs)


def evaluate_with_gradient(graph: Graph, inputs: Mapping[str, np.ndarray], wrt):
    """Run a scalar graph forward and backward.

    Returns (value, {name: gradient array}) for every name in wrt.
    """
    wrt = set(wrt)
    missing = wrt - set(inputs)
    if missing:
        raise KeyError(f"wrt names not bound as inputs: {sorted(missing)}")
    tensors = {
        name: Tensor(np.asarray(val, dtype=np.float64), requires_grad=name in wrt)
        for name, val in inputs.items()
    }
    out = graph(tensors)
    if not isinstance(out, Tensor):
        raise TypeError("graph must return a Tensor")
    if out.data.size != 1:
        raise NotScalar(f"graph output has shape {out.data.shape}")
    out.backward()
    grads = {}
    for name in sorted(wrt):
        t = tensors[name]
        grads[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
    return out.item(), grads


def finite_difference_gradient(graph: Graph, inputs: Mapping[str, np.ndarray], wrt: str, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar graph w.r.t. one input.

    Per-coordinate step is step * max(1, |x_i|). This is the
    verification oracle: it never touches the reverse-mode path.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = {name: np.asarray(val, dtype=np.float64).copy() for name, val in inputs.items()}
    x = base[wrt]
    grad = np.zeros_like(x)
    flat_x = x.ravel()
    flat_g = grad.ravel()

    def value() -> float:
        with no_grad():
            out = graph({name: Tensor(val) for name, val in base.items()})
        return out.item()

    for i in range(flat_x.size):
        orig = flat_x[i]
        h = step * max(1.0, abs(orig))
        flat_x[i] = orig + h
        f_plus = value()
        flat_x[i] = orig - h
        f_minus = value()
        flat_x[i] = orig
        flat_g[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the larger gradient magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-30)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)
