"""Dense float64 tensors with reverse-mode automatic differentiation.

Every learnable quantity in the package is a :class:`Tensor`. Operations
record backward closures on their outputs; ``Tensor.backward()`` walks the
graph once in reverse topological order and accumulates gradients into the
leaves (repeated use of a tensor sums its contributions, the multivariate
chain rule).

Conventions fixed here and relied on everywhere else:

* float64 only -- gradient checking at 1e-6 relative tolerance needs it.
* ``conv2d`` is cross-correlation (no kernel flip).
* No implicit broadcasting beyond scalar-with-tensor and the explicit
  bias helpers (``add_rowvec``, the conv bias). Any other shape mixing
  goes through ``reshape`` / ``expand`` so each backward rule stays a
  one-liner.
* Dropout is inverted dropout and is disabled entirely while the global
  evaluation flag is set (see :func:`evaluating`), so evaluation passes
  are deterministic and consume no randomness.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_DEBUG_CHECKS = False
_EVAL_MODE = False
_GRAD_ENABLED = True


def set_debug_checks(enabled: bool) -> None:
    """Toggle the finiteness assertion run after every forward op."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def debug_checks_enabled() -> bool:
    return _DEBUG_CHECKS


@contextlib.contextmanager
def evaluating():
    """Evaluation mode: dropout becomes the identity (and draws no RNG)."""
    global _EVAL_MODE
    prev = _EVAL_MODE
    _EVAL_MODE = True
    try:
        yield
    finally:
        _EVAL_MODE = prev


def in_evaluation_mode() -> bool:
    return _EVAL_MODE


@contextlib.contextmanager
def no_grad():
    """Disable graph recording; forward values only."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


_SEQ_COUNTER = 0


def _next_seq() -> int:
    # creation order is a valid topological order: an op's parents always
    # exist before its output
    global _SEQ_COUNTER
    _SEQ_COUNTER += 1
    return _SEQ_COUNTER


class Tensor:
    """A dense float64 array plus optional gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"
        self._seq = _next_seq()

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def is_leaf(self) -> bool:
        return not self._parents

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- autodiff ------------------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every reachable tensor with requires_grad.

        Must be called on a scalar. Leaf gradients accumulate across calls
        (reset with ``zero_grad``); interior gradients are rebuilt fresh so
        re-running backward on the same graph is bit-identical.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss tensor")
        order = _toposort(self)
        for node in order:
            if node._parents:
                node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("tensor/tensor division is not supported; divide by a scalar")
        return mul(self, 1.0 / float(scalar))

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def constant(data) -> Tensor:
    """A tensor that never tracks gradients (inputs, targets, masks)."""
    return Tensor(data, requires_grad=False)


def _toposort(root: Tensor) -> list[Tensor]:
    # Collect reachable nodes iteratively (recursion would overflow on long
    # GRU chains), then sort by creation sequence: parents are always
    # created before their outputs, so creation order is topological.
    nodes: list[Tensor] = [root]
    seen: set[int] = {id(root)}
    stack: list[Tensor] = [root]
    while stack:
        node = stack.pop()
        for parent in node._parents:
            if id(parent) not in seen:
                seen.add(id(parent))
                nodes.append(parent)
                stack.append(parent)
    nodes.sort(key=lambda t: t._seq)
    return nodes


def _from_op(data: np.ndarray, parents: Sequence[Tensor], op: str,
             backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._op = op
    out._seq = _next_seq()
    if _GRAD_ENABLED and out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        raise ValueError(f"gradient shape {g.shape} != tensor shape {t.data.shape}")
    if t.grad is None:
        # copy: g may be shared with sibling accumulations or be a view
        t.grad = g.copy()
    else:
        t.grad += g


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape} "
                         "(broadcasting is intentionally not supported; use expand/reshape)")


# -- elementwise arithmetic ----------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        out_data = a.data + c

        def backward(g):
            _accumulate(a, g)

        return _from_op(out_data, (a,), "add_scalar", backward)
    _check_same_shape(a, b, "add")
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _from_op(out_data, (a, b), "add", backward)


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _check_same_shape(a, b, "sub")
    out_data = a.data - b.data

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _from_op(out_data, (a, b), "sub", backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, -g)

    return _from_op(-a.data, (a,), "neg", backward)


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        out_data = a.data * c

        def backward(g):
            _accumulate(a, g * c)

        return _from_op(out_data, (a,), "mul_scalar", backward)
    _check_same_shape(a, b, "mul")
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * b.data)
        if b.requires_grad:
            _accumulate(b, g * a.data)

    return _from_op(out_data, (a, b), "mul", backward)


def power(a: Tensor, exponent) -> Tensor:
    c = float(exponent)
    out_data = a.data ** c

    def backward(g):
        _accumulate(a, g * c * a.data ** (c - 1.0))

    return _from_op(out_data, (a,), "pow", backward)


# -- activations and transcendentals -------------------------------------------

def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        _accumulate(a, g * (a.data > 0.0))

    return _from_op(out_data, (a,), "relu", backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # evaluate exp on a non-positive argument only, then fix up the sign branch
    e = np.exp(-np.abs(x))
    out_data = np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g):
        _accumulate(a, g * out_data * (1.0 - out_data))

    return _from_op(out_data, (a,), "sigmoid", backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - out_data * out_data))

    return _from_op(out_data, (a,), "tanh", backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out_data)

    return _from_op(out_data, (a,), "exp", backward)


def log(a: Tensor) -> Tensor:
    out_data = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return _from_op(out_data, (a,), "log", backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along ``axis`` (max-subtracted before exponentiation)."""
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        inner = np.sum(g * out_data, axis=axis, keepdims=True)
        _accumulate(a, out_data * (g - inner))

    return _from_op(out_data, (a,), "softmax", backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    out_data = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))

    def backward(g):
        _accumulate(a, g - np.exp(out_data) * np.sum(g, axis=axis, keepdims=True))

    return _from_op(out_data, (a,), "log_softmax", backward)


# -- linear algebra -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _from_op(out_data, (a, b), "matmul", backward)


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """Bias add: broadcast a 1-D vector along the last axis of ``x``.

    The one sanctioned broadcast besides scalars; its backward is a plain
    sum over the leading axes.
    """
    if v.ndim != 1 or x.shape[-1] != v.shape[0]:
        raise ValueError(f"add_rowvec: {x.shape} with bias {v.shape}")
    out_data = x.data + v.data

    def backward(g):
        _accumulate(x, g)
        _accumulate(v, g.reshape(-1, v.shape[0]).sum(axis=0))

    return _from_op(out_data, (x, v), "add_rowvec", backward)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over NCHW input with an OIHW kernel.

    Output spatial size is ``(H + 2*padding - kh) // stride + 1`` (same for
    width). Implemented with an im2col matmul; backward scatters patch
    gradients back with strided adds.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input/kernel, got {x.shape}, {weight.shape}")
    n, c, h, w = x.shape
    k, c_k, kh, kw = weight.shape
    if c != c_k:
        raise ValueError(f"conv2d: input has {c} channels, kernel expects {c_k}")
    if bias is not None and bias.shape != (k,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({k},)")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (N, C, Ho, Wo, kh, kw) -> (N, Ho*Wo, C*kh*kw)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho * wo, c * kh * kw)
    wmat = weight.data.reshape(k, c * kh * kw)
    out = cols @ wmat.T                          # (N, Ho*Wo, K)
    out_data = np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(n, k, ho, wo)
    if bias is not None:
        out_data = out_data + bias.data.reshape(1, k, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n, ho * wo, k)
        if weight.requires_grad:
            gw = np.tensordot(gmat, cols, axes=([0, 1], [0, 1]))   # (K, C*kh*kw)
            _accumulate(weight, gw.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros((n, c, hp, wp))
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        gcols[:, :, :, :, i, j]
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
            _accumulate(x, gx)

    return _from_op(out_data, parents, "conv2d", backward)


# -- reductions -----------------------------------------------------------------

def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    for a in axes:
        if x.shape[a] == 0:
            raise ValueError(f"sum over empty axis {a} of shape {x.shape}")
    out_data = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        gk = g if keepdims else np.expand_dims(g, axes)
        _accumulate(x, np.broadcast_to(gk, x.shape).copy())

    return _from_op(np.asarray(out_data), (x,), "sum", backward)


def mean_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = 1
    for a in axes:
        if x.shape[a] == 0:
            raise ValueError(f"mean over empty axis {a} of shape {x.shape}")
        count *= x.shape[a]
    out_data = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        gk = g if keepdims else np.expand_dims(g, axes)
        _accumulate(x, np.broadcast_to(gk / count, x.shape).copy())

    return _from_op(np.asarray(out_data), (x,), "mean", backward)


def avg_pool2d(x: Tensor) -> Tensor:
    """Global average pooling over the trailing two (spatial) axes."""
    if x.ndim < 3:
        raise ValueError(f"avg_pool2d expects >= 3-D input, got {x.shape}")
    return mean_(x, axis=(x.ndim - 2, x.ndim - 1))


# -- shape surgery -----------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out_data = x.data.reshape(shape)

    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    return _from_op(out_data, (x,), "reshape", backward)


def expand(x: Tensor, axis: int, n: int) -> Tensor:
    """Repeat a size-1 axis ``n`` times. Backward sums contributions back."""
    axis = axis % x.ndim
    if x.shape[axis] != 1:
        raise ValueError(f"expand: axis {axis} of {x.shape} must have size 1")
    target = list(x.shape)
    target[axis] = n
    out_data = np.broadcast_to(x.data, target).copy()

    def backward(g):
        _accumulate(x, g.sum(axis=axis, keepdims=True))

    return _from_op(out_data, (x,), "expand", backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis`` (a view: op
    outputs are never mutated in place)."""
    axis = axis % x.ndim
    if start < 0 or start + length > x.shape[axis]:
        raise ValueError(f"narrow: [{start}:{start + length}] out of range on axis {axis} "
                         f"of {x.shape}")
    index = (slice(None),) * axis + (slice(start, start + length),)
    out_data = x.data[index]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        _accumulate(x, gx)

    return _from_op(out_data, (x,), "narrow", backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ValueError("concat of an empty sequence")
    axis = axis % ts[0].ndim
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            index = tuple(slice(None) if a != axis else slice(lo, hi)
                          for a in range(t.ndim))
            _accumulate(t, g[index])

    return _from_op(out_data, tuple(ts), "concat", backward)


# -- regularization -----------------------------------------------------------------

def dropout(x: Tensor, p: float, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability ``p``, scale kept values by 1/(1-p).

    Identity when ``p == 0`` or while the global evaluation flag is set; in
    those cases no random numbers are drawn.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0 or _EVAL_MODE:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit Generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    out_data = x.data * mask

    def backward(g):
        _accumulate(x, g * mask)

    return _from_op(out_data, (x,), "dropout", backward)
