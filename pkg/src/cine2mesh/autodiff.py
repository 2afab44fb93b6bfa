"""Reverse-mode automatic differentiation over float64 numpy arrays.

A small define-by-run engine: each operation appends a node to an implicit
acyclic graph and ``Var.backward()`` walks that graph in reverse topological
order, accumulating gradients into the leaves.  Sized for the desk-scale
convolutional / recurrent / graph networks in this package.
"""
from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.special import expit


class NonFiniteError(ArithmeticError):
    """A forward pass produced NaN or Inf."""


class TrainingDivergedError(RuntimeError):
    """A training loss became non-finite."""

    def __init__(self, epoch: int, detail: str = ""):
        msg = f"training diverged at epoch {epoch}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.epoch = epoch


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _require_finite(data: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values in output of node '{name}'")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """One value in the computation graph.

    Leaves are created directly (``Var(array, name=...)``); interior nodes
    are created by the operations below.  After ``loss.backward()`` every
    reachable leaf holds its gradient in ``.grad`` (None if unreachable).
    """

    __slots__ = ("data", "grad", "name", "_parents", "_backward")

    def __init__(self, data, name: str = ""):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Var, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Var(shape={self.data.shape}, name={self.name!r})"

    # -- graph construction ------------------------------------------------

    def backward(self) -> None:
        """Reverse pass from a scalar loss, accumulating leaf gradients."""
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g

    # -- operator sugar ----------------------------------------------------

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
        return neg(self)

    def __pow__(self, k):
        return power(self, k)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topo_order(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
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
    return order


def _lift(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _node(data: np.ndarray, parents: tuple[Var, ...], backward, name: str) -> Var:
    _require_finite(data, name)
    out = Var.__new__(Var)
    out.data = data
    out.grad = None
    out.name = name
    out._parents = parents
    out._backward = backward
    return out


# -- elementwise arithmetic --------------------------------------------------


def add(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out = a.data + b.data
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
        "add",
    )


def sub(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out = a.data - b.data
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
        "sub",
    )


def mul(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out = a.data * b.data
    return _node(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
        "mul",
    )


def div(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    with np.errstate(all="ignore"):
        out = a.data / b.data
    return _node(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
        "div",
    )


def neg(a) -> Var:
    a = _lift(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, k: float) -> Var:
    a = _lift(a)
    k = float(k)
    with np.errstate(all="ignore"):
        out = a.data**k
    return _node(out, (a,), lambda g: (g * k * a.data ** (k - 1.0),), f"pow{k}")


def absolute(a) -> Var:
    a = _lift(a)
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def exp(a) -> Var:
    a = _lift(a)
    with np.errstate(all="ignore"):
        out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Var:
    a = _lift(a)
    with np.errstate(all="ignore"):
        out = np.log(a.data)
    return _node(out, (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Var:
    a = _lift(a)
    with np.errstate(all="ignore"):
        out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a) -> Var:
    a = _lift(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Var:
    a = _lift(a)
    out = expit(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a) -> Var:
    a = _lift(a)
    out = np.maximum(a.data, 0.0)
    return _node(out, (a,), lambda g: (g * (a.data > 0.0),), "relu")


def softplus(a) -> Var:
    a = _lift(a)
    out = np.logaddexp(0.0, a.data)
    return _node(out, (a,), lambda g: (g * expit(a.data),), "softplus")


# -- shape manipulation -------------------------------------------------------


def reshape(a, shape) -> Var:
    a = _lift(a)
    shape = tuple(int(s) for s in shape)
    return _node(
        a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),), "reshape"
    )


def take(a, key) -> Var:
    a = _lift(a)

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, key, g)
        return (ga,)

    return _node(_as_array(a.data[key]), (a,), backward, "take")


def concat(parts: Sequence, axis: int = 0) -> Var:
    parts = [_lift(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return _node(out, tuple(parts), backward, "concat")


def reduce_sum(a, axis=None, keepdims=False) -> Var:
    a = _lift(a)
    out = _as_array(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g.reshape((1,) * a.data.ndim), a.data.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.data.shape).copy(),)

    return _node(out, (a,), backward, "sum")


def reduce_mean(a, axis=None, keepdims=False) -> Var:
    a = _lift(a)
    out = _as_array(a.data.mean(axis=axis, keepdims=keepdims))
    count = a.data.size if axis is None else a.data.shape[axis]

    def backward(g):
        if axis is None:
            return (
                np.broadcast_to(g.reshape((1,) * a.data.ndim), a.data.shape) / count,
            )
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.data.shape) / count,)

    return _node(out, (a,), backward, "mean")


# -- linear algebra -----------------------------------------------------------


def matmul(a, b) -> Var:
    """Matrix product with leading-dimension broadcasting; operands must be >= 2-D."""
    a, b = _lift(a), _lift(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(
            f"matmul requires >=2-D operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ b.data.swapaxes(-1, -2)
        gb = a.data.swapaxes(-1, -2) @ g
        return (_unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape))

    return _node(out, (a, b), backward, "matmul")


def neighbor_mix(x, matrix, matrix_t=None) -> Var:
    """Apply a fixed (possibly sparse) ``(V, V)`` operator over the -2 axis of ``x``.

    ``x`` has shape ``(..., V, F)``; the operator is a constant, so gradients
    flow only through ``x``.  Used for normalized-adjacency aggregation.
    """
    x = _lift(x)
    v = x.data.shape[-2]
    if matrix.shape != (v, v):
        raise ValueError(f"operator shape {matrix.shape} does not match V={v}")
    if matrix_t is None:
        matrix_t = matrix.T.tocsr() if sparse.issparse(matrix) else matrix.T

    def apply(op, arr):
        lead = arr.shape[:-2]
        f = arr.shape[-1]
        folded = arr.reshape(-1, v, f).transpose(1, 0, 2).reshape(v, -1)
        mixed = op @ folded
        return np.ascontiguousarray(
            mixed.reshape(v, -1, f).transpose(1, 0, 2).reshape(*lead, v, f)
        )

    out = apply(matrix, x.data)
    return _node(out, (x,), lambda g: (apply(matrix_t, g),), "neighbor_mix")


# -- convolution --------------------------------------------------------------


def _conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> tuple[np.ndarray, int, int]:
    """Patches as rows: returns ``(B, oh*ow, C*kh*kw)`` plus the window grid."""
    b, c = x.shape[:2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    view = view[:, :, ::stride, ::stride]  # (B, C, oh, ow, kh, kw)
    oh, ow = view.shape[2], view.shape[3]
    cols = np.ascontiguousarray(view.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(b, oh * ow, c * kh * kw), oh, ow


def _col2im(
    cols: np.ndarray,
    out_shape: tuple[int, int, int, int],
    kh: int,
    kw: int,
    stride: int,
    pad: int,
    windows: tuple[int, int],
) -> np.ndarray:
    """Scatter-add patch rows back onto an image grid (adjoint of _im2col)."""
    b, c, h, w = out_shape
    nh, nw = windows
    acc = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    gc = np.ascontiguousarray(
        cols.reshape(b, nh, nw, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    )  # (B, C, kh, kw, nh, nw)
    for i in range(kh):
        for j in range(kw):
            acc[:, :, i : i + stride * nh : stride, j : j + stride * nw : stride] += gc[:, :, i, j]
    if pad:
        return np.ascontiguousarray(acc[:, :, pad : pad + h, pad : pad + w])
    return acc


def conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Var:
    """2-D convolution; ``x`` is ``(B, C, H, W)``, ``weight`` is ``(O, C, kh, kw)``."""
    x, weight = _lift(x), _lift(weight)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError("conv2d expects 4-D input and weight")
    b, c, h, w = x.data.shape
    o, cw, kh, kw = weight.data.shape
    if c != cw:
        raise ValueError(f"conv2d channel mismatch: input {c}, weight {cw}")
    oh = _conv_out_size(h, kh, stride, pad)
    ow = _conv_out_size(w, kw, stride, pad)
    if oh <= 0 or ow <= 0:
        raise ValueError(f"conv2d output would be empty for input {x.data.shape}")
    cols, _, _ = _im2col(x.data, kh, kw, stride, pad)  # (B, P, K)
    k = c * kh * kw
    p = oh * ow
    wmat = weight.data.reshape(o, k)
    flat = cols.reshape(b * p, k) @ wmat.T  # (B*P, O)
    out = np.ascontiguousarray(flat.reshape(b, oh, ow, o).transpose(0, 3, 1, 2))
    parents = [x, weight]
    if bias is not None:
        bias = _lift(bias)
        if bias.data.shape != (o,):
            raise ValueError(f"conv2d bias shape {bias.data.shape}, expected ({o},)")
        out = out + bias.data[:, None, None]
        parents.append(bias)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(b * p, o)
        gw = (g2.T @ cols.reshape(b * p, k)).reshape(weight.data.shape)
        gcols = g2 @ wmat  # (B*P, K)
        gx = _col2im(gcols.reshape(b, p, k), (b, c, h, w), kh, kw, stride, pad, (oh, ow))
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _node(out, tuple(parents), backward, "conv2d")


def conv2d_transpose(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Var:
    """Transposed 2-D convolution; ``weight`` is ``(C, O, kh, kw)``."""
    x, weight = _lift(x), _lift(weight)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError("conv2d_transpose expects 4-D input and weight")
    b, c, h, w = x.data.shape
    cw, o, kh, kw = weight.data.shape
    if c != cw:
        raise ValueError(f"conv2d_transpose channel mismatch: input {c}, weight {cw}")
    oh = (h - 1) * stride - 2 * pad + kh
    ow = (w - 1) * stride - 2 * pad + kw
    if oh <= 0 or ow <= 0:
        raise ValueError(f"conv2d_transpose output would be empty for input {x.data.shape}")
    k = o * kh * kw
    wmat = weight.data.reshape(c, k)
    x2 = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(b * h * w, c)
    cols = (x2 @ wmat).reshape(b, h * w, k)
    out = _col2im(cols, (b, o, oh, ow), kh, kw, stride, pad, (h, w))
    parents = [x, weight]
    if bias is not None:
        bias = _lift(bias)
        if bias.data.shape != (o,):
            raise ValueError(f"conv2d_transpose bias shape {bias.data.shape}, expected ({o},)")
        out = out + bias.data[:, None, None]
        parents.append(bias)

    def backward(g):
        gcols, _, _ = _im2col(g, kh, kw, stride, pad)  # (B, H*W, K)
        gflat = gcols.reshape(b * h * w, k)
        gx2 = gflat @ wmat.T  # (B*H*W, C)
        gx = np.ascontiguousarray(gx2.reshape(b, h, w, c).transpose(0, 3, 1, 2))
        gw = (x2.T @ gflat).reshape(weight.data.shape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _node(out, tuple(parents), backward, "conv2d_transpose")


def max_pool2d(x, size: int = 2, stride: int | None = None) -> Var:
    """Max pooling over ``(B, C, H, W)`` windows of ``size`` x ``size``."""
    x = _lift(x)
    if x.data.ndim != 4:
        raise ValueError("max_pool2d expects 4-D input")
    stride = size if stride is None else stride
    b, c, h, w = x.data.shape
    oh = _conv_out_size(h, size, stride, 0)
    ow = _conv_out_size(w, size, stride, 0)
    if oh <= 0 or ow <= 0:
        raise ValueError(f"max_pool2d output would be empty for input {x.data.shape}")
    cols, _, _ = _im2col(x.data.reshape(b * c, 1, h, w), size, size, stride, 0)
    cols = cols.reshape(b * c, oh * ow, size * size)
    idx = cols.argmax(axis=2)
    out = np.take_along_axis(cols, idx[:, :, None], axis=2)[:, :, 0].reshape(b, c, oh, ow)

    def backward(g):
        gcols = np.zeros((b * c, oh * ow, size * size), dtype=np.float64)
        np.put_along_axis(gcols, idx[:, :, None], g.reshape(b * c, oh * ow, 1), axis=2)
        gx = _col2im(gcols, (b * c, 1, h, w), size, size, stride, 0, (oh, ow))
        return (gx.reshape(b, c, h, w),)

    return _node(out, (x,), backward, "max_pool2d")


# -- losses -------------------------------------------------------------------


def mse(a, b) -> Var:
    """Mean squared error over all elements."""
    d = sub(a, b)
    return reduce_mean(mul(d, d))


def l1(a, b) -> Var:
    """Mean absolute error over all elements."""
    return reduce_mean(absolute(sub(a, b)))


def bce_with_logits(logits, targets) -> Var:
    """Binary cross-entropy on sigmoid(logits), computed in stable form.

    Equals ``-mean(t*log(p) + (1-t)*log(1-p))`` with ``p = sigmoid(logits)``.
    """
    logits = _lift(logits)
    t = _as_array(targets.data if isinstance(targets, Var) else targets)
    return reduce_mean(sub(softplus(logits), mul(logits, t)))


# -- parameter plumbing and the finite-difference oracle ----------------------


def leaf_vars(params: Mapping[str, np.ndarray]) -> dict[str, Var]:
    """Wrap a named parameter set as graph leaves for one forward build."""
    return {k: Var(v, name=k) for k, v in params.items()}


def grads_of(leaves: Mapping[str, Var]) -> dict[str, np.ndarray]:
    """Gradients per leaf after backward; zeros for leaves the loss never used."""
    return {
        k: (v.grad if v.grad is not None else np.zeros_like(v.data))
        for k, v in leaves.items()
    }


def grad_check(
    loss_fn: Callable[[dict[str, Var]], Var],
    params: Mapping[str, np.ndarray],
    step: float = 1e-5,
) -> float:
    """Compare analytic gradients of ``loss_fn`` with central finite differences.

    ``loss_fn`` maps a dict of leaf Vars to a scalar Var.  Returns the max over
    all parameter entries of ``|analytic - numeric| / max(1e-12, |analytic| +
    |numeric|)``.  Only suitable for networks small enough to perturb
    exhaustively.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    leaves = leaf_vars(params)
    loss = loss_fn(leaves)
    if loss.data.size != 1:
        raise ValueError("loss_fn must return a scalar")
    loss.backward()
    analytic = grads_of(leaves)

    worst = 0.0
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    for name, arr in work.items():
        flat = arr.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            f_plus = loss_fn(leaf_vars(work)).item()
            flat[i] = keep - step
            f_minus = loss_fn(leaf_vars(work)).item()
            flat[i] = keep
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - numeric) / max(1e-12, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
