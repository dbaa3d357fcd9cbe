"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation returns a new :class:`Tensor` that remembers its
operands and a backward rule.  Calling :func:`backward` on a scalar loss builds a
:class:`Tape` (the operations reachable from the loss, in topological order) and
replays it in reverse, accumulating gradients into the leaves.

Broadcasting is restricted to leading axes: the shorter shape must equal the
trailing suffix of the longer one.  Model code reshapes explicitly otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operand shapes do not conform for an operation."""


def _shape_error(op: str, *shapes) -> ShapeError:
    joined = " and ".join(str(tuple(s)) for s in shapes)
    return ShapeError(f"{op}: incompatible shapes {joined}")


class Tensor:
    """An n-dimensional array that can take part in a differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")
    # make ndarray <op> Tensor dispatch to the reflected Tensor method
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype, copy=True)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties ---------------------------------------------------
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

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out.name = self.name
        out.op = "leaf"
        out._parents = ()
        out._backward = None
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{label})"

    # -- operator sugar -----------------------------------------------------
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def abs(self):
        return tabs(self)


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    """Wrap ``value`` as a constant tensor, matching the dtype of ``like``."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = as_tensor(a, b)
    if not isinstance(b, Tensor):
        b = as_tensor(b, a)
    return a, b


def _check_leading(op: str, sa: tuple, sb: tuple) -> None:
    if sa == sb or len(sa) == 0 or len(sb) == 0:
        return
    short, long = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if long[len(long) - len(short):] != short:
        raise _shape_error(op, sa, sb)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    return g.reshape(shape)


# -- elementwise binary ops ------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_leading("add", a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_leading("sub", a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_leading("mul", a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_leading("div", a.shape, b.shape)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return Tensor._result(out, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


# -- elementwise unary ops -------------------------------------------------
def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return Tensor._result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor._result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    out = np.where(pos, a.data, 0).astype(a.dtype, copy=False)
    return Tensor._result(out, (a,), lambda g: (g * pos,), "relu")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,), "exp")


def tabs(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return Tensor._result(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def custom_unary(
    x: Tensor,
    forward_fn: Callable[[np.ndarray], np.ndarray],
    grad_fn: Callable[[np.ndarray], np.ndarray],
    op: str = "custom",
) -> Tensor:
    """Elementwise map whose derivative is supplied instead of derived.

    ``forward_fn`` and ``grad_fn`` receive the raw input array and must act
    elementwise.  During backward the incoming gradient is multiplied by
    ``grad_fn(x)``, whatever the true derivative of ``forward_fn`` is.
    """
    xd = x.data
    out = np.asarray(forward_fn(xd), dtype=xd.dtype)
    if out.shape != xd.shape:
        out = np.broadcast_to(out, xd.shape).copy()

    def backward(g):
        local = np.asarray(grad_fn(xd), dtype=xd.dtype)
        return (g * local,)

    return Tensor._result(out, (x,), backward, op)


# -- shape ops ---------------------------------------------------------------
def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise _shape_error("reshape", a.shape, shape) from exc
    return Tensor._result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise _shape_error("transpose", a.shape, axes)
    inv = tuple(np.argsort(axes))
    return Tensor._result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swap_last(a: Tensor) -> Tensor:
    """Transpose the trailing two axes."""
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat: empty input")
    ref = tensors[0]
    nd = ref.ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != ref.shape[i] for i in range(nd) if i != ax):
            raise _shape_error(f"concat(axis={axis})", ref.shape, t.shape)
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)

    def backward(g):
        return tuple(np.split(g, cuts, axis=ax))

    return Tensor._result(out, tensors, backward, "concat")


def take(a: Tensor, index) -> Tensor:
    """Basic or advanced indexing; the gradient scatters back into ``a``."""
    out = a.data[index]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out, dtype=a.dtype)
    else:
        out = out.copy()

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._result(out, (a,), backward, "take")


# -- reductions --------------------------------------------------------------
def _norm_axes(axis, ndim: int):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out = np.asarray(a.data.sum(axis=axes, keepdims=keepdims), dtype=a.dtype)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._result(out, (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return tsum(a, axis, keepdims) * (1.0 / count)


# -- linear algebra ----------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise _shape_error("matmul", a.shape, b.shape)
    _check_leading("matmul", a.shape[:-2], b.shape[:-2])

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._result(a.data @ b.data, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the trailing axis: ``x @ weight + bias``."""
    if x.shape[-1] != weight.shape[0]:
        raise _shape_error("linear", x.shape, weight.shape)
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding="same") -> Tensor:
    """Stride-1 2-D cross-correlation, channels first.

    ``x`` is (C, H, W) or (B, C, H, W); ``weight`` is (O, C, kh, kw).  With
    ``padding="same"`` kernels must have odd extents and the spatial size is kept.
    """
    unbatched = x.ndim == 3
    if x.ndim not in (3, 4) or weight.ndim != 4 or x.shape[-3] != weight.shape[1]:
        raise _shape_error("conv2d", x.shape, weight.shape)
    o, c, kh, kw = weight.shape
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"conv2d: 'same' padding needs odd kernel, got {(kh, kw)}")
        ph, pw = kh // 2, kw // 2
    else:
        ph, pw = (padding, padding) if isinstance(padding, int) else tuple(padding)
    xd = x.data[None] if unbatched else x.data
    bsz, _, h, w = xd.shape
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    ho, wo = xp.shape[2] - kh + 1, xp.shape[3] - kw + 1
    if ho < 1 or wo < 1:
        raise _shape_error("conv2d", x.shape, weight.shape)
    patches = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    out = np.einsum("bchwij,ocij->bohw", patches, weight.data, optimize=True)
    if bias is not None:
        if bias.shape != (o,):
            raise _shape_error("conv2d bias", bias.shape, (o,))
        out = out + bias.data[None, :, None, None]
    out = out.astype(xd.dtype, copy=False)

    def backward(g):
        g4 = g[None] if unbatched else g
        gw = np.einsum("bchwij,bohw->ocij", patches, g4, optimize=True)
        gpatch = np.einsum("bohw,ocij->bchwij", g4, weight.data, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + ho, j:j + wo] += gpatch[..., i, j]
        gx = gxp[:, :, ph:ph + h, pw:pw + w]
        if unbatched:
            gx = gx[0]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g4.sum(axis=(0, 2, 3)))
        return tuple(grads)

    if unbatched:
        out = out[0]
    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, backward, "conv2d")


# -- tape and backward -------------------------------------------------------
@dataclass(frozen=True)
class TapeEntry:
    op: str
    operand_ids: tuple[int, ...]
    result_id: int


class Tape:
    """Operations reachable from a result, recorded in topological order."""

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes = _topo_order(root)

    @property
    def entries(self) -> list[TapeEntry]:
        return [
            TapeEntry(t.op, tuple(id(p) for p in t._parents), id(t))
            for t in self.nodes
            if not t.is_leaf
        ]

    def leaves(self) -> list[Tensor]:
        return [t for t in self.nodes if t.is_leaf and t.requires_grad]

    def backward(self, seed: np.ndarray | None = None) -> dict[int, np.ndarray]:
        root = self.root
        grads: dict[int, np.ndarray] = {
            id(root): np.ones_like(root.data) if seed is None else np.asarray(seed, dtype=root.dtype)
        }
        leaf_grads: dict[int, np.ndarray] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                    leaf_grads[id(node)] = node.grad
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        return leaf_grads


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    return Tape(loss).backward()


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# -- verification harness ----------------------------------------------------
def finite_diff_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    The error at each coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    x = np.array(x, dtype=np.float64)
    leaf = Tensor(x, requires_grad=True)
    out = f(leaf)
    backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x)
    worst = 0.0
    probe = x.copy()
    for idx in np.ndindex(x.shape):
        orig = probe[idx]
        probe[idx] = orig + h
        fp = f(Tensor(probe)).item()
        probe[idx] = orig - h
        fm = f(Tensor(probe)).item()
        probe[idx] = orig
        numeric = (fp - fm) / (2 * h)
        if not (np.isfinite(fp) and np.isfinite(fm) and np.isfinite(analytic[idx])):
            raise FloatingPointError(f"finite_diff_check: non-finite value at coordinate {idx}")
        err = abs(analytic[idx] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return float(worst)


def param_grad_check(
    loss_fn: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-6
) -> dict[str, float]:
    """Per-parameter version of :func:`finite_diff_check` for in-place leaves.

    ``loss_fn`` rebuilds the graph from the current parameter values on every call.
    """
    zero_grad(params.values())
    backward(loss_fn())
    report = {}
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = 0.0
        for idx in np.ndindex(p.shape):
            orig = p.data[idx]
            p.data[idx] = orig + h
            fp = loss_fn().item()
            p.data[idx] = orig - h
            fm = loss_fn().item()
            p.data[idx] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"param_grad_check: non-finite loss at {name}{list(idx)}")
            numeric = (fp - fm) / (2 * h)
            worst = max(worst, abs(analytic[idx] - numeric) / max(1.0, abs(numeric)))
        report[name] = float(worst)
    zero_grad(params.values())
    return report
