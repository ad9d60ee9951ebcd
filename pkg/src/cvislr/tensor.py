"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation evaluates eagerly on contiguous row-major numpy arrays and,
when an input is tracked, records an ``OpNode`` carrying the parent tensors
and a closed-form backward rule.  ``backward(loss)`` replays the recorded
graph in reverse topological order and populates ``.grad`` on every reachable
tensor that requires gradients.

Tensors are never mutated in place once they participate in a graph; each op
returns a fresh tensor.  Graphs are single-use: a second ``backward`` from the
same loss raises.
"""

from __future__ import annotations

import math
import struct
from typing import BinaryIO, Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, FormatError, NumericError, ShapeError

_INV_SQRT_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class OpNode:
    """One recorded primitive: parent tensors plus the backward rule.

    ``backward(grad)`` maps the output gradient to one gradient (or ``None``)
    per parent, in parent order.
    """

    __slots__ = ("op", "parents", "backward", "released")

    def __init__(self, op: str, parents: tuple["Tensor", ...],
                 backward: Callable[[np.ndarray], tuple]):
        self.op = op
        self.parents = parents
        self.backward = backward
        self.released = False

    def __repr__(self) -> str:
        return f"OpNode({self.op}, parents={len(self.parents)})"


class Tensor:
    """Contiguous row-major float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        # note: np.asarray(order="C") keeps 0-d inputs 0-d, unlike
        # np.ascontiguousarray which forces ndim >= 1
        arr = np.asarray(data, dtype=np.float64, order="C")
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        if any(e < 1 for e in arr.shape):
            raise ShapeError(f"tensor extents must all be >= 1, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: OpNode | None = None

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
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise ShapeError("tensor/tensor division is not provided; divide by a scalar")
        return mul(self, 1.0 / float(scalar))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def permute(self, *axes) -> "Tensor":
        return permute(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> dict["Tensor", np.ndarray]:
        return backward(self)


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t.node is not None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, op: str, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(_tracked(p) for p in parents):
        out.requires_grad = True
        out.node = OpNode(op, parents, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# graph traversal


class GradTape:
    """Topologically ordered list of the op nodes reaching a root tensor.

    Invariant: every node's parents appear earlier in ``nodes`` (leaves carry
    no node and are omitted).
    """

    __slots__ = ("nodes", "_order")

    def __init__(self, nodes: list[OpNode], order: list[Tensor]):
        self.nodes = nodes
        self._order = order

    @classmethod
    def trace(cls, root: Tensor) -> "GradTape":
        order: list[Tensor] = []
        state: dict[int, int] = {}  # 0 unseen / 1 expanded / 2 emitted
        stack = [root]
        while stack:
            t = stack[-1]
            st = state.get(id(t), 0)
            if st == 0:
                state[id(t)] = 1
                if t.node is not None:
                    for p in t.node.parents:
                        if state.get(id(p), 0) == 0 and _tracked(p):
                            stack.append(p)
            else:
                stack.pop()
                if st == 1:
                    state[id(t)] = 2
                    order.append(t)
        nodes = [t.node for t in order if t.node is not None]
        return cls(nodes, order)


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep from a scalar loss.

    Returns a map from every reached ``requires_grad`` tensor to its gradient
    and mirrors it onto ``.grad``.  The graph is consumed: calling again from
    the same loss raises.
    """
    if loss.data.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        raise ContractError("loss is not connected to a tape (leaf tensor, or "
                            "backward was already called on this graph)")
    if loss.node.released:
        raise ContractError("backward was already called on this graph")

    tape = GradTape.trace(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    out: dict[Tensor, np.ndarray] = {}
    for t in reversed(tape._order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.requires_grad:
            t.grad = g
            out[t] = g
        node = t.node
        if node is None:
            continue
        for p, pg in zip(node.parents, node.backward(g)):
            if pg is None or not _tracked(p):
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        node.released = True
    return out


# ---------------------------------------------------------------------------
# primitive operations


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(data, "add", (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(data, "sub", (a, b), bwd)


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)) and not isinstance(b, bool):
        a = _as_tensor(a)
        s = float(b)

        def bwd_scalar(g):
            return (g * s,)

        return _result(a.data * s, "mul_scalar", (a,), bwd_scalar)
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _result(data, "mul", (a, b), bwd)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        return (-g,)

    return _result(-a.data, "neg", (a,), bwd)


def matmul(a, b) -> Tensor:
    """Batched matrix product a[..., m, k] @ b[..., k, n].

    Leading batch dims broadcast; both operands must be at least rank 2.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} x {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as e:  # non-broadcastable batch dims
        raise ShapeError(f"matmul batch dims incompatible: {a.shape} x {b.shape}") from e
    ad, bd = a.data, b.data

    def bwd(g):
        ga = np.matmul(g, bd.swapaxes(-1, -2))
        gb = np.matmul(ad.swapaxes(-1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(data, "matmul", (a, b), bwd)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    orig = x.shape

    def bwd(g):
        return (np.ascontiguousarray(g).reshape(orig),)

    return _result(x.data.reshape(shape), "reshape", (x,), bwd)


def permute(x, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute axes {axes} are not a permutation of rank {x.ndim}")
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _result(np.ascontiguousarray(x.data.transpose(axes)), "permute", (x,), bwd)


def roll(x, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    """Toroidal roll along the given axes (positive shift moves content forward)."""
    x = _as_tensor(x)
    shifts = tuple(int(s) for s in shifts)
    axes = tuple(int(a) for a in axes)
    neg_shifts = tuple(-s for s in shifts)

    def bwd(g):
        return (np.roll(g, neg_shifts, axes),)

    return _result(np.roll(x.data, shifts, axes), "roll", (x,), bwd)


def pad_end(x, widths: Sequence[int]) -> Tensor:
    """Zero-pad each axis at its high end by ``widths[axis]``."""
    x = _as_tensor(x)
    widths = tuple(int(w) for w in widths)
    if len(widths) != x.ndim:
        raise ShapeError(f"pad widths {widths} do not match rank {x.ndim}")
    region = tuple(slice(0, s) for s in x.shape)

    def bwd(g):
        return (np.ascontiguousarray(g[region]),)

    return _result(np.pad(x.data, [(0, w) for w in widths]), "pad_end", (x,), bwd)


def crop(x, extents: Sequence[int]) -> Tensor:
    """Keep the leading ``extents[axis]`` entries of each axis."""
    x = _as_tensor(x)
    extents = tuple(int(e) for e in extents)
    if len(extents) != x.ndim or any(e > s or e < 1 for e, s in zip(extents, x.shape)):
        raise ShapeError(f"cannot crop {x.shape} to {extents}")
    region = tuple(slice(0, e) for e in extents)
    orig = x.shape

    def bwd(g):
        full = np.zeros(orig, dtype=np.float64)
        full[region] = g
        return (full,)

    return _result(x.data[region], "crop", (x,), bwd)


def softmax(x, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along ``axis``.

    ``-inf`` entries are legal (additive attention masks) and produce exact
    zeros; NaN or ``+inf`` raise.  Slices along ``axis`` sum to 1.
    """
    x = _as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for rank {x.ndim}")
    arr = x.data
    if np.isnan(arr).any() or np.isposinf(arr).any():
        raise NumericError("softmax input contains NaN or +inf")
    amax = np.max(arr, axis=axis, keepdims=True)
    if np.isneginf(amax).any():
        raise NumericError("softmax slice is entirely -inf")
    e = np.exp(arr - amax)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _result(y, "softmax", (x,), bwd)


def log_softmax(x, axis: int = -1) -> Tensor:
    """log(softmax(x)) via the log-sum-exp identity."""
    x = _as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"log_softmax axis {axis} out of range for rank {x.ndim}")
    arr = x.data
    if np.isnan(arr).any() or np.isposinf(arr).any():
        raise NumericError("log_softmax input contains NaN or +inf")
    amax = np.max(arr, axis=axis, keepdims=True)
    shifted = arr - amax
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result(out, "log_softmax", (x,), bwd)


def gelu(x) -> Tensor:
    """Exact Gaussian-CDF gelu: x * Phi(x) (erf form, not the tanh fit)."""
    x = _as_tensor(x)
    arr = x.data
    cdf = 0.5 * (1.0 + erf(arr * _INV_SQRT_2))

    def bwd(g):
        pdf = np.exp(-0.5 * arr * arr) * _INV_SQRT_2PI
        return (g * (cdf + arr * pdf),)

    return _result(arr * cdf, "gelu", (x,), bwd)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    c = x.shape[-1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise ShapeError(f"layer_norm gain/bias must have shape ({c},), got "
                         f"{gain.shape} and {bias.shape}")
    arr = x.data
    mu = arr.mean(axis=-1, keepdims=True)
    xc = arr - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    gd = gain.data
    lead = tuple(range(arr.ndim - 1))

    def bwd(g):
        dxhat = g * gd
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        dgain = (g * xhat).sum(axis=lead) if lead else g * xhat
        dbias = g.sum(axis=lead) if lead else g.copy()
        return dx, dgain, dbias

    return _result(out, "layer_norm", (x, gain, bias), bwd)


def tensor_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    if axis is not None and not isinstance(axis, tuple):
        axis = (int(axis),)
    shape = x.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).astype(np.float64, copy=True),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).astype(np.float64, copy=True),)

    return _result(x.data.sum(axis=axis, keepdims=keepdims), "sum", (x,), bwd)


def tensor_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    if axis is not None and not isinstance(axis, tuple):
        axis = (int(axis),)
    shape = x.shape
    if axis is None:
        count = x.size
    else:
        count = math.prod(shape[a] for a in axis)

    def bwd(g):
        if axis is None:
            gg = g
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).astype(np.float64, copy=True) / count,)

    return _result(x.data.mean(axis=axis, keepdims=keepdims), "mean", (x,), bwd)


def take_rows(table, index) -> Tensor:
    """Row lookup into a 2-D table; ``index`` is any integer array.

    Output shape is ``index.shape + (columns,)``.  Gradients scatter-add back
    into the table, so repeated indices accumulate.
    """
    table = _as_tensor(table)
    if table.ndim != 2:
        raise ShapeError(f"take_rows needs a 2-D table, got {table.shape}")
    idx = np.asarray(index, dtype=np.int64)
    rows, cols = table.shape
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        raise ContractError(f"take_rows index outside [0, {rows})")
    flat = idx.ravel()

    def bwd(g):
        grad = np.zeros((rows, cols), dtype=np.float64)
        np.add.at(grad, flat, g.reshape(-1, cols))
        return (grad,)

    return _result(table.data[idx], "take_rows", (table,), bwd)


def index_first(x, i: int) -> Tensor:
    """Select slice ``x[i]`` along the first axis (static index)."""
    x = _as_tensor(x)
    if x.ndim < 1:
        raise ShapeError("index_first needs rank >= 1")
    n = x.shape[0]
    i = int(i)
    if not 0 <= i < n:
        raise ContractError(f"index_first index {i} outside [0, {n})")
    shape = x.shape

    def bwd(g):
        grad = np.zeros(shape, dtype=np.float64)
        grad[i] = g
        return (grad,)

    return _result(x.data[i].copy(), "index_first", (x,), bwd)


def pick(x, index) -> Tensor:
    """Per-row selection x[i, index[i]] from a 2-D tensor."""
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"pick needs a 2-D tensor, got {x.shape}")
    n, k = x.shape
    idx = np.asarray(index, dtype=np.int64)
    if idx.shape != (n,):
        raise ShapeError(f"pick index must have shape ({n},), got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= k):
        raise ContractError(f"pick index outside [0, {k})")
    rows = np.arange(n)

    def bwd(g):
        grad = np.zeros((n, k), dtype=np.float64)
        grad[rows, idx] = g
        return (grad,)

    return _result(x.data[rows, idx], "pick", (x,), bwd)


# ---------------------------------------------------------------------------
# TNSR serialization: magic, u32 rank, rank x u64 extents, f32 payload.

_TNSR_MAGIC = b"TNSR"


def write_tensor(f: str | BinaryIO, tensor) -> None:
    """Write a tensor (or ndarray) to the TNSR binary format (f32 payload)."""
    arr = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor, dtype=np.float64)
    if any(e < 1 for e in arr.shape):
        raise ShapeError(f"cannot serialize tensor with extents {arr.shape}")
    if isinstance(f, str):
        with open(f, "wb") as fh:
            write_tensor(fh, arr)
        return
    f.write(_TNSR_MAGIC)
    f.write(struct.pack("<I", arr.ndim))
    for e in arr.shape:
        f.write(struct.pack("<Q", e))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor(f: str | BinaryIO) -> Tensor:
    """Read a TNSR file back as a float64 tensor (payload widened from f32)."""
    if isinstance(f, str):
        with open(f, "rb") as fh:
            return read_tensor(fh)
    head = f.read(4)
    if head != _TNSR_MAGIC:
        raise FormatError(f"bad tensor magic {head!r}, expected {_TNSR_MAGIC!r}")
    raw = f.read(4)
    if len(raw) != 4:
        raise FormatError("truncated tensor header (rank)")
    (rank,) = struct.unpack("<I", raw)
    if rank > 16:
        raise FormatError(f"implausible tensor rank {rank}")
    raw = f.read(8 * rank)
    if len(raw) != 8 * rank:
        raise FormatError("truncated tensor header (extents)")
    shape = struct.unpack(f"<{rank}Q", raw) if rank else ()
    if any(e < 1 for e in shape):
        raise FormatError(f"tensor extents must all be >= 1, got {shape}")
    count = math.prod(shape)
    raw = f.read(4 * count)
    if len(raw) != 4 * count:
        raise FormatError(f"truncated tensor payload: expected {count} f32 values")
    data = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
    return Tensor(data)
