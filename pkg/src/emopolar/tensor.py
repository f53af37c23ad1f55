"""Dense float64 tensors with tape-based reverse-mode autodiff.

Ops record themselves on the innermost active :class:`Graph` (a per-thread
stack managed by ``with Graph() as g:``). Outside any graph nothing is
recorded, which is how inference runs.

Broadcasting is deliberately narrow: a second operand may only broadcast
over *leading* axes (bias-add over rows), and constants (plain arrays that
never receive gradients) may broadcast freely.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import special

DTYPE = np.float64


class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class GraphContractError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.ascontiguousarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.name = name
        self.grad = np.zeros_like(self.data) if requires_grad else None

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return sum_(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


@dataclass
class Graph:
    """Tape of op records in creation (hence topological) order."""

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Graph":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def backward(self, root: Tensor) -> None:
        backward(self, root)


class _Local(threading.local):
    def __init__(self):
        self.stack: list[Graph] = []


_local = _Local()


def _stack() -> list[Graph]:
    return _local.stack


def active_graph() -> Graph | None:
    s = _local.stack
    return s[-1] if s else None


class no_grad:
    """Suspend recording even inside an active graph."""

    def __enter__(self):
        s = _stack()
        self._saved = list(s)
        s.clear()

    def __exit__(self, *exc):
        _stack().extend(self._saved)


def _make(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], bw) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    stack = _local.stack
    if stack and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        stack[-1].nodes.append(Node(op, inputs, out, bw))
    else:
        out.requires_grad = False
    return out


def backward(graph: Graph, root: Tensor) -> None:
    """Populate ``.grad`` on every leaf that ``root`` depends on.

    Leaf gradients accumulate across calls; intermediate gradients live only
    for the duration of the sweep.
    """
    if root.size != 1:
        raise GraphContractError(f"backward needs a scalar root, got shape {root.shape}")
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    produced = {id(n.output) for n in graph.nodes}
    leaves: dict[int, Tensor] = {}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in produced:
                leaves[key] = t
    for key, t in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _reduce_leading(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    g = _reduce_leading(g, shape)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_trailing(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.data.shape, b.data.shape
    if sa == sb or (len(sb) <= len(sa) and sa[len(sa) - len(sb):] == sb):
        return
    raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}")


# --- elementwise -----------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=DTYPE)
        shape = a.shape
        return _make("add_const", a.data + c, (a,), lambda g: (_unbroadcast(g, shape),))
    _check_trailing(a, b, "add")
    shape_b = b.shape
    return _make("add", a.data + b.data, (a, b), lambda g: (g, _reduce_leading(g, shape_b)))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -np.asarray(b, dtype=DTYPE))
    _check_trailing(a, b, "sub")
    shape_b = b.shape
    return _make("sub", a.data - b.data, (a, b), lambda g: (g, -_reduce_leading(g, shape_b)))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=DTYPE)
        out = a.data * c

        shape = a.shape

        def bw(g):
            return (_unbroadcast(g * c, shape),)

        return _make("mul_const", out, (a,), bw)
    _check_trailing(a, b, "mul")
    ad, bd = a.data, b.data
    shape_b = b.shape
    return _make("mul", ad * bd, (a, b), lambda g: (g * bd, _reduce_leading(g * ad, shape_b)))


def sigmoid(x: Tensor) -> Tensor:
    s = special.expit(x.data)
    return _make("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    xd = x.data
    cdf = 0.5 * (1.0 + special.erf(xd / np.sqrt(2.0)))

    def bw(g):
        pdf = np.exp(-0.5 * xd * xd) / np.sqrt(2.0 * np.pi)
        return (g * (cdf + xd * pdf),)

    return _make("gelu", xd * cdf, (x,), bw)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(DTYPE) / (1.0 - rate)
    return mul(x, keep)


# --- shape -----------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _make("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(sorted(range(len(axes)), key=axes.__getitem__))
    return _make("transpose", x.data.transpose(axes), (x,),
                 lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _make("concat", data, tuple(tensors),
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def sum_(x: Tensor, axis=None) -> Tensor:
    shape = x.shape
    out = x.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make("sum", np.asarray(out, dtype=DTYPE), (x,), bw)


def mean(x: Tensor) -> Tensor:
    return mul(sum_(x), 1.0 / x.size)


# --- linear algebra --------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[..., m, k] @ b[k, n]`` or batched ``a[..., m, k] @ b[..., k, n]``."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {ad.shape} x {bd.shape}")
    if bd.ndim > 2 and bd.shape[:-2] != ad.shape[:-2]:
        raise DimensionError(f"matmul batch dimensions differ: {ad.shape} x {bd.shape}")
    out = ad @ bd
    if bd.ndim == 2 and ad.ndim > 2:

        def bw(g):
            g2 = g.reshape(-1, g.shape[-1])
            return g @ bd.T, ad.reshape(-1, ad.shape[-1]).T @ g2
    else:

        def bw(g):
            return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _make("matmul", out, (a, b), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    if np.isnan(xd).any():
        raise NumericError("softmax received NaN input")
    z = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make("softmax", s, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs last dim {d}")
    xd = x.data
    xc = xd - np.add.reduce(xd, axis=-1, keepdims=True) / d
    var = np.add.reduce(xc * xc, axis=-1, keepdims=True) / d
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def bw(g):
        dxhat = g * gd
        dx = inv * (dxhat - np.add.reduce(dxhat, axis=-1, keepdims=True) / d
                    - xhat * (np.add.reduce(dxhat * xhat, axis=-1, keepdims=True) / d))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make("layer_norm", xhat * gd + bias.data, (x, gain, bias), bw)


def embed(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``; output shape is ``ids.shape + (d,)``."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = ids[(ids < 0) | (ids >= vocab)].reshape(-1)[0]
        raise IndexError(f"token id {bad} out of range for table of size {vocab}")

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _make("embed", table.data[ids], (table,), bw)


def bce_loss(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy on raw logits (stable form)."""
    y = np.asarray(targets, dtype=DTYPE)
    if y.shape != logits.shape:
        y = y.reshape(logits.shape)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("bce targets must be 0 or 1")
    z = logits.data
    per = np.logaddexp(0.0, -np.abs(z)) + np.maximum(z, 0.0) - z * y
    n = z.size
    s = special.expit(z)
    return _make("bce_loss", np.asarray(per.mean()), (logits,), lambda g: (g * (s - y) / n,))


# --- verification ----------------------------------------------------------

def relative_error(analytic, numeric) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, 1e-8)``, elementwise."""
    a, n = np.abs(analytic), np.abs(numeric)
    return np.abs(np.asarray(analytic) - numeric) / np.maximum(np.maximum(a, n), 1e-8)


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-4) -> float:
    """Max elementwise relative error between analytic and central-difference grads.

    ``f`` must rebuild the scalar output from ``params`` on every call.
    """
    for p in params:
        p.zero_grad()
    with Graph() as g:
        out = f()
    backward(g, out)
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        if not np.shares_memory(flat, p.data):
            raise GraphContractError(f"grad_check needs contiguous parameter data ({p.name})")
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * h)
        if flat.size:
            worst = max(worst, float(relative_error(p.grad.reshape(-1), numeric).max()))
    return worst


# --- checkpoint I/O --------------------------------------------------------

MAGIC = b"PATN"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors: Mapping[str, Tensor | np.ndarray]) -> None:
    """Little-endian: magic, u32 version, u32 count, then per tensor
    u32 name length, UTF-8 name, u32 rank, u64 dims, float64 payload."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(tensors)))
        for name, t in tensors.items():
            arr = np.asarray(t.data if isinstance(t, Tensor) else t, dtype="<f8", order="C")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            size = int(np.prod(dims, dtype=np.int64))
            arr = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(dims)
            pos += 8 * size
            out[name] = arr.astype(DTYPE)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint") from exc
    return out


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.isfinite(p.data).all() for p in params)
