"""Dense arrays with define-by-run reverse-mode differentiation.

Operations on :class:`Tensor` objects are recorded on the innermost active
:class:`Tape` whenever at least one operand requires a gradient.  Calling
:func:`backward` on a scalar result walks the tape once, in reverse, and
returns a :class:`GradStore` keyed by the names of the leaf parameters.

There is deliberately no broadcasting: every binary operation demands equal
shapes, and the few places that need a row-wise combination use dedicated
operations (:func:`add_bias`, :func:`scale_rows`).
"""

from __future__ import annotations

import functools
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Tensor",
    "Tape",
    "GradStore",
    "ShapeError",
    "backward",
    "elementwise",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "tanh",
    "relu",
    "softplus",
    "gather_rows",
    "slice_rows",
    "lp_norm",
    "transposed_conv2d",
    "reshape",
    "total",
    "sum_squares",
    "mean",
    "sum_rows",
    "matmul",
    "add_bias",
    "scale_rows",
    "slice_cols",
    "concat_cols",
    "function",
]

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """A dense real array, optionally a named trainable leaf."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data)
        if arr.dtype.kind not in "f":
            arr = arr.astype(DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


@dataclass
class _Node:
    out: Tensor
    parents: tuple
    backward_fn: Callable[[np.ndarray], tuple]
    # row indices touched when the op is a row gather; lets optimizers stay sparse
    rows: Optional[np.ndarray] = None


class Tape:
    """Ordered record of operations; use as a context manager."""

    _local = threading.local()

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        stack = getattr(Tape._local, "stack", None)
        if stack is None:
            stack = Tape._local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    @staticmethod
    def current() -> Optional["Tape"]:
        stack = getattr(Tape._local, "stack", None)
        return stack[-1] if stack else None


class GradStore(dict):
    """Mapping of parameter name to gradient array.

    A missing name means the gradient is zero.  ``touched_rows`` holds, for
    parameters reached only through row gathers, the sorted unique row ids
    that received a contribution.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.touched_rows: dict[str, np.ndarray] = {}

    def get_or_zeros(self, name: str, shape) -> np.ndarray:
        g = self.get(name)
        return np.zeros(shape, dtype=DTYPE) if g is None else g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data: np.ndarray, parents: Sequence[Tensor], backward_fn, rows=None) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=needs)
    tape = Tape.current()
    if needs and tape is not None:
        tape.nodes.append(_Node(out, tuple(parents), backward_fn, rows))
    return out


def function(out_data, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Record a custom op.

    ``backward_fn`` maps the output gradient to one gradient per parent, each
    shaped like that parent.  Used for fused score functions whose
    hand-written gradients are much cheaper than the composed graph.
    """
    parents = tuple(_as_tensor(p) for p in parents)
    return _record(np.asarray(out_data), parents, backward_fn)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise


def elementwise(op: str, a, b) -> Tensor:
    """Apply ``add``, ``sub`` or ``mul`` to two equally shaped tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, op)
    if op == "add":
        return _record(a.data + b.data, (a, b), lambda g: (g, g))
    if op == "sub":
        return _record(a.data - b.data, (a, b), lambda g: (g, -g))
    if op == "mul":
        ad, bd = a.data, b.data
        return _record(ad * bd, (a, b), lambda g: (g * bd, g * ad))
    raise ValueError(f"unknown elementwise op {op!r}")


def add(a, b) -> Tensor:
    return elementwise("add", a, b)


def sub(a, b) -> Tensor:
    return elementwise("sub", a, b)


def mul(a, b) -> Tensor:
    return elementwise("mul", a, b)


def scale(a: Tensor, c: float) -> Tensor:
    return _record(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _record(a.data + c, (a,), lambda g: (g,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    # log(1 + e^x) without overflow
    y = np.logaddexp(0.0, x)

    def bw(g):
        return (g * _sigmoid(x),)

    return _record(y, (a,), bw)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------- indexing


def gather_rows(table: Tensor, ids) -> Tensor:
    """Select rows ``table[ids]``; the backward pass scatter-adds."""
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    n = table.shape[0]
    if ids.size:
        bad = ids[(ids < 0) | (ids >= n)]
        if bad.size:
            raise IndexError(f"gather_rows: row id {int(bad[0])} out of range for {n} rows")
    out = table.data[ids]
    shape = table.shape

    def bw(g):
        return (scatter_add_rows(shape, ids, g),)

    return _record(out, (table,), bw, rows=ids)


def scatter_add_rows(shape, ids: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Dense array of ``shape`` with ``g[i]`` added into row ``ids[i]``.

    Duplicates are summed in a fixed order (by position in ``ids``), so
    results are reproducible bit for bit.
    """
    n = ids.size
    if n == 0:
        return np.zeros(shape, dtype=g.dtype)
    if np.unique(ids).size == n:
        grad = np.zeros(shape, dtype=g.dtype)
        grad[ids] = g
        return grad
    # one-hot (rows x n) sparse product: much faster than ufunc.at
    onehot = sp.csr_matrix((np.ones(n, dtype=g.dtype), (ids, np.arange(n))), shape=(shape[0], n))
    flat = g.reshape(n, -1)
    return np.asarray(onehot @ flat).reshape(shape)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Rows ``start:stop`` along the first axis."""
    shape = a.shape

    def bw(g):
        grad = np.zeros(shape, dtype=g.dtype)
        grad[start:stop] = g
        return (grad,)

    return _record(a.data[start:stop], (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Columns ``start:stop`` of a 2-D tensor."""
    shape = a.shape

    def bw(g):
        grad = np.zeros(shape, dtype=g.dtype)
        grad[:, start:stop] = g
        return (grad,)

    return _record(a.data[:, start:stop], (a,), bw)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    widths = [p.shape[1] for p in parts]
    bounds = np.cumsum([0] + widths)

    def bw(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _record(np.concatenate([p.data for p in parts], axis=1), tuple(parts), bw)


# ---------------------------------------------------------------- reductions


def total(a: Tensor) -> Tensor:
    """Sum of all elements as a 0-d tensor."""
    shape = a.shape
    return _record(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, g, dtype=g.dtype),))


def sum_squares(a: Tensor) -> Tensor:
    """Sum of squared elements as a 0-d tensor."""
    ad = a.data
    return _record(np.asarray((ad * ad).sum()), (a,), lambda g: ((2 * g) * ad,))


def mean(a: Tensor) -> Tensor:
    n = a.size
    if n == 0:
        raise ShapeError("mean of an empty tensor")
    shape = a.shape
    return _record(np.asarray(a.data.sum() / n), (a,), lambda g: (np.full(shape, g / n, dtype=g.dtype),))


def sum_rows(a: Tensor) -> Tensor:
    """Sum over the last axis of a 2-D tensor, giving one value per row."""
    if a.data.ndim != 2:
        raise ShapeError(f"sum_rows expects 2-D input, got {a.shape}")
    d = a.shape[1]
    return _record(a.data.sum(axis=1), (a,), lambda g: (np.repeat(g[:, None], d, axis=1),))


def lp_norm(a: Tensor, p: int) -> Tensor:
    """Per-row L1 or L2 norm of a ``batch x dim`` tensor."""
    if p not in (1, 2):
        raise ValueError(f"lp_norm: unsupported p={p!r}; expected 1 or 2")
    if a.data.ndim != 2:
        raise ShapeError(f"lp_norm expects 2-D input, got {a.shape}")
    x = a.data
    if p == 1:
        return _record(np.abs(x).sum(axis=1), (a,), lambda g: (g[:, None] * np.sign(x),))
    norm = np.sqrt((x * x).sum(axis=1))

    def bw(g):
        # zero vector: subgradient 0 instead of NaN
        safe = np.where(norm > 0, norm, 1.0)
        coef = np.where(norm > 0, g / safe, 0.0)
        return (coef[:, None] * x,)

    return _record(norm, (a,), bw)


# ---------------------------------------------------------------- dense layers


def matmul(a: Tensor, w: Tensor) -> Tensor:
    if a.data.ndim != 2 or w.data.ndim != 2 or a.shape[1] != w.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {w.shape}")
    ad, wd = a.data, w.data
    return _record(ad @ wd, (a, w), lambda g: (g @ wd.T, ad.T @ g))


def add_bias(a: Tensor, bias: Tensor) -> Tensor:
    """Add a length-``dim`` vector to every row of ``a``."""
    if a.data.ndim != 2 or bias.shape != (a.shape[1],):
        raise ShapeError(f"add_bias: shapes {a.shape} and {bias.shape}")
    return _record(a.data + bias.data, (a, bias), lambda g: (g, g.sum(axis=0)))


def scale_rows(a: Tensor, s: Tensor) -> Tensor:
    """Multiply row ``i`` of ``a`` by the scalar ``s[i]``."""
    if a.data.ndim != 2 or s.shape != (a.shape[0],):
        raise ShapeError(f"scale_rows: shapes {a.shape} and {s.shape}")
    ad, sd = a.data, s.data
    return _record(ad * sd[:, None], (a, s), lambda g: (g * sd[:, None], (g * ad).sum(axis=1)))


# ---------------------------------------------------------------- transposed conv


def conv_transpose_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + kernel


@functools.lru_cache(maxsize=64)
def _scatter_map(cin: int, cout: int, size: int, kernel: int, stride: int, padding: int):
    """Enumerate every in-bounds term of the transposed-conv sum.

    Term ``j`` sends input element ``rows[j]`` (flat over ``C_in x I x I``)
    to output element ``cols[j]`` (flat over ``C_out x O x O``) weighted by
    kernel element ``widx[j]`` (flat over ``C_in x C_out x K x K``).
    """
    out = conv_transpose_size(size, kernel, stride, padding)
    ci, iy, ix, co, ky, kx = np.meshgrid(
        np.arange(cin), np.arange(size), np.arange(size), np.arange(cout), np.arange(kernel), np.arange(kernel),
        indexing="ij",
    )
    y = iy * stride - padding + ky
    x = ix * stride - padding + kx
    ok = (y >= 0) & (y < out) & (x >= 0) & (x < out)
    rows = ((ci * size + iy) * size + ix)[ok]
    cols = ((co * out + y) * out + x)[ok]
    widx = (((ci * cout + co) * kernel + ky) * kernel + kx)[ok]
    for a in (rows, cols, widx):
        a.setflags(write=False)
    return rows, cols, widx


def transposed_conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed 2-D convolution without bias.

    ``x`` is ``C_in x I x I`` or batched ``B x C_in x I x I``; ``kernels`` is
    ``C_in x C_out x K x K``.  Input pixel ``(iy, ix)`` is broadcast through
    the kernel into output ``(iy*stride - padding + ky, ix*stride - padding + kx)``;
    contributions falling outside the ``O x O`` output are dropped.

    The scatter terms are laid out once per geometry as a dense
    ``(C_in*I*I) x (C_out*O*O)`` operator, so a batch needs one matrix product.
    """
    batched = x.data.ndim == 4
    xd = x.data if batched else x.data[None]
    if xd.ndim != 4 or kernels.data.ndim != 4:
        raise ShapeError(f"transposed_conv2d: bad ranks {x.shape}, {kernels.shape}")
    B, cin, ih, iw = xd.shape
    kcin, cout, kh, kw = kernels.shape
    if kcin != cin:
        raise ShapeError(f"transposed_conv2d: input has {cin} channels, kernels expect {kcin}")
    if ih != iw or kh != kw:
        raise ShapeError("transposed_conv2d: only square inputs and kernels are supported")
    if stride < 1 or padding < 0:
        raise ValueError(f"transposed_conv2d: stride={stride}, padding={padding}")
    size = conv_transpose_size(ih, kh, stride, padding)
    if size <= 0:
        raise ValueError(
            f"transposed_conv2d: non-positive output size {size} for "
            f"I={ih}, K={kh}, stride={stride}, padding={padding}"
        )
    rows, cols, widx = _scatter_map(cin, cout, ih, kh, stride, padding)
    wd = kernels.data
    dtype = np.result_type(xd, wd)
    op = np.zeros((cin * ih * ih, cout * size * size), dtype=dtype)
    # (row, col) pairs are unique: ky, kx are fixed by the input/output positions
    op[rows, cols] = wd.reshape(-1)[widx]
    flat_x = xd.reshape(B, -1)
    out = (flat_x @ op).reshape(B, cout, size, size)
    if not batched:
        out = out[0]

    def bw(g):
        flat_g = g.reshape(B, -1)
        gx = (flat_g @ op.T).reshape(xd.shape)
        gop = flat_x.T @ flat_g
        gw = np.bincount(widx, weights=gop[rows, cols], minlength=wd.size).astype(dtype).reshape(wd.shape)
        return (gx if batched else gx[0], gw)

    return _record(out, (x, kernels), bw)


# ---------------------------------------------------------------- backward


def backward(loss: Tensor, tape: Tape) -> GradStore:
    """Gradients of a scalar ``loss`` with respect to every named leaf.

    The tape is not modified, so calling this twice gives identical results.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.data.dtype)}
    store = GradStore()
    dense_leaves: set[str] = set()
    row_sets: dict[str, list] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        pgrads = node.backward_fn(g)
        for parent, pg in zip(node.parents, pgrads):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
            if parent.name is not None:
                if node.rows is not None:
                    row_sets.setdefault(parent.name, []).append(node.rows)
                else:
                    dense_leaves.add(parent.name)
        # leaves are identified by name; collect as soon as no node can add more
    _collect_leaves(tape, grads, store)
    for name, parts in row_sets.items():
        if name in store and name not in dense_leaves:
            store.touched_rows[name] = np.unique(np.concatenate(parts))
    return store


def _collect_leaves(tape: Tape, grads: dict, store: GradStore) -> None:
    seen: set[int] = set()
    for node in tape.nodes:
        for parent in node.parents:
            if parent.name is None or id(parent) in seen:
                continue
            seen.add(id(parent))
            g = grads.get(id(parent))
            if g is not None:
                store[parent.name] = g
