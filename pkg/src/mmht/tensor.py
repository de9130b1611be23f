"""Dense float64 tensors with tape-based reverse-mode autodiff.

Every differentiable value is a `Tensor` wrapping a numpy float64 array.
Operations record their inputs and a backward rule on the tensor itself;
`Tensor.backward()` walks the tape once in reverse topological order.
Tensors created without `requires_grad` (and not derived from any that
have it) carry no tape links, so constants are free.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation, NumericFault

DTYPE = np.float64

# Additive mask value for padded attention logits. Large enough that
# exp(x - max) underflows to exactly 0.0 in float64.
NEG_INF = -1e30


def _asarray(x):
    return np.asarray(x, dtype=DTYPE)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "parents", "_backward")

    # Make numpy defer mixed expressions (ndarray op Tensor) to our
    # reflected operators instead of building object arrays.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, op="leaf", parents=(), backward=None):
        self.data = _asarray(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = op
        self.parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _lift(x):
        return x if isinstance(x, Tensor) else Tensor(x)

    @staticmethod
    def _make(data, parents, op, backward):
        req = any(p.requires_grad for p in parents)
        if not req:
            return Tensor(data, op=op)
        return Tensor(data, requires_grad=True, op=op, parents=tuple(parents), backward=backward)

    # -- introspection --------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    # -- autodiff -------------------------------------------------------------

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        self.grad = g if self.grad is None else self.grad + g

    def backward(self):
        """Reverse pass seeded with d(self)/d(self) = 1. Scalar outputs only."""
        if self.data.size != 1:
            raise ContractViolation(f"backward() requires a scalar, got shape {self.shape}")
        if not np.isfinite(self.data).all():
            raise NumericFault(f"non-finite loss value in node {self.op!r}", node=self.op)
        topo = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None:
                continue
            if node.grad is None:
                continue
            if not np.isfinite(node.grad).all():
                raise NumericFault(f"non-finite gradient in node {node.op!r}", node=node.op)
            node._backward(node.grad)

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = Tensor._lift(other)
        out_data = self.data + other.data

        def bwd(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))

        return Tensor._make(out_data, (self, other), "add", bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g):
            self._accumulate(-g)

        return Tensor._make(-self.data, (self,), "neg", bwd)

    def __sub__(self, other):
        other = Tensor._lift(other)
        out_data = self.data - other.data

        def bwd(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(-g, other.shape))

        return Tensor._make(out_data, (self, other), "sub", bwd)

    def __rsub__(self, other):
        return Tensor._lift(other) - self

    def __mul__(self, other):
        other = Tensor._lift(other)
        out_data = self.data * other.data

        def bwd(g):
            self._accumulate(_unbroadcast(g * other.data, self.shape))
            other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor._make(out_data, (self, other), "mul", bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other)
        out_data = self.data / other.data

        def bwd(g):
            self._accumulate(_unbroadcast(g / other.data, self.shape))
            other._accumulate(_unbroadcast(-g * self.data / (other.data * other.data), other.shape))

        return Tensor._make(out_data, (self, other), "div", bwd)

    def __rtruediv__(self, other):
        return Tensor._lift(other) / self

    def __matmul__(self, other):
        other = Tensor._lift(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ContractViolation("matmul operands must have ndim >= 2")
        out_data = self.data @ other.data

        def bwd(g):
            ga = g @ np.swapaxes(other.data, -1, -2)
            gb = np.swapaxes(self.data, -1, -2) @ g
            self._accumulate(_unbroadcast(ga, self.shape))
            other._accumulate(_unbroadcast(gb, other.shape))

        return Tensor._make(out_data, (self, other), "matmul", bwd)

    def __pow__(self, p):
        p = float(p)
        out_data = self.data**p

        def bwd(g):
            self._accumulate(g * p * self.data ** (p - 1))

        return Tensor._make(out_data, (self,), f"pow{p}", bwd)

    # -- pointwise functions ---------------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def bwd(g):
            self._accumulate(g * out_data)

        return Tensor._make(out_data, (self,), "exp", bwd)

    def log(self):
        def bwd(g):
            self._accumulate(g / self.data)

        return Tensor._make(np.log(self.data), (self,), "log", bwd)

    def tanh(self):
        out_data = np.tanh(self.data)

        def bwd(g):
            self._accumulate(g * (1.0 - out_data * out_data))

        return Tensor._make(out_data, (self,), "tanh", bwd)

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def bwd(g):
            self._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._make(out_data, (self,), "sigmoid", bwd)

    def leaky_relu(self, slope=0.01):
        mask = np.where(self.data > 0, 1.0, slope)
        out_data = self.data * mask

        def bwd(g):
            self._accumulate(g * mask)

        return Tensor._make(out_data, (self,), "leaky_relu", bwd)

    def relu(self):
        mask = (self.data > 0).astype(DTYPE)

        def bwd(g):
            self._accumulate(g * mask)

        return Tensor._make(self.data * mask, (self,), "relu", bwd)

    def clamp(self, lo, hi):
        """Clip values to [lo, hi]; gradient is zero where clipping is active."""
        inside = ((self.data > lo) & (self.data < hi)).astype(DTYPE)

        def bwd(g):
            self._accumulate(g * inside)

        return Tensor._make(np.clip(self.data, lo, hi), (self,), "clamp", bwd)

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            self._accumulate(_expand_reduced(g, self.shape, axis, keepdims))

        return Tensor._make(out_data, (self,), "sum", bwd)

    def mean(self, axis=None, keepdims=False):
        out_data = self.data.mean(axis=axis, keepdims=keepdims)
        count = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in _normalize_axes(axis, self.data.ndim)]
        )

        def bwd(g):
            self._accumulate(_expand_reduced(g, self.shape, axis, keepdims) / count)

        return Tensor._make(out_data, (self,), "mean", bwd)

    def softmax(self, axis):
        """Numerically stable softmax along `axis`.

        Logits at NEG_INF come out exactly 0, which is how padded positions
        are excluded from attention.
        """
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)

        def bwd(g):
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            self._accumulate(out_data * (g - inner))

        return Tensor._make(out_data, (self,), "softmax", bwd)

    # -- shape manipulation ------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old_shape = self.data.shape

        def bwd(g):
            self._accumulate(g.reshape(old_shape))

        return Tensor._make(self.data.reshape(shape), (self,), "reshape", bwd)

    def swapaxes(self, a, b):
        def bwd(g):
            self._accumulate(np.swapaxes(g, a, b))

        return Tensor._make(np.swapaxes(self.data, a, b), (self,), "swapaxes", bwd)

    def __getitem__(self, key):
        out_data = self.data[key]

        def bwd(g):
            full = np.zeros_like(self.data)
            np.add.at(full, key, g)
            self._accumulate(full)

        return Tensor._make(out_data, (self,), "getitem", bwd)


# -- free functions -------------------------------------------------------------


def concat(tensors, axis):
    tensors = [Tensor._lift(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accumulate(g[tuple(idx)])

    return Tensor._make(out_data, tuple(tensors), "concat", bwd)


def gather_rows(x, index):
    """Select rows x[index] along axis 0; duplicates accumulate in backward."""
    x = Tensor._lift(x)
    index = np.asarray(index, dtype=np.intp)

    def bwd(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        x._accumulate(full)

    return Tensor._make(x.data[index], (x,), "gather_rows", bwd)


def scatter_rows(values, index, num_rows):
    """Place rows of `values` at positions `index` of a zero [num_rows, ...] array.

    Duplicate indices add. Inverse of gather_rows under the tape.
    """
    values = Tensor._lift(values)
    index = np.asarray(index, dtype=np.intp)
    out_data = np.zeros((num_rows,) + values.data.shape[1:], dtype=DTYPE)
    np.add.at(out_data, index, values.data)

    def bwd(g):
        values._accumulate(g[index])

    return Tensor._make(out_data, (values,), "scatter_rows", bwd)


def spmm(sp, x):
    """Multiply a constant scipy.sparse matrix by a [n, d] tensor."""
    if x.ndim != 2:
        raise ContractViolation("spmm expects a 2-d tensor")
    out_data = _asarray(sp @ x.data)
    spT = sp.T.tocsr()

    def bwd(g):
        x._accumulate(_asarray(spT @ g))

    return Tensor._make(out_data, (x,), "spmm", bwd)


def stack(tensors, axis=0):
    expanded = []
    for t in tensors:
        t = Tensor._lift(t)
        shape = list(t.shape)
        shape.insert(axis if axis >= 0 else t.ndim + 1 + axis, 1)
        expanded.append(t.reshape(shape))
    return concat(expanded, axis)


# -- internals --------------------------------------------------------------------


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        for a in sorted(_normalize_axes(axis, len(shape))):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _toposort(root):
    order = []
    visited = {id(root)}
    stack = [(root, iter(root.parents))]
    while stack:
        node, it = stack[-1]
        for parent in it:
            if id(parent) not in visited and parent.requires_grad:
                visited.add(id(parent))
                stack.append((parent, iter(parent.parents)))
                break
        else:
            order.append(node)
            stack.pop()
    return order


def backward(loss, params):
    """Gradients of a scalar loss for every parameter in `params`.

    Parameters not reachable from the loss get zero gradients. Any
    pre-existing gradients on the parameters are cleared first.
    """
    for _, p in params.items():
        p.grad = None
    loss.backward()
    out = {}
    for name, p in params.items():
        out[name] = Tensor(p.grad if p.grad is not None else np.zeros_like(p.data))
    return out
