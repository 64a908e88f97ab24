"""Reverse-mode automatic differentiation over dense float64 arrays.

Every operation records its parents and a backward closure; calling
``backward()`` on a scalar result walks the record in reverse topological
order and accumulates gradients into every node it reaches, parameters
and inputs alike. Values are immutable once constructed; only the trainer
mutates parameter ``data`` between steps.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

Array = np.ndarray

# When not None, nonsmooth ops append (kind, payload) entries here so the
# gradient checker can reject finite-difference probes that sit on or cross
# a kink. See watch_kinks().
_kink_watch: list[tuple[str, object]] | None = None


@contextmanager
def watch_kinks():
    """Collect kink diagnostics (abs sign patterns, guarded norms) from
    every op executed inside the block."""
    global _kink_watch
    prev = _kink_watch
    _kink_watch = []
    try:
        yield _kink_watch
    finally:
        _kink_watch = prev


def _note_kink(kind: str, payload) -> None:
    if _kink_watch is not None:
        _kink_watch.append((kind, payload))


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_back")

    def __init__(self, data, _parents: tuple = (), _back=None):
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self._parents = _parents
        self._back = _back

    # -- gradient plumbing -------------------------------------------------

    def _accum(self, g: Array) -> None:
        g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = np.array(g)  # own the buffer; g may be a view
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output, got shape %s" % (self.data.shape,))
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
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._back is not None and node.grad is not None:
                node._back()

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data + other.data, (self, other))

        def back():
            self._accum(out.grad)
            other._accum(out.grad)

        out._back = back
        return out

    def __sub__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data - other.data, (self, other))

        def back():
            self._accum(out.grad)
            other._accum(-out.grad)

        out._back = back
        return out

    def __mul__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data * other.data, (self, other))

        def back():
            self._accum(out.grad * other.data)
            other._accum(out.grad * self.data)

        out._back = back
        return out

    def __truediv__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data / other.data, (self, other))

        def back():
            self._accum(out.grad / other.data)
            other._accum(-out.grad * self.data / (other.data * other.data))

        out._back = back
        return out

    def __neg__(self) -> "Tensor":
        out = Tensor(-self.data, (self,))

        def back():
            self._accum(-out.grad)

        out._back = back
        return out

    def __pow__(self, exponent) -> "Tensor":
        if not isinstance(exponent, (int, float)):
            raise TypeError("only constant exponents are supported")
        out = Tensor(self.data ** exponent, (self,))

        def back():
            self._accum(out.grad * exponent * self.data ** (exponent - 1))

        out._back = back
        return out

    def __radd__(self, other) -> "Tensor":
        return Tensor(other) + self

    def __rsub__(self, other) -> "Tensor":
        return Tensor(other) - self

    def __rmul__(self, other) -> "Tensor":
        return Tensor(other) * self

    def __rtruediv__(self, other) -> "Tensor":
        return Tensor(other) / self

    def __matmul__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        a, b = self.data, other.data
        if a.ndim > 2 or b.ndim > 2:
            raise ValueError("matmul supports 1-D and 2-D operands only")
        out = Tensor(a @ b, (self, other))

        def back():
            g = out.grad
            if a.ndim == 2 and b.ndim == 2:
                self._accum(g @ b.T)
                other._accum(a.T @ g)
            elif a.ndim == 2 and b.ndim == 1:
                self._accum(np.outer(g, b))
                other._accum(a.T @ g)
            elif a.ndim == 1 and b.ndim == 2:
                self._accum(g @ b.T)
                other._accum(np.outer(a, g))
            else:  # 1-D @ 1-D -> scalar
                self._accum(g * b)
                other._accum(g * a)

        out._back = back
        return out

    # -- reductions and shape ops -------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def back():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.data.shape))

        out._back = back
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        out = Tensor(self.data.mean(axis=axis, keepdims=keepdims), (self,))

        def back():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.data.shape) / count)

        out._back = back
        return out

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        out = Tensor(self.data.reshape(shape), (self,))

        def back():
            self._accum(out.grad.reshape(self.data.shape))

        out._back = back
        return out

    def transpose(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ValueError("transpose() is defined for 2-D tensors")
        out = Tensor(self.data.T, (self,))

        def back():
            self._accum(out.grad.T)

        out._back = back
        return out

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def __getitem__(self, key) -> "Tensor":
        # basic (slice/int/tuple) indexing only; backward scatters into zeros
        out = Tensor(self.data[key], (self,))

        def back():
            buf = np.zeros_like(self.data)
            buf[key] += out.grad
            self._accum(buf)

        out._back = back
        return out

    # -- elementwise functions ------------------------------------------------

    def exp(self) -> "Tensor":
        out = Tensor(np.exp(self.data), (self,))

        def back():
            self._accum(out.grad * out.data)

        out._back = back
        return out

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.data), (self,))

        def back():
            self._accum(out.grad / self.data)

        out._back = back
        return out

    def safe_log(self) -> "Tensor":
        """log(x) where x > 0, exactly 0 where x == 0.

        Supports the 0*log(0) = 0 convention in entropy and divergence
        sums; gradient is masked to 0 on the zero set.
        """
        positive = self.data > 0
        out = Tensor(np.log(np.where(positive, self.data, 1.0)), (self,))

        def back():
            self._accum(np.where(positive, out.grad / np.where(positive, self.data, 1.0), 0.0))

        out._back = back
        return out

    def sqrt(self) -> "Tensor":
        out = Tensor(np.sqrt(self.data), (self,))

        def back():
            self._accum(out.grad * 0.5 / out.data)

        out._back = back
        return out

    def tanh(self) -> "Tensor":
        out = Tensor(np.tanh(self.data), (self,))

        def back():
            self._accum(out.grad * (1.0 - out.data * out.data))

        out._back = back
        return out

    def sigmoid(self) -> "Tensor":
        x = self.data
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        out = Tensor(s, (self,))

        def back():
            self._accum(out.grad * out.data * (1.0 - out.data))

        out._back = back
        return out

    def abs(self) -> "Tensor":
        # subgradient at 0 is defined as 0
        _note_kink("abs_signs", np.sign(self.data).astype(np.int8))
        out = Tensor(np.abs(self.data), (self,))

        def back():
            self._accum(out.grad * np.sign(self.data))

        out._back = back
        return out

    def clamp_min(self, floor: float) -> "Tensor":
        _note_kink("clamp_margin", float(np.min(np.abs(self.data - floor))))
        mask = self.data > floor
        out = Tensor(np.where(mask, self.data, floor), (self,))

        def back():
            self._accum(out.grad * mask)

        out._back = back
        return out

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, data={self.data!r})"


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along an axis; backward slices the gradient back apart."""
    parts = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), tuple(parts))
    ax = axis if axis >= 0 else out.data.ndim + axis
    sizes = [p.data.shape[ax] for p in parts]

    def back():
        offset = 0
        for p, size in zip(parts, sizes):
            sl = [slice(None)] * out.data.ndim
            sl[ax] = slice(offset, offset + size)
            p._accum(out.grad[tuple(sl)])
            offset += size

    out._back = back
    return out


def where_const(cond: Array, a: Tensor, b: Tensor) -> Tensor:
    """Select between two tensors with a constant boolean mask.

    The mask is data, not a differentiable input: gradient flows to ``a``
    where cond holds and to ``b`` elsewhere.
    """
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    cond = np.asarray(cond, dtype=bool)
    out = Tensor(np.where(cond, a.data, b.data), (a, b))

    def back():
        a._accum(np.where(cond, out.grad, 0.0))
        b._accum(np.where(cond, 0.0, out.grad))

    out._back = back
    return out
