"""Define-by-run reverse-mode tape over numpy arrays.

Every op builds a `Tensor` node holding its forward value and a
vector-Jacobian callback. `backward(root)` walks the recorded graph once in
reverse topological order and accumulates gradients additively into leaf
parameters, so calling it twice on the same root doubles every gradient.
Intermediate gradients live in a per-call dict, never on the nodes, which
keeps repeated backward passes independent.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, UsageError


class Tensor:
    """A node in the tape: forward value plus optional backward closure.

    Leaf parameters carry a persistent `grad` buffer (owned by a ParamStore);
    intermediates carry `_vjp`, a callback mapping the upstream gradient to
    per-parent gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = self.name or ("param" if self.grad is not None else "node")
        return f"Tensor({tag}, shape={self.data.shape}, dtype={self.data.dtype})"


def constant(array, dtype=None) -> Tensor:
    """Wrap a plain array as a non-differentiable node."""
    return Tensor(np.asarray(array, dtype=dtype), requires_grad=False)


def _node(data, parents, vjp) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(param) into every reachable parameter's grad.

    `root` must be scalar-shaped. Parameters receive `+=`, so zero grads
    first unless accumulation is intended.
    """
    if root.data.shape != ():
        raise UsageError(
            f"backward expects a scalar loss, got shape {root.data.shape}"
        )
    if not root.requires_grad and root._vjp is None and root.grad is None:
        # Constant loss: nothing depends on any parameter; gradients stay 0.
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones((), dtype=root.data.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            if node.grad is not None:
                node.grad += g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._vjp is None and parent.grad is not None:
                parent.grad += pg
            else:
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg


# ---------------------------------------------------------------------------
# ops


def matmul(x: Tensor, w: Tensor) -> Tensor:
    """Batched affine core: (n, i) @ (i, o) -> (n, o)."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise ConfigError(
            f"matmul width mismatch: input {x.data.shape} vs weights {w.data.shape}"
        )

    def vjp(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.T @ g if w.requires_grad else None
        return gx, gw

    return _node(x.data @ w.data, (x, w), vjp)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """(n, o) + (o,) row-broadcast."""
    if x.data.shape[-1] != b.data.shape[0]:
        raise ConfigError(
            f"bias width mismatch: input {x.data.shape} vs bias {b.data.shape}"
        )

    def vjp(g):
        gb = g.sum(axis=0) if b.requires_grad else None
        return g, gb

    return _node(x.data + b.data, (x, b), vjp)


def relu(x: Tensor) -> Tensor:
    def vjp(g):
        return (g * (x.data > 0),)

    return _node(np.maximum(x.data, 0), (x,), vjp)


def sine(x: Tensor, omega: float) -> Tensor:
    """Elementwise sin(omega * x)."""
    def vjp(g):
        return (g * (omega * np.cos(omega * x.data)),)

    return _node(np.sin(omega * x.data), (x,), vjp)


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    widths = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + widths)

    def vjp(g):
        slicer = [slice(None)] * g.ndim
        outs = []
        for i, p in enumerate(parts):
            if p.requires_grad:
                slicer[axis] = slice(offsets[i], offsets[i + 1])
                outs.append(np.ascontiguousarray(g[tuple(slicer)]))
            else:
                outs.append(None)
        return outs

    return _node(np.concatenate([p.data for p in parts], axis=axis), parts, vjp)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape

    def vjp(g):
        return (g.reshape(old),)

    return _node(x.data.reshape(shape), (x,), vjp)


def rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous row slice x[start:stop] along the leading axis."""
    if x.data.ndim < 1 or not 0 <= start < stop <= x.data.shape[0]:
        raise ConfigError(
            f"row slice [{start}:{stop}] out of range for shape {x.data.shape}"
        )

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        return (gx,)

    return _node(x.data[start:stop], (x,), vjp)


def add(x: Tensor, y: Tensor) -> Tensor:
    def vjp(g):
        return g, g

    return _node(x.data + y.data, (x, y), vjp)


def sub(x: Tensor, y: Tensor) -> Tensor:
    def vjp(g):
        return g, -g

    return _node(x.data - y.data, (x, y), vjp)


def mul(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    def vjp(g):
        gx = g * y.data if x.requires_grad else None
        gy = g * x.data if y.requires_grad else None
        return gx, gy

    return _node(x.data * y.data, (x, y), vjp)


def neg(x: Tensor) -> Tensor:
    def vjp(g):
        return (-g,)

    return _node(-x.data, (x,), vjp)


def scale(x: Tensor, c: float) -> Tensor:
    def vjp(g):
        return (g * c,)

    return _node(x.data * c, (x,), vjp)


def add_scaled(x: Tensor, s: Tensor, c: float = 1.0) -> Tensor:
    """x + c*s where s is scalar-shaped; used for mean-centering."""
    def vjp(g):
        gs = (c * g.sum()).astype(s.data.dtype) if s.requires_grad else None
        return g, gs

    return _node(x.data + c * s.data, (x, s), vjp)


def square(x: Tensor) -> Tensor:
    def vjp(g):
        return (g * (2.0 * x.data),)

    return _node(x.data * x.data, (x,), vjp)


def absolute(x: Tensor) -> Tensor:
    def vjp(g):
        return (g * np.sign(x.data),)

    return _node(np.abs(x.data), (x,), vjp)


def sqrt(x: Tensor) -> Tensor:
    root = np.sqrt(x.data)

    def vjp(g):
        return (g / (2.0 * root),)

    return _node(root, (x,), vjp)


def div(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise (or scalar/scalar) quotient."""
    def vjp(g):
        gx = g / y.data if x.requires_grad else None
        gy = -g * x.data / (y.data * y.data) if y.requires_grad else None
        return gx, gy

    return _node(x.data / y.data, (x, y), vjp)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size

    def vjp(g):
        return (np.full(x.data.shape, g / n, dtype=x.data.dtype),)

    return _node(x.data.mean(dtype=x.data.dtype), (x,), vjp)


def sum_all(x: Tensor) -> Tensor:
    def vjp(g):
        return (np.full(x.data.shape, g, dtype=x.data.dtype),)

    return _node(x.data.sum(dtype=x.data.dtype), (x,), vjp)
