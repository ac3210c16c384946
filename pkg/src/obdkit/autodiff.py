"""Define-by-run reverse-mode autodiff with differentiable gradients.

Every primitive records a node on a :class:`Tape`. Its vector-Jacobian
product is written with other primitives, so the tensors returned by
:func:`grad` are ordinary tape nodes and can be differentiated again. That is
what lets an unrolled training loop (whose updates contain gradients) be
back-propagated through.

Broadcasting follows numpy; gradients are reduced back with :func:`sum_to`.
"""
from __future__ import annotations

import numpy as np


class TapeError(ValueError):
    pass


class Tape:
    """Append-only record of nodes; parents always precede children."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __len__(self):
        return len(self.nodes)

    def _record(self, value, op, parents=(), vjp=None) -> "Tensor":
        t = Tensor(self, len(self.nodes), np.asarray(value, dtype=np.float64), op, parents, vjp)
        self.nodes.append(t)
        return t

    def variable(self, value) -> "Tensor":
        return self._record(np.array(value, dtype=np.float64), "leaf")

    def constant(self, value) -> "Tensor":
        return self._record(np.array(value, dtype=np.float64), "const")


class Tensor:
    __slots__ = ("tape", "id", "value", "op", "parents", "vjp")

    def __init__(self, tape, node_id, value, op, parents, vjp):
        self.tape = tape
        self.id = node_id
        self.value = value
        self.op = op
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def __repr__(self):
        return f"Tensor(op={self.op}, id={self.id}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    @property
    def T(self):
        return transpose(self)


def _same_tape(*ts):
    tape = ts[0].tape
    for t in ts[1:]:
        if t.tape is not tape:
            raise TapeError("operands live on different tapes")
    return tape


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return like.tape.constant(x)


def _binary(a, b):
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)
    _same_tape(a, b)
    return a, b


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise TapeError(f"shape mismatch {a.shape} vs {b.shape}") from None


# -- shape plumbing ---------------------------------------------------------

def sum_to(x: Tensor, shape) -> Tensor:
    """Sum ``x`` down to ``shape`` (inverse of broadcasting)."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    v = x.value
    lead = v.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(i + lead for i, n in enumerate(shape) if n == 1 and v.shape[i + lead] != 1)
    out = v.sum(axis=axes, keepdims=True).reshape(shape)
    src = x.shape
    return x.tape._record(out, "sum_to", (x,), lambda g, need: (broadcast_to(g, src),))


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    out = np.broadcast_to(x.value, shape).copy()
    src = x.shape
    return x.tape._record(out, "broadcast_to", (x,), lambda g, need: (sum_to(g, src),))


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src = x.shape
    return x.tape._record(x.value.reshape(shape), "reshape", (x,), lambda g, need: (reshape(g, src),))


def transpose(x: Tensor) -> Tensor:
    if x.value.ndim != 2:
        raise TapeError("transpose expects a matrix")
    return x.tape._record(x.value.T.copy(), "transpose", (x,), lambda g, need: (transpose(g),))


# -- arithmetic -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _binary(a, b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return a.tape._record(a.value + b.value, "add", (a, b),
                          lambda g, need: (need[0] and sum_to(g, sa), need[1] and sum_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _binary(a, b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return a.tape._record(a.value - b.value, "sub", (a, b),
                          lambda g, need: (need[0] and sum_to(g, sa),
                                           need[1] and scale(sum_to(g, sb), -1.0)))


def mul(a, b) -> Tensor:
    a, b = _binary(a, b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return a.tape._record(a.value * b.value, "mul", (a, b),
                          lambda g, need: (need[0] and sum_to(mul(g, b), sa),
                                           need[1] and sum_to(mul(g, a), sb)))


def div(a, b) -> Tensor:
    a, b = _binary(a, b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    out = a.tape._record(a.value / b.value, "div", (a, b), None)

    def vjp(g, need):
        ga = div(g, b)
        return need[0] and sum_to(ga, sa), need[1] and scale(sum_to(mul(ga, out), sb), -1.0)

    out.vjp = vjp
    return out


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return x.tape._record(x.value * c, "scale", (x,), lambda g, need: (scale(g, c),))


def square(x: Tensor) -> Tensor:
    return x.tape._record(x.value * x.value, "square", (x,),
                          lambda g, need: (scale(mul(g, x), 2.0),))


def sqrt(x: Tensor) -> Tensor:
    out = x.tape._record(np.sqrt(x.value), "sqrt", (x,), None)

    def vjp(g, need):
        # subgradient 0 where the root is exactly 0
        zero = out.value == 0.0
        if not zero.any():
            return (div(scale(g, 0.5), out),)
        safe = add(out, x.tape.constant(zero.astype(float)))
        return (mul(div(scale(g, 0.5), safe), x.tape.constant((~zero).astype(float))),)

    out.vjp = vjp
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _binary(a, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise TapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return a.tape._record(a.value @ b.value, "matmul", (a, b),
                          lambda g, need: (need[0] and matmul(g, transpose(b)),
                                           need[1] and matmul(transpose(a), g)))


def relu(x: Tensor) -> Tensor:
    mask = (x.value > 0).astype(np.float64)  # derivative at 0 is 0
    return x.tape._record(x.value * mask, "relu", (x,),
                          lambda g, need: (mul(g, g.tape.constant(mask)),))


def softmax_rows(x: Tensor) -> Tensor:
    if x.value.ndim != 2:
        raise TapeError("softmax_rows expects a matrix")
    z = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = x.tape._record(e / e.sum(axis=1, keepdims=True), "softmax_rows", (x,), None)

    def vjp(g, need):
        gp = mul(g, out)
        return (sub(gp, mul(out, sum(gp, axis=1, keepdims=True))),)

    out.vjp = vjp
    return out


def sum(x: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    out_val = x.value.sum(axis=axis, keepdims=keepdims)
    src = x.shape
    kept = x.value.sum(axis=axis, keepdims=True).shape

    def vjp(g, need):
        return (broadcast_to(reshape(g, kept), src),)

    return x.tape._record(out_val, "sum", (x,), vjp)


def mean(x: Tensor) -> Tensor:
    return scale(sum(x), 1.0 / x.size)


def select_rows(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]
    return x.tape._record(x.value[idx], "select_rows", (x,),
                          lambda g, need: (scatter_rows(g, idx, n),))


def scatter_rows(g: Tensor, idx, n_rows) -> Tensor:
    """Adjoint of :func:`select_rows`: add row ``i`` of ``g`` into row ``idx[i]``."""
    out = np.zeros((n_rows,) + g.shape[1:])
    np.add.at(out, idx, g.value)
    return g.tape._record(out, "scatter_rows", (g,), lambda h, need: (select_rows(h, idx),))


# -- reverse pass -----------------------------------------------------------

def grad(output: Tensor, wrt) -> list:
    """Gradients of scalar ``output`` with respect to each tensor in ``wrt``.

    The result tensors are recorded on the same tape, so they can be fed into
    further computation and differentiated again. A tensor that ``output``
    does not depend on gets a zero gradient.
    """
    if output.size != 1:
        raise TapeError(f"grad needs a scalar output, got shape {output.shape}")
    wrt = list(wrt)
    tape = _same_tape(output, *wrt)
    if not wrt:
        return []
    wrt_ids = {w.id for w in wrt}
    floor = min(wrt_ids)

    # nodes between a wrt tensor and the output
    nodes = tape.nodes
    seen = set()
    stack = [output.id]
    while stack:
        i = stack.pop()
        if i in seen:
            continue
        seen.add(i)
        for p in nodes[i].parents:
            if p.id >= floor and p.id not in seen:
                stack.append(p.id)
    live = set()
    for i in sorted(seen):
        if i in wrt_ids or any(p.id in live for p in nodes[i].parents):
            live.add(i)

    grads = {}
    if output.id in live:
        grads[output.id] = tape.constant(np.ones_like(output.value))
    for i in sorted(live, reverse=True):
        g = grads.get(i)
        node = nodes[i]
        if g is None or node.vjp is None:
            continue
        need = tuple(p.id in live for p in node.parents)
        pgs = node.vjp(g, need)
        for p, pg, n in zip(node.parents, pgs, need):
            if not n:
                continue
            prev = grads.get(p.id)
            grads[p.id] = pg if prev is None else add(prev, pg)

    out = []
    for w in wrt:
        g = grads.get(w.id)
        out.append(g if g is not None else tape.constant(np.zeros_like(w.value)))
    return out
