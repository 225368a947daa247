"""Reverse-mode automatic differentiation over dense float64 arrays.

Operations executed inside an active :class:`Tape` are recorded when at
least one input is tracked (a trainable :class:`Parameter` or the output of
an earlier recorded op).  Outside a tape, or with only constant inputs, ops
are plain numpy evaluations.

    >>> w = Parameter("w", [3.0])
    >>> with Tape() as tape:
    ...     loss = sum_(w * w)
    >>> tape.backward(loss)
    >>> w.grad
    array([6.])
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, ShapeError, UsageError

__all__ = [
    "Tensor", "Parameter", "Tape", "as_tensor", "backward", "grad_check", "forward_op",
    "matmul", "add", "sub", "mul", "div", "scale", "concat", "stack", "tanh", "sigmoid",
    "exp", "log", "sum_", "softmax", "dropout", "embedding", "take", "reshape",
    "transpose", "clip",
]

_ACTIVE: list["Tape"] = []


def _current_tape():
    return _ACTIVE[-1] if _ACTIVE else None


class Tensor:
    """Dense real array, optionally bound to a node on the active tape."""

    __slots__ = ("values", "node", "tape")
    __array_ufunc__ = None  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, values, node=None, tape=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.node = node
        self.tape = tape

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    def __len__(self):
        return len(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, values={self.values!r})"

    def numpy(self):
        return self.values.copy()

    def item(self):
        return float(self.values)

    def __float__(self):
        return float(self.values)

    def tracked(self, tape):
        return tape is not None and self.node is not None and self.tape is tape

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


class Parameter(Tensor):
    """Named leaf tensor with a same-shape gradient accumulator."""

    __slots__ = ("name", "grad", "trainable")

    def __init__(self, name, values, trainable=True):
        super().__init__(np.array(values, dtype=np.float64))
        self.name = name
        self.grad = np.zeros_like(self.values)
        self.trainable = trainable

    def tracked(self, tape):
        return tape is not None and self.trainable

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of differentiable operations.

    Used as a context manager; ops executed inside the ``with`` block are
    appended in execution order, which is already a topological order.
    """

    def __init__(self):
        self.records = []  # (output node id, inputs, backward fn)

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def record(self, out, inputs, backward_fn):
        out.node = len(self.records)
        out.tape = self
        self.records.append((out.node, inputs, backward_fn))
        return out

    def backward(self, loss):
        """Accumulate d(loss)/d(parameter) into every reachable trainable Parameter."""
        if not isinstance(loss, Tensor) or loss.values.size != 1:
            shape = getattr(loss, "shape", None)
            raise UsageError(f"backward needs a scalar loss, got shape {shape}")
        if loss.node is None or loss.tape is not self:
            raise UsageError("loss was not produced on this tape")
        grads = {loss.node: np.ones_like(loss.values)}
        for node, inputs, backward_fn in reversed(self.records[: loss.node + 1]):
            g = grads.pop(node, None)
            if g is None:
                continue
            for x, gx in zip(inputs, backward_fn(g)):
                if gx is None:
                    continue
                if isinstance(x, Parameter):
                    if x.trainable:
                        x.grad += gx
                elif x.tape is self and x.node is not None:
                    if x.node in grads:
                        grads[x.node] = grads[x.node] + gx
                    else:
                        grads[x.node] = gx


def backward(loss):
    """Run the reverse pass on the tape that produced ``loss``."""
    tape = getattr(loss, "tape", None)
    if tape is None:
        raise UsageError("loss is not attached to any tape")
    tape.backward(loss)


def _finish(values, inputs, backward_fn):
    """Wrap ``values``; record on the active tape if any input is tracked."""
    out = Tensor(values)
    tape = _current_tape()
    if tape is not None and any(x.tracked(tape) for x in inputs):
        tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# --- elementwise binary -------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _finish(a.values + b.values, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _finish(a.values - b.values, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    av, bv = a.values, b.values
    return _finish(av * bv, (a, b),
                   lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    av, bv = a.values, b.values
    if np.any(bv == 0.0):
        raise DomainError("div: division by zero")
    out = av / bv
    return _finish(out, (a, b),
                   lambda g: (_unbroadcast(g / bv, a.shape),
                              _unbroadcast(-g * out / bv, b.shape)))


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _finish(a.values * c, (a,), lambda g: (g * c,))


# --- linear algebra ----------------------------------------------------------

def matmul(a, b):
    """``a @ b`` where ``b`` is a matrix (k, m) or a vector (k,).

    ``a`` may carry any number of leading batch dimensions.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    av, bv = a.values, b.values
    out = av @ bv

    if bv.ndim == 2:
        def backward_fn(g):
            ga = g @ bv.T
            a2 = av.reshape(-1, av.shape[-1])
            gb = a2.T @ g.reshape(a2.shape[0], -1)
            return ga, gb
    else:
        def backward_fn(g):
            g = np.asarray(g)
            ga = g[..., None] * bv
            gb = (av * g[..., None]).reshape(-1, bv.shape[0]).sum(axis=0)
            return ga, gb
    return _finish(out, (a, b), backward_fn)


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("transpose", a.shape, detail="expects a matrix")
    return _finish(a.values.T, (a,), lambda g: (g.T,))


# --- shape manipulation ------------------------------------------------------

def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _finish(out, tuple(tensors), lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.values for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("stack", *(t.shape for t in tensors)) from None
    n = len(tensors)
    return _finish(out, tuple(tensors),
                   lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.values.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return _finish(out, (a,), lambda g: (g.reshape(a.shape),))


def _is_fancy(index):
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def take(a, index):
    """Basic or integer-array indexing; repeated indices accumulate gradient."""
    a = as_tensor(a)
    try:
        out = a.values[index]
    except IndexError as exc:
        raise ShapeError("take", a.shape, detail=str(exc)) from None

    fancy = _is_fancy(index)

    def backward_fn(g):
        ga = np.zeros_like(a.values)
        if fancy:
            np.add.at(ga, index, g)
        else:
            ga[index] = g
        return (ga,)
    return _finish(np.array(out, dtype=np.float64), (a,), backward_fn)


def embedding(table, ids):
    """Rows of ``table`` selected by the integer array ``ids``."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError("embedding", table.shape, detail="table must be 2-D")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError("embedding", table.shape, ids.shape, detail="id out of range")

    def backward_fn(g):
        gt = np.zeros_like(table.values)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)
    return _finish(table.values[ids], (table,), backward_fn)


# --- elementwise unary -------------------------------------------------------

def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.values)
    return _finish(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.values))
    return _finish(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.values)
    return _finish(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    if np.any(a.values <= 0.0):
        raise DomainError(f"log: non-positive input (min {a.values.min()!r})")
    av = a.values
    return _finish(np.log(av), (a,), lambda g: (g / av,))


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient passes only where the input was inside."""
    a = as_tensor(a)
    av = a.values
    inside = (av >= lo) & (av <= hi)
    return _finish(np.clip(av, lo, hi), (a,), lambda g: (g * inside,))


# --- reductions and normalisation -----------------------------------------

def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _finish(out, (a,), backward_fn)


def softmax(a, axis=-1):
    """Softmax with the max subtracted first, so large scores cannot overflow."""
    a = as_tensor(a)
    if a.ndim < 1:
        raise ShapeError("softmax", a.shape, detail="needs at least one axis")
    z = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _finish(out, (a,),
                   lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def dropout(a, keep_prob, training, rng=None):
    """Inverted dropout: scale kept units by 1/keep_prob; identity when not training."""
    a = as_tensor(a)
    if not 0.0 < keep_prob <= 1.0:
        raise UsageError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    if not training or keep_prob == 1.0:
        return a
    if rng is None:
        raise UsageError("dropout in training mode needs an rng")
    mask = (rng.random(a.shape) < keep_prob) / keep_prob
    return _finish(a.values * mask, (a,), lambda g: (g * mask,))


_OPS = {
    "matmul": matmul, "add": add, "elementwise-mul": mul, "scale": scale,
    "concat": concat, "tanh": tanh, "sigmoid": sigmoid, "exp": exp, "log": log,
    "reduce-sum": sum_, "stable-softmax": softmax, "dropout-mask": dropout,
}


def forward_op(kind, *inputs, **kwargs):
    """Dispatch a primitive by name, e.g. ``forward_op("tanh", x)``."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise UsageError(f"unknown op {kind!r}; expected one of {sorted(_OPS)}") from None
    return fn(*inputs, **kwargs)


# --- verification ------------------------------------------------------------

def grad_check(f, params, epsilon=1e-5):
    """Largest relative error between backprop and central differences.

    ``f`` takes no arguments and returns a scalar Tensor computed from
    ``params``; it is called inside a fresh tape.  Error per entry is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if epsilon <= 0:
        raise UsageError("epsilon must be positive")
    params = [p for p in params if p.trainable]

    def value():
        return float(f().values)

    first, second = value(), value()
    if first != second:
        raise UsageError(f"grad_check: f is not deterministic ({first!r} != {second!r})")

    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    if loss.node is not None:
        tape.backward(loss)

    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        flat = p.values.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            plus = value()
            flat[i] = orig - epsilon
            minus = value()
            flat[i] = orig
            numeric = (plus - minus) / (2.0 * epsilon)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
        p.zero_grad()
    return worst
