"""Differentiation engine.

Two layers:

* :class:`Var` is a node on a reverse-mode tape whose payload is a numpy
  array. Every operation records a vector-Jacobian product, so the gradient
  of a scalar result with respect to any leaf is one backward sweep.
* :class:`Jet2` carries a value together with its first and second
  derivatives with respect to the input coordinates (forward mode, truncated
  at order two). Its components may be plain arrays or :class:`Var` nodes, so
  jets built on top of a tape give parameter gradients of input-Hessians.

The elementwise functions exported here (:func:`tanh`, :func:`exp`, ...)
dispatch on the argument type and work for floats, arrays, ``Var`` and
``Jet2`` alike. Problem definitions written with them can be evaluated,
differentiated in space and differentiated in parameters with one code path.
"""

from __future__ import annotations

import numbers
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "EvaluationError",
    "Var",
    "Jet2",
    "tanh",
    "exp",
    "sin",
    "cos",
    "cosh",
    "square",
    "eval_jet",
    "grad_params",
    "value_and_grad",
    "backward",
]

_ERRSTATE = dict(divide="raise", invalid="raise", over="raise", under="ignore")


class EvaluationError(ArithmeticError):
    """A primitive produced a non-finite or undefined value."""

    def __init__(self, message: str, primitive: str | None = None, index: int | None = None):
        super().__init__(message if primitive is None else f"{primitive}: {message}")
        self.primitive = primitive
        self.index = index


def _guarded(name: str):
    def wrap(fn):
        def inner(*args):
            try:
                return fn(*args)
            except FloatingPointError as exc:
                raise EvaluationError(str(exc), primitive=name) from None

        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner

    return wrap


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, numbers.Integral)) or i is Ellipsis or i is None for i in items)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _val(x):
    return x.value if isinstance(x, Var) else x


# ---------------------------------------------------------------------------
# reverse-mode tape


class Var:
    """Array-valued node of a reverse-mode computation graph."""

    __slots__ = ("value", "parents")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=float)
        self.parents = parents

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Jet2):
            return NotImplemented
        return _add(self, other)

    def __radd__(self, other):
        if isinstance(other, Jet2):
            return NotImplemented
        return _add(other, self)

    def __sub__(self, other):
        if isinstance(other, Jet2):
            return NotImplemented
        return _sub(self, other)

    def __rsub__(self, other):
        if isinstance(other, Jet2):
            return NotImplemented
        return _sub(other, self)

    def __mul__(self, other):
        if isinstance(other, Jet2):
            return NotImplemented
        return _mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, Jet2):
            return NotImplemented
        return _mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Jet2):
            return NotImplemented
        return _div(self, other)

    def __rtruediv__(self, other):
        if isinstance(other, Jet2):
            return NotImplemented
        return _div(other, self)

    def __neg__(self):
        return Var(-self.value, ((self, lambda g: -g),))

    def __pow__(self, n):
        return _pow(self, n)

    def __matmul__(self, other):
        return _matmul(self, other)

    def __rmatmul__(self, other):
        return _matmul(other, self)

    def __getitem__(self, idx):
        shape = self.value.shape

        def vjp(g):
            out = np.zeros(shape)
            if _is_basic_index(idx):
                out[idx] = g
            else:
                np.add.at(out, idx, g)
            return out

        return Var(self.value[idx], ((self, vjp),))

    @property
    def T(self):
        return Var(self.value.T, ((self, lambda g: g.T),))

    def reshape(self, *shape):
        old = self.value.shape
        return Var(self.value.reshape(*shape), ((self, lambda g: g.reshape(old)),))

    def sum(self, axis=None):
        shape = self.value.shape

        def vjp(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape)

        return Var(self.value.sum(axis=axis), ((self, vjp),))

    def mean(self, axis=None):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis) / n


def _binary(a, b, value, ga, gb):
    parents = []
    if isinstance(a, Var):
        sa = a.value.shape
        parents.append((a, lambda g: _unbroadcast(ga(g), sa)))
    if isinstance(b, Var):
        sb = b.value.shape
        parents.append((b, lambda g: _unbroadcast(gb(g), sb)))
    return Var(value, tuple(parents))


def _add(a, b):
    return _binary(a, b, _val(a) + _val(b), lambda g: g, lambda g: g)


def _sub(a, b):
    return _binary(a, b, _val(a) - _val(b), lambda g: g, lambda g: -g)


def _mul(a, b):
    va, vb = _val(a), _val(b)
    return _binary(a, b, va * vb, lambda g: g * vb, lambda g: g * va)


@_guarded("div")
def _div(a, b):
    va, vb = _val(a), _val(b)
    if np.any(np.asarray(vb) == 0):
        raise EvaluationError("division by zero", primitive="div")
    out = va / vb
    return _binary(a, b, out, lambda g: g / vb, lambda g: -g * out / vb)


@_guarded("pow")
def _pow(a, n):
    if not isinstance(n, numbers.Integral):
        raise TypeError("only integer powers are supported")
    v = a.value
    if n < 0 and np.any(v == 0):
        raise EvaluationError("division by zero", primitive="pow")
    if n == 0:
        return Var(np.ones_like(v))
    return Var(v**n, ((a, lambda g: g * n * v ** (n - 1)),))


def _matmul(a, b):
    va, vb = _val(a), _val(b)
    parents = []
    if isinstance(a, Var):
        sa = va.shape
        if vb.ndim == 1:
            parents.append((a, lambda g: _unbroadcast(np.multiply.outer(g, vb), sa)))
        else:
            parents.append((a, lambda g: _unbroadcast(g @ np.swapaxes(vb, -1, -2), sa)))
    if isinstance(b, Var):
        sb = vb.shape
        if va.ndim == 1:
            parents.append((b, lambda g: np.multiply.outer(va, g)))
        else:

            def gb(g):
                if va.ndim == 2:
                    return va.T @ g
                a2 = va.reshape(-1, va.shape[-1])
                return _unbroadcast(a2.T @ g.reshape(-1, g.shape[-1]), sb)

            parents.append((b, gb))
    return Var(va @ vb, tuple(parents))


def backward(out: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
    """Gradients of a scalar ``out`` with respect to each leaf in ``wrt``."""
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    targets = {id(v) for v in wrt}
    grads: dict[int, np.ndarray] = {id(out): np.ones_like(out.value)}
    leaf_grads: dict[int, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if id(node) in targets:
            leaf_grads[id(node)] = g
        for parent, vjp in node.parents:
            gp = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + gp
            else:
                grads[key] = gp
    return [np.array(leaf_grads.get(id(v), np.zeros_like(v.value)), dtype=float) for v in wrt]


# ---------------------------------------------------------------------------
# second-order jets


class Jet2:
    """Value with first and second input-derivatives.

    ``first[i]`` holds du/dx_i and ``second[i][j]`` holds d2u/dx_i dx_j. The
    second-derivative table is mirrored: ``second[i][j] is second[j][i]``.
    Components may be floats, arrays or :class:`Var` nodes and broadcast
    against each other.
    """

    __slots__ = ("value", "first", "second")
    __array_ufunc__ = None

    def __init__(self, value, first, second):
        self.value = value
        self.first = tuple(first)
        self.second = tuple(tuple(row) for row in second)

    @classmethod
    def from_upper(cls, value, first, upper):
        """Build from the upper triangle ``upper[i][j - i]`` (j >= i)."""
        d = len(first)
        second = [[None] * d for _ in range(d)]
        for i in range(d):
            for j in range(i, d):
                second[i][j] = second[j][i] = upper[i][j - i]
        return cls(value, first, second)

    @property
    def dim(self) -> int:
        return len(self.first)

    def _upper(self):
        d = self.dim
        return [[self.second[i][j] for j in range(i, d)] for i in range(d)]

    def _map_linear(self, fn) -> "Jet2":
        up = [[fn(c) for c in row] for row in self._upper()]
        return Jet2.from_upper(fn(self.value), [fn(c) for c in self.first], up)

    def _chain(self, g0, g1, g2) -> "Jet2":
        # h = g(u): h_i = g' u_i, h_ij = g'' u_i u_j + g' u_ij
        a = self.first
        d = self.dim
        first = [g1 * ai for ai in a]
        up = [[g2 * a[i] * a[j] + g1 * self.second[i][j] for j in range(i, d)] for i in range(d)]
        return Jet2.from_upper(g0, first, up)

    # shape helpers -------------------------------------------------------
    def __getitem__(self, idx):
        return self._map_linear(lambda c: c[idx] if np.ndim(_val(c)) else c)

    def __matmul__(self, mat):
        return self._map_linear(lambda c: c @ mat)

    @property
    def gradient(self) -> np.ndarray:
        shape = np.shape(_val(self.value))
        return np.stack([np.broadcast_to(_val(c), shape) for c in self.first], axis=-1)

    @property
    def hessian(self) -> np.ndarray:
        shape = np.shape(_val(self.value))
        rows = [np.stack([np.broadcast_to(_val(c), shape) for c in row], axis=-1) for row in self.second]
        return np.stack(rows, axis=-2)

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Jet2):
            up = [[p + q for p, q in zip(r1, r2)] for r1, r2 in zip(self._upper(), other._upper())]
            return Jet2.from_upper(
                self.value + other.value, [p + q for p, q in zip(self.first, other.first)], up
            )
        return Jet2(self.value + other, self.first, self.second)

    __radd__ = __add__

    def __neg__(self):
        return self._map_linear(lambda c: -c)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet2):
            u, v = self, other
            d = u.dim
            first = [u.first[i] * v.value + u.value * v.first[i] for i in range(d)]
            up = [
                [
                    u.second[i][j] * v.value
                    + u.first[i] * v.first[j]
                    + u.first[j] * v.first[i]
                    + u.value * v.second[i][j]
                    for j in range(i, d)
                ]
                for i in range(d)
            ]
            return Jet2.from_upper(u.value * v.value, first, up)
        return self._map_linear(lambda c: c * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet2):
            return self * _reciprocal(other)
        return self * _reciprocal(other)

    def __rtruediv__(self, other):
        return _reciprocal(self) * other

    def __pow__(self, n):
        if not isinstance(n, numbers.Integral):
            raise TypeError("only integer powers are supported")
        v = self.value
        if n == 0:
            return Jet2.from_upper(1.0, [0.0] * self.dim, [[0.0] * (self.dim - i) for i in range(self.dim)])
        if n == 1:
            return self
        if n < 0 and np.any(np.asarray(_val(v)) == 0):
            raise EvaluationError("division by zero", primitive="pow")
        return self._chain(v**n, n * v ** (n - 1), n * (n - 1) * v ** (n - 2) if n != 2 else 2.0)


# ---------------------------------------------------------------------------
# elementwise functions dispatching over float / ndarray / Var / Jet2


def _reciprocal(x):
    if isinstance(x, Jet2):
        r = _reciprocal(x.value)
        r2 = r * r
        return x._chain(r, -r2, 2.0 * r2 * r)
    if isinstance(x, Var):
        return _div(1.0, x)
    if np.any(np.asarray(x) == 0):
        raise EvaluationError("division by zero", primitive="div")
    return 1.0 / np.asarray(x, dtype=float) if np.ndim(x) else 1.0 / float(x)


def _var_unary(x: Var, value, dfn):
    return Var(value, ((x, lambda g: g * dfn()),))


@_guarded("tanh")
def tanh(x):
    if isinstance(x, Jet2):
        s = tanh(x.value)
        s1 = 1.0 - s * s
        return x._chain(s, s1, -2.0 * s * s1)
    if isinstance(x, Var):
        t = np.tanh(x.value)
        return _var_unary(x, t, lambda: 1.0 - t * t)
    return np.tanh(x)


@_guarded("exp")
def exp(x):
    if isinstance(x, Jet2):
        e = exp(x.value)
        return x._chain(e, e, e)
    if isinstance(x, Var):
        e = np.exp(x.value)
        return _var_unary(x, e, lambda: e)
    return np.exp(x)


@_guarded("sin")
def sin(x):
    if isinstance(x, Jet2):
        s = sin(x.value)
        return x._chain(s, cos(x.value), -s)
    if isinstance(x, Var):
        return _var_unary(x, np.sin(x.value), lambda: np.cos(x.value))
    return np.sin(x)


@_guarded("cos")
def cos(x):
    if isinstance(x, Jet2):
        c = cos(x.value)
        return x._chain(c, -sin(x.value), -c)
    if isinstance(x, Var):
        return _var_unary(x, np.cos(x.value), lambda: -np.sin(x.value))
    return np.cos(x)


@_guarded("cosh")
def cosh(x):
    if isinstance(x, Jet2):
        c = cosh(x.value)
        return x._chain(c, _sinh(x.value), c)
    if isinstance(x, Var):
        return _var_unary(x, np.cosh(x.value), lambda: np.sinh(x.value))
    return np.cosh(x)


def _sinh(x):
    if isinstance(x, Var):
        return _var_unary(x, np.sinh(x.value), lambda: np.cosh(x.value))
    return np.sinh(x)


def square(x):
    return x * x


# ---------------------------------------------------------------------------
# entry points


def _check_finite_jet(jet: Jet2) -> None:
    parts = [("value", jet.value)] + [(f"first[{i}]", c) for i, c in enumerate(jet.first)]
    parts += [(f"second[{i}][{j}]", jet.second[i][j]) for i in range(jet.dim) for j in range(i, jet.dim)]
    for name, comp in parts:
        if not np.all(np.isfinite(_val(comp))):
            raise EvaluationError(f"non-finite {name} in result", primitive="eval_jet")


def seed_jet(x) -> Jet2:
    """Independent-variable jet for points ``x`` of shape ``(..., d)``.

    The coordinate axis stays last, so functions index the jet exactly as
    they would index a plain point array.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    eye = np.eye(d)
    zero = np.zeros(d)
    return Jet2.from_upper(x, [eye[i] for i in range(d)], [[zero] * (d - i) for i in range(d)])


def eval_jet(f: Callable, x) -> Jet2:
    """Value, gradient and Hessian of scalar ``f`` at ``x``.

    ``x`` has shape ``(d,)`` or ``(n, d)``; ``f`` receives a point-like jet
    and must return one scalar per point. Raises :class:`EvaluationError`
    when a primitive divides by zero or the result is not finite.
    """
    with np.errstate(**_ERRSTATE):
        out = f(seed_jet(x))
        if not isinstance(out, Jet2):
            # f ignored its input; derivatives vanish
            d = np.shape(x)[-1]
            out = Jet2.from_upper(out, [0.0] * d, [[0.0] * (d - i) for i in range(d)])
        _check_finite_jet(out)
    return out


def value_and_grad(loss: Callable[[Var], Var], params) -> tuple[float, np.ndarray]:
    """Loss value and its gradient with respect to the flat parameter array."""
    values = np.asarray(getattr(params, "values", params), dtype=float)
    leaf = Var(values.copy())
    with np.errstate(**_ERRSTATE):
        out = loss(leaf)
        if not isinstance(out, Var):
            return float(out), np.zeros_like(values)
        f = float(out.value)
        if not np.isfinite(f):
            raise EvaluationError("loss is not finite", primitive="loss")
        (g,) = backward(out, [leaf])
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise EvaluationError(
            f"non-finite gradient entry at index {bad[0]}", primitive="grad", index=int(bad[0])
        )
    return f, g


def grad_params(loss: Callable[[Var], Var], params) -> np.ndarray:
    """Exact gradient of ``loss`` with respect to every parameter."""
    return value_and_grad(loss, params)[1]
