"""Scalar coefficient fields f(t, x) with derivatives on a grid.

Two flavours:

* ``ExprField`` wraps a sympy expression in ``t`` and the coordinates
  ``x`` (axis 0) and ``y`` (axis 1). Spatial derivatives of any order are
  exact, obtained by symbolic differentiation and compiled with ``lambdify``.
* ``CallableField`` wraps a numpy callable ``f(t, *coords)``. Derivatives come
  from optional analytic callbacks keyed by the per-axis order tuple, else
  from second-order finite differences of the sampled values.
"""
from __future__ import annotations

import re
import threading
from typing import Callable, Mapping

import numpy as np
import sympy

from .grid import GridSpec

T_SYM = sympy.Symbol("t", real=True)
X_SYMS = (sympy.Symbol("x", real=True), sympy.Symbol("y", real=True))


def _orders(grid: GridSpec, orders) -> tuple[int, ...]:
    if orders is None:
        return (0,) * grid.d
    orders = tuple(int(o) for o in orders)
    if len(orders) != grid.d or any(o < 0 for o in orders):
        raise ValueError(f"derivative orders {orders} do not match dimension {grid.d}")
    return orders


def axis_orders(d: int, *axes: int) -> tuple[int, ...]:
    """Order tuple for the mixed derivative along the listed axes."""
    out = [0] * d
    for a in axes:
        out[a] += 1
    return tuple(out)


class Field:
    """Base class. Subclasses implement ``_eval(grid, t, orders)``."""

    label: str = "field"
    autonomous: bool = True
    is_zero: bool = False
    x_independent: bool = False

    def sample(self, grid: GridSpec, t: float = 0.0) -> np.ndarray:
        return self.deriv(grid, t, None)

    def deriv(self, grid: GridSpec, t: float, orders=None) -> np.ndarray:
        orders = _orders(grid, orders)
        if self.is_zero or (self.x_independent and any(orders)):
            return np.zeros(grid.shape)
        out = np.asarray(self._eval(grid, float(t), orders))
        out = np.array(np.broadcast_to(out, grid.shape))
        if np.iscomplexobj(out) and not np.any(out.imag):
            out = out.real.copy()
        if not np.all(np.isfinite(out)):
            raise ValueError(f"field {self.label!r} is not finite on the grid at t={t}")
        return out

    def d(self, grid: GridSpec, t: float, *axes: int) -> np.ndarray:
        """Mixed partial derivative along ``axes`` (repeats allowed)."""
        return self.deriv(grid, t, axis_orders(grid.d, *axes))

    def _eval(self, grid, t, orders):  # pragma: no cover - abstract
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.label})"


class ExprField(Field):
    """Field given by a sympy expression in ``t, x, y``."""

    def __init__(self, expr, label: str | None = None):
        expr = sympy.sympify(expr)
        extra = expr.free_symbols - {T_SYM, *X_SYMS}
        if extra:
            names = ", ".join(sorted(str(s) for s in extra))
            raise ValueError(f"unknown symbols in field expression: {names}")
        self.expr = expr
        self.label = label or str(expr)
        self.autonomous = T_SYM not in expr.free_symbols
        self.is_zero = expr == 0
        self.x_independent = not (expr.free_symbols & set(X_SYMS))
        self._compiled: dict[tuple[int, ...], Callable] = {}
        self._lock = threading.Lock()

    def _fn(self, orders: tuple[int, ...]) -> Callable:
        fn = self._compiled.get(orders)
        if fn is None:
            with self._lock:
                fn = self._compiled.get(orders)
                if fn is None:
                    e = self.expr
                    for sym, k in zip(X_SYMS, orders):
                        if k:
                            e = sympy.diff(e, sym, k)
                    fn = sympy.lambdify((T_SYM, *X_SYMS[: len(orders)]), e, modules="numpy")
                    self._compiled[orders] = fn
        return fn

    def _eval(self, grid, t, orders):
        return self._fn(orders)(t, *grid.coords)


class CallableField(Field):
    """Field given by ``func(t, *coords)`` with optional derivative callbacks."""

    def __init__(
        self,
        func: Callable,
        derivatives: Mapping[tuple[int, ...], Callable] | None = None,
        autonomous: bool = False,
        label: str = "callable",
    ):
        self.func = func
        self.derivatives = dict(derivatives or {})
        self.autonomous = autonomous
        self.label = label

    def _eval(self, grid, t, orders):
        if not any(orders):
            return self.func(t, *grid.coords)
        if orders in self.derivatives:
            return self.derivatives[orders](t, *grid.coords)
        # peel one derivative off and difference the rest
        axis = next(a for a, k in enumerate(orders) if k)
        lower = list(orders)
        lower[axis] -= 1
        base = np.broadcast_to(np.asarray(self.deriv(grid, t, tuple(lower))), grid.shape)
        return np.gradient(base, grid.h, axis=axis, edge_order=2)


def as_field(value, label: str | None = None) -> Field:
    """Coerce numbers, strings, sympy expressions and callables to a Field."""
    if isinstance(value, Field):
        return value
    if value is None:
        return ExprField(0, label)
    if isinstance(value, str):
        return parse_field(value, label=label)
    if isinstance(value, (int, float, complex, np.number, sympy.Basic)):
        return ExprField(value, label)
    if callable(value):
        return CallableField(value, label=label or getattr(value, "__name__", "callable"))
    raise TypeError(f"cannot interpret {value!r} as a coefficient field")


# -- inline expression grammar ------------------------------------------------


def gaussian_well(x, V0, a, r):
    """Bounded well ``-V0 exp(-a (x - r)^2)``."""
    return -V0 * sympy.exp(-a * (x - r) ** 2)


def pulse_envelope(t, tau, T):
    """Ramp up over ``tau``, hold, then ramp down over the last ``tau`` before ``T``."""
    return sympy.Piecewise(
        (sympy.sin(sympy.pi * t / (2 * tau)), t < tau),
        (1, t <= T - tau),
        (sympy.cos(sympy.pi * (t + tau - T) / (2 * tau)) ** 2, t <= T),
        (0, True),
    )


def laser_field(t, F0, beta, delta, tau, T):
    return F0 * sympy.sin(beta * t + delta) * pulse_envelope(t, tau, T)


_ALLOWED = {
    "t": T_SYM,
    "x": X_SYMS[0],
    "y": X_SYMS[1],
    "exp": sympy.exp,
    "sin": sympy.sin,
    "cos": sympy.cos,
    "sqrt": sympy.sqrt,
    "pi": sympy.pi,
    "I": sympy.I,
    "gaussian_well": gaussian_well,
    "envelope": pulse_envelope,
    "laser": laser_field,
}
_TOKEN = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
_CHARS = re.compile(r"^[0-9A-Za-z_+\-*/()., eE]*$")


def parse_field(text: str, params: Mapping[str, float] | None = None, label: str | None = None) -> ExprField:
    """Parse an expression of the small inline grammar.

    Names allowed: ``t, x, y, exp, sin, cos, sqrt, pi, I, gaussian_well,
    envelope, laser`` plus any numeric ``params``. ``^`` is accepted as power.
    """
    params = dict(params or {})
    src = text.replace("^", "**")
    if not _CHARS.match(src) or "__" in src:
        raise ValueError(f"invalid characters in expression {text!r}")
    names = dict(_ALLOWED)
    for k, v in params.items():
        names[k] = sympy.Float(v) if isinstance(v, float) else sympy.sympify(v)
    for tok in _TOKEN.findall(src):
        if tok not in names and not re.fullmatch(r"[eE]\d*", tok):
            raise ValueError(f"unknown name {tok!r} in expression {text!r}")
    try:
        expr = sympy.sympify(src, locals=names, rational=False)
    except (sympy.SympifyError, TypeError, SyntaxError) as exc:
        raise ValueError(f"cannot parse expression {text!r}: {exc}") from exc
    return ExprField(expr, label or text)
