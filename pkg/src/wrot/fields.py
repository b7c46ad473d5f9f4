"""Cylindrical functionals, vector fields and operator fields on the truncated space.

Functionals are sympy expressions in the coordinate symbols ``w1, w2, ...``
(and optionally a time symbol ``t``), compiled to vectorized numpy callables.
Exact derivatives come from sympy.  A functional may instead wrap a plain
callable, in which case derivatives are central finite differences.

Every evaluator takes ``omega`` of shape ``(..., n)`` and broadcasts over the
leading axes.
"""
from __future__ import annotations

import re
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
import sympy as sp
from sympy.printing.numpy import NumPyPrinter

T = sp.Symbol("t", real=True)
FD_STEP = 1e-5
_HESS_STEP = 1e-4
_SYM_RE = re.compile(r"^w(\d+)$")


def w(i: int) -> sp.Symbol:
    """Symbol of coordinate ``i`` (0-based), printed ``w{i+1}``."""
    return sp.Symbol(f"w{i + 1}", real=True)


def ws(n: int) -> list[sp.Symbol]:
    return [w(i) for i in range(n)]


def coord_index(sym: sp.Symbol) -> int | None:
    m = _SYM_RE.match(sym.name)
    return int(m.group(1)) - 1 if m else None


def arity_of(expr: sp.Expr) -> int:
    idx = [coord_index(s) for s in expr.free_symbols]
    idx = [i for i in idx if i is not None]
    return max(idx) + 1 if idx else 0


def parse(text: str) -> sp.Expr:
    """Parse an expression string in ``w1, w2, ..., t``."""
    names = {f"w{i}": w(i - 1) for i in range(1, 257)}
    names["t"] = T
    expr = sp.sympify(text, locals=names)
    unknown = {s.name for s in expr.free_symbols} - set(names)
    if unknown:
        raise ValueError(f"unknown symbols {sorted(unknown)} in {text!r}")
    return expr


class _ExactFloatPrinter(NumPyPrinter):
    """Prints double-precision Floats with round-trip digits (the default keeps 15)."""

    def _print_Float(self, expr):
        x = float(expr)
        return repr(x) if np.isfinite(x) else super()._print_Float(expr)


def _compile(expr: sp.Expr, m: int) -> Callable:
    return sp.lambdify([T, *ws(m)], expr, modules="numpy", printer=_ExactFloatPrinter)


def _as_omega(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    if omega.ndim == 0:
        raise ValueError("omega must have a coordinate axis")
    return omega


def _eval_compiled(fn: Callable, m: int, omega: np.ndarray, t: float) -> np.ndarray:
    if omega.shape[-1] < m:
        raise ValueError(f"functional needs {m} coordinates, got {omega.shape[-1]}")
    cols = [omega[..., i] for i in range(m)]
    out = np.asarray(fn(t, *cols), dtype=float)
    return np.broadcast_to(out, omega.shape[:-1]).copy()


class Functional:
    """Cylindrical functional ``F(omega) = f(omega_1, ..., omega_m)``.

    ``mode`` is ``"exact"`` (symbolic partials), ``"hermite"`` (a polynomial
    carried as a chaos expansion) or ``"finite_difference"`` (central
    differences with step ``step``).
    """

    def __init__(self, expr, mode: str = "exact", step: float = FD_STEP):
        if mode not in ("exact", "hermite", "finite_difference"):
            raise ValueError(f"unknown gradient mode {mode!r}")
        self.expr = parse(expr) if isinstance(expr, str) else sp.sympify(expr)
        self.mode = mode
        self.step = step
        self.arity = arity_of(self.expr)
        self._fn = None

    @classmethod
    def from_callable(cls, fn: Callable[[np.ndarray], np.ndarray], arity: int, step: float = FD_STEP):
        """Wrap a numpy callable acting on ``omega[..., :arity]``; gradients by finite differences."""
        obj = cls.__new__(cls)
        obj.expr = None
        obj.mode = "finite_difference"
        obj.step = step
        obj.arity = int(arity)
        obj._fn = fn
        return obj

    # -- structure -----------------------------------------------------------
    @property
    def is_symbolic(self) -> bool:
        return self.expr is not None

    def _require_symbolic(self):
        if self.expr is None:
            raise TypeError("operation needs a symbolic functional")

    @cached_property
    def is_polynomial(self) -> bool:
        if self.expr is None:
            return False
        return bool(self.expr.is_polynomial(*ws(self.arity)))

    @cached_property
    def degree(self) -> int | None:
        """Total polynomial degree in the coordinates, ``None`` if not polynomial."""
        if not self.is_polynomial:
            return None
        if self.arity == 0:
            return 0
        return int(sp.Poly(self.expr, *ws(self.arity)).total_degree())

    def depends_on(self) -> set[int]:
        self._require_symbolic()
        return {i for i in map(coord_index, self.expr.free_symbols) if i is not None}

    # -- evaluation ----------------------------------------------------------
    @cached_property
    def _compiled(self):
        return _compile(self.expr, self.arity)

    def __call__(self, omega, t: float = 0.0) -> np.ndarray:
        omega = _as_omega(omega)
        if self.expr is None:
            if omega.shape[-1] < self.arity:
                raise ValueError(f"functional needs {self.arity} coordinates, got {omega.shape[-1]}")
            out = np.asarray(self._fn(omega[..., : self.arity]), dtype=float)
            return np.broadcast_to(out, omega.shape[:-1]).copy()
        out = _eval_compiled(self._compiled, self.arity, omega, t)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite functional value")
        return out

    @cached_property
    def _partials(self) -> list[Functional]:
        return [Functional(sp.diff(self.expr, w(i)), mode=self.mode) for i in range(self.arity)]

    def partial(self, i: int) -> "Functional":
        self._require_symbolic()
        if i >= self.arity:
            return Functional(0)
        return self._partials[i]

    def grad(self, omega, t: float = 0.0) -> np.ndarray:
        """Gradient; component ``i`` is zero for ``i >= arity``."""
        omega = _as_omega(omega)
        out = np.zeros(omega.shape)
        if self.mode == "finite_difference":
            h = self.step
            for i in range(self.arity):
                e = np.zeros(omega.shape[-1])
                e[i] = h
                out[..., i] = (self(omega + e, t) - self(omega - e, t)) / (2 * h)
            return out
        for i in range(self.arity):
            out[..., i] = self._partials[i](omega, t)
        return out

    def hessian(self, omega, t: float = 0.0) -> np.ndarray:
        omega = _as_omega(omega)
        n = omega.shape[-1]
        out = np.zeros(omega.shape + (n,))
        if self.mode == "finite_difference":
            h = _HESS_STEP
            for i in range(self.arity):
                e = np.zeros(n)
                e[i] = h
                out[..., i, :] = (self.grad(omega + e, t) - self.grad(omega - e, t)) / (2 * h)
            return 0.5 * (out + np.swapaxes(out, -1, -2))
        for i in range(self.arity):
            for j in range(i, self.arity):
                v = self._partials[i]._partials[j](omega, t) if j < self._partials[i].arity else 0.0
                out[..., i, j] = v
                out[..., j, i] = v
        return out

    def gradient_field(self, n: int | None = None) -> "VectorField":
        self._require_symbolic()
        n = self.arity if n is None else n
        return VectorField([sp.diff(self.expr, w(i)) for i in range(n)])

    # -- algebra -------------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Functional):
            other._require_symbolic()
            return other.expr
        return sp.sympify(other)

    def __add__(self, other):
        self._require_symbolic()
        return Functional(self.expr + self._coerce(other), mode=self.mode)

    __radd__ = __add__

    def __sub__(self, other):
        self._require_symbolic()
        return Functional(self.expr - self._coerce(other), mode=self.mode)

    def __rsub__(self, other):
        self._require_symbolic()
        return Functional(self._coerce(other) - self.expr, mode=self.mode)

    def __mul__(self, other):
        self._require_symbolic()
        if isinstance(other, VectorField):
            return other * self
        return Functional(self.expr * self._coerce(other), mode=self.mode)

    __rmul__ = __mul__

    def __neg__(self):
        self._require_symbolic()
        return Functional(-self.expr, mode=self.mode)

    def subs(self, mapping: dict) -> "Functional":
        self._require_symbolic()
        return Functional(self.expr.subs(mapping, simultaneous=True), mode=self.mode)

    def expand(self) -> "Functional":
        self._require_symbolic()
        return Functional(sp.expand(self.expr), mode=self.mode)

    def equals(self, other, tol: float = 0.0) -> bool:
        """Symbolic equality; with ``tol > 0`` float coefficients may differ by ``tol``."""
        diff = sp.expand(self.expr - self._coerce(other))
        if diff == 0:
            return True
        gens = ws(max(arity_of(diff), 1))
        if tol == 0.0 or not diff.is_polynomial(*gens):
            return False
        return all(abs(float(c)) <= tol for c in sp.Poly(diff, *gens).coeffs())

    def __repr__(self):
        body = str(self.expr) if self.expr is not None else "<callable>"
        return f"Functional({body}, mode={self.mode!r})"


def as_functional(x) -> Functional:
    return x if isinstance(x, Functional) else Functional(x)


class VectorField:
    """Map ``omega -> u(omega)`` with components ``u_i = (u, e_i)_H``."""

    def __init__(self, components: Iterable):
        self.components = [as_functional(c) for c in components]

    @classmethod
    def constant(cls, h: Sequence[float]) -> "VectorField":
        return cls([sp.nsimplify(x) if float(x).is_integer() else float(x) for x in h])

    @classmethod
    def zeros(cls, n: int) -> "VectorField":
        return cls([0] * n)

    @classmethod
    def basis(cls, i: int, n: int) -> "VectorField":
        return cls([1 if j == i else 0 for j in range(n)])

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def arity(self) -> int:
        return max([c.arity for c in self.components] + [0])

    @property
    def is_symbolic(self) -> bool:
        return all(c.is_symbolic for c in self.components)

    @property
    def is_polynomial(self) -> bool:
        return all(c.is_polynomial for c in self.components)

    @property
    def degree(self) -> int | None:
        degs = [c.degree for c in self.components]
        return None if any(d is None for d in degs) else max(degs + [0])

    @property
    def exprs(self) -> list[sp.Expr]:
        return [c.expr for c in self.components]

    def __getitem__(self, i: int) -> Functional:
        return self.components[i]

    def __len__(self):
        return self.dim

    def _width(self, omega: np.ndarray) -> int:
        n = max(self.dim, self.arity)
        if omega.shape[-1] < n:
            raise ValueError(f"field needs {n} coordinates, got {omega.shape[-1]}")
        return n

    def __call__(self, omega, t: float = 0.0) -> np.ndarray:
        omega = _as_omega(omega)
        self._width(omega)
        return np.stack([c(omega, t) for c in self.components], axis=-1)

    def jacobian(self, omega, t: float = 0.0) -> np.ndarray:
        """Matrix of ``grad u``: entry ``[i, j] = d u_i / d omega_j`` (square in the width)."""
        omega = _as_omega(omega)
        n = omega.shape[-1]
        out = np.zeros(omega.shape + (n,))
        for i, c in enumerate(self.components):
            out[..., i, :] = c.grad(omega, t)
        return out

    def divergence(self, omega, t: float = 0.0) -> np.ndarray:
        """Skorohod divergence ``sum_i (u_i omega_i - d_i u_i)`` at ``omega``."""
        omega = _as_omega(omega)
        self._width(omega)
        total = np.zeros(omega.shape[:-1])
        for i, c in enumerate(self.components):
            total += c(omega, t) * omega[..., i]
            if c.arity > i:
                if c.mode == "finite_difference":
                    total -= c.grad(omega, t)[..., i]
                else:
                    total -= c.partial(i)(omega, t)
        return total

    def divergence_functional(self) -> Functional:
        if not self.is_symbolic:
            raise TypeError("symbolic divergence needs symbolic components")
        expr = sum((c.expr * w(i) - sp.diff(c.expr, w(i)) for i, c in enumerate(self.components)), sp.Integer(0))
        return Functional(expr)

    def dot(self, other: "VectorField") -> Functional:
        """Pointwise pairing ``(u, v)_H`` as a functional."""
        return Functional(sum((a.expr * b.expr for a, b in zip(self.components, other.components)), sp.Integer(0)))

    def pad(self, n: int) -> "VectorField":
        if n < self.dim:
            raise ValueError("cannot pad to a smaller dimension")
        return VectorField(self.components + [Functional(0)] * (n - self.dim))

    def subs(self, mapping: dict) -> "VectorField":
        return VectorField([c.subs(mapping) for c in self.components])

    def __add__(self, other: "VectorField") -> "VectorField":
        n = max(self.dim, other.dim)
        a, b = self.pad(n), other.pad(n)
        return VectorField([x + y for x, y in zip(a.components, b.components)])

    def __sub__(self, other: "VectorField") -> "VectorField":
        n = max(self.dim, other.dim)
        a, b = self.pad(n), other.pad(n)
        return VectorField([x - y for x, y in zip(a.components, b.components)])

    def __mul__(self, scalar) -> "VectorField":
        return VectorField([c * scalar for c in self.components])

    __rmul__ = __mul__

    def __neg__(self):
        return VectorField([-c for c in self.components])

    def equals(self, other: "VectorField", tol: float = 0.0) -> bool:
        n = max(self.dim, other.dim)
        a, b = self.pad(n), other.pad(n)
        return all(x.equals(y, tol) for x, y in zip(a.components, b.components))

    def __repr__(self):
        return f"VectorField({[str(c.expr) if c.is_symbolic else '<callable>' for c in self.components]})"


class OperatorField:
    """Map ``omega -> Q(omega)``, an ``n x n`` matrix whose column ``i`` is ``Q e_i``.

    Backed by a sympy matrix (exact derivatives), a constant array, or a
    callable ``omega[..., n] -> [..., n, n]`` (finite-difference derivatives).
    """

    def __init__(self, entries, dim: int | None = None, step: float = FD_STEP):
        self.step = step
        self._fn = None
        if callable(entries) and not isinstance(entries, (sp.MatrixBase, np.ndarray)):
            if dim is None:
                raise ValueError("callable operator fields need an explicit dim")
            self.matrix = None
            self._fn = entries
            self.dim = int(dim)
            return
        M = sp.Matrix(entries) if not isinstance(entries, np.ndarray) else sp.Matrix(entries.tolist())
        if M.rows != M.cols:
            raise ValueError("operator field must be square")
        self.matrix = M.applyfunc(sp.sympify)
        self.dim = M.rows

    @classmethod
    def constant(cls, A) -> "OperatorField":
        A = np.asarray(A, dtype=float)
        return cls(sp.Matrix([[sp.nsimplify(x) if float(x).is_integer() else float(x) for x in row] for row in A]))

    @classmethod
    def from_columns(cls, columns: Sequence[VectorField]) -> "OperatorField":
        n = len(columns)
        M = sp.zeros(n, n)
        for i, col in enumerate(columns):
            col = col.pad(n)
            for j in range(n):
                M[j, i] = col[j].expr
        return cls(M)

    @property
    def is_symbolic(self) -> bool:
        return self.matrix is not None

    @property
    def arity(self) -> int:
        if self.matrix is None:
            return self.dim
        return max([arity_of(e) for e in self.matrix] + [0])

    @property
    def is_constant(self) -> bool:
        return self.matrix is not None and all(arity_of(e) == 0 and T not in e.free_symbols for e in self.matrix)

    @cached_property
    def _entries(self) -> dict:
        return {(a, b): Functional(self.matrix[a, b]) for a in range(self.dim) for b in range(self.dim)
                if self.matrix[a, b] != 0}

    def _check(self, omega):
        omega = _as_omega(omega)
        if omega.shape[-1] < self.dim:
            raise ValueError(f"operator field needs {self.dim} coordinates, got {omega.shape[-1]}")
        return omega

    def __call__(self, omega, t: float = 0.0) -> np.ndarray:
        omega = self._check(omega)
        n = self.dim
        if self._fn is not None:
            out = np.asarray(self._fn(omega[..., :n]), dtype=float)
            return np.broadcast_to(out, omega.shape[:-1] + (n, n)).copy()
        out = np.zeros(omega.shape[:-1] + (n, n))
        for (a, b), f in self._entries.items():
            out[..., a, b] = f(omega, t)
        return out

    def jacobian(self, omega, t: float = 0.0) -> np.ndarray:
        """``J[..., a, b, c] = d Q_ab / d omega_c`` for ``c < n``."""
        omega = self._check(omega)
        n = self.dim
        out = np.zeros(omega.shape[:-1] + (n, n, n))
        if self._fn is not None:
            h = self.step
            for c in range(n):
                e = np.zeros(omega.shape[-1])
                e[c] = h
                out[..., c] = (self(omega + e, t) - self(omega - e, t)) / (2 * h)
            return out
        for (a, b), f in self._entries.items():
            if f.arity:
                out[..., a, b, :] = f.grad(omega, t)[..., :n]
        return out

    def column(self, i: int) -> VectorField:
        if self.matrix is None:
            n = self.dim
            return VectorField([Functional.from_callable(lambda om, a=a: self._fn(om)[..., a, i], n)
                                for a in range(n)])
        return VectorField([self.matrix[a, i] for a in range(self.dim)])

    def columns(self) -> list[VectorField]:
        return [self.column(i) for i in range(self.dim)]

    def column_divergence(self, omega, t: float = 0.0) -> np.ndarray:
        """``delta(Q e_i)`` for every ``i``: ``sum_j Q_ji omega_j - d_j Q_ji``."""
        omega = self._check(omega)
        n = self.dim
        Q = self(omega, t)
        lin = np.einsum("...ji,...j->...i", Q, omega[..., :n])
        if self.is_constant:
            return lin
        J = self.jacobian(omega, t)
        return lin - np.einsum("...jij->...i", J)

    def apply(self, u: VectorField) -> VectorField:
        """The vector field ``omega -> Q(omega) u(omega)`` (symbolic)."""
        if self.matrix is None or not u.is_symbolic:
            raise TypeError("symbolic application needs symbolic operands")
        v = sp.Matrix(u.pad(self.dim).exprs)
        return VectorField(list(self.matrix * v))

    def transpose(self) -> "OperatorField":
        if self.matrix is None:
            return OperatorField(lambda om: np.swapaxes(self._fn(om), -1, -2), dim=self.dim)
        return OperatorField(self.matrix.T)

    def __matmul__(self, other) -> "OperatorField":
        if isinstance(other, OperatorField):
            if self.matrix is not None and other.matrix is not None:
                return OperatorField(self.matrix * other.matrix)
            return OperatorField(lambda om: self(om) @ other(om), dim=self.dim)
        B = np.asarray(other, dtype=float)
        if self.matrix is not None:
            return OperatorField(self.matrix * sp.Matrix(B.tolist()))
        return OperatorField(lambda om: self(om) @ B, dim=self.dim)

    def __mul__(self, scalar) -> "OperatorField":
        if self.matrix is None:
            return OperatorField(lambda om: self(om) * float(scalar), dim=self.dim)
        s = scalar.expr if isinstance(scalar, Functional) else sp.sympify(scalar)
        return OperatorField(self.matrix * s)

    __rmul__ = __mul__

    def __add__(self, other: "OperatorField") -> "OperatorField":
        if self.matrix is not None and other.matrix is not None:
            return OperatorField(self.matrix + other.matrix)
        return OperatorField(lambda om: self(om) + other(om), dim=self.dim)

    def subs(self, mapping: dict) -> "OperatorField":
        if self.matrix is None:
            raise TypeError("substitution needs a symbolic operator field")
        return OperatorField(self.matrix.subs(mapping, simultaneous=True))

    def skew_residual(self, omega, t: float = 0.0) -> float:
        Q = self(omega, t)
        return float(np.abs(Q + np.swapaxes(Q, -1, -2)).max())

    def isometry_residual(self, omega, t: float = 0.0) -> float:
        Q = self(omega, t)
        return float(np.abs(np.swapaxes(Q, -1, -2) @ Q - np.eye(self.dim)).max())

    def __repr__(self):
        return f"OperatorField({self.matrix.tolist() if self.matrix is not None else '<callable>'})"
