"""Hermite chaos expansions and the Ornstein-Uhlenbeck operator.

Basis functions are the orthonormal products ``prod_j He_{a_j}(w_j) / sqrt(a_j!)``
over the chosen variables.  Coefficients are sympy numbers, or expressions in
variables outside the expansion when a functional is expanded only in some of
its coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import sympy as sp

from .fields import Functional, w


def _power_to_hermite(p: int) -> dict[int, sp.Rational]:
    """``x^p = sum_k c_k He_k(x)`` with ``c_{p-2m} = p! / (2^m m! (p-2m)!)``."""
    return {p - 2 * m: sp.Rational(math.factorial(p), 2**m * math.factorial(m) * math.factorial(p - 2 * m))
            for m in range(p // 2 + 1)}


def hermite_e(k: int, x: sp.Expr) -> sp.Expr:
    return sp.expand(sp.hermite_prob(k, x))


@dataclass
class ChaosExpansion:
    """``F = sum_alpha c_alpha H_alpha`` in the variables ``variables`` (0-based)."""

    variables: tuple[int, ...]
    coeffs: dict = field(default_factory=dict)

    @classmethod
    def from_functional(cls, F, variables=None) -> "ChaosExpansion":
        F = F if isinstance(F, Functional) else Functional(F)
        if variables is None:
            variables = tuple(range(F.arity))
        variables = tuple(variables)
        gens = [w(i) for i in variables]
        if not gens:
            return cls(variables, {(): sp.expand(F.expr)} if F.expr != 0 else {})
        if not F.expr.is_polynomial(*gens):
            raise ValueError("chaos expansion needs a polynomial in the expansion variables")
        coeffs: dict = {}
        for powers, c in sp.Poly(sp.expand(F.expr), *gens).terms():
            parts = [_power_to_hermite(p) for p in powers]
            combos = [((), sp.Integer(1))]
            for part in parts:
                combos = [(a + (k,), v * ck) for a, v in combos for k, ck in part.items()]
            for alpha, v in combos:
                norm = sp.sqrt(sp.Integer(math.prod(math.factorial(k) for k in alpha)))
                coeffs[alpha] = coeffs.get(alpha, 0) + c * v * norm
        coeffs = {a: sp.expand(v) for a, v in coeffs.items() if sp.expand(v) != 0}
        return cls(variables, coeffs)

    def to_functional(self) -> Functional:
        expr = sp.Integer(0)
        for alpha, c in self.coeffs.items():
            term = c
            for i, k in zip(self.variables, alpha):
                term *= hermite_e(k, w(i)) / sp.sqrt(sp.Integer(math.factorial(k)))
            expr += term
        return Functional(sp.expand(expr), mode="hermite")

    @property
    def mean(self):
        return self.coeffs.get((0,) * len(self.variables), sp.Integer(0))

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self.coeffs), default=0)

    def second_moment(self):
        """``E F^2 = sum c_alpha^2`` (for numeric coefficients)."""
        return sum((c**2 for c in self.coeffs.values()), sp.Integer(0))

    def scale_by_order(self, fn) -> "ChaosExpansion":
        return ChaosExpansion(self.variables, {a: sp.expand(c * fn(sum(a))) for a, c in self.coeffs.items()})


def ou_apply(F: ChaosExpansion) -> ChaosExpansion:
    """Ornstein-Uhlenbeck operator: multiplies the order-``k`` chaos by ``k``."""
    return ChaosExpansion(F.variables, {a: c * sum(a) for a, c in F.coeffs.items() if sum(a)})


def ou_inverse(F: ChaosExpansion, tol: float = 1e-12) -> ChaosExpansion:
    """Inverse on mean-zero functionals: divides the order-``k`` chaos by ``k``."""
    c0 = F.mean
    if c0 != 0 and (not c0.is_number or abs(float(c0)) > tol):
        raise ValueError("ou_inverse needs a mean-zero functional")
    return ChaosExpansion(F.variables, {a: c / sum(a) for a, c in F.coeffs.items() if sum(a)})
