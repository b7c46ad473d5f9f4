"""Gradient, divergence, Ornstein-Uhlenbeck inverse, decompositions and lifts."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import sympy as sp

from .chaos import ChaosExpansion, ou_inverse
from .core import Filtration
from .fields import Functional, VectorField, as_functional, w
from .quadrature import expectation, integrate_out

CONVENTIONS = ("predictable", "adapted")


def grad(F: Functional, omega) -> np.ndarray:
    return as_functional(F).grad(omega)


def divergence(u: VectorField, omega) -> np.ndarray:
    """``delta(u) = sum_i (u_i omega_i - d u_i / d omega_i)``."""
    out = u.divergence(omega)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite divergence")
    return out


def _width(u: VectorField) -> int:
    return max(u.dim, u.arity)


def energy_identity_check(u: VectorField, order: int | None = None) -> tuple[float, float, float]:
    """Both sides of ``E(delta u)^2 = E|u|^2 + E trace (grad u)^2`` by quadrature.

    Returns ``(lhs, rhs, gap)``.
    """
    if not u.is_polynomial:
        raise ValueError("energy identity by quadrature needs polynomial components")
    m = _width(u)
    u = u.pad(m)
    deg = 2 * (u.degree + 1)

    def integrand(z):
        d = u.divergence(z)
        v = u(z)
        J = u.jacobian(z)
        tr = np.einsum("...ij,...ji->...", J, J)
        return np.stack([d**2, (v**2).sum(-1), tr], axis=-1)

    lhs, norm, trace = expectation(integrand, m, order=order, degree=deg)
    rhs = norm + trace
    return float(lhs), float(rhs), float(abs(lhs - rhs))


def ou_representation(F: Functional) -> VectorField:
    """``grad L^{-1} F`` for a mean-zero polynomial ``F``; its divergence is ``F``."""
    chaos = ChaosExpansion.from_functional(F)
    G = ou_inverse(chaos).to_functional()
    return G.gradient_field(max(F.arity, 1))


def decompose_exact_divfree(u: VectorField) -> tuple[VectorField, VectorField]:
    """Split ``u`` into ``grad L^{-1} delta u`` plus a divergence-free remainder."""
    if not (u.is_symbolic and u.is_polynomial):
        raise ValueError("decomposition needs polynomial components")
    n = _width(u)
    u = u.pad(n)
    F = u.divergence_functional()
    if F.arity == 0 and F.expr == 0:
        return VectorField.zeros(n), u
    chaos = ChaosExpansion.from_functional(F, variables=range(n))
    G = ou_inverse(chaos).to_functional()
    u_e = VectorField([sp.expand(sp.diff(G.expr, w(i))) for i in range(n)])
    u_df = VectorField([sp.expand(a.expr - b.expr) for a, b in zip(u.components, u_e.components)])
    return u_e, u_df


def conditional_expectation(F: Functional, k: int, order: int | None = None) -> Functional:
    """``E[F | omega_1, ..., omega_k]`` as a functional of arity at most ``k``."""
    F = as_functional(F)
    F._require_symbolic()
    if k < 0:
        raise ValueError("k must be nonnegative")
    return Functional(integrate_out(F.expr, range(k, F.arity), order=order))


def expectation_of(F: Functional, order: int | None = None) -> float:
    return float(conditional_expectation(F, 0, order).expr)


def _conditional(expr, keep: Sequence[int], n: int, order=None) -> sp.Expr:
    keep = set(keep)
    return integrate_out(expr, [i for i in range(n) if i not in keep], order=order)


def clark_ocone_lift(F: Functional, f: Filtration, convention: str = "predictable",
                     order: int | None = None) -> VectorField:
    """Adapted field ``u`` with ``delta(u) = F - E F``.

    ``predictable``: the component on a coordinate of block ``k`` is
    ``E[d F / d omega_j | blocks < k]``.  Exact whenever every martingale
    difference is linear in its own block, e.g. multi-affine polynomials.

    ``adapted``: block ``k`` carries ``grad_k L_k^{-1}`` of the martingale
    difference ``E[F | blocks <= k] - E[F | blocks < k]`` taken in the block
    variables only.  Exact for every polynomial, but components may depend on
    their own coordinate (so ``grad u`` has a diagonal part).
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    F = as_functional(F)
    F._require_symbolic()
    n = f.dim
    if F.arity > n:
        raise ValueError(f"filtration of dimension {n} cannot carry a functional of arity {F.arity}")
    comps: list = [sp.Integer(0)] * n
    for k in range(1, f.n_blocks + 1):
        past = f.revealed(k - 1)
        block = f.block(k)
        if convention == "predictable":
            for j in block:
                comps[j] = sp.expand(_conditional(sp.diff(F.expr, w(j)), past, n, order))
            continue
        now = _conditional(F.expr, past + block, n, order)
        before = _conditional(F.expr, past, n, order)
        diff = sp.expand(now - before)
        if diff == 0:
            continue
        gens = [w(j) for j in block]
        if not diff.is_polynomial(*gens):
            raise ValueError("adapted lift needs polynomial dependence on each block")
        G = ou_inverse(ChaosExpansion.from_functional(Functional(diff), variables=block)).to_functional()
        for j in block:
            comps[j] = sp.expand(sp.diff(G.expr, w(j)))
    return VectorField(comps)


@dataclass
class SkewColumnResult:
    condition_holds: bool
    pairing_residual: float
    divergence_residual: float


def lemma21_check(v: Sequence[VectorField], omega, tol: float = 1e-12) -> SkewColumnResult:
    """Check the pairing condition on ``v_i`` and, when it holds, ``delta(sum delta(v_i) e_i) = 0``.

    The divergence residual is always computed so violated cases show a
    nonzero value.
    """
    n = len(v)
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    vals = np.stack([vi.pad(n)(omega) for vi in v], axis=-2)  # [..., i, j] = (v_i, e_j)
    pairing = float(np.abs(vals + np.swapaxes(vals, -1, -2)).max())
    u = VectorField([vi.divergence_functional() for vi in v])
    resid = float(np.abs(u.divergence(omega)).max())
    return SkewColumnResult(pairing <= tol, pairing, resid)


def random_polynomial(gen: np.random.Generator, n: int, degree: int, terms: int = 5,
                      multiaffine: bool = False) -> Functional:
    """Random polynomial in ``w1..wn`` with small rational coefficients."""
    expr = sp.Integer(0)
    for _ in range(terms):
        if multiaffine:
            size = int(gen.integers(0, min(degree, n) + 1))
            powers = np.zeros(n, dtype=int)
            powers[gen.choice(n, size=size, replace=False)] = 1
        else:
            total = int(gen.integers(0, degree + 1))
            powers = np.bincount(gen.integers(0, n, size=total), minlength=n)
        coeff = sp.Rational(int(gen.integers(-8, 9)), 4)
        expr += coeff * sp.Mul(*[w(i) ** int(p) for i, p in enumerate(powers)])
    return Functional(sp.expand(expr))


def random_field(gen: np.random.Generator, n: int, degree: int, terms: int = 3) -> VectorField:
    return VectorField([random_polynomial(gen, n, degree, terms) for _ in range(n)])
