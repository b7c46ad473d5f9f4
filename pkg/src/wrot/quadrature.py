"""Gaussian expectations by tensor Gauss-Hermite quadrature or exact moments."""
from __future__ import annotations

import itertools
import math
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import sympy as sp
from numpy.polynomial.hermite_e import hermegauss

from .core import RngStream
from .fields import coord_index, w

MAX_TENSOR_AXES = 8
MC_FALLBACK_SAMPLES = 200_000


def required_order(degree: int) -> int:
    """Nodes per axis for exactness on polynomials of the given degree (2q - 1 >= degree)."""
    return max(1, math.ceil((degree + 1) / 2))


def default_order(degree: int) -> int:
    return required_order(degree) + 2


@lru_cache(maxsize=None)
def hermite_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Probabilists' Gauss-Hermite nodes with weights summing to one."""
    x, wts = hermegauss(order)
    return x, wts / wts.sum()


def tensor_rule(order: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    x, wts = hermite_rule(order)
    if dim == 0:
        return np.zeros((1, 0)), np.ones(1)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    weights = np.ones(1)
    for _ in range(dim):
        weights = np.outer(weights, wts).ravel()
    return nodes, weights


def expectation(
    fn: Callable[[np.ndarray], np.ndarray],
    dim: int,
    order: int | None = None,
    degree: int | None = None,
    rng: RngStream | None = None,
) -> np.ndarray:
    """``E fn(Z)`` for ``Z ~ N(0, I_dim)``.

    ``degree`` is the polynomial degree of the integrand when known; an
    explicit ``order`` below the exactness requirement raises.  Beyond
    ``MAX_TENSOR_AXES`` axes a seeded Monte Carlo estimate is returned instead.
    """
    if degree is not None:
        need = required_order(degree)
        if order is None:
            order = default_order(degree)
        elif order < need:
            raise ValueError(f"quadrature order {order} too small for degree {degree} (need {need})")
    if order is None:
        order = 20
    if dim > MAX_TENSOR_AXES:
        z = (rng or RngStream(0)).normal(MC_FALLBACK_SAMPLES, dim)
        return np.mean(np.asarray(fn(z)), axis=0)
    nodes, weights = tensor_rule(order, dim)
    vals = np.asarray(fn(nodes), dtype=float)
    return np.tensordot(weights, vals, axes=(0, 0))


def gaussian_moment(p: int) -> int:
    """``E Z^p`` for a standard Gaussian: ``(p - 1)!!`` for even ``p``."""
    if p % 2:
        return 0
    return math.prod(range(p - 1, 0, -2)) if p else 1


def integrate_out(expr: sp.Expr, indices: Sequence[int], order: int | None = None) -> sp.Expr:
    """Integrate the listed coordinates against ``N(0, 1)``, keeping the others symbolic.

    Polynomial dependence on the integrated coordinates is integrated with
    exact Gaussian moments, which is what Gauss-Hermite quadrature of
    sufficient order returns.  Otherwise a tensor Gauss-Hermite rule of the
    given order (default 20) is applied node by node.
    """
    expr = sp.sympify(expr)
    gens = [w(i) for i in indices if w(i) in expr.free_symbols]
    if not gens:
        return expr
    poly_gens = [g for g in gens if expr.is_polynomial(g)]
    if poly_gens and len(poly_gens) < len(gens):
        # exact moments for the polynomial coordinates first, quadrature for the rest
        inner = integrate_out(expr, [coord_index(g) for g in poly_gens], order=order)
        return integrate_out(inner, [coord_index(g) for g in gens if g not in poly_gens], order=order)
    if expr.is_polynomial(*gens):
        poly = sp.Poly(sp.expand(expr), *gens)
        if order is not None:
            need = required_order(max(poly.degree(g) for g in gens))
            if order < need:
                raise ValueError(f"quadrature order {order} too small (need {need})")
        total = sp.Integer(0)
        for powers, coeff in poly.terms():
            m = math.prod(gaussian_moment(p) for p in powers)
            if m:
                total += m * coeff
        return sp.expand(total)
    x, wts = hermite_rule(order or 20)
    total = sp.Integer(0)
    for combo in itertools.product(range(len(x)), repeat=len(gens)):
        weight = float(np.prod([wts[c] for c in combo]))
        total += weight * expr.subs({g: float(x[c]) for g, c in zip(gens, combo)})
    return total
