"""Tangent operators ``L_{Q,u} F = delta(Q grad F) + grad_u F`` and tangent processes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import sympy as sp
from scipy.linalg import expm

from .core import BasisSpec, RngStream, embed_path, haar_matrix
from .fields import FD_STEP, Functional, OperatorField, VectorField, as_functional, w
from .quadrature import integrate_out
from .rotations import Rotation

EXP_CLIP = 6.0


def _as_operator(Q) -> OperatorField:
    return Q if isinstance(Q, OperatorField) else OperatorField.constant(Q)


@dataclass
class TangentOperator:
    Q: OperatorField
    u: VectorField | None = None

    def __post_init__(self):
        self.Q = _as_operator(self.Q)

    @property
    def dim(self) -> int:
        return self.Q.dim

    def functional(self, F) -> Functional:
        """``L_{Q,u} F`` as a symbolic functional."""
        F = as_functional(F)
        F._require_symbolic()
        n = max(self.dim, F.arity)
        if F.arity > self.dim:
            raise ValueError("functional depends on coordinates outside the operator's range")
        Qg = self.Q.apply(F.gradient_field(self.dim))
        expr = Qg.divergence_functional().expr
        if self.u is not None:
            expr += F.gradient_field(n).dot(self.u.pad(n)).expr
        return Functional(sp.expand(expr) if expr.is_polynomial() else expr)

    def __call__(self, F, omega) -> np.ndarray:
        return self.functional(F)(np.asarray(omega, dtype=float))


def tangent_apply(L: TangentOperator, F, omega) -> np.ndarray:
    return L(F, omega)


def _skew_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if np.abs(A + A.T).max() > 1e-12:
        raise ValueError("A must be skew")
    return A


def directional_derivative_check(A, F, omega, tau: float = 1e-3) -> tuple[np.ndarray, np.ndarray, float]:
    """Central difference of ``t -> F(exp(tA)^T omega)`` at 0 against ``delta(A grad F)``."""
    A = _skew_matrix(A)
    F = as_functional(F)
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    fwd = omega @ expm(tau * A)        # rows of exp(tA)^T omega
    bwd = omega @ expm(-tau * A)
    fd = (F(fwd) - F(bwd)) / (2 * tau)
    analytic = TangentOperator(OperatorField.constant(A))(F, omega)
    return fd, analytic, float(np.abs(fd - analytic).max())


def derivation_check(Q, F1, F2, omega) -> float:
    """Residual of ``L(F1 F2) = F1 L F2 + F2 L F1``."""
    L = TangentOperator(_as_operator(Q))
    F1, F2 = as_functional(F1), as_functional(F2)
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    lhs = L(F1 * F2, omega)
    rhs = F1(omega) * L(F2, omega) + F2(omega) * L(F1, omega)
    return float(np.abs(lhs - rhs).max())


def exp_identity_check(Q, F, omega, f=sp.sin, h=None) -> tuple[float, float]:
    """Residuals of ``L e^F = e^F L F`` and ``L f(delta h) = f'(delta h) delta(Q h)``."""
    Q = _as_operator(Q)
    L = TangentOperator(Q)
    F = as_functional(F)
    n = Q.dim
    omega = np.clip(np.atleast_2d(np.asarray(omega, dtype=float)), -EXP_CLIP, EXP_CLIP)
    eF = Functional(sp.exp(F.expr))
    r1 = float(np.abs(L(eF, omega) - eF(omega) * L(F, omega)).max())
    h = np.eye(n)[0] if h is None else np.asarray(h, dtype=float)
    x = sp.Symbol("x")
    dh = sum(float(h[i]) * w(i) for i in range(n))
    fd = Functional(f(dh))
    fprime = Functional(sp.diff(f(x), x).subs(x, dh))
    Qh = Q(omega) @ h
    delta_Qh = np.einsum("...i,...i->...", Qh, omega[..., :n])
    if not Q.is_constant:
        delta_Qh = delta_Qh - np.einsum("...jkj,k->...", Q.jacobian(omega), h)
    r2 = float(np.abs(L(fd, omega) - fprime(omega) * delta_Qh).max())
    return r1, r2


@dataclass
class AdjointProbe:
    lhs: float            # E[G L_{Q,u} F]
    transpose_form: float  # E[F (L_{Q^T} G + delta(G u))]
    printed_form: float      # E[F (L_Q G + delta(G u))]

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.transpose_form)


def _mean(expr) -> float:
    expr = sp.expand(expr)
    idx = sorted({int(s.name[1:]) - 1 for s in expr.free_symbols if s.name.startswith("w")})
    return float(integrate_out(expr, idx))


def adjoint_probe(Q, u: VectorField | None, F, G) -> AdjointProbe:
    """Gaussian expectations of both adjoint forms, computed with exact moments."""
    Q = _as_operator(Q)
    if not Q.is_constant:
        raise ValueError("adjoint probe needs a constant operator")
    F, G = as_functional(F), as_functional(G)
    if not (F.is_polynomial and G.is_polynomial):
        raise ValueError("adjoint probe needs polynomial functionals")
    n = Q.dim
    LF = TangentOperator(Q, u).functional(F)
    lhs = _mean(G.expr * LF.expr)
    shift = sp.Integer(0)
    if u is not None:
        shift = VectorField([G.expr * c.expr for c in u.pad(n).components]).divergence_functional().expr
    tr = _mean(F.expr * (TangentOperator(Q.transpose()).functional(G).expr + shift))
    pf = _mean(F.expr * (TangentOperator(Q).functional(G).expr + shift))
    return AdjointProbe(lhs, tr, pf)


def unbiasedness_check(Q, F, gprime: Callable[[np.ndarray], np.ndarray], samples: int = 100_000,
                       seed: int = 0) -> tuple[float, float]:
    """Monte Carlo ``E[g'(F) L_Q F]`` (the t-derivative of ``E g(F o T_t)`` at 0) and its stderr."""
    L = TangentOperator(_as_operator(Q))
    F = as_functional(F)
    omega = RngStream(seed).normal(samples, L.dim)
    vals = np.asarray(gprime(F(omega))) * L(F, omega)
    return float(vals.mean()), float(vals.std() / np.sqrt(samples))


def _shifted_column_divergence(R: OperatorField, omega: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """``delta(R(. + shift) e_i)`` evaluated at ``omega``."""
    n = R.dim
    moved = omega + shift
    lin = np.einsum("...ji,...j->...i", R(moved), omega[..., :n])
    if R.is_constant:
        return lin
    return lin - np.einsum("...jij->...i", R.jacobian(moved))


def shift_derivative(R: OperatorField, F, omega, step: float = FD_STEP) -> np.ndarray:
    """``X^R F``: component ``k`` is ``sum_i (d_i F)(T omega) d/dt delta(R(. + t e_k) e_i)`` at 0."""
    F = as_functional(F)
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    n = R.dim
    gF = F.grad(R.column_divergence(omega))[..., :n]
    out = np.zeros(omega.shape[:-1] + (n,))
    if R.is_constant:
        return out
    for k in range(n):
        e = np.zeros(omega.shape[-1])
        e[k] = step
        d = (_shifted_column_divergence(R, omega, e) - _shifted_column_divergence(R, omega, -e)) / (2 * step)
        out[..., k] = np.einsum("...i,...i->...", gF, d)
    return out


def pushforward_gradient_check(R: OperatorField, F, omega) -> float:
    """Residual of ``grad(F o T) = R (grad F o T) + X^R F``; the left side is symbolic."""
    R = _as_operator(R)
    F = as_functional(F)
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    n = R.dim
    eta = Rotation(R).coordinate_functionals()
    comp = Functional(F.expr.subs({w(i): eta[i].expr for i in range(n)}, simultaneous=True))
    lhs = comp.grad(omega)[..., :n]
    gF = F.grad(R.column_divergence(omega))[..., :n]
    rhs = np.einsum("...ki,...i->...k", R(omega), gF) + shift_derivative(R, F, omega)
    return float(np.abs(lhs - rhs).max())


@dataclass
class TangentProcess:
    Q: OperatorField
    coords: np.ndarray
    path: tuple[np.ndarray, np.ndarray] | None = None


def tangent_process(Q, omega, basis: BasisSpec | None = None) -> TangentProcess:
    """Coordinates ``Y_i = delta(Q e_i)(omega)``, with the Haar path when requested."""
    Q = _as_operator(Q)
    Y = Q.column_divergence(np.asarray(omega, dtype=float))
    path = embed_path(basis, Y) if basis is not None and basis.kind == "haar" else None
    return TangentProcess(Q, Y, path)


def tangent_field(Q: OperatorField) -> VectorField:
    """``L_Q w`` as a symbolic vector field."""
    return VectorField([c.divergence_functional() for c in _as_operator(Q).columns()])


def phi_q_identity_check(phi, Q, omega) -> float:
    """Residual of ``L_{phi Q} w = phi L_Q w - Q^T grad phi``."""
    Q = _as_operator(Q)
    phi = as_functional(phi)
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    n = Q.dim
    lhs = (Q * phi).column_divergence(omega)
    gphi = phi.grad(omega)[..., :n]
    rhs = phi(omega)[..., None] * Q.column_divergence(omega) - np.einsum("...ji,...j->...i", Q(omega), gphi)
    return float(np.abs(lhs - rhs).max())


@dataclass
class PairingResult:
    lhs: np.ndarray       # <L_Q w, u>
    rhs: np.ndarray       # delta(Q u) + trace(grad u Q)
    residual: float
    tangent_residual: float | None = None   # |<L_Q w, grad F> - L_Q F| when u = grad F


def pairing_check(Q, u, omega) -> PairingResult:
    """Check ``<L_Q w, u> = delta(Q u) + trace(grad u Q)``.

    ``u`` may be a vector field or a functional ``F`` (then ``u = grad F`` and
    the distance to ``L_Q F`` is reported as well).
    """
    Q = _as_operator(Q)
    n = Q.dim
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    F = None
    if not isinstance(u, VectorField):
        F = as_functional(u)
        u = F.gradient_field(n)
    u = u.pad(n)
    Y = Q.column_divergence(omega)
    uv = u(omega)[..., :n]
    lhs = np.einsum("...i,...i->...", Y, uv)
    J = u.jacobian(omega)[..., :n, :n]
    rhs = Q.apply(u).divergence(omega) + np.einsum("...ij,...ji->...", J, Q(omega))
    res = float(np.abs(lhs - rhs).max())
    tres = None
    if F is not None:
        tres = float(np.abs(lhs - TangentOperator(Q)(F, omega)).max())
    return PairingResult(lhs, rhs, res, tres)


def divfree_tangent_check(Q, omega) -> float:
    """``max |delta(L_Q w)|`` at the sampled points."""
    return float(np.abs(tangent_field(_as_operator(Q)).divergence(np.atleast_2d(omega))).max())


# --- kernels and Ito integrals ------------------------------------------------

@dataclass
class KernelSpec:
    """Deterministic matrix kernel on ``[0, 1]``.

    Either ``b(s)`` (returns ``(..., d, d)`` for an array of times) giving the
    operator ``(B h)'(s) = b(s)^T h'(s)``, or ``q(theta, u)`` giving
    ``(Q h)'(theta) = int q(theta, u) h'(u) du``.  Deterministic kernels are
    adapted to every filtration of the driving path.
    """

    d: int
    b: Callable[[np.ndarray], np.ndarray] | None = None
    q: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    adapted: bool = True

    def __post_init__(self):
        if (self.b is None) == (self.q is None):
            raise ValueError("give exactly one of b and q")


def _cell_average_b(k: KernelSpec, n: int, sub: int = 8) -> np.ndarray:
    s = (np.arange(n * sub) + 0.5) / (n * sub)
    return np.asarray(k.b(s), dtype=float).reshape(n, sub, k.d, k.d).mean(axis=1)


def _cell_average_q(k: KernelSpec, n: int, sub: int = 4) -> np.ndarray:
    s = (np.arange(n * sub) + 0.5) / (n * sub)
    vals = np.asarray(k.q(s[:, None], s[None, :]), dtype=float)
    return vals.reshape(n, sub, n, sub, k.d, k.d).mean(axis=(1, 3))


def kernel_operator(k: KernelSpec, n: int) -> np.ndarray:
    """Matrix of the kernel operator on the Haar coordinates of ``d`` paths with ``n`` cells each.

    Coordinate ``(c, j)`` (index ``c * n + j``) is the ``j``-th Haar direction of
    path component ``c``.
    """
    H = haar_matrix(n)
    d = k.d
    if k.b is not None:
        bt = np.swapaxes(_cell_average_b(k, n), -1, -2)        # (cell, out, in)
        M = np.einsum("kx,xab,jx->akbj", H, bt, H) / n
    else:
        K = _cell_average_q(k, n)                              # (cell_theta, cell_u, out, in)
        M = np.einsum("kx,xyab,jy->akbj", H, K, H) / n**2
    return M.reshape(d * n, d * n)


def haar_coordinates(dw: np.ndarray) -> np.ndarray:
    """Haar coordinates of ``d`` Brownian paths from cell increments ``dw[..., cell, c]``."""
    n = dw.shape[-2]
    omega = np.einsum("kx,...xc->...ck", haar_matrix(n), dw)
    return omega.reshape(dw.shape[:-2] + (-1,))


def series_path(k: KernelSpec, dw: np.ndarray) -> np.ndarray:
    """Haar embedding of ``sum_i delta(Q e_i) e_i``; returns values on the grid, ``(..., n + 1, d)``."""
    n, d = dw.shape[-2], dw.shape[-1]
    Q = kernel_operator(k, n)
    Y = haar_coordinates(dw) @ Q                           # Y_i = sum_j Q_ji omega_j
    Y = Y.reshape(dw.shape[:-2] + (d, n))
    deriv = np.einsum("...ck,kx->...xc", Y, haar_matrix(n))
    return _primitive(deriv / n)


def _primitive(incr: np.ndarray) -> np.ndarray:
    zero = np.zeros(incr.shape[:-2] + (1, incr.shape[-1]))
    return np.concatenate([zero, np.cumsum(incr, axis=-2)], axis=-2)


def ito_path(integrand: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """Forward-Euler ``int_0^t a(s) dw_s`` with ``integrand[cell]`` evaluated at left endpoints."""
    return _primitive(np.einsum("xab,...xb->...xa", integrand, dw))


def integrand_b(k: KernelSpec, n: int) -> np.ndarray:
    """``b`` at the left endpoints of ``n`` cells."""
    return np.asarray(k.b(np.arange(n) / n), dtype=float)


def integrand_q(k: KernelSpec, n: int, sub: int = 16) -> np.ndarray:
    """``int_0^1 q(theta, u) du`` at left endpoints ``theta`` (midpoint rule in ``u``)."""
    theta = np.arange(n) / n
    u = (np.arange(n * sub) + 0.5) / (n * sub)
    vals = np.asarray(k.q(theta[:, None], u[None, :]), dtype=float)
    return vals.mean(axis=1)


def kernel_tangent_compare(k: KernelSpec, level: int, samples: int = 200, seed: int = 0
                           ) -> tuple[np.ndarray, np.ndarray, float]:
    """Series tangent path versus the forward-Euler Ito path on ``2**level`` cells.

    Returns ``(series_path, ito_path, sup_gap)`` where the gap is the largest
    absolute path difference over samples, grid points and components.
    """
    n = 2**level
    dw = brownian_increments(samples, n, k.d, seed)
    s = series_path(k, dw)
    a = integrand_b(k, n) if k.b is not None else integrand_q(k, n)
    i = ito_path(a, dw)
    return s, i, float(np.abs(s - i).max())


def double_integral_path(k: KernelSpec, dw: np.ndarray) -> np.ndarray:
    """``int_0^t (int_0^1 q(s, u)^T dw_s) du`` with the cell-averaged kernel.

    This is what the series ``sum_i delta(Q e_i) e_i`` equals for a general
    deterministic kernel; it reduces to ``int b dw`` for ``q = b(theta) delta(theta - u)``.
    """
    if k.q is None:
        raise ValueError("double integral form needs a q kernel")
    n = dw.shape[-2]
    K = _cell_average_q(k, n)                              # (x, y, a, c)
    deriv = np.einsum("xyac,...xa->...yc", K, dw)
    return _primitive(deriv / n)


def kernel_series_identity(k: KernelSpec, level: int, samples: int = 50, seed: int = 0) -> float:
    """Sup gap between the series tangent path and :func:`double_integral_path`."""
    dw = brownian_increments(samples, 2**level, k.d, seed)
    return float(np.abs(series_path(k, dw) - double_integral_path(k, dw)).max())


def brownian_increments(samples: int, n: int, d: int, seed: int) -> np.ndarray:
    g = RngStream(seed).generator(3, n, d)
    return g.standard_normal((samples, n, d)) / np.sqrt(n)


def mollified_kernel(b: Callable[[np.ndarray], np.ndarray], eps: float) -> Callable:
    """``q(theta, u) = b(u) 1{theta - eps < u <= theta} / |window|``, window clipped at 0."""
    def q(theta, u):
        theta, u = np.broadcast_arrays(np.asarray(theta, dtype=float), np.asarray(u, dtype=float))
        lo = np.maximum(theta - eps, 0.0)
        width = np.maximum(theta - lo, 1e-300)
        inside = ((u > lo) & (u <= theta)).astype(float)
        return np.asarray(b(u)) * (inside / width)[..., None, None]
    return q


def mollifier_profile(b: Callable[[np.ndarray], np.ndarray], d: int, eps_list, level: int = 12,
                      samples: int = 200, seed: int = 0) -> np.ndarray:
    """``E sup_t |int q_eps-form - int b dw|`` for each ``eps`` on one shared set of increments.

    The kernel form uses the integrand ``int q_eps(theta, u) du``, i.e. the
    window average of ``b`` ending at ``theta``; integrals are exact cell sums
    of ``b`` on the fine grid.
    """
    n = 2**level
    dw = brownian_increments(samples, n, d, seed)
    sub = 8
    fine = (np.arange(n * sub) + 0.5) / (n * sub)
    bf = np.asarray(b(fine), dtype=float)
    csum = np.concatenate([np.zeros((1, d, d)), np.cumsum(bf, axis=0) / (n * sub)])
    theta = np.arange(n) / n
    direct = ito_path(integrand_b(KernelSpec(d, b=b), n), dw)
    out = []
    for eps in eps_list:
        lo = np.maximum(theta - eps, 0.0)
        ia = np.rint(lo * n * sub).astype(int)
        ib = np.rint(theta * n * sub).astype(int)
        width = np.maximum(ib - ia, 1) / (n * sub)
        avg = (csum[ib] - csum[ia]) / width[:, None, None]
        avg[0] = bf[0]                                    # empty window at theta = 0
        gap = np.abs(ito_path(avg, dw) - direct).max(axis=(-2, -1))
        out.append(gap.mean())
    return np.array(out)
