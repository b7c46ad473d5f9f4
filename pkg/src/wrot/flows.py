"""Flows generated by divergence-free drifts built from skew operator families."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import sympy as sp

from .core import BasisSpec, RngStream, map_batches, w_norm
from .fields import T, Functional, OperatorField, VectorField, w
from .malliavin import conditional_expectation
from .quadrature import integrate_out
from .stats import GaussianityReport, gaussianity_report
from .tangent import tangent_field

SKEW_TOL = 1e-12
DIV_TOL = 1e-10
BLOWUP = 1e6
EXP_CLIP = 700.0
SCHEMES = ("euler", "rk4")


@dataclass
class DriftField:
    """Time-dependent vector field ``B_t(omega)``; ``t`` enters through the symbol ``t``."""

    field: VectorField
    source: OperatorField | None = None

    @property
    def dim(self) -> int:
        return max(self.field.dim, self.field.arity)

    def __call__(self, omega, t: float = 0.0) -> np.ndarray:
        return self.field.pad(self.dim)(omega, t)

    def jacobian(self, omega, t: float = 0.0) -> np.ndarray:
        return self.field.pad(self.dim).jacobian(omega, t)

    def divergence(self, omega, t: float = 0.0) -> np.ndarray:
        return self.field.pad(self.dim).divergence(omega, t)

    def __sub__(self, other: "DriftField") -> "DriftField":
        return DriftField(self.field - other.field)

    def scaled(self, c: float) -> "DriftField":
        return DriftField(self.field * c)


def drift_from_skew_family(A: OperatorField, omega_check, times=(0.0,)) -> DriftField:
    """``B_t = sum_i delta(A_t e_i) e_i`` with skewness and zero divergence verified."""
    omega_check = np.atleast_2d(np.asarray(omega_check, dtype=float))
    B = DriftField(tangent_field(A), A)
    for t in times:
        if A.skew_residual(omega_check, t) > SKEW_TOL:
            raise ValueError(f"A_t is not skew at t={t}")
        if np.abs(B.divergence(omega_check, t)).max(initial=0.0) > DIV_TOL:
            raise ValueError(f"drift is not divergence free at t={t}")
    return B


@dataclass
class Projection:
    conditioned_entries: VectorField     # sum_i delta(E[p_m A e_i | V_m]) e_i
    conditioned_divergence: VectorField  # sum_i E[delta(p_m A e_i) | V_m] e_i
    residual: float
    divergence: float

    @property
    def drift(self) -> DriftField:
        return DriftField(self.conditioned_entries)


def _projected_column(A: OperatorField, i: int, m: int) -> VectorField:
    return VectorField([A.matrix[j, i] for j in range(m)])


def cylindrical_projection(A: OperatorField, m: int, omega) -> Projection:
    """Both cylindrical approximations of the drift, their gap and divergence at ``omega``."""
    if not A.is_symbolic:
        raise TypeError("projection needs a symbolic operator family")
    n = A.dim
    if not 0 <= m <= n:
        raise ValueError("m must lie in [0, dim]")
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    first, second = [], []
    for i in range(m):
        col = _projected_column(A, i, m)
        cond = VectorField([conditional_expectation(c, m).expr for c in col.components])
        first.append(cond.divergence_functional().expr)
        second.append(conditional_expectation(col.divergence_functional(), m).expr)
    f1 = VectorField(first or [0]).pad(n)
    f2 = VectorField(second or [0]).pad(n)
    ts = np.linspace(0, 1, 3)
    res = max(float(np.abs(f1(omega, t) - f2(omega, t)).max()) for t in ts)
    div = max(float(np.abs(f1.divergence(omega, t)).max()) for t in ts)
    return Projection(f1, f2, res, div)


def projection_l2_gap(A: OperatorField, m: int, t: float = 0.0) -> float:
    """``E |B^m_t - B_t|^2`` with exact Gaussian moments (polynomial entries)."""
    B = tangent_field(A).subs({T: t})
    Bm = cylindrical_projection(A, m, np.zeros((1, A.dim))).conditioned_entries.subs({T: t})
    expr = sum(((a.expr - b.expr) ** 2 for a, b in zip(B.components, Bm.components)), sp.Integer(0))
    return float(integrate_out(sp.expand(expr), range(A.dim)))


@dataclass
class FlowTrajectory:
    times: np.ndarray
    states: np.ndarray          # (len(times), ..., dim) or just the endpoint when path=False
    step: float
    scheme: str

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _step(B, x, r, h, scheme, sign):
    if scheme == "euler":
        return x + sign * h * B(x, r)
    k1 = B(x, r)
    k2 = B(x + sign * 0.5 * h * k1, r + sign * 0.5 * h)
    k3 = B(x + sign * 0.5 * h * k2, r + sign * 0.5 * h)
    k4 = B(x + sign * h * k3, r + sign * h)
    return x + sign * h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _integrate(B, omega, start, stop, h, scheme, path, sign) -> FlowTrajectory:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    span = abs(stop - start)
    if h <= 0 or (span > 0 and h > span + 1e-15):
        raise ValueError("step must satisfy 0 < h <= t - s")
    M = max(1, math.ceil(span / h - 1e-9)) if span > 0 else 0
    hh = span / M if M else 0.0
    x = np.array(omega, dtype=float, copy=True)
    times = start + sign * hh * np.arange(M + 1)
    states = [x] if path else None
    for j in range(M):
        x = _step(B, x, times[j], hh, scheme, sign)
        if not np.all(np.isfinite(x)) or np.abs(x).max(initial=0.0) > BLOWUP:
            raise FloatingPointError(f"flow state blew up at r={times[j + 1]:.6g}")
        if path:
            states.append(x)
    return FlowTrajectory(times, np.stack(states) if path else x[None], hh, scheme)


def flow_integrate(B: DriftField, omega, s: float, t: float, h: float, scheme: str = "rk4",
                   path: bool = False) -> FlowTrajectory:
    """``phi_{s,r}(omega)`` for ``r`` from ``s`` to ``t``."""
    if t < s:
        raise ValueError("need s <= t")
    return _integrate(B, omega, s, t, h, scheme, path, +1.0)


def inverse_flow_integrate(B: DriftField, omega, s: float, t: float, h: float, scheme: str = "rk4",
                           path: bool = False) -> FlowTrajectory:
    """``psi_{r,t}(omega)``: integrates ``d psi_{r,t} / dr = B_r(psi_{r,t})`` backward from ``r = t`` to ``s``."""
    if t < s:
        raise ValueError("need s <= t")
    return _integrate(B, omega, t, s, h, scheme, path, -1.0)


class FlowMap:
    """``omega -> phi_{s,t}(omega)`` as a batchable map."""

    def __init__(self, B: DriftField, s: float, t: float, h: float, scheme: str = "rk4"):
        self.B, self.s, self.t, self.h, self.scheme = B, s, t, h, scheme
        self.dim = B.dim

    def __call__(self, omega):
        return flow_integrate(self.B, omega, self.s, self.t, self.h, self.scheme).final


def flow_measure_invariance(B: DriftField, s: float, t: float, samples: int = 100_000, seed: int = 0,
                            h: float = 0.01, scheme: str = "rk4", workers: int = 1) -> GaussianityReport:
    eta = map_batches(FlowMap(B, s, t, h, scheme), samples, B.dim, seed, workers=workers)
    return gaussianity_report(eta, seed)


def frame_norm(J: np.ndarray) -> np.ndarray:
    """``sup |alpha . J h|`` over ``|h|_inf <= 1``, ``|alpha|_1 <= 1``: the max absolute row sum."""
    return np.abs(J).sum(axis=-1).max(axis=-1)


@dataclass
class GammaEstimate:
    value: float
    overflow: bool
    frame_constant: float = 1.0


def exp_moment_gamma(B: DriftField, s: float, t: float, eps: float, samples: int = 10_000,
                     seed: int = 0, n_times: int = 10, omega=None) -> GammaEstimate:
    """Midpoint-in-time, Monte Carlo-in-omega estimate of ``int_s^t E exp(eps |||grad B_r|||) dr``."""
    if omega is None:
        omega = RngStream(seed).normal(samples, B.dim)
    if t <= s:
        return GammaEstimate(0.0, False)
    times = s + (t - s) * (np.arange(n_times) + 0.5) / n_times
    total, overflow = 0.0, False
    for r in times:
        expo = eps * frame_norm(B.jacobian(omega, r))
        overflow |= bool(np.any(expo > EXP_CLIP))
        total += np.exp(np.minimum(expo, EXP_CLIP)).mean()
    value = float(total * (t - s) / n_times)
    if not np.isfinite(value):
        raise FloatingPointError("non-finite exponential moment")
    return GammaEstimate(value, overflow)


@dataclass
class StabilityProbe:
    lhs: float
    lhs_stderr: float
    rhs: float
    gamma: GammaEstimate
    params: dict

    @property
    def satisfied(self) -> bool:
        return self.lhs <= self.rhs + 3 * self.lhs_stderr


def stability_bound_probe(Ba: DriftField, Bb: DriftField, s: float, t: float, p: float = 2.0,
                          q: float = 2.0, gamma: float | None = None, eps: float | None = None,
                          samples: int = 10_000, seed: int = 0, h: float = 0.01,
                          basis: BasisSpec | None = None) -> StabilityProbe:
    """Both sides of the flow stability bound.

    Left: ``E sup_u |phi^a_{s,u} - phi^b_{s,u}|_W`` on the integration grid.
    Right: ``(E int_s^t |B^a_r - B^b_r|_W^p dr)^(1/p) Gamma^(1/gamma) (t - s)^(-1/q)`` where
    ``Gamma`` sums the exponential moments of both drifts with ``eps = q (t - s)`` by default.
    """
    gamma = q if gamma is None else gamma
    eps = q * (t - s) if eps is None else eps
    n = Ba.dim
    basis = BasisSpec(n) if basis is None else basis
    omega = RngStream(seed).normal(samples, n)
    ta = flow_integrate(Ba, omega, s, t, h, path=True)
    tb = flow_integrate(Bb, omega, s, t, h, path=True)
    sup = w_norm(basis, ta.states - tb.states).max(axis=0)
    lhs, se = float(sup.mean()), float(sup.std() / np.sqrt(samples))
    n_times = max(len(ta.times) - 1, 1)
    mids = s + (t - s) * (np.arange(n_times) + 0.5) / n_times
    diff = np.mean([w_norm(basis, Ba(omega, r) - Bb(omega, r)) ** p for r in mids], axis=0) * (t - s)
    ga = exp_moment_gamma(Ba, s, t, eps, omega=omega, n_times=n_times)
    gb = exp_moment_gamma(Bb, s, t, eps, omega=omega, n_times=n_times)
    G = GammaEstimate(ga.value + gb.value, ga.overflow or gb.overflow)
    rhs = float(np.mean(diff) ** (1 / p) * G.value ** (1 / gamma) * (1 / (t - s)) ** (1 / q))
    return StabilityProbe(lhs, se, rhs, G, {"p": p, "q": q, "gamma": gamma, "eps": eps, "h": h})


def planar_skew(n: int = 2, i: int = 0, j: int = 1, scale=1) -> OperatorField:
    """Constant generator ``scale (e_j e_i^T - e_i e_j^T)``; its drift is ``scale (-omega_j, omega_i)``."""
    M = sp.zeros(n, n)
    M[j, i], M[i, j] = -scale, scale
    return OperatorField(M)


def linear_drift(J) -> DriftField:
    """``B(omega) = J omega``."""
    J = np.asarray(J, dtype=float)
    n = J.shape[0]
    return DriftField(VectorField([sum(float(J[a, b]) * w(b) for b in range(n)) for a in range(n)]))


def drift_from_exprs(exprs) -> DriftField:
    return DriftField(VectorField([Functional(e).expr for e in exprs]))
