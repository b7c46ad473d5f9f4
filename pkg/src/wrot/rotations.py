"""Rotations of Gaussian space built from isometry-valued operator fields."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import sympy as sp
from scipy.linalg import expm

from .core import BasisSpec, Filtration, map_batches
from .fields import Functional, OperatorField, VectorField, w
from .malliavin import clark_ocone_lift
from .stats import GaussianityReport, gaussianity_report

SKEW_TOL = 1e-12
ISOMETRY_TOL = 1e-10


@dataclass
class Rotation:
    """``T omega = sum_i eta_i e_i`` with ``eta_i = delta(R e_i)``."""

    R: OperatorField
    basis: BasisSpec | None = None

    def __post_init__(self):
        if self.basis is None:
            self.basis = BasisSpec(self.R.dim)

    @property
    def dim(self) -> int:
        return self.R.dim

    def __call__(self, omega) -> np.ndarray:
        return self.R.column_divergence(omega)

    def coordinate_functionals(self) -> list[Functional]:
        if not self.R.is_symbolic:
            raise TypeError("symbolic coordinates need a symbolic operator field")
        return [c.divergence_functional() for c in self.R.columns()]


def rotation_from_field(R: OperatorField, basis: BasisSpec | None = None) -> Rotation:
    return Rotation(R, basis)


def verify_measure_preservation(T, samples: int = 100_000, seed: int = 0,
                                workers: int = 1, batch_size: int = 10_000) -> GaussianityReport:
    """Statistical check that ``T`` maps ``N(0, I)`` to ``N(0, I)``."""
    if samples < 1000:
        raise ValueError("measure preservation checks need at least 1000 samples")
    eta = map_batches(T, samples, T.dim, seed, batch_size=batch_size, workers=workers)
    return gaussianity_report(eta, seed)


def givens_field(n: int = 3, phi=None, i: int = 1, j: int = 2) -> OperatorField:
    """Rotation by ``phi(omega_1)`` in the ``(e_{i+1}, e_{j+1})`` plane, identity elsewhere."""
    phi = w(0) if phi is None else (sp.sympify(phi) if not isinstance(phi, Functional) else phi.expr)
    M = sp.eye(n)
    c, s = sp.cos(phi), sp.sin(phi)
    M[i, i], M[j, i], M[i, j], M[j, j] = c, s, -s, c
    return OperatorField(M)


def planar_rotation(n: int, angle: float, i: int = 0, j: int = 1) -> np.ndarray:
    R = np.eye(n)
    c, s = np.cos(angle), np.sin(angle)
    R[i, i], R[j, i], R[i, j], R[j, j] = c, s, -s, c
    return R


def skew_generator(n: int, phi=None, i: int = 1, j: int = 2) -> OperatorField:
    """``phi(omega) (e_{j} e_{i}^T - e_{i} e_{j}^T)``: generator of :func:`givens_field`."""
    phi = w(0) if phi is None else sp.sympify(phi)
    M = sp.zeros(n, n)
    M[j, i], M[i, j] = phi, -phi
    return OperatorField(M)


def orthogonal_expm(M: np.ndarray) -> np.ndarray:
    """``expm`` of a skew matrix, snapped to its polar factor to remove rounding drift."""
    E = expm(M)
    U, _, Vt = np.linalg.svd(E)
    return U @ Vt


class ExpSkewField(OperatorField):
    """``exp(alpha A(omega))`` evaluated by scaling and squaring."""

    def __init__(self, A: OperatorField, alpha: float = 1.0):
        self.A = A
        self.alpha = float(alpha)
        super().__init__(self._eval, dim=A.dim)

    def _eval(self, omega):
        return orthogonal_expm(self.alpha * self.A(omega))


def rotation_exp_skew(A: OperatorField, omega_check, alpha: float = 1.0,
                      filtration: Filtration | None = None) -> Rotation:
    """Rotation generated by ``exp(alpha A)`` for a skew field ``A``.

    Skewness is verified at ``omega_check``; with a filtration, the columns of
    ``A`` are also required to be predictable.
    """
    omega_check = np.atleast_2d(np.asarray(omega_check, dtype=float))
    if A.skew_residual(omega_check) > SKEW_TOL:
        raise ValueError("generator is not skew")
    if filtration is not None:
        from .operators import operator_adaptedness_check
        if not operator_adaptedness_check(A, filtration, "weak", omega_check).adapted:
            raise ValueError("generator columns are not predictable")
    if A.is_constant:
        return Rotation(OperatorField.constant(orthogonal_expm(alpha * A(np.zeros(A.dim)))))
    return Rotation(ExpSkewField(A, alpha))


def rotation_block_commuting(f: Filtration, blocks: Sequence) -> Rotation:
    """Block-diagonal rotation; block ``k`` may depend on coordinates of earlier blocks.

    ``blocks[k]`` is a constant orthogonal matrix or a sympy matrix.
    """
    if len(blocks) != f.n_blocks:
        raise ValueError("one block per filtration step required")
    if f.order != tuple(range(f.dim)):
        raise ValueError("block rotations need the natural coordinate order")
    M = sp.zeros(f.dim, f.dim)
    for k, B in enumerate(blocks, start=1):
        idx = f.block(k)
        B = sp.Matrix(B) if not isinstance(B, sp.MatrixBase) else B
        if B.shape != (len(idx), len(idx)):
            raise ValueError(f"block {k} has shape {B.shape}, expected {(len(idx),) * 2}")
        allowed = set(f.revealed(k - 1))
        for e in B:
            deps = {i for i in range(f.dim) if w(i) in sp.sympify(e).free_symbols}
            if not deps <= allowed:
                raise ValueError(f"block {k} depends on coordinates not yet revealed")
        if B.free_symbols:
            probe = {s: 0.37 for s in B.free_symbols}
            Bn = np.array(B.subs(probe).evalf(), dtype=float)
        else:
            Bn = np.array(B.evalf(), dtype=float)
        if np.abs(Bn.T @ Bn - np.eye(len(idx))).max() > ISOMETRY_TOL:
            raise ValueError(f"block {k} is not orthogonal")
        for a, ia in enumerate(idx):
            for b, ib in enumerate(idx):
                M[ia, ib] = B[a, b]
    return Rotation(OperatorField(M))


def commutation_residual(R: OperatorField, f: Filtration, omega) -> float:
    mats = R(np.atleast_2d(omega))
    return max(float(np.abs(P @ mats - mats @ P).max()) for P in f.projections)


@dataclass
class Recovery:
    R: OperatorField
    divergence_residual: float
    isometry_residual: float

    @property
    def isometric(self) -> bool:
        return self.isometry_residual <= ISOMETRY_TOL


def recover_adapted_R(eta: Sequence[Functional], f: Filtration, omega,
                      convention: str = "predictable") -> Recovery:
    """Columns ``R e_i`` = Clark-Ocone lift of ``eta_i``, with verification at ``omega``."""
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    cols = [clark_ocone_lift(e, f, convention) for e in eta]
    R = OperatorField.from_columns(cols)
    target = np.stack([Functional(e.expr)(omega) for e in eta], axis=-1)
    div_res = float(np.abs(R.column_divergence(omega) - target).max())
    return Recovery(R, div_res, R.isometry_residual(omega))


def basis_invariance_check(R: OperatorField, basis2, omega) -> float:
    """Max deviation between ``sum delta(R h_i) h_i`` and ``sum delta(R e_i) e_i``."""
    Hm = np.asarray(basis2, dtype=float)
    if np.abs(Hm.T @ Hm - np.eye(Hm.shape[0])).max() > 1e-12:
        raise ValueError("basis2 must be orthogonal")
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    eta = R.column_divergence(omega)
    # delta(R h_i) = sum_j H_ji delta(R e_j), by linearity of R and delta
    RH = R @ Hm
    eta_h = RH.column_divergence(omega)
    return float(np.abs(eta_h @ Hm.T - eta).max())


def divergence_pushforward_check(u: VectorField, R, omega) -> float:
    """``|(delta u)(T omega) - delta(R (u o T))(omega)|`` for a constant orthogonal ``R``."""
    R = np.asarray(R, dtype=float)
    n = R.shape[0]
    if np.abs(R.T @ R - np.eye(n)).max() > 1e-12:
        raise ValueError("R must be orthogonal")
    u = u.pad(n)
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    lhs = u.divergence(omega @ R)        # T omega = R^T omega, row form omega @ R
    sub = {w(i): sum(float(R[j, i]) * w(j) for j in range(n)) for i in range(n)}
    u_T = u.subs(sub)
    Ru = VectorField([sum(float(R[a, b]) * u_T[b].expr for b in range(n)) for a in range(n)])
    return float(np.abs(lhs - Ru.divergence(omega)).max())
