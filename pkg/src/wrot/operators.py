"""Quasinilpotency diagnostics, adaptedness checks and the shift counterexample."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Filtration
from .fields import OperatorField, VectorField, w

QNP_TOL = 1e-10
DET2_ALPHAS = (-5.0, -2.0, -1.0, 1.0, 2.0, 5.0)
ADAPT_TOL = 1e-12


@dataclass
class QnpReport:
    trace_powers: np.ndarray      # |trace A^k|, k = 2..K
    spectral_radius: float
    det2_deviation: float
    norm_root: np.ndarray         # |A^k|^(1/k), k = 1..K
    tol: float = QNP_TOL

    @property
    def diagnostics(self) -> dict[str, float]:
        return {
            "trace_powers": float(self.trace_powers.max(initial=0.0)),
            "spectral_radius": float(self.spectral_radius),
            "det2_deviation": float(self.det2_deviation),
            "norm_root": float(self.norm_root[-1]),
        }

    @property
    def quasinilpotent(self) -> bool:
        d = self.diagnostics
        return d["spectral_radius"] <= self.tol and d["trace_powers"] <= self.tol

    @property
    def all_within(self) -> bool:
        return max(self.diagnostics.values()) <= self.tol


def det2(A: np.ndarray) -> complex:
    """Carleman determinant ``prod (1 + l_i) exp(-l_i)`` over eigenvalues of ``A``."""
    lam = np.linalg.eigvals(A)
    return complex(np.prod((1 + lam) * np.exp(-lam)))


def qnp_analyze(A, K: int | None = None, alphas=DET2_ALPHAS, tol: float = QNP_TOL) -> QnpReport:
    """Trace powers, spectral radius, det2 deviation and root norms of a matrix.

    ``K`` defaults to ``max(dim, 2)`` so that ``A^K = 0`` for any nilpotent ``A``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("qnp_analyze needs a square matrix")
    if not np.all(np.isfinite(A)):
        raise np.linalg.LinAlgError("non-finite matrix")
    n = A.shape[0]
    K = max(n, 2) if K is None else int(K)
    if K < 2:
        raise ValueError("K must be at least 2")
    traces, roots = [], []
    P = np.eye(n)
    for k in range(1, K + 1):
        P = P @ A
        roots.append(np.linalg.norm(P, 2) ** (1.0 / k))
        if k >= 2:
            traces.append(abs(np.trace(P)))
    lam = np.linalg.eigvals(A)
    rho = float(np.abs(lam).max()) if n else 0.0
    dev = max(abs(det2(a * A) - 1.0) for a in alphas)
    return QnpReport(np.array(traces), rho, float(dev), np.array(roots), tol)


def merge_qnp(reports: list[QnpReport]) -> QnpReport:
    """Entrywise worst case over a list of reports."""
    return QnpReport(
        np.max([r.trace_powers for r in reports], axis=0),
        max(r.spectral_radius for r in reports),
        max(r.det2_deviation for r in reports),
        np.max([r.norm_root for r in reports], axis=0),
        reports[0].tol,
    )


@dataclass
class AdaptednessReport:
    residuals: np.ndarray         # one entry per grid point theta_k
    max_residual: float
    tol: float = ADAPT_TOL
    grid: np.ndarray = field(default=None)

    @property
    def verdict(self) -> str:
        return "adapted" if self.max_residual <= self.tol else "not adapted"

    @property
    def adapted(self) -> bool:
        return self.verdict == "adapted"


def _matrix_adaptedness(M: np.ndarray, f: Filtration, strict: bool, tol: float) -> AdaptednessReport:
    """Residuals of ``P_k M P_{k'} = P_k M`` with ``k' = k - 1`` (strict) or ``k``."""
    P = f.projections
    res = np.zeros(f.n_blocks + 1)
    for k in range(f.n_blocks + 1):
        right = P[k - 1] if (strict and k > 0) else P[k]
        res[k] = np.abs(P[k] @ M @ right - P[k] @ M).max(initial=0.0)
    return AdaptednessReport(res, float(res.max()), tol, f.grid)


def _combine(reports: list[AdaptednessReport]) -> AdaptednessReport:
    res = np.max([r.residuals for r in reports], axis=0)
    return AdaptednessReport(res, float(res.max()), reports[0].tol, reports[0].grid)


def vector_adaptedness_check(u: VectorField, f: Filtration, omega, mode: str = "predictable",
                             tol: float = ADAPT_TOL) -> AdaptednessReport:
    """Per-grid-point residual of the adaptedness identity for ``grad u``.

    ``mode="adapted"`` tests ``P_k (grad u) P_k = P_k grad u``; the default
    ``"predictable"`` tests ``P_k (grad u) P_{k-1} = P_k grad u``, the
    discrete counterpart of continuous-time adaptedness (no dependence on the
    block currently being revealed).
    """
    if mode not in ("predictable", "adapted"):
        raise ValueError(f"unknown mode {mode!r}")
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    J = u.pad(f.dim).jacobian(omega[..., : max(f.dim, u.arity)])[..., : f.dim, : f.dim]
    return _combine([_matrix_adaptedness(M, f, mode == "predictable", tol) for M in J])


def operator_adaptedness_check(G: OperatorField, f: Filtration, mode: str, omega,
                               tol: float = ADAPT_TOL) -> AdaptednessReport:
    """Adaptedness of an operator field.

    ``strong``: ``P_k G P_k = P_k G`` at every sample.  ``star``: images of
    ``(I - P_k) e_j`` have no ``P_k`` component.  ``weak``: every column
    ``G e_j`` is a predictable vector field.
    """
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    if mode == "weak":
        return _combine([vector_adaptedness_check(c, f, omega, tol=tol) for c in G.columns()])
    mats = G(omega)
    if mode == "strong":
        return _combine([_matrix_adaptedness(M, f, False, tol) for M in mats])
    if mode == "star":
        P = f.projections
        I = np.eye(f.dim)
        res = np.array([np.abs(P[k] @ mats @ (I - P[k])).max(initial=0.0) for k in range(f.n_blocks + 1)])
        return AdaptednessReport(res, float(res.max()), tol, f.grid)
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class AdaptedQnpResult:
    adaptedness: AdaptednessReport
    qnp: QnpReport

    @property
    def holds(self) -> bool:
        return (not self.adaptedness.adapted) or self.qnp.all_within


def prop25_check(u: VectorField, f: Filtration, omega, K: int | None = None) -> AdaptedQnpResult:
    """Adaptedness of ``u`` together with the worst-case qnp diagnostics of ``grad u``."""
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    adapt = vector_adaptedness_check(u, f, omega)
    J = u.pad(f.dim).jacobian(omega)[..., : f.dim, : f.dim]
    return AdaptedQnpResult(adapt, merge_qnp([qnp_analyze(M, K=K) for M in J]))


def ringrose_field(n: int, alpha: float) -> VectorField:
    """Truncated weighted shift ``u_i = 2^(-i alpha) omega_{i+1}``, ``i = 1..n-1``."""
    if n < 3:
        raise ValueError("ringrose field needs n >= 3")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    comps = [2.0 ** (-(i + 1) * alpha) * w(i + 1) for i in range(n - 1)] + [0]
    return VectorField(comps)


def ringrose_matrix(n: int, alpha: float) -> np.ndarray:
    """``grad u`` of the ringrose field: ``(i, i+1)`` entries ``2^(-i alpha)`` (1-based)."""
    return np.diag(2.0 ** (-alpha * np.arange(1, n)), 1)


def beta_weights(alpha: float, r: int, n: int) -> np.ndarray:
    """``beta_{i,r} = prod_{l<r} 2^(-(i+l) alpha) = 2^(-alpha r (2i + r - 1) / 2)``, ``i = 1..n-r``."""
    i = np.arange(1, n - r + 1)
    return 2.0 ** (-alpha * r * (2 * i + r - 1) / 2)


def beta_weights_as_printed(alpha: float, r: int, n: int) -> np.ndarray:
    """The alternative bookkeeping ``beta_{i+1,r-1} = 2^(-alpha r (2i + r + 1) / 2)`` read as ``beta_{i,r}``."""
    i = np.arange(1, n - r + 1)
    return 2.0 ** (-alpha * r * (2 * i + r + 1) / 2)


@dataclass
class ConcentrationResult:
    lead_component: float
    total_norm: float
    ratio: float


def astar_concentration(alpha: float, h, r: int, n: int | None = None) -> ConcentrationResult:
    """Share of ``(grad u)^r h`` carried by ``e_1``, from the dense matrix power."""
    h = np.asarray(h, dtype=float)
    n = h.size if n is None else n
    if h.size != n:
        raise ValueError("h must have n coefficients")
    v = np.linalg.matrix_power(ringrose_matrix(n, alpha), r) @ h
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValueError("(grad u)^r h vanishes")
    lead = float(abs(v[0]))
    return ConcentrationResult(lead, norm, lead / norm)


def astar_profile(alpha: float, h, r_max: int | None = None) -> tuple[np.ndarray, int | None]:
    """Ratios for ``r = 1..r_max`` (skipping vanishing powers as NaN) and the smallest ``r`` above 1/2."""
    h = np.asarray(h, dtype=float)
    n = h.size
    r_max = n - 1 if r_max is None else r_max
    ratios = np.full(r_max, np.nan)
    for r in range(1, r_max + 1):
        try:
            ratios[r - 1] = astar_concentration(alpha, h, r, n).ratio
        except ValueError:
            pass
    above = np.nonzero(ratios > 0.5)[0]
    return ratios, (int(above[0]) + 1 if above.size else None)


def lemma_a_bound(e, N: int, f: Filtration | None = None) -> float:
    """``sup |(X, e)|`` over unit ``X`` in the range of ``I - E_{1-1/N}``; equals ``|(I - E) e|``."""
    e = np.asarray(e, dtype=float)
    f = Filtration(e.size) if f is None else f
    if N < 1:
        raise ValueError("N must be positive")
    from .core import filtration_index
    E = filtration_index(f, 1.0 - 1.0 / N)
    return float(np.linalg.norm(e - E @ e))
