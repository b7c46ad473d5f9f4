"""Distributional checks of transformed Gaussian samples."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import RngStream

KS_FLOOR = 1e-3
N_RANDOM_DIRECTIONS = 5


def charfn_tolerance(n_samples: int) -> float:
    return 3.0 * n_samples ** -0.5 * 2.0


@dataclass
class GaussianityReport:
    ks_statistic: np.ndarray
    ks_pvalue: np.ndarray
    charfn_deviation: float
    dependence_ratio: float        # worst |Cov| / stderr over pairs and test functions
    n_samples: int
    seed: int

    @property
    def ks_pass(self) -> bool:
        return bool(np.all(self.ks_pvalue > KS_FLOOR))

    @property
    def charfn_pass(self) -> bool:
        return self.charfn_deviation <= charfn_tolerance(self.n_samples)

    @property
    def independence_pass(self) -> bool:
        return self.dependence_ratio <= 3.0

    @property
    def passed(self) -> bool:
        return self.ks_pass and self.charfn_pass

    def summary(self) -> dict:
        return {
            "ks_min_pvalue": float(self.ks_pvalue.min()),
            "ks_bonferroni_floor": KS_FLOOR / len(self.ks_pvalue),
            "charfn_deviation": self.charfn_deviation,
            "charfn_tolerance": charfn_tolerance(self.n_samples),
            "dependence_ratio": self.dependence_ratio,
            "n_samples": self.n_samples,
            "seed": self.seed,
        }


def test_directions(dim: int, seed: int) -> np.ndarray:
    """Basis vectors followed by seeded random unit vectors, one per row."""
    g = RngStream(seed, 0).generator(2)
    rand = g.standard_normal((N_RANDOM_DIRECTIONS, dim))
    rand /= np.linalg.norm(rand, axis=1, keepdims=True)
    return np.vstack([np.eye(dim), rand])


def _cov_ratio(a: np.ndarray, b: np.ndarray) -> float:
    prod = (a - a.mean()) * (b - b.mean())
    se = prod.std() / np.sqrt(len(prod))
    return float(abs(prod.mean()) / se) if se > 0 else 0.0


def gaussianity_report(eta: np.ndarray, seed: int = 0) -> GaussianityReport:
    """KS per coordinate, characteristic-function deviation and pairwise dependence probes."""
    eta = np.asarray(eta, dtype=float)
    N, n = eta.shape
    ks = [stats.kstest(eta[:, i], "norm") for i in range(n)]
    H = test_directions(n, seed)
    proj = eta @ H.T
    emp = np.exp(1j * proj).mean(axis=0)
    dev = float(np.abs(emp - np.exp(-0.5 * (H**2).sum(axis=1))).max())
    ratio = 0.0
    s, ind = np.sin(eta), (eta > 0).astype(float)
    for i in range(n):
        for j in range(i + 1, n):
            ratio = max(ratio, _cov_ratio(s[:, i], s[:, j]), _cov_ratio(ind[:, i], ind[:, j]))
    return GaussianityReport(
        np.array([k.statistic for k in ks]),
        np.array([k.pvalue for k in ks]),
        dev, ratio, N, seed,
    )
