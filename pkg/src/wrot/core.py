"""Finite-dimensional model of an abstract Wiener space.

A point of the truncated space is a vector of ``n`` i.i.d. standard Gaussian
coordinates ``omega_i = delta(e_i)``.  Cameron-Martin vectors are coefficient
vectors in the same orthonormal basis, so ``|h|_H`` is the Euclidean norm.
The Haar basis additionally identifies coordinates with piecewise-linear paths
on a dyadic grid of ``[0, 1]``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

BASIS_KINDS = ("coordinate", "haar")


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class BasisSpec:
    dim: int
    kind: str = "coordinate"

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError(f"basis dimension must be >= 1, got {self.dim}")
        if self.kind not in BASIS_KINDS:
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.kind == "haar" and not _is_power_of_two(int(self.dim)):
            raise ValueError(f"haar basis needs a power-of-two dimension, got {self.dim}")


@dataclass(frozen=True)
class RngStream:
    """Seeded substream of a counter-based generator.

    Draws depend only on ``(master_seed, stream_id, key)``; coordinate ``j`` of
    a Gaussian sample always comes from its own substream, so truncating the
    dimension never changes the leading coordinates.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        if self.master_seed < 0 or self.stream_id < 0:
            raise ValueError("seed and stream id must be nonnegative")

    def generator(self, *key: int) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(self.stream_id), *map(int, key)))
        return np.random.Generator(np.random.Philox(ss))

    def normal(self, size: int, dim: int) -> np.ndarray:
        out = np.empty((size, dim))
        for j in range(dim):
            out[:, j] = self.generator(0, j).standard_normal(size)
        return out

    def uniform(self, size: int) -> np.ndarray:
        return self.generator(1).random(size)

    def child(self, k: int) -> "RngStream":
        # disjoint from the batch plan used by map_batches (stream ids < 2**32)
        return RngStream(self.master_seed, (self.stream_id + 1) * 2**32 + int(k))


def sample(basis: BasisSpec, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Draw Gaussian coordinates; shape ``(dim,)`` or ``(size, dim)``."""
    draws = rng.normal(1 if size is None else int(size), basis.dim)
    return draws[0] if size is None else draws


def map_batches(
    fn: Callable[[np.ndarray], np.ndarray],
    samples: int,
    dim: int,
    seed: int,
    batch_size: int = 10_000,
    workers: int = 1,
) -> np.ndarray:
    """Apply ``fn`` to Gaussian batches and concatenate the results in batch order.

    Batch ``b`` always reads stream ``b`` of ``seed``, so the result does not
    depend on ``workers``.
    """
    sizes = [batch_size] * (samples // batch_size)
    if samples % batch_size:
        sizes.append(samples % batch_size)

    def run(b: int) -> np.ndarray:
        return np.asarray(fn(RngStream(seed, b).normal(sizes[b], dim)))

    if workers <= 1 or len(sizes) <= 1:
        parts = [run(b) for b in range(len(sizes))]
    else:
        # the first batch runs alone so lazily compiled evaluators are built once
        parts = [run(0)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts += list(pool.map(run, range(1, len(sizes))))
    return np.concatenate(parts, axis=0)


def haar_matrix(n: int) -> np.ndarray:
    """Rows are the L2-normalized Haar functions evaluated on the ``n`` dyadic cells.

    Row 0 is the constant function; the others are wavelets ordered by level.
    ``H @ H.T == n * I`` so that ``sum_c H[k, c] H[l, c] / n = delta_kl``.
    """
    if not _is_power_of_two(n):
        raise ValueError(f"haar basis needs a power-of-two dimension, got {n}")
    H = np.zeros((n, n))
    H[0] = 1.0
    row = 1
    level = 0
    while row < n:
        width = n >> level
        for k in range(1 << level):
            start = k * width
            H[row, start:start + width // 2] = 2.0 ** (level / 2)
            H[row, start + width // 2:start + width] = -(2.0 ** (level / 2))
            row += 1
        level += 1
    return H


def embed_path(basis: BasisSpec, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map Haar coordinates to a piecewise-linear path on the dyadic grid.

    Returns ``(grid, values)`` with ``grid`` of length ``n + 1`` and ``values``
    of shape ``(..., n + 1)``; ``values[..., 0] == 0``.  For a Cameron-Martin
    vector the path derivative has L2 norm equal to the Euclidean norm of
    ``x``; for a Gaussian sample the path is the Levy-Ciesielski interpolation
    of Brownian motion.
    """
    if basis.kind != "haar":
        raise ValueError("path embedding requires the haar basis")
    n = basis.dim
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != n:
        raise ValueError(f"expected {n} coordinates, got {x.shape[-1]}")
    slopes = x @ haar_matrix(n)
    values = np.concatenate([np.zeros(x.shape[:-1] + (1,)), np.cumsum(slopes, axis=-1) / n], axis=-1)
    return np.linspace(0.0, 1.0, n + 1), values


def path_derivative(basis: BasisSpec, x: np.ndarray) -> np.ndarray:
    """Cellwise constant derivative of the embedded path."""
    if basis.kind != "haar":
        raise ValueError("path embedding requires the haar basis")
    return np.asarray(x, dtype=float) @ haar_matrix(basis.dim)


def w_norm(basis: BasisSpec, x: np.ndarray) -> np.ndarray:
    """Model of the Banach norm: path sup-norm (haar) or coordinate max-norm."""
    if basis.kind == "haar":
        return np.abs(embed_path(basis, x)[1]).max(axis=-1)
    return np.abs(np.asarray(x, dtype=float)).max(axis=-1)


@dataclass(frozen=True)
class Filtration:
    """Discrete resolution of the identity by nested coordinate projections.

    ``order`` lists coordinates in the order they are revealed and
    ``boundaries`` the cumulative block sizes ``0 = b_0 < ... < b_K = dim``.
    Block ``k`` is revealed at ``theta_k = k / K``.
    """

    dim: int
    order: tuple[int, ...] = field(default=None)
    boundaries: tuple[int, ...] = field(default=None)

    def __post_init__(self):
        order = tuple(range(self.dim)) if self.order is None else tuple(int(i) for i in self.order)
        if sorted(order) != list(range(self.dim)):
            raise ValueError("order must be a permutation of range(dim)")
        bounds = tuple(range(self.dim + 1)) if self.boundaries is None else tuple(int(b) for b in self.boundaries)
        if bounds[0] != 0 or bounds[-1] != self.dim or any(b >= c for b, c in zip(bounds, bounds[1:])):
            raise ValueError("boundaries must increase strictly from 0 to dim")
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "boundaries", bounds)

    @classmethod
    def reversed(cls, dim: int) -> "Filtration":
        return cls(dim, order=tuple(range(dim - 1, -1, -1)))

    @classmethod
    def blocks(cls, sizes: Sequence[int]) -> "Filtration":
        bounds = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        return cls(int(bounds[-1]), boundaries=tuple(bounds))

    @property
    def n_blocks(self) -> int:
        return len(self.boundaries) - 1

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_blocks + 1)

    def revealed(self, k: int) -> tuple[int, ...]:
        """Coordinates measurable at step ``k``."""
        return self.order[: self.boundaries[k]]

    def block(self, k: int) -> tuple[int, ...]:
        """Coordinates revealed at step ``k`` (1-based block index)."""
        return self.order[self.boundaries[k - 1]: self.boundaries[k]]

    def block_of(self) -> np.ndarray:
        """Block index (1-based) of every coordinate."""
        out = np.empty(self.dim, dtype=int)
        for k in range(1, self.n_blocks + 1):
            out[list(self.block(k))] = k
        return out

    def projection(self, k: int) -> np.ndarray:
        P = np.zeros((self.dim, self.dim))
        idx = list(self.revealed(k))
        P[idx, idx] = 1.0
        return P

    @property
    def projections(self) -> list[np.ndarray]:
        return [self.projection(k) for k in range(self.n_blocks + 1)]


def filtration_index(f: Filtration, theta: float) -> np.ndarray:
    """Projection ``P_k`` with ``k = max{j : theta_j <= theta}``."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    k = int(np.searchsorted(f.grid, theta, side="right")) - 1
    return f.projection(k)
