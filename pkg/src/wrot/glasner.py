"""Piecewise-affine measure-preserving maps of [0, 1] and their interpolation to the identity.

``T_a(x) = a T(x / a)`` on ``[0, a)`` and ``x`` on ``[a, 1)`` joins ``T_0 = id`` to
``T_1 = T`` through Lebesgue-measure-preserving maps.  Endpoints are kept as
fractions so audits and ``L^1`` distances are exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import RngStream


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


@dataclass(frozen=True)
class Piece:
    lo: Fraction
    hi: Fraction
    slope: int          # +1 or -1
    offset: Fraction    # T(x) = slope * x + offset on [lo, hi)

    def at(self, x):
        return self.slope * x + self.offset

    @property
    def image(self) -> tuple[Fraction, Fraction]:
        a, b = self.at(self.lo), self.at(self.hi)
        return (a, b) if a <= b else (b, a)


class IntervalMap:
    """Map of ``[0, 1)`` that is affine with slope ``+-1`` on consecutive pieces."""

    def __init__(self, pieces):
        pieces = [Piece(_frac(p.lo), _frac(p.hi), int(p.slope), _frac(p.offset)) for p in pieces]
        pieces = [p for p in pieces if p.hi > p.lo]
        if not pieces or pieces[0].lo != 0 or pieces[-1].hi != 1:
            raise ValueError("pieces must cover [0, 1)")
        if any(a.hi != b.lo for a, b in zip(pieces, pieces[1:])):
            raise ValueError("pieces must be consecutive")
        if any(p.slope not in (1, -1) for p in pieces):
            raise ValueError("slopes must be +1 or -1")
        self.pieces = tuple(pieces)
        self.breaks = np.array([float(p.lo) for p in pieces[1:]])

    def audit(self) -> bool:
        """Exact pushforward check: piece images tile ``[0, 1)`` without overlap."""
        imgs = sorted(p.image for p in self.pieces)
        return imgs[0][0] == 0 and imgs[-1][1] == 1 and all(a[1] == b[0] for a, b in zip(imgs, imgs[1:]))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.breaks, x, side="right")
        slope = np.array([p.slope for p in self.pieces], dtype=float)[idx]
        offset = np.array([float(p.offset) for p in self.pieces])[idx]
        return slope * x + offset

    def table(self) -> tuple:
        return tuple((p.lo, p.hi, p.slope, p.offset) for p in self.pieces)

    def interpolate(self, a) -> "IntervalMap":
        """``T_a``: the scaled copy of ``T`` on ``[0, a)`` followed by the identity."""
        a = _frac(a)
        if not 0 <= a <= 1:
            raise ValueError("a must lie in [0, 1]")
        if a == 0:
            return identity()
        pieces = [Piece(a * p.lo, a * p.hi, p.slope, a * p.offset) for p in self.pieces]
        if a < 1:
            pieces.append(Piece(a, Fraction(1), 1, Fraction(0)))
        return IntervalMap(pieces)


def identity() -> IntervalMap:
    return IntervalMap([Piece(Fraction(0), Fraction(1), 1, Fraction(0))])


def reflection() -> IntervalMap:
    """``x -> 1 - x``."""
    return IntervalMap([Piece(Fraction(0), Fraction(1), -1, Fraction(1))])


def circle_rotation(shift) -> IntervalMap:
    """``x -> x + shift mod 1``."""
    s = _frac(shift) % 1
    return IntervalMap([Piece(Fraction(0), 1 - s, 1, s), Piece(1 - s, Fraction(1), 1, s - 1)])


def interval_exchange(lengths, perm, flips=None) -> IntervalMap:
    """Cut ``[0, 1)`` into ``lengths`` and lay piece ``perm[k]`` in slot ``k`` (optionally reversed)."""
    lengths = [_frac(x) for x in lengths]
    if sum(lengths) != 1 or sorted(perm) != list(range(len(lengths))):
        raise ValueError("lengths must sum to 1 and perm must be a permutation")
    flips = flips or [False] * len(lengths)
    starts = np.concatenate([[Fraction(0)], np.cumsum(lengths)[:-1]]).tolist()
    dest, pos = {}, Fraction(0)
    for piece in perm:
        dest[piece] = pos
        pos += lengths[piece]
    pieces = []
    for k, (lo, ln) in enumerate(zip(starts, lengths)):
        if flips[k]:
            pieces.append(Piece(lo, lo + ln, -1, dest[k] + ln + lo))
        else:
            pieces.append(Piece(lo, lo + ln, 1, dest[k] - lo))
    return IntervalMap(pieces)


def half_swap() -> IntervalMap:
    """Dyadic exchange of ``[0, 1/2)`` and ``[1/2, 1)``."""
    return interval_exchange([Fraction(1, 2), Fraction(1, 2)], [1, 0])


LIBRARY = {"reflection": reflection, "half_swap": half_swap}


def glasner_interpolation(T: IntervalMap, a) -> IntervalMap:
    return T.interpolate(a)


def _abs_linear_integral(lo: Fraction, hi: Fraction, m: int, c: Fraction) -> Fraction:
    """``int_lo^hi |m x + c| dx`` exactly."""
    def prim(a, b):
        return m * (b * b - a * a) / 2 + c * (b - a)
    if m == 0:
        return abs(c) * (hi - lo)
    root = -c / m
    if root <= lo or root >= hi:
        return abs(prim(lo, hi))
    return abs(prim(lo, root)) + abs(prim(root, hi))


def l1_distance(S: IntervalMap, R: IntervalMap) -> Fraction:
    """Exact ``E |S(X) - R(X)|`` for ``X`` uniform on ``[0, 1)``."""
    cuts = sorted({p.lo for p in S.pieces} | {p.lo for p in R.pieces} | {Fraction(1)})
    total = Fraction(0)
    for lo, hi in zip(cuts, cuts[1:]):
        mid = (lo + hi) / 2
        ps = next(p for p in S.pieces if p.lo <= mid < p.hi)
        pr = next(p for p in R.pieces if p.lo <= mid < p.hi)
        total += _abs_linear_integral(lo, hi, ps.slope - pr.slope, ps.offset - pr.offset)
    return total


@dataclass
class ProfileRow:
    a: float
    eps: float
    exact: float
    mc: float
    stderr: float


def continuity_profile(T: IntervalMap, a_grid, eps_grid, samples: int = 100_000, seed: int = 0) -> list[ProfileRow]:
    """``E |T_a(X) - T_{a+eps}(X)|`` exactly and by Monte Carlo on a shared uniform sample."""
    x = RngStream(seed).uniform(samples)
    rows = []
    for a in a_grid:
        Ta = T.interpolate(a)
        for eps in eps_grid:
            b = min(_frac(a) + _frac(eps), Fraction(1))
            Tb = T.interpolate(b)
            d = np.abs(Ta(x) - Tb(x))
            rows.append(ProfileRow(float(a), float(eps), float(l1_distance(Ta, Tb)),
                                   float(d.mean()), float(d.std() / np.sqrt(samples))))
    return rows
