"""Integer-lattice geometry: Fermi ball, fattened shell, half-space momenta.

Momenta live on Z^3. All radius comparisons are done on the exact integer
|k|^2, against an integer threshold floor(r^2), so no mode is ever gained or
lost to floating-point dust. Radii produced by `FermiGeometry.from_n` carry
their squared radius as an exact integer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

#: (3 / 4pi)^(1/3), the large-N limit of k_F N^(-1/3).
KAPPA0 = (3.0 / (4.0 * math.pi)) ** (1.0 / 3.0)

# Refuse to materialize absurdly large candidate boxes (roughly > 2 GB).
MAX_ENUMERATED_CANDIDATES = 300_000_000


class ResourceLimitError(RuntimeError):
    """An enumeration would exceed the configured memory budget."""


def _floor_int(x) -> int:
    return int(math.floor(x))


def _ceil_int(x) -> int:
    return int(math.ceil(x))


def _annulus_modes(lo_sq: int, hi_sq: int) -> np.ndarray:
    """All k in Z^3 with lo_sq <= |k|^2 <= hi_sq, lexicographically sorted."""
    if hi_sq < 0 or hi_sq < lo_sq:
        return np.zeros((0, 3), dtype=np.int64)
    kmax = math.isqrt(hi_sq)
    side = 2 * kmax + 1
    if side * side * side > MAX_ENUMERATED_CANDIDATES:
        raise ResourceLimitError(
            f"enumerating {side ** 3} candidate modes exceeds the memory budget"
        )
    axis = np.arange(-kmax, kmax + 1, dtype=np.int64)
    k1g, k2g = np.meshgrid(axis, axis, indexing="ij")
    k1g, k2g = k1g.ravel(), k2g.ravel()
    s12 = k1g * k1g + k2g * k2g
    blocks = []
    for k3 in range(-kmax, kmax + 1):
        n2 = s12 + k3 * k3
        keep = (n2 >= lo_sq) & (n2 <= hi_sq)
        if keep.any():
            block = np.empty((int(keep.sum()), 3), dtype=np.int64)
            block[:, 0] = k1g[keep]
            block[:, 1] = k2g[keep]
            block[:, 2] = k3
            blocks.append(block)
    if not blocks:
        return np.zeros((0, 3), dtype=np.int64)
    modes = np.concatenate(blocks)
    order = np.lexsort((modes[:, 2], modes[:, 1], modes[:, 0]))
    return modes[order]


def fermi_ball(k_F) -> np.ndarray:
    """All k in Z^3 with |k| <= k_F, as an (N, 3) int64 array in lex order.

    The comparison is |k|^2 <= floor(k_F^2) in exact integer arithmetic;
    pass an integer-valued k_F (or build a FermiGeometry) for sharp shells.
    """
    if k_F < 0:
        raise ValueError("k_F must be nonnegative")
    return _annulus_modes(0, _floor_int(k_F * k_F))


def ball_count(kf_sq) -> int:
    """|{k in Z^3 : |k|^2 <= kf_sq}| without materializing the ball."""
    t = _floor_int(kf_sq)
    if t < 0:
        return 0
    total = 0
    for k3 in range(-math.isqrt(t), math.isqrt(t) + 1):
        r2 = t - k3 * k3
        for k1 in range(-math.isqrt(r2), math.isqrt(r2) + 1):
            total += 2 * math.isqrt(r2 - k1 * k1) + 1
    return total


def ball_norm_sq_sum(kf_sq) -> int:
    """Exact sum of |k|^2 over the Fermi ball |k|^2 <= kf_sq."""
    t = _floor_int(kf_sq)
    if t < 0:
        return 0
    total = 0
    for k3 in range(-math.isqrt(t), math.isqrt(t) + 1):
        r2 = t - k3 * k3
        for k1 in range(-math.isqrt(r2), math.isqrt(r2) + 1):
            m = math.isqrt(r2 - k1 * k1)
            # sum over k2 in [-m, m] of k1^2 + k2^2 + k3^2
            total += (2 * m + 1) * (k1 * k1 + k3 * k3) + m * (m + 1) * (2 * m + 1) // 3
    return total


def magic_kf_squares(limit: int) -> list[int]:
    """Integers s <= limit at which the ball count jumps.

    These are exactly the integers representable as a sum of three squares,
    i.e. not of the form 4^a (8b + 7). Choosing k_F^2 between two consecutive
    entries cannot change the particle number.
    """
    out = []
    for s in range(max(limit, -1) + 1):
        t = s
        while t > 0 and t % 4 == 0:
            t //= 4
        if t % 8 != 7:
            out.append(s)
    return out


@dataclass(frozen=True)
class FermiGeometry:
    """Fermi ball geometry: radius, exact particle number and derived scales.

    kf_sq is the exact squared-radius threshold actually used for membership;
    N is recounted from it on construction. hbar = N^(-1/3), kappa = k_F hbar.
    """

    k_F: float
    kf_sq: float
    N: int
    hbar: float
    kappa: float
    R: int

    @classmethod
    def from_kf(cls, k_F, R: int = 1) -> "FermiGeometry":
        if k_F < 0:
            raise ValueError("k_F must be nonnegative")
        if R < 1:
            raise ValueError("potential support radius R must be >= 1")
        kf_sq = _floor_int(k_F * k_F)
        n = ball_count(kf_sq)
        hbar = float(n) ** (-1.0 / 3.0)
        return cls(k_F=float(k_F), kf_sq=kf_sq, N=n, hbar=hbar,
                   kappa=float(k_F) * hbar, R=int(R))

    @classmethod
    def from_n(cls, n_target: int, R: int = 1) -> "FermiGeometry":
        """Geometry whose exact mode count is closest to n_target (ties -> smaller)."""
        if n_target < 1:
            raise ValueError("target particle number must be >= 1")
        # Smallest integer threshold s with ball_count(s) >= n_target.
        hi = max(4, _ceil_int(1.3 * (3.0 * n_target / (4.0 * math.pi)) ** (2.0 / 3.0)) + 4)
        while ball_count(hi) < n_target:
            hi *= 2
        lo = 0
        while lo < hi:
            mid = (lo + hi) // 2
            if ball_count(mid) >= n_target:
                hi = mid
            else:
                lo = mid + 1
        n_hi = ball_count(hi)
        n_lo = ball_count(hi - 1) if hi > 0 else 0
        if n_lo >= 1 and abs(n_lo - n_target) <= abs(n_hi - n_target):
            kf_sq = hi - 1
            n = n_lo
        else:
            kf_sq = hi
            n = n_hi
        hbar = float(n) ** (-1.0 / 3.0)
        k_F = math.sqrt(kf_sq)
        return cls(k_F=k_F, kf_sq=kf_sq, N=n, hbar=hbar, kappa=k_F * hbar, R=int(R))

    def ball(self) -> np.ndarray:
        return _annulus_modes(0, _floor_int(self.kf_sq))

    def contains(self, modes: np.ndarray) -> np.ndarray:
        """Boolean hole mask: |q|^2 <= kf_sq per row."""
        modes = np.asarray(modes, dtype=np.int64)
        n2 = np.einsum("ij,ij->i", modes, modes)
        return n2 <= self.kf_sq


@dataclass(frozen=True)
class Shell:
    """Fattened Fermi shell k_F - R <= |q| <= k_F + R with hole/particle flags."""

    modes: np.ndarray  # (Q, 3) int64, lex sorted
    hole: np.ndarray   # (Q,) bool, True iff |q| <= k_F

    @property
    def holes(self) -> np.ndarray:
        return self.modes[self.hole]

    @property
    def particles(self) -> np.ndarray:
        return self.modes[~self.hole]


def shell(geom: FermiGeometry) -> Shell:
    """Modes within distance R of the Fermi surface, split into holes/particles."""
    if geom.R < 1:
        raise ValueError("shell requires R >= 1")
    lo = geom.k_F - geom.R
    lo_sq = _ceil_int(lo * lo) if lo > 0 else 0
    hi_sq = _floor_int((geom.k_F + geom.R) ** 2)
    modes = _annulus_modes(lo_sq, hi_sq)
    return Shell(modes=modes, hole=geom.contains(modes))


def gamma_nor(R: int) -> np.ndarray:
    """Half of the nonzero modes in the ball |k| <= R, pairing k with -k.

    Contains every k with k3 > 0, and of the k3 = 0 modes those with k2 > 0
    or (k2 = 0 and k1 > 0). Lexicographically sorted.
    """
    ball = fermi_ball(R)
    k1, k2, k3 = ball[:, 0], ball[:, 1], ball[:, 2]
    keep = (k3 > 0) | ((k3 == 0) & ((k2 > 0) | ((k2 == 0) & (k1 > 0))))
    return ball[keep]


def norm(k) -> float:
    k = np.asarray(k, dtype=np.int64)
    return math.sqrt(float(k @ k))
