"""Particle-hole pair counting per patch and momentum.

n^2 for a patch and momentum k is the number of holes h in the patch with
h + k a particle of the same patch. Exact enumeration is the authoritative
value used downstream; two independent constructions validate it: the
lattice-line projection (pairs per line = gcd of the components; line density
k3/gcd per unit area of the projection along k) and the leading-order surface
formula sigma(p_alpha) |k.omega|.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import dblquad

log = logging.getLogger(__name__)


def _keys(points: np.ndarray, lo: np.ndarray, span: np.ndarray) -> np.ndarray:
    rel = points - lo
    return (rel[:, 0] * span[1] + rel[:, 1]) * span[2] + rel[:, 2]


def count_exact(holes, particles, k) -> int:
    """Number of holes h with h + k in the particle set."""
    holes = np.asarray(holes, dtype=np.int64).reshape(-1, 3)
    particles = np.asarray(particles, dtype=np.int64).reshape(-1, 3)
    if len(holes) == 0 or len(particles) == 0:
        return 0
    shifted = holes + np.asarray(k, dtype=np.int64)
    both = np.concatenate([shifted, particles])
    lo = both.min(axis=0)
    span = both.max(axis=0) - lo + 1
    return int(np.isin(_keys(shifted, lo, span),
                       _keys(particles, lo, span)).sum())


def pairs_per_line(k) -> int:
    """Lattice points of step k per primitive step: gcd of the components."""
    k = [abs(int(x)) for x in k]
    if not any(k):
        raise ValueError("k must be nonzero")
    return math.gcd(math.gcd(k[0], k[1]), k[2])


def lines_per_unit_square(k) -> int:
    """Distinct lines of direction k per unit square of the z = 0 plane."""
    k = [int(x) for x in k]
    if k[2] == 0:
        raise ValueError("need k3 != 0 (canonicalize first)")
    return abs(k[2]) // pairs_per_line(k)


def canonicalize(k) -> np.ndarray:
    """Reflect components to be >= 0, then permute so the third is largest.

    Reflections and coordinate permutations are lattice symmetries, so pair
    counts are invariant; the line construction needs k3 != 0.
    """
    k = np.abs(np.asarray(k, dtype=np.int64))
    if not k.any():
        raise ValueError("k must be nonzero")
    order = np.argsort(k, kind="stable")
    return k[order]


def _abs_dot_integral(patch, k) -> float:
    """Integral of |k.omega(theta,phi)| over the patch surface."""
    k1, k2, k3 = (float(x) for x in k)

    def integrand(phi, theta):
        st = math.sin(theta)
        return abs(st * (k1 * math.cos(phi) + k2 * math.sin(phi))
                   + k3 * math.cos(theta)) * st

    val, err = dblquad(integrand, patch.theta_lo, patch.theta_hi,
                       patch.phi_lo, patch.phi_hi,
                       epsabs=1e-11, epsrel=1e-10)
    return val


def count_lines(patch, k, k_F, min_alignment=None) -> float:
    """Line-construction estimate of n^2: k_F^2 times the surface integral
    of |k.omega| over the patch (the projected area along k, times the line
    density, times pairs per line; the k3 factors cancel).
    """
    k = np.asarray(k, dtype=np.int64)
    if not k.any():
        raise ValueError("k must be nonzero")
    if min_alignment is not None:
        khat = k / math.sqrt(float(k @ k))
        if abs(float(patch.center @ khat)) < min_alignment:
            raise ValueError(
                f"patch {patch.id} is not aligned with k={tuple(k)}")
    return k_F ** 2 * _abs_dot_integral(patch, k)


def leading_order_v_sq(patch, k, min_alignment=None) -> float:
    """Surface-formula leading order of v^2: sigma(p_alpha) |khat.omega|."""
    k = np.asarray(k, dtype=float)
    nk = math.sqrt(float(k @ k))
    if nk == 0:
        raise ValueError("k must be nonzero")
    dot = abs(float(patch.center @ k)) / nk
    if min_alignment is not None and dot < min_alignment:
        raise ValueError(f"patch {patch.id} is not aligned with k")
    return patch.area * dot


@dataclass(frozen=True)
class PairEntry:
    k: tuple
    alpha: int
    n_sq: int
    u: float
    v: float
    v_sq_leading: float

    @property
    def n(self) -> float:
        return math.sqrt(self.n_sq)

    @property
    def rel_err(self) -> float:
        if self.v_sq_leading == 0.0:
            return math.inf
        return abs(self.v ** 2 / self.v_sq_leading - 1.0)


@dataclass
class PairTable:
    """u, v and pair counts for all momenta in Gamma and their negatives.

    Entries are stored per (k, alpha) for alpha aligned with k; the entry for
    (-k, mirror(alpha)) carries identical numbers, which membership by
    reflection makes exact. `alive` lists, per k, the aligned patches with at
    least one pair, in index-set order; mirrors of dropped patches are dropped
    symmetrically.
    """

    k_F: float
    M: int
    entries: dict
    alive: dict
    dropped: list

    def entry(self, k, alpha) -> PairEntry:
        return self.entries[(tuple(int(x) for x in k), int(alpha))]

    def alive_plus(self, k) -> np.ndarray:
        key = tuple(int(x) for x in k)
        if key in self.alive:
            return self.alive[key]
        neg = tuple(-x for x in key)
        if neg in self.alive:
            return (self.alive[neg] + self.M // 2) % self.M
        raise KeyError(f"no pair data for momentum {key}")


def build_pair_table(partition, assignment, idx, gamma, k_F) -> PairTable:
    """Count pairs for every k in gamma and aligned patch; derive u and v."""
    entries = {}
    alive = {}
    dropped = []
    half = partition.M // 2
    for k in np.atleast_2d(np.asarray(gamma, dtype=np.int64)):
        kt = tuple(int(x) for x in k)
        mkt = tuple(-x for x in kt)
        nk = math.sqrt(float(k @ k))
        khat = k / nk
        keep = []
        for alpha in idx.plus(kt):
            alpha = int(alpha)
            n2 = count_exact(assignment.holes(alpha),
                             assignment.particles(alpha), kt)
            patch = partition.patches[alpha]
            dot = abs(float(patch.center @ khat))
            entry = PairEntry(
                k=kt, alpha=alpha, n_sq=n2,
                u=math.sqrt(dot),
                v=math.sqrt(n2 / (k_F ** 2 * nk)),
                v_sq_leading=patch.area * dot,
            )
            mirror = alpha + half if alpha < half else alpha - half
            entries[(kt, alpha)] = entry
            entries[(mkt, mirror)] = PairEntry(
                k=mkt, alpha=mirror, n_sq=n2, u=entry.u, v=entry.v,
                v_sq_leading=entry.v_sq_leading)
            if n2 > 0:
                keep.append(alpha)
            else:
                dropped.append((kt, alpha))
                dropped.append((mkt, mirror))
                log.warning("dropping patch %d for k=%s: no pairs", alpha, kt)
        alive[kt] = np.array(keep, dtype=np.int64)
    return PairTable(k_F=k_F, M=partition.M, entries=entries, alive=alive,
                     dropped=dropped)


def off_index_pair_mass(partition, assignment, idx, k) -> int:
    """Total n^2 over patches outside both index sets of k (equator band)."""
    kt = tuple(int(x) for x in k)
    excluded = set(int(a) for a in idx.plus(kt)) | set(
        int(a) for a in idx.minus(kt))
    total = 0
    for alpha in range(partition.M):
        if alpha in excluded:
            continue
        total += count_exact(assignment.holes(alpha),
                             assignment.particles(alpha), kt)
    return total


def pair_floor_ratio(table: PairTable, N: int, M: int, delta: float) -> float:
    """min n / frak-n with frak-n = N^(1/3 - delta/2) / sqrt(M)."""
    frak = N ** (1.0 / 3.0 - delta / 2.0) / math.sqrt(M)
    best = math.inf
    for kt, keep in table.alive.items():
        for alpha in keep:
            best = min(best, table.entry(kt, alpha).n / frak)
    return best


def pair_table_csv(table: PairTable) -> str:
    lines = ["k1,k2,k3,alpha,n_sq,u,v,v_sq_leading,rel_err"]
    for (kt, alpha), e in sorted(table.entries.items()):
        lines.append(f"{kt[0]},{kt[1]},{kt[2]},{alpha},{e.n_sq},"
                     f"{e.u:.12g},{e.v:.12g},{e.v_sq_leading:.12g},"
                     f"{e.rel_err:.6g}")
    return "\n".join(lines) + "\n"
