"""Equal-area, diameter-bounded partition of the unit sphere with corridors.

Northern construction: a polar cap with opening angle arccos(1 - 2/M), then
collars of azimuthal cells. Collar boundaries are booked in cos(theta) space
so that every pre-corridor cell has area exactly 4pi/M. The southern
hemisphere is the point reflection of the north; mirror centers are exact
float negations and southern membership is defined as membership of the
reflected vector in the mirror patch, which makes all reflection identities
hold exactly on lattice modes.

Corridors: every cell boundary is pulled inward by the angle
s = D~ R N^(-1/3); azimuthal boundaries by s / sin(theta_edge) with theta_edge
the collar's pole-side latitude, where sin(theta) is smallest, so the gap
between neighbors is at least 2s everywhere, including across the equator.
On the sphere of radius k_F this is a gap of at least 2R once D~ >= 1/kappa.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import KAPPA0

TWO_PI = 2.0 * math.pi

# corridor coefficient slightly above 1/kappa0, so that the shaved gap
# between patches scaled to radius k_F stays >= 2R
DEFAULT_D_TILDE = 1.05 / KAPPA0


class PartitionConfigError(ValueError):
    """Corridor shaving or cell counts left an empty patch."""


def round_even_patch_count(N, eps) -> int:
    """Number of patches N^(1/3 + eps), rounded to the nearest even integer."""
    x = float(N) ** (1.0 / 3.0 + eps)
    return max(2 * round(x / 2.0), 2)


def _unit(theta, phi):
    st = math.sin(theta)
    return np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)])


@dataclass(frozen=True)
class Patch:
    """One sphere cell. Angular ranges are the corridor-shaved ones, [lo, hi).

    For southern patches the stored ranges are the reflected nominal ranges;
    membership tests must go through Partition.contains, which evaluates the
    mirror patch on the reflected vector.
    """

    id: int
    kind: str              # "cap" | "collar-cell"
    theta_lo: float
    theta_hi: float
    phi_lo: float
    phi_hi: float
    center: np.ndarray
    area: float            # shaved area sigma(p_alpha), steradians
    pre_area: float        # pre-corridor area, 4pi/M by construction
    diameter: float        # max chord between sampled boundary points
    mirror_id: int
    collar: int            # -1 for the caps


@dataclass
class _Collar:
    index: int
    c_hi_pre: float        # cos(theta at upper pre-corridor edge), larger value
    c_lo_pre: float
    c_hi_shaved: float     # cos(theta_lo + s); membership is c in (c_lo_shaved, c_hi_shaved]
    c_lo_shaved: float
    m: int
    s_phi: float
    first_id: int
    theta_c: float


@dataclass
class Partition:
    M: int
    N: int
    R: int
    D_tilde: float
    shave: float
    patches: list = field(default_factory=list)
    collars: list = field(default_factory=list)
    cap_c_shaved: float = 1.0

    # -- membership ---------------------------------------------------------

    def _assign_north(self, units: np.ndarray) -> np.ndarray:
        """Northern patch id per row of `units`, -1 where none matches."""
        units = np.atleast_2d(np.asarray(units, dtype=float))
        ids = np.full(len(units), -1, dtype=np.int64)
        c = units[:, 2]
        ids[c > self.cap_c_shaved] = 0
        for col in self.collars:
            sel = np.flatnonzero((c <= col.c_hi_shaved) & (c > col.c_lo_shaved))
            if sel.size == 0:
                continue
            phi = np.mod(np.arctan2(units[sel, 1], units[sel, 0]), TWO_PI)
            w = TWO_PI / col.m
            j = np.minimum((phi / w).astype(np.int64), col.m - 1)
            off = phi - j * w
            ok = (off >= col.s_phi) & (off < w - col.s_phi)
            ids[sel[ok]] = col.first_id + j[ok]
        return ids

    def assign_units(self, units: np.ndarray) -> np.ndarray:
        """Patch id per unit vector, -1 for corridor points."""
        units = np.atleast_2d(np.asarray(units, dtype=float))
        ids = self._assign_north(units)
        south = self._assign_north(-units)
        take = (ids < 0) & (south >= 0)
        ids[take] = south[take] + self.M // 2
        return ids

    def contains(self, alpha: int, units: np.ndarray) -> np.ndarray:
        """Boolean membership of unit vectors in patch alpha."""
        units = np.atleast_2d(np.asarray(units, dtype=float))
        half = self.M // 2
        if alpha >= half:
            return self.contains(alpha - half, -units)
        return self._assign_north(units) == alpha

    # -- convenience --------------------------------------------------------

    def centers(self) -> np.ndarray:
        return np.stack([p.center for p in self.patches])

    def areas(self) -> np.ndarray:
        return np.array([p.area for p in self.patches])

    def corridor_area(self) -> float:
        return 4.0 * math.pi - float(self.areas().sum())


def _boundary_units(theta_lo, theta_hi, phi_lo, phi_hi, full_azimuth, n=24):
    """Sample points on the boundary of a (shaved) cell."""
    pts = []
    if full_azimuth:
        phis = np.linspace(0.0, TWO_PI, 2 * n, endpoint=False)
        for ph in phis:
            pts.append(_unit(theta_hi, ph))
            if theta_lo > 0.0:
                pts.append(_unit(theta_lo, ph))
        if theta_lo == 0.0:
            pts.append(np.array([0.0, 0.0, 1.0]))
    else:
        thetas = np.linspace(theta_lo, theta_hi, n)
        phis = np.linspace(phi_lo, phi_hi, n)
        for th in thetas:
            pts.append(_unit(th, phi_lo))
            pts.append(_unit(th, phi_hi))
        for ph in phis:
            pts.append(_unit(theta_lo, ph))
            pts.append(_unit(theta_hi, ph))
    return np.stack(pts)


def boundary_units(patch: Patch, n=24) -> np.ndarray:
    """Boundary sample of a patch; southern patches by reflecting the mirror."""
    full = patch.kind == "cap" or (patch.phi_hi - patch.phi_lo) >= TWO_PI
    if patch.center[2] >= 0:
        return _boundary_units(patch.theta_lo, patch.theta_hi,
                               patch.phi_lo, patch.phi_hi, full, n)
    north = _boundary_units(math.pi - patch.theta_hi, math.pi - patch.theta_lo,
                            patch.phi_lo - math.pi, patch.phi_hi - math.pi, full, n)
    return -north


def _diameter(theta_lo, theta_hi, phi_lo, phi_hi, full_azimuth) -> float:
    pts = _boundary_units(theta_lo, theta_hi, phi_lo, phi_hi, full_azimuth)
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    return math.sqrt(float(d2.max()))


def build_partition(M: int, N: int, R: int, D_tilde: float) -> Partition:
    """Equal-area partition of the sphere into M patches with corridors.

    M must be even. Pre-corridor cells tile each hemisphere exactly (cap plus
    collars of equal-area azimuthal cells); the corridor half-angle is
    s = D_tilde * R * N^(-1/3).
    """
    if M < 2 or M % 2 != 0:
        raise ValueError("M must be an even integer >= 2")
    if N < 1 or R < 1:
        raise ValueError("need N >= 1 and R >= 1")
    s = D_tilde * R * float(N) ** (-1.0 / 3.0)
    c_cap = 1.0 - 2.0 / M
    theta_cap = math.acos(c_cap)
    if theta_cap - s <= 0.0:
        raise PartitionConfigError("corridor shaving empties the polar cap")

    half = M // 2
    n_cells = half - 1

    # Collar layout: ~sqrt(M)/2 provisional uniform collars; the cell count of
    # each is its band area over 4pi/M (so counts grow like sin(theta) towards
    # the equator), rounded with carried residual so they sum to M/2 - 1
    # exactly. Boundaries are then recomputed in cos space so each cell has
    # area exactly 4pi/M.
    collar_specs = []
    if n_cells > 0:
        n_col = min(max(1, round(math.sqrt(M) / 2.0)), n_cells)
        dth = (math.pi / 2.0 - theta_cap) / n_col
        cum = 0.0
        assigned = 0
        counts = []
        for i in range(n_col):
            c_band_hi = math.cos(theta_cap + i * dth)
            c_band_lo = 0.0 if i == n_col - 1 else math.cos(theta_cap + (i + 1) * dth)
            cum += 0.5 * M * (c_band_hi - c_band_lo)
            mi = max(1, round(cum) - assigned)
            assigned += mi
            counts.append(mi)
        counts[-1] += n_cells - assigned
        if counts[-1] < 1:
            raise PartitionConfigError("cell counts do not fit the collars")
        c_prev = c_cap
        for i in range(n_col):
            c_next = 0.0 if i == n_col - 1 else c_prev - 2.0 * counts[i] / M
            collar_specs.append((i, c_prev, c_next, counts[i]))
            c_prev = c_next

    patches = []
    collars = []
    cap_c_shaved = c_cap if s == 0.0 else math.cos(theta_cap - s)
    patches.append(Patch(
        id=0, kind="cap",
        theta_lo=0.0, theta_hi=theta_cap - s,
        phi_lo=0.0, phi_hi=TWO_PI,
        center=np.array([0.0, 0.0, 1.0]),
        area=TWO_PI * (1.0 - cap_c_shaved),
        pre_area=TWO_PI * (1.0 - c_cap),
        diameter=2.0 * math.sin(theta_cap - s),
        mirror_id=half, collar=-1,
    ))

    fid = 1
    for i, c_hi, c_lo, mi in collar_specs:
        th_lo = math.acos(c_hi)
        th_hi = math.acos(c_lo)
        if th_hi - th_lo - 2.0 * s <= 0.0:
            raise PartitionConfigError(
                f"corridor shaving empties the cells of collar {i}")
        theta_c = 0.5 * (th_lo + th_hi)
        w = TWO_PI / mi
        # divide by the smallest sin(theta) in the collar so the Euclidean
        # gap between azimuthal neighbors is >= 2s at every latitude
        s_phi = 0.0 if mi == 1 else s / math.sin(th_lo)
        if w - 2.0 * s_phi <= 0.0:
            raise PartitionConfigError(
                f"azimuthal corridor shaving empties the cells of collar {i}")
        c_hi_shaved = c_hi if s == 0.0 else math.cos(th_lo + s)
        c_lo_shaved = c_lo if s == 0.0 else math.cos(th_hi - s)
        band_shaved = c_hi_shaved - c_lo_shaved
        diam = _diameter(th_lo + s, th_hi - s, s_phi, w - s_phi, mi == 1)
        for j in range(mi):
            phi_lo = j * w
            phi_hi = (j + 1) * w
            patches.append(Patch(
                id=fid + j, kind="collar-cell",
                theta_lo=th_lo + s, theta_hi=th_hi - s,
                phi_lo=phi_lo + s_phi, phi_hi=phi_hi - s_phi,
                center=_unit(theta_c, 0.5 * (phi_lo + phi_hi)),
                area=band_shaved * (w - 2.0 * s_phi),
                pre_area=(c_hi - c_lo) * w,
                diameter=diam,
                mirror_id=half + fid + j, collar=i,
            ))
        collars.append(_Collar(
            index=i, c_hi_pre=c_hi, c_lo_pre=c_lo,
            c_hi_shaved=c_hi_shaved, c_lo_shaved=c_lo_shaved,
            m=mi, s_phi=s_phi, first_id=fid, theta_c=theta_c,
        ))
        fid += mi

    # Southern hemisphere: point reflection. Stored ranges are nominal; all
    # membership goes through the mirror patch on the reflected vector.
    for p in list(patches):
        patches.append(Patch(
            id=p.id + half, kind=p.kind,
            theta_lo=math.pi - p.theta_hi, theta_hi=math.pi - p.theta_lo,
            phi_lo=p.phi_lo + math.pi, phi_hi=p.phi_hi + math.pi,
            center=-p.center,
            area=p.area, pre_area=p.pre_area, diameter=p.diameter,
            mirror_id=p.id, collar=p.collar,
        ))

    return Partition(M=M, N=N, R=R, D_tilde=D_tilde, shave=s,
                     patches=patches, collars=collars,
                     cap_c_shaved=cap_c_shaved)


def adjacent_pairs(partition: Partition) -> list[tuple[int, int]]:
    """A representative list of neighboring patch id pairs (for gap checks)."""
    pairs = []
    cols = partition.collars
    half = partition.M // 2
    if cols:
        pairs.append((0, cols[0].first_id))
    for a, b in zip(cols, cols[1:]):
        pairs.append((a.first_id, b.first_id))
    for col in cols:
        if col.m >= 2:
            pairs.append((col.first_id, col.first_id + 1))
            pairs.append((col.first_id + col.m - 1, col.first_id))
    if cols:
        eq = cols[-1]
        pairs.append((eq.first_id, eq.first_id + half))
    else:
        pairs.append((0, half))
    return pairs


def min_gap_angle(partition: Partition, a: int, b: int, n=32) -> float:
    """Smallest great-circle angle between sampled boundaries of two patches."""
    pa = boundary_units(partition.patches[a], n)
    pb = boundary_units(partition.patches[b], n)
    dots = np.clip(pa @ pb.T, -1.0, 1.0)
    return float(np.arccos(dots.max()))


@dataclass
class ShellAssignment:
    """Shell modes routed to patches: cone membership of the unit direction."""

    ids: np.ndarray            # per shell mode: patch id or -1 (corridor)
    hole: np.ndarray
    modes: np.ndarray

    def holes(self, alpha: int) -> np.ndarray:
        return self.modes[(self.ids == alpha) & self.hole]

    def particles(self, alpha: int) -> np.ndarray:
        return self.modes[(self.ids == alpha) & ~self.hole]

    @property
    def corridor(self) -> np.ndarray:
        return self.modes[self.ids < 0]


def lift_to_shell(partition: Partition, sh) -> ShellAssignment:
    """Assign each fattened-shell mode to the patch cone containing it."""
    modes = sh.modes
    norms = np.sqrt(np.einsum("ij,ij->i", modes, modes).astype(float))
    ids = np.full(len(modes), -1, dtype=np.int64)
    ok = norms > 0
    units = modes[ok].astype(float) / norms[ok, None]
    ids[ok] = partition.assign_units(units)
    return ShellAssignment(ids=ids, hole=sh.hole.copy(), modes=modes)


@dataclass
class IndexSets:
    """Per-momentum patch index sets: centers aligned with k up to N^-delta."""

    delta: float
    threshold: float
    M: int
    by_k: dict

    def plus(self, k) -> np.ndarray:
        key = tuple(int(x) for x in k)
        if key in self.by_k:
            return self.by_k[key][0]
        neg = tuple(-x for x in key)
        if neg in self.by_k:
            return self.by_k[neg][1]
        raise KeyError(f"no index sets for momentum {key}")

    def minus(self, k) -> np.ndarray:
        return self.plus(tuple(-int(x) for x in k))

    def size(self, k) -> int:
        return len(self.plus(k))


def index_sets(partition: Partition, gamma: np.ndarray, delta: float, N: int) -> IndexSets:
    """For each k: patches whose center direction satisfies w.k^ >= N^-delta.

    The minus set is stored in mirror order of the plus set, so position i of
    both refers to a mirror pair of patches.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    thr = float(N) ** (-delta)
    centers = partition.centers()
    half = partition.M // 2
    by_k = {}
    for k in np.atleast_2d(np.asarray(gamma, dtype=np.int64)):
        khat = k.astype(float) / math.sqrt(float(k @ k))
        dots = centers @ khat
        plus = np.flatnonzero(dots >= thr).astype(np.int64)
        minus = (plus + half) % partition.M
        # mirror centers are exact negations, so this must agree bitwise
        assert set(minus.tolist()) == set(np.flatnonzero(-dots >= thr).tolist())
        by_k[tuple(int(x) for x in k)] = (plus, minus)
    return IndexSets(delta=delta, threshold=thr, M=partition.M, by_k=by_k)


def partition_table(partition: Partition) -> str:
    """Plain-text table of the partition (for plotting or inspection)."""
    lines = ["# id kind theta_lo theta_hi phi_lo phi_hi cx cy cz area diameter"]
    for p in partition.patches:
        c = p.center
        lines.append(
            f"{p.id} {p.kind} {p.theta_lo:.12g} {p.theta_hi:.12g} "
            f"{p.phi_lo:.12g} {p.phi_hi:.12g} "
            f"{c[0]:.12g} {c[1]:.12g} {c[2]:.12g} {p.area:.12g} {p.diameter:.12g}")
    return "\n".join(lines) + "\n"
