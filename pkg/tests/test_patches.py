import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fermi_rpa.lattice import KAPPA0, FermiGeometry, gamma_nor, shell
from fermi_rpa.patches import (
    PartitionConfigError,
    adjacent_pairs,
    build_partition,
    index_sets,
    lift_to_shell,
    min_gap_angle,
    partition_table,
    round_even_patch_count,
)

FOUR_PI = 4.0 * math.pi
D_DEFAULT = 1.05 / KAPPA0


def random_units(n, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_two_hemispheres():
    part = build_partition(2, 10**6, 1, 0.0)
    assert part.M == 2
    assert len(part.patches) == 2
    north, south = part.patches
    assert np.array_equal(north.center, np.array([0.0, 0.0, 1.0]))
    assert np.array_equal(south.center, -north.center)
    for p in (north, south):
        assert p.pre_area == pytest.approx(2.0 * math.pi, abs=1e-14)
        assert p.area == pytest.approx(2.0 * math.pi, abs=1e-12)
    ids = part.assign_units(np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0],
                                      [0.6, 0.0, 0.8], [0.6, 0.0, -0.8]]))
    assert ids.tolist() == [0, 1, 0, 1]


def test_pre_areas_exact_m8():
    # all pre-corridor areas pi/2 for M=8 at the documented parameters
    part = build_partition(8, 10**6, 1, D_DEFAULT)
    pre = np.array([p.pre_area for p in part.patches])
    assert np.all(np.abs(pre - math.pi / 2) <= 1e-12 * (math.pi / 2))


@pytest.mark.parametrize("M", [4, 8, 32, 166, 512, 2048])
def test_pre_areas_equal(M):
    part = build_partition(M, 10**6, 1, D_DEFAULT)
    target = FOUR_PI / M
    pre = np.array([p.pre_area for p in part.patches])
    assert pre.shape == (M,)
    assert np.max(np.abs(pre - target)) <= 1e-10 * target
    assert pre.sum() == pytest.approx(FOUR_PI, rel=1e-12)


def test_pre_areas_closed_form():
    # reconstruct pre-corridor ranges and integrate int sin(theta) dtheta dphi
    part = build_partition(32, 10**5, 1, D_DEFAULT)
    s = part.shave
    cap = part.patches[0]
    assert cap.pre_area == pytest.approx(
        2.0 * math.pi * (1.0 - math.cos(cap.theta_hi + s)), rel=1e-12)
    for col in part.collars:
        for j in range(col.m):
            p = part.patches[col.first_id + j]
            th_lo, th_hi = p.theta_lo - s, p.theta_hi + s
            width = 2.0 * math.pi / col.m
            closed = (math.cos(th_lo) - math.cos(th_hi)) * width
            assert p.pre_area == pytest.approx(closed, rel=1e-10)


def test_mirror_symmetry_exact():
    part = build_partition(32, 10**5, 1, D_DEFAULT)
    half = part.M // 2
    for alpha in range(half):
        p, q = part.patches[alpha], part.patches[alpha + half]
        assert p.mirror_id == q.id and q.mirror_id == p.id
        assert np.array_equal(q.center, -p.center)
        assert q.area == p.area and q.pre_area == p.pre_area
        assert q.diameter == p.diameter


@pytest.mark.parametrize("M", [8, 128, 2048])
def test_diameter_bounded(M):
    ref = None
    part8 = build_partition(8, 10**6, 1, D_DEFAULT)
    ref = max(p.diameter for p in part8.patches) * math.sqrt(8)
    part = build_partition(M, 10**6, 1, D_DEFAULT)
    worst = max(p.diameter for p in part.patches) * math.sqrt(M)
    assert worst <= 1.5 * ref
    # smaller is fine (better balanced); guard only against degeneracy
    assert worst >= 0.4 * ref


def test_cap_diameter_formula():
    part = build_partition(32, 10**5, 1, D_DEFAULT)
    cap = part.patches[0]
    assert cap.diameter == pytest.approx(2.0 * math.sin(cap.theta_hi), rel=1e-12)


@pytest.mark.parametrize("M,N", [(8, 10**5), (8, 10**6), (32, 10**6)])
def test_corridor_width(M, N):
    R = 1
    geom = FermiGeometry.from_n(N)
    part = build_partition(M, geom.N, R, D_DEFAULT)
    gaps = [min_gap_angle(part, a, b, n=16) * geom.k_F
            for a, b in adjacent_pairs(part)]
    assert min(gaps) >= 2.0 * R * 0.99
    assert min(gaps) <= 3.5 * R


def test_membership_partition_of_sphere():
    part = build_partition(32, 10**5, 1, D_DEFAULT)
    units = random_units(2000, seed=7)
    ids = part.assign_units(units)
    owners = np.zeros(len(units), dtype=int)
    for alpha in range(part.M):
        inside = part.contains(alpha, units)
        owners += inside.astype(int)
        claimed = np.flatnonzero(inside)
        assert np.all(ids[claimed] == alpha)
    assert np.all(owners <= 1)
    assert np.all((owners == 1) == (ids >= 0))
    assert 0 < np.count_nonzero(ids < 0) < len(units)


def test_membership_reflection():
    part = build_partition(32, 10**5, 1, D_DEFAULT)
    units = random_units(3000, seed=11)
    ids = part.assign_units(units)
    mirrored = part.assign_units(-units)
    half = part.M // 2
    expect = np.where(ids >= 0, (ids + half) % part.M, -1)
    assert np.array_equal(mirrored, expect)


def test_monte_carlo_areas():
    part = build_partition(8, 10**6, 1, D_DEFAULT)
    units = random_units(200_000, seed=3)
    ids = part.assign_units(units)
    for alpha in (0, 1, 4):
        frac = np.count_nonzero(ids == alpha) / len(units)
        want = part.patches[alpha].area / FOUR_PI
        assert frac == pytest.approx(want, rel=0.05)
    corr = np.count_nonzero(ids < 0) / len(units)
    assert corr == pytest.approx(part.corridor_area() / FOUR_PI, rel=0.08)


def test_corridor_area_shrinks_with_n():
    fracs = []
    for N in (10**4, 10**6):
        part = build_partition(8, N, 1, D_DEFAULT)
        fracs.append(part.corridor_area() / FOUR_PI)
    assert fracs[1] < 0.35 * fracs[0]


def test_lift_to_shell_partitions_modes():
    geom = FermiGeometry.from_n(10**4)
    sh = shell(geom)
    part = build_partition(round_even_patch_count(geom.N, 1 / 27), geom.N, 1,
                           D_DEFAULT)
    asg = lift_to_shell(part, sh)
    assert asg.ids.shape == (len(sh.modes),)
    assert asg.ids.max() < part.M
    counts = np.bincount(asg.ids[asg.ids >= 0], minlength=part.M)
    assert counts.sum() + len(asg.corridor) == len(sh.modes)
    # holes/particles split consistent with the radial flag
    for alpha in (0, part.M // 2, 1):
        h, p = asg.holes(alpha), asg.particles(alpha)
        if len(h):
            assert np.all(np.einsum("ij,ij->i", h, h) <= geom.kf_sq)
        if len(p):
            assert np.all(np.einsum("ij,ij->i", p, p) > geom.kf_sq)
    # most patches straddle the Fermi surface
    both = sum(1 for a in range(part.M)
               if len(asg.holes(a)) and len(asg.particles(a)))
    assert both >= 0.9 * part.M


def test_corridor_mode_fraction_decreases():
    fracs = []
    for N in (10**4, 10**5, 10**6):
        geom = FermiGeometry.from_n(N)
        sh = shell(geom)
        part = build_partition(round_even_patch_count(geom.N, 1 / 27),
                               geom.N, 1, D_DEFAULT)
        asg = lift_to_shell(part, sh)
        fracs.append(len(asg.corridor) / len(sh.modes))
    assert fracs[0] > fracs[1] > fracs[2]


def test_index_sets_hemispheres():
    part = build_partition(2, 10**6, 1, 0.0)
    idx = index_sets(part, np.array([[0, 0, 1]]), 2 / 27, 10**6)
    assert idx.plus((0, 0, 1)).tolist() == [0]
    assert idx.minus((0, 0, 1)).tolist() == [1]
    assert idx.plus((0, 0, -1)).tolist() == [1]


def test_index_sets_threshold_and_mirror():
    N = 10**5
    part = build_partition(32, N, 1, D_DEFAULT)
    gamma = gamma_nor(2)
    idx = index_sets(part, gamma, 2 / 27, N)
    centers = part.centers()
    thr = N ** (-2 / 27)
    for k in gamma:
        khat = k / np.linalg.norm(k)
        want = np.flatnonzero(centers @ khat >= thr)
        assert np.array_equal(np.sort(idx.plus(k)), want)
        assert set(idx.minus(k).tolist()) == set(
            np.flatnonzero(centers @ -khat >= thr).tolist())
        # minus is the mirror of plus, in the same order
        assert np.array_equal(idx.minus(k), (idx.plus(k) + 16) % 32)
        assert idx.size(k) == len(idx.plus(k)) > 0


def test_index_sets_grow_with_n():
    sizes = []
    for N in (10**4, 10**12):
        part = build_partition(32, N, 1, D_DEFAULT)
        idx = index_sets(part, np.array([[0, 0, 1]]), 2 / 27, N)
        sizes.append(idx.size((0, 0, 1)))
    assert sizes[1] > sizes[0]
    assert sizes[1] <= 16


def test_config_errors():
    with pytest.raises(ValueError):
        build_partition(7, 10**4, 1, D_DEFAULT)
    with pytest.raises(PartitionConfigError, match="polar cap"):
        build_partition(2048, 10**3, 3, D_DEFAULT)
    with pytest.raises(PartitionConfigError, match="collar 0"):
        build_partition(8, 10**4, 8, D_DEFAULT)


def test_round_even_patch_count():
    assert round_even_patch_count(10**6, 1 / 27) == 166
    assert round_even_patch_count(1, 1 / 27) == 2
    assert round_even_patch_count(10**4, 1 / 27) % 2 == 0


def test_partition_table_roundtrip():
    part = build_partition(8, 10**5, 1, D_DEFAULT)
    text = partition_table(part)
    rows = [r for r in text.splitlines() if not r.startswith("#")]
    assert len(rows) == 8
    first = rows[0].split()
    assert int(first[0]) == 0 and first[1] == "cap"


@settings(max_examples=12, deadline=None)
@given(
    M=st.integers(min_value=1, max_value=64).map(lambda m: 2 * m),
    N=st.sampled_from([10**4, 10**5, 10**6, 10**7]),
    R=st.integers(min_value=1, max_value=2),
)
def test_partition_properties(M, N, R):
    try:
        part = build_partition(M, N, R, D_DEFAULT)
    except PartitionConfigError:
        return
    pre = np.array([p.pre_area for p in part.patches])
    assert np.max(np.abs(pre - FOUR_PI / M)) <= 1e-9 * FOUR_PI / M
    units = random_units(400, seed=M + R)
    ids = part.assign_units(units)
    half = M // 2
    mirrored = part.assign_units(-units)
    assert np.array_equal(mirrored, np.where(ids >= 0, (ids + half) % M, -1))
    areas = part.areas()
    assert np.all(areas > 0) and areas.sum() < FOUR_PI
