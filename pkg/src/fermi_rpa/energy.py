"""Hartree-Fock energy, correlation-energy assembly, and the closed form.

The correlation energy is the patch-pipeline sum hbar kappa sum_k |k| e(k)
over half the momentum lattice; its large-N limit is the Gell-Mann and
Brueckner type expression evaluated here in closed form as the reference
for convergence sweeps.
"""
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from .lattice import (
    KAPPA0,
    FermiGeometry,
    ball_norm_sq_sum,
    fermi_ball,
    gamma_nor,
    norm,
    shell,
)
from .paircount import build_pair_table, count_exact
from .patches import (
    DEFAULT_D_TILDE,
    build_partition,
    index_sets,
    lift_to_shell,
    round_even_patch_count,
)
from .quadratic import (
    assemble_blocks,
    energy_integral,
    energy_trace,
    kernel_K,
    symplectic_oracle,
)

SCHEMA = "fermi-rpa/1"
DEFAULT_EPS = 1.0 / 27.0
DEFAULT_DELTA = 2.0 / 27.0


@dataclass(frozen=True)
class Potential:
    """Non-negative, even, compactly supported interaction in momentum space.

    Either radial (map |k|^2 -> value) or explicit (map k -> value, evenness
    checked). The mass only ever enters through m*V and a global 1/m.
    """

    R: int
    m: float = 1.0
    radial: dict = None
    explicit: dict = None

    def __post_init__(self):
        if self.R < 0:
            raise ValueError("support radius must be nonnegative")
        if self.m <= 0.0:
            raise ValueError("mass must be positive")
        if (self.radial is None) == (self.explicit is None):
            raise ValueError("exactly one of radial/explicit required")
        if self.radial is not None:
            for s, val in self.radial.items():
                if s < 0 or s > self.R * self.R:
                    raise ValueError(f"radial shell {s} outside support")
                if val < 0.0:
                    raise ValueError("potential values must be nonnegative")
        else:
            for k, val in self.explicit.items():
                if val < 0.0:
                    raise ValueError("potential values must be nonnegative")
                if sum(x * x for x in k) > self.R * self.R:
                    raise ValueError(f"momentum {k} outside support")
                mk = tuple(-x for x in k)
                if self.explicit.get(mk, 0.0) != val:
                    raise ValueError(f"potential not even at {k}")

    @classmethod
    def uniform(cls, v0, R=1, m=1.0) -> "Potential":
        return cls(R=R, m=m,
                   radial={s: float(v0) for s in range(R * R + 1)})

    @classmethod
    def zero(cls) -> "Potential":
        return cls(R=0, radial={})

    def value(self, k) -> float:
        s = int(sum(int(x) * int(x) for x in k))
        if s > self.R * self.R:
            return 0.0
        if self.radial is not None:
            return float(self.radial.get(s, 0.0))
        return float(self.explicit.get(tuple(int(x) for x in k), 0.0))

    def is_zero(self) -> bool:
        table = self.radial if self.radial is not None else self.explicit
        return all(v == 0.0 for v in table.values())


# ------------------------------------------------------------- Hartree-Fock


def hf_energy(geom: FermiGeometry, potential: Potential):
    """(kinetic, direct, exchange) of the plane-wave state.

    The exchange sum runs over all ordered hole pairs including h = h',
    whose (1/2N) V(0) N excess is what makes the direct term exactly
    (N/2) V(0) rather than (N-1)/2.
    """
    kinetic = geom.hbar ** 2 / (2.0 * potential.m) \
        * ball_norm_sq_sum(geom.kf_sq)
    if potential.is_zero():
        return kinetic, 0.0, 0.0
    direct = 0.5 * geom.N * potential.value((0, 0, 0))
    ball = geom.ball()
    acc = 0.0
    for k in fermi_ball(potential.R):
        v = potential.value(k)
        if v > 0.0:
            # number of ordered hole pairs with difference k
            acc += v * count_exact(ball, ball, k)
    exchange = -acc / (2.0 * geom.N)
    return kinetic, direct, exchange


# ------------------------------------------------------- closed-form target


def gmb_weight(lam: float) -> float:
    """1 - lambda*arctan(1/lambda), the Fermi-surface angular integral."""
    if lam == 0.0:
        return 1.0
    return 1.0 - lam * math.atan(1.0 / lam)


def _bracket_integral(a: float) -> float:
    """(1/pi) int_0^inf log(1 + a*(1 - lambda arctan(1/lambda))) dlambda."""
    if a == 0.0:
        return 0.0

    def head(lam):
        return math.log1p(a * gmb_weight(lam))

    def tail(t):
        # gmb_weight(1/t) ~ t^2/3, so the integrand extends to a/3 at t=0
        if t <= 0.0:
            return a / 3.0
        return math.log1p(a * gmb_weight(1.0 / t)) / (t * t)

    lam_max = max(10.0, a)
    with warnings.catch_warnings():
        # roundoff chatter is fine; the explicit error check below governs
        warnings.simplefilter("ignore", IntegrationWarning)
        h, err_h = quad(head, 0.0, lam_max, limit=300, epsabs=1e-13,
                        epsrel=1e-13, points=[1.0])
        t_, err_t = quad(tail, 0.0, 1.0 / lam_max, limit=100, epsabs=1e-13,
                         epsrel=1e-13)
    if (err_h + err_t) / math.pi > 1e-10:
        raise ArithmeticError("bracket quadrature did not reach 1e-10")
    return (h + t_) / math.pi


def gmb_bracket(v_hat: float, kappa0: float = KAPPA0, m: float = 1.0) -> float:
    """Per-k bracket: (1/pi) int log(1 + 4 pi V m kappa0 w) - V m kappa0 pi."""
    a = 4.0 * math.pi * v_hat * m * kappa0
    return _bracket_integral(a) - v_hat * m * kappa0 * math.pi


def gmb_closed_form(potential: Potential, kappa0: float = KAPPA0,
                    m: float = None) -> float:
    """Large-N limit of E_corr/hbar: (kappa0/2m) sum_k |k| bracket(V(k))."""
    m = potential.m if m is None else m
    total = 0.0
    for k in fermi_ball(potential.R):
        nk = norm(k)
        if nk == 0.0:
            continue
        v = potential.value(k)
        if v > 0.0:
            total += nk * gmb_bracket(v, kappa0, m)
    return kappa0 / (2.0 * m) * total


def small_v_expansion(potential: Potential, kappa0: float = KAPPA0,
                      m: float = None) -> float:
    """Second-order coefficient of the closed form for weak potentials:
    -(4 pi^2 / 3)(1 - log 2) m kappa0^3 sum_k |k| V(k)^2."""
    m = potential.m if m is None else m
    coef = -(4.0 * math.pi ** 2 / 3.0) * (1.0 - math.log(2.0)) \
        * m * kappa0 ** 3
    total = 0.0
    for k in fermi_ball(potential.R):
        total += norm(k) * potential.value(k) ** 2
    return coef * total


# ------------------------------------------------------------ assembly


@dataclass
class EnergyReport:
    N: int
    k_F: float
    M: int
    eps: float
    delta: float
    hbar: float
    kappa: float
    kappa0: float
    m: float
    hf_kinetic: float
    hf_direct: float
    hf_exchange: float
    e_corr_trace: float
    e_corr_integral: float
    e_corr_symplectic: float
    gmb: float
    small_v: float
    per_k: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def hf_total(self) -> float:
        return self.hf_kinetic + self.hf_direct + self.hf_exchange

    @property
    def e_corr_per_hbar(self) -> float:
        return self.e_corr_trace / self.hbar

    @property
    def gmb_error(self) -> float:
        return abs(self.e_corr_per_hbar - self.gmb)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "N": self.N, "k_F": self.k_F, "M": self.M,
            "eps": self.eps, "delta": self.delta,
            "hbar": self.hbar, "kappa": self.kappa, "kappa0": self.kappa0,
            "m": self.m,
            "hf": {"kinetic": self.hf_kinetic, "direct": self.hf_direct,
                   "exchange": self.hf_exchange, "total": self.hf_total},
            "e_corr": {"trace": self.e_corr_trace,
                       "integral": self.e_corr_integral,
                       "symplectic": self.e_corr_symplectic,
                       "per_hbar": self.e_corr_per_hbar},
            "gmb": {"per_hbar": self.gmb, "absolute": self.gmb * self.hbar,
                    "small_v": self.small_v,
                    "abs_error": self.gmb_error},
            "per_k": self.per_k,
            "wall_time": self.wall_time,
        }


def per_k_energies(table, idx, k, potential: Potential, kappa: float):
    """Record for one momentum: all three e(k) routes at m = 1 equivalent
    coupling g = kappa * m * V(k), rescaled by 1/m."""
    m = potential.m
    blocks = assemble_blocks(table, idx, k, m * potential.value(k), kappa)
    ker = kernel_K(blocks)
    e_int, qerr = energy_integral(blocks, with_error=True)
    return {
        "k": [int(x) for x in k],
        "I": blocks.I,
        "e_trace": energy_trace(blocks) / m,
        "e_integral": e_int / m,
        "e_symplectic": symplectic_oracle(blocks) / m,
        "K_tr_norm": ker.tr_norm,
        "K_hs_norm": ker.hs_norm,
        "quadrature_err": qerr,
    }


def correlation_energy(geom: FermiGeometry, potential: Potential, M: int,
                       delta: float = DEFAULT_DELTA, eps: float = None,
                       d_tilde: float = DEFAULT_D_TILDE,
                       coupling_kappa: float = None,
                       pmap=None) -> EnergyReport:
    """Full pipeline at one N: partition, count, solve every k in Gamma.

    coupling_kappa overrides kappa both in g(k) and in the prefactor (used
    to probe the kappa -> kappa0 substitution error).  pmap, if given, is
    an order-preserving map (e.g. ThreadPoolExecutor.map) used for the
    per-k solves; results are merged back in the fixed Gamma order, so the
    report is identical to the serial one.
    """
    t0 = time.monotonic()
    if geom.R < potential.R:
        raise ValueError("geometry shell narrower than potential support")
    if eps is None:
        # implied exponent from the patch count actually used
        eps = math.log(M) / math.log(geom.N) - 1.0 / 3.0 if geom.N > 1 else 0.0
    kappa = geom.kappa if coupling_kappa is None else coupling_kappa
    kin, direct, exch = hf_energy(geom, potential)
    gamma = gamma_nor(geom.R)
    per_k = []
    totals = {"trace": 0.0, "integral": 0.0, "symplectic": 0.0}
    if not potential.is_zero():
        part = build_partition(M, geom.N, geom.R, d_tilde)
        assign = lift_to_shell(part, shell(geom))
        idx = index_sets(part, gamma, delta, geom.N)
        table = build_pair_table(part, assign, idx, gamma, geom.k_F)
        ks = [tuple(int(x) for x in k) for k in gamma]

        def solve(k):
            try:
                return per_k_energies(table, idx, k, potential, kappa)
            except ArithmeticError as exc:
                raise type(exc)(f"{exc} (at k={k})") from exc

        mapper = map if pmap is None else pmap
        for k, rec in zip(ks, mapper(solve, ks)):
            w = geom.hbar * kappa * norm(k)
            rec["weight"] = w
            per_k.append(rec)
            totals["trace"] += w * rec["e_trace"]
            totals["integral"] += w * rec["e_integral"]
            totals["symplectic"] += w * rec["e_symplectic"]
    return EnergyReport(
        N=geom.N, k_F=geom.k_F, M=M, eps=eps, delta=delta, hbar=geom.hbar,
        kappa=geom.kappa, kappa0=KAPPA0, m=potential.m,
        hf_kinetic=kin, hf_direct=direct, hf_exchange=exch,
        e_corr_trace=totals["trace"], e_corr_integral=totals["integral"],
        e_corr_symplectic=totals["symplectic"],
        gmb=gmb_closed_form(potential),
        small_v=small_v_expansion(potential),
        per_k=per_k, wall_time=time.monotonic() - t0)


def convergence_sweep(n_targets, potential: Potential,
                      eps: float = DEFAULT_EPS, delta: float = DEFAULT_DELTA,
                      fit_exponent: bool = True, pmap=None):
    """Reports over an N sweep plus the fitted error exponent.

    Needs at least 3 distinct N to fit |E_corr/hbar - GMB| ~ N^p; pass
    fit_exponent=False to skip fitting for shorter sweeps.  pmap, if
    given, maps over the sweep entries (order-preserving), one task per
    target N.
    """
    if fit_exponent and len(set(n_targets)) < 3:
        raise ValueError("exponent fit needs at least 3 distinct N targets")

    def one(n):
        geom = FermiGeometry.from_n(n, R=max(potential.R, 1))
        M = round_even_patch_count(geom.N, eps)
        return correlation_energy(geom, potential, M, delta, eps=eps)

    mapper = map if pmap is None else pmap
    reports = list(mapper(one, list(n_targets)))
    exponent = None
    if fit_exponent:
        xs = np.log([float(r.N) for r in reports])
        ys = np.log([max(r.gmb_error, 1e-300) for r in reports])
        exponent = float(np.polyfit(xs, ys, 1)[0])
    return reports, exponent


def sweep_csv(reports) -> str:
    cols = ("N,k_F,M,hf_kinetic,hf_direct,hf_exchange,e_corr_trace,"
            "e_corr_integral,e_corr_symplectic,e_corr_per_hbar,gmb,"
            "abs_error,rel_error,wall_time")
    lines = [cols]
    for r in reports:
        rel = r.gmb_error / abs(r.gmb) if r.gmb != 0.0 else 0.0
        lines.append(
            f"{r.N},{r.k_F:.12g},{r.M},{r.hf_kinetic:.12g},"
            f"{r.hf_direct:.12g},{r.hf_exchange:.12g},"
            f"{r.e_corr_trace:.12g},{r.e_corr_integral:.12g},"
            f"{r.e_corr_symplectic:.12g},{r.e_corr_per_hbar:.12g},"
            f"{r.gmb:.12g},{r.gmb_error:.12g},{rel:.12g},"
            f"{r.wall_time:.4g}")
    return "\n".join(lines) + "\n"
