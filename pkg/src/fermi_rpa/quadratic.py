"""Per-momentum quadratic bosonic problem.

For each interaction momentum k the aligned patches carry one effective
bosonic mode each; the quadratic Hamiltonian is determined by a diagonal
block D of squared alignments and rank-one interaction blocks W (direct)
and W~ (pairing). Its ground-state energy relative to tr(D+W)/2 is the
per-k correlation energy. Three independent evaluations are provided: the
trace formula through E(k), a resolvent integral of the scalar secular
function, and a symplectic block-diagonalization oracle.
"""
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import IntegrationWarning, quad

__all__ = [
    "Blocks", "Kernel", "NumericalDomainError", "assemble_blocks",
    "blocks_from_uv", "sqrt_psd", "matrix_E", "kernel_K", "s_matrices",
    "energy_trace", "energy_trace_dense", "energy_integral",
    "symplectic_oracle", "energy_decomposition", "momentum_record",
]

CLAMP_TOL = 1e-10
BLOCK_CHECK_TOL = 1e-9
SYMPLECTIC_TOL = 1e-9
QUAD_TOL = 1e-10


class NumericalDomainError(ArithmeticError):
    """A matrix left the PSD/positive domain beyond clamping tolerance."""


@dataclass(frozen=True)
class Blocks:
    """Quadratic-problem data for one momentum.

    Rows 1..I are the patches aligned with k, rows I+1..2I their point
    reflections (aligned with -k); the reflection makes v identical on
    mirror rows, so only the length-I vectors are stored. D, W, W~ are
    assembled on demand.
    """

    k: tuple
    I: int
    plus_ids: tuple
    minus_ids: tuple
    u: np.ndarray
    v: np.ndarray
    g: float

    @property
    def d(self) -> np.ndarray:
        return self.u ** 2

    @property
    def b(self) -> np.ndarray:
        return self.g * np.outer(self.v, self.v)

    @property
    def D(self) -> np.ndarray:
        return np.diag(np.concatenate([self.d, self.d]))

    @property
    def W(self) -> np.ndarray:
        z = np.zeros((self.I, self.I))
        return np.block([[self.b, z], [z, self.b]])

    @property
    def W_tilde(self) -> np.ndarray:
        z = np.zeros((self.I, self.I))
        return np.block([[z, self.b], [self.b, z]])


@dataclass(frozen=True)
class Kernel:
    K: np.ndarray
    hs_norm: float
    tr_norm: float


def blocks_from_uv(u, v, g, k=(0, 0, 0), plus_ids=(), minus_ids=()) -> Blocks:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if u.shape != v.shape:
        raise ValueError("u and v must have equal length")
    if np.any(u <= 0.0) or np.any(u > 1.0):
        raise ValueError("alignments u must lie in (0, 1]")
    if np.any(v < 0.0):
        raise ValueError("pair densities v must be nonnegative")
    if g < 0.0:
        raise ValueError("coupling g = kappa V(k) must be nonnegative")
    return Blocks(k=tuple(int(x) for x in k), I=len(u),
                  plus_ids=tuple(plus_ids), minus_ids=tuple(minus_ids),
                  u=u, v=v, g=float(g))


def assemble_blocks(pair_table, index_sets, k, v_hat, kappa) -> Blocks:
    """Blocks for momentum k from counted pairs; I = 0 marks an empty problem."""
    kt = tuple(int(x) for x in k)
    g = kappa * (v_hat(kt) if callable(v_hat) else float(v_hat))
    alive = pair_table.alive_plus(kt)
    if len(alive) == 0:
        return Blocks(k=kt, I=0, plus_ids=(), minus_ids=(),
                      u=np.empty(0), v=np.empty(0), g=float(g))
    half = pair_table.M // 2
    u = np.array([pair_table.entry(kt, a).u for a in alive])
    v = np.array([pair_table.entry(kt, a).v for a in alive])
    thr = getattr(index_sets, "threshold", 0.0)
    if np.any(u ** 2 < thr - 1e-12):
        raise ValueError("patch below alignment threshold in index set")
    return blocks_from_uv(
        u, v, g, k=kt, plus_ids=tuple(int(a) for a in alive),
        minus_ids=tuple((int(a) + half) % pair_table.M for a in alive))


def _eigh_checked(A, what):
    A = np.asarray(A, dtype=float)
    w, q = np.linalg.eigh(0.5 * (A + A.T))
    scale = max(abs(w[0]), abs(w[-1]), 1e-300)
    if w[0] < -CLAMP_TOL * scale:
        raise NumericalDomainError(
            f"{what}: eigenvalue {w[0]:.3e} below -{CLAMP_TOL:g}*norm")
    return np.clip(w, 0.0, None), q


def sqrt_psd(A) -> np.ndarray:
    """Symmetric PSD square root; tiny negative eigenvalues clamped to 0."""
    w, q = _eigh_checked(A, "sqrt_psd")
    return (q * np.sqrt(w)) @ q.T


def _inv_sqrt_psd(A, what) -> np.ndarray:
    w, q = _eigh_checked(A, what)
    if w[0] <= 0.0:
        raise NumericalDomainError(f"{what}: matrix not strictly positive")
    return (q / np.sqrt(w)) @ q.T


def _check_positive(A, what):
    w = np.linalg.eigvalsh(0.5 * (A + A.T))
    if w[0] <= 0.0:
        raise NumericalDomainError(f"{what} must be strictly positive")


def matrix_E(blocks: Blocks) -> np.ndarray:
    """E = ((D+W-W~)^(1/2) (D+W+W~) (D+W-W~)^(1/2))^(1/2), block cross-checked."""
    if blocks.I == 0:
        return np.zeros((0, 0))
    A = blocks.D + blocks.W - blocks.W_tilde
    B = blocks.D + blocks.W + blocks.W_tilde
    _check_positive(A, "D+W-W~")
    _check_positive(B, "D+W+W~")
    ra = sqrt_psd(A)
    E = sqrt_psd(ra @ B @ ra)
    # independent block form: conjugating by U = (1/sqrt2)[[1,1],[1,-1]]
    # turns D+W-+W~ into diag(d, d+2b) and diag(d+2b, d)
    I = blocks.I
    d = np.diag(blocks.d)
    db = d + 2.0 * blocks.b
    ud = np.diag(blocks.u)
    e1 = sqrt_psd(ud @ db @ ud)
    rdb = sqrt_psd(db)
    e2 = sqrt_psd(rdb @ d @ rdb)
    eye = np.eye(I)
    U = np.block([[eye, eye], [eye, -eye]]) / math.sqrt(2.0)
    z = np.zeros((I, I))
    ref = np.block([[e1, z], [z, e2]])
    err = np.max(np.abs(U.T @ E @ U - ref))
    if err > BLOCK_CHECK_TOL * (1.0 + np.max(np.abs(E))):
        raise NumericalDomainError(
            f"block form of E disagrees with product form by {err:.3e}")
    return E


def s_matrices(blocks: Blocks):
    """S1 = (D+W-W~)^(1/2) E^(-1/2) and S2 = (D+W-W~)^(-1/2) E^(1/2)."""
    A = blocks.D + blocks.W - blocks.W_tilde
    E = matrix_E(blocks)
    ra = sqrt_psd(A)
    rai = _inv_sqrt_psd(A, "(D+W-W~)^(-1/2)")
    re = sqrt_psd(E)
    rei = _inv_sqrt_psd(E, "E^(-1/2)")
    return ra @ rei, rai @ re


def kernel_K(blocks: Blocks) -> Kernel:
    """K = log|S1^T| = (1/2) log(S1 S1^T) by spectral calculus."""
    if blocks.I == 0:
        return Kernel(K=np.zeros((0, 0)), hs_norm=0.0, tr_norm=0.0)
    s1, _ = s_matrices(blocks)
    m = s1 @ s1.T
    w, q = np.linalg.eigh(0.5 * (m + m.T))
    if w[0] <= 0.0:
        raise NumericalDomainError("S1 S1^T not strictly positive")
    lw = 0.5 * np.log(w)
    K = (q * lw) @ q.T
    return Kernel(K=K, hs_norm=float(np.sqrt(np.sum(lw ** 2))),
                  tr_norm=float(np.sum(np.abs(lw))))


def _secular_sqrt_sum(blocks: Blocks) -> float:
    # tr E = 2 sum_i sqrt(mu_i) with mu_i the eigenvalues of the I x I
    # matrix d^2 + 2g |u v><u v|; both diagonal blocks of E share them
    ut = blocks.u * blocks.v
    m = np.diag(blocks.u ** 4) + 2.0 * blocks.g * np.outer(ut, ut)
    mu = np.linalg.eigvalsh(m)
    if mu[0] < -CLAMP_TOL * max(mu[-1], 1e-300):
        raise NumericalDomainError("secular matrix not PSD")
    return float(np.sum(np.sqrt(np.clip(mu, 0.0, None))))


def energy_trace(blocks: Blocks) -> float:
    """e(k) = tr E / 2 - tr(D+W) / 2 via the rank-one secular fast path."""
    if blocks.I == 0:
        return 0.0
    half_tr_dw = float(np.sum(blocks.d) + blocks.g * np.sum(blocks.v ** 2))
    return _secular_sqrt_sum(blocks) - half_tr_dw


def energy_trace_dense(blocks: Blocks) -> float:
    """Same trace formula through the dense 2I x 2I matrix E (oracle path)."""
    if blocks.I == 0:
        return 0.0
    E = matrix_E(blocks)
    return 0.5 * float(np.trace(E) - np.trace(blocks.D + blocks.W))


def _log_f(blocks: Blocks):
    u4 = blocks.u ** 4
    w = 2.0 * blocks.g * (blocks.u * blocks.v) ** 2

    def logf(lam):
        return math.log1p(float(np.sum(w / (u4 + lam * lam))))

    return logf, float(np.sum(w))


def energy_integral(blocks: Blocks, with_error=False):
    """e(k) = (1/pi) int_0^inf log f_k - g sum v^2, f_k the secular function.

    The integral is split at Lambda = max(10, 100 g); the tail is mapped to
    [0, 1/Lambda] by lambda -> 1/t, under which the integrand extends
    continuously (log f_k ~ c/lambda^2 with c = 2g sum u^2 v^2).
    """
    if blocks.I == 0 or blocks.g == 0.0:
        return (0.0, 0.0) if with_error else 0.0
    logf, c = _log_f(blocks)
    lam_max = max(10.0, 100.0 * blocks.g)
    pts = sorted({float(np.min(blocks.d)), float(np.max(blocks.d)), 1.0})

    def tail_integrand(t):
        if t <= 0.0:
            return c
        return logf(1.0 / t) / (t * t)

    with warnings.catch_warnings():
        # roundoff chatter is fine; the explicit error check below governs
        warnings.simplefilter("ignore", IntegrationWarning)
        head, err_head = quad(logf, 0.0, lam_max, limit=300,
                              epsabs=1e-13, epsrel=1e-13,
                              points=[p for p in pts if p < lam_max])
        tail, err_tail = quad(tail_integrand, 0.0, 1.0 / lam_max, limit=100,
                              epsabs=1e-13, epsrel=1e-13)
    err = (err_head + err_tail) / math.pi
    if err > QUAD_TOL:
        raise NumericalDomainError(
            f"quadrature achieved only {err:.3e} absolute accuracy")
    val = (head + tail) / math.pi - blocks.g * float(np.sum(blocks.v ** 2))
    return (val, err) if with_error else val


def symplectic_oracle(blocks: Blocks) -> float:
    """Ground energy via Appendix-style symplectic block-diagonalization.

    Asserts S = blockdiag(S1, S2) is symplectic and that it congruence-maps
    (1/2) blockdiag(D+W+W~, D+W-W~) to (1/2) blockdiag(E, E); the energy is
    then recovered from the transformed upper block, independently of
    matrix_E's return value.
    """
    if blocks.I == 0:
        return 0.0
    n = 2 * blocks.I
    s1, s2 = s_matrices(blocks)
    z = np.zeros((n, n))
    S = np.block([[s1, z], [z, s2]])
    eye = np.eye(n)
    J = np.block([[z, eye], [-eye, z]])
    sympl_err = np.max(np.abs(S.T @ J @ S - J))
    if sympl_err > SYMPLECTIC_TOL:
        raise NumericalDomainError(
            f"S fails symplecticity by {sympl_err:.3e}")
    A = blocks.D + blocks.W - blocks.W_tilde
    B = blocks.D + blocks.W + blocks.W_tilde
    M = 0.5 * np.block([[B, z], [z, A]])
    C = S.T @ M @ S
    E_up = 2.0 * C[:n, :n]
    scale = 1.0 + np.max(np.abs(E_up))
    if np.max(np.abs(2.0 * C[n:, n:] - E_up)) > SYMPLECTIC_TOL * scale:
        raise NumericalDomainError("congruence blocks disagree")
    if np.max(np.abs(C[:n, n:])) > SYMPLECTIC_TOL * scale:
        raise NumericalDomainError("congruence not block-diagonal")
    return 0.5 * float(np.trace(E_up) - np.trace(blocks.D + blocks.W))


def energy_decomposition(blocks: Blocks):
    """(kinetic, interaction) trace parts tr(D sinh^2 K) and
    tr(W sinh^2 K + W~ sinh K cosh K); their sum is e(k)."""
    if blocks.I == 0:
        return 0.0, 0.0
    K = kernel_K(blocks).K
    w, q = np.linalg.eigh(K)
    sh = (q * np.sinh(w)) @ q.T
    ch = (q * np.cosh(w)) @ q.T
    sh2 = sh @ sh
    kin = float(np.trace(blocks.D @ sh2))
    inter = float(np.trace(blocks.W @ sh2)
                  + np.trace(blocks.W_tilde @ (sh @ ch)))
    return kin, inter


def momentum_record(blocks: Blocks) -> dict:
    """Per-k JSON record with all three energies and the kernel norms."""
    ker = kernel_K(blocks)
    e_int, err = energy_integral(blocks, with_error=True)
    return {
        "k": list(blocks.k),
        "I": blocks.I,
        "e_trace": energy_trace(blocks),
        "e_integral": e_int,
        "e_symplectic": symplectic_oracle(blocks),
        "K_tr_norm": ker.tr_norm,
        "K_hs_norm": ker.hs_norm,
        "quadrature_err": err,
    }
