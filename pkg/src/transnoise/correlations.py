"""Quantum correlations and distances between states.

Entropies use base-2 logarithms. Fidelity is Uhlmann's in the squared
convention, ``F = (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2``, so an average
fidelity above 0.9999 corresponds to an average fidelity complement
below 1e-4.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import minimize, minimize_scalar

from .montecarlo import EvolutionResult, propagate
from .noise import OU, RTN, EnsembleConfig, TimeGrid, default_grid
from .rtn import transfer_single_series
from .states import (
    EPS_TOL,
    ModelParams,
    PAULI,
    bloch_from_density,
    check_density,
    density_from_bloch,
    partial_trace,
    partial_transpose,
)


@dataclass(frozen=True)
class MeasureCurve:
    times: np.ndarray
    values: np.ndarray


# --------------------------------------------------------------------------
# entanglement and entropies
# --------------------------------------------------------------------------

def negativity(rho) -> float:
    """``2 |sum of negative eigenvalues|`` of the partial transpose."""
    ev = np.linalg.eigvalsh(partial_transpose(np.asarray(rho, dtype=complex)))
    return 2.0 * np.abs(np.where(ev < 0, ev, 0.0).sum(axis=-1))


def _signed_singular_values(C: np.ndarray) -> np.ndarray:
    """Singular values of stacked 3x3 matrices, with the sign of ``det`` carried by the smallest."""
    s = np.linalg.svd(C, compute_uv=False)
    sign = np.sign(np.linalg.det(C))
    s[..., 2] *= np.where(sign == 0, 1.0, sign)
    return s


def bell_diagonal_eigenvalues(c) -> np.ndarray:
    """Spectrum of the state with maximally mixed marginals and diagonal correlations ``c``."""
    c = np.asarray(c, dtype=float)
    c1, c2, c3 = c[..., 0], c[..., 1], c[..., 2]
    return 0.25 * np.stack(
        [1 - c1 - c2 - c3, 1 - c1 + c2 + c3, 1 + c1 - c2 + c3, 1 + c1 + c2 - c3], axis=-1
    )


def negativity_from_correlations(C) -> np.ndarray:
    """Negativity of states with ``a = b = 0`` from the correlation block alone.

    Partial transposition flips the sign of the ``sigma_y`` column; the
    result is locally equivalent to a Bell-diagonal matrix whose diagonal
    is the signed singular values. Vectorized over leading axes.
    """
    C = np.asarray(C, dtype=float) * np.array([1.0, -1.0, 1.0])
    lam = bell_diagonal_eigenvalues(_signed_singular_values(C))
    return 2.0 * np.abs(np.where(lam < 0, lam, 0.0).sum(axis=-1))


def von_neumann_entropy(rho, tol: float = EPS_TOL) -> float:
    ev = np.linalg.eigvalsh(np.asarray(rho, dtype=complex))
    ev = ev[ev > tol]
    return float(-(ev * np.log2(ev)).sum())


def _binary_entropy_of_bloch(r):
    """Entropy of a qubit with Bloch-vector length ``r``."""
    r = np.clip(r, 0.0, 1.0)
    p = np.stack([(1 + r) / 2, (1 - r) / 2])
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log2(p), 0.0)
    return terms.sum(axis=0)


def mutual_information(rho) -> float:
    rho = np.asarray(rho, dtype=complex)
    return (
        von_neumann_entropy(partial_trace(rho, 0))
        + von_neumann_entropy(partial_trace(rho, 1))
        - von_neumann_entropy(rho)
    )


def discord_bell_diagonal(c, tol: float = EPS_TOL) -> float:
    """Discord of the Bell-diagonal state with correlation eigenvalues ``c`` (Luo's formula)."""
    c = np.asarray(c, dtype=float)
    lam = bell_diagonal_eigenvalues(c)
    if lam.min() < -tol:
        raise ValueError(f"coordinates {c} lie outside the Bell tetrahedron")
    lam = lam[lam > tol]
    total = float((lam * np.log2(4 * lam)).sum())
    cmax = float(np.abs(c).max())
    classical = 1.0 - float(_binary_entropy_of_bloch(cmax))
    return min(max(total - classical, 0.0), 1.0)


def discord_brute_force(rho, n_polar: int = 181, n_azimuth: int = 361, refine: bool = True) -> float:
    """Discord by direct search over projective measurements on the second qubit.

    Evaluates the conditional entropy on a polar x azimuth grid of
    measurement axes and polishes the best grid point with Nelder-Mead.
    """
    rho = np.asarray(rho, dtype=complex)
    r4 = rho.reshape(2, 2, 2, 2)
    s_a = von_neumann_entropy(partial_trace(rho, 0))

    def conditional_entropy(theta, phi):
        theta, phi = np.atleast_1d(theta), np.atleast_1d(phi)
        m = np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1)
        ms = np.einsum("ni,iab->nab", m, PAULI)
        total = 0.0
        for sign in (1.0, -1.0):
            proj = 0.5 * (np.eye(2) + sign * ms)
            cond = np.einsum("nbe,aecb->nac", proj, r4)
            prob = np.trace(cond, axis1=1, axis2=2).real
            half_gap = np.sqrt(((cond[:, 0, 0] - cond[:, 1, 1]).real / 2) ** 2 + np.abs(cond[:, 0, 1]) ** 2)
            safe = np.where(prob > 1e-15, prob, 1.0)
            r = np.where(prob > 1e-15, 2 * half_gap / safe, 0.0)
            total = total + prob * _binary_entropy_of_bloch(r)
        return total

    th, ph = np.meshgrid(np.linspace(0, np.pi, n_polar), np.linspace(0, 2 * np.pi, n_azimuth), indexing="ij")
    vals = conditional_entropy(th.ravel(), ph.ravel())
    best = int(np.argmin(vals))
    s_cond = vals[best]
    if refine:
        res = minimize(lambda x: conditional_entropy(x[0], x[1])[0], [th.ravel()[best], ph.ravel()[best]],
                       method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14})
        s_cond = min(s_cond, float(res.fun))
    return max(mutual_information(rho) - (s_a - s_cond), 0.0)


# --------------------------------------------------------------------------
# distances
# --------------------------------------------------------------------------

def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(a)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def fidelity(rho, sigma) -> float:
    rho = np.asarray(rho, dtype=complex)
    sigma = np.asarray(sigma, dtype=complex)
    s = _psd_sqrt(rho)
    m = s @ sigma @ s
    ev = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    return float(np.clip(np.sqrt(np.clip(ev, 0.0, None)).sum() ** 2, 0.0, 1.0))


def trace_distance(rho, sigma) -> float:
    diff = np.asarray(rho, dtype=complex) - np.asarray(sigma, dtype=complex)
    return float(0.5 * np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))).sum())


# --------------------------------------------------------------------------
# OU versus RTN comparison
# --------------------------------------------------------------------------

def _rtn_states(p: ModelParams, rho0, grid: TimeGrid) -> np.ndarray:
    T = transfer_single_series(p, grid.dt, grid.n_steps)
    n = T @ bloch_from_density(rho0)
    return 0.5 * (np.eye(2) + np.einsum("ki,iab->kab", n, PAULI))


@dataclass(frozen=True)
class ReferenceArm:
    """Monte Carlo reference evolution together with its two disjoint half-ensembles."""

    full: EvolutionResult
    halves: tuple[EvolutionResult, EvolutionResult] | None = None


def reference_evolution(p: ModelParams, rho0, grid: TimeGrid, ens: EnsembleConfig,
                        kind: str = OU, split: bool = True) -> ReferenceArm:
    """Simulate the reference arm once, optionally as two half-ensembles.

    The halves use trajectory indices ``[0, N/2)`` and ``[N/2, N)`` of the
    same master seed, so the combined state is the ordinary ``N``-trajectory
    average.
    """
    rho0 = check_density(rho0)
    N = ens.n_realizations
    if not split or N < 2:
        return ReferenceArm(propagate(p, kind, rho0, grid, ens))
    h = N // 2
    a = propagate(p, kind, rho0, grid, EnsembleConfig(h, ens.master_seed))
    b = propagate(p, kind, rho0, grid, EnsembleConfig(N - h, ens.master_seed), first_index=h)
    states = (h * a.states + (N - h) * b.states) / N
    stderr = np.sqrt((h * a.stderr) ** 2 + ((N - h) * b.stderr) ** 2) / N
    return ReferenceArm(EvolutionResult(grid.times, states, stderr, N), (a, b))


def _as_result(reference) -> EvolutionResult:
    return reference.full if isinstance(reference, ReferenceArm) else reference


def fidelity_complement_curve(
    p_ou: ModelParams,
    p_rtn: ModelParams,
    rho0,
    grid: TimeGrid,
    ens: EnsembleConfig,
    reference=None,
) -> MeasureCurve:
    """``1 - F(rho_OU(t), rho_RTN(t))`` with OU from Monte Carlo and RTN exact.

    ``reference`` may carry a precomputed OU evolution on ``grid`` (an
    :class:`EvolutionResult` or :class:`ReferenceArm`).
    """
    rho0 = check_density(rho0)
    if rho0.shape != (2, 2):
        raise ValueError("the comparison is defined for a single qubit")
    ref = _as_result(reference) if reference is not None else propagate(p_ou, OU, rho0, grid, ens)
    rtn_states = _rtn_states(p_rtn, rho0, grid)
    values = np.array([1.0 - fidelity(a, b) for a, b in zip(ref.states, rtn_states)])
    return MeasureCurve(grid.times, values)


def time_average(curve: MeasureCurve) -> float:
    """``(1/T) int_0^T f dt`` by the composite trapezoid rule."""
    return float(trapezoid(curve.values, curve.times) / (curve.times[-1] - curve.times[0]))


def average_fidelity_complement(p_ou, p_rtn, rho0, T: float, grid: TimeGrid | None = None,
                                ens: EnsembleConfig | None = None, reference=None) -> float:
    """Time-averaged fidelity complement over ``[0, T]``."""
    if not T > 0:
        raise ValueError("averaging time must be positive")
    grid = grid or default_grid(p_ou, T)
    if abs(grid.horizon - T) > 1e-9 * T:
        raise ValueError("grid must end at the averaging time")
    ens = ens or EnsembleConfig()
    return time_average(fidelity_complement_curve(p_ou, p_rtn, rho0, grid, ens, reference))


def debiased_average_fidelity_complement(p_rtn: ModelParams, rho0, grid: TimeGrid, arm: ReferenceArm):
    """Split-half bias-corrected time average and its statistical spread.

    Sampling noise in the Monte Carlo arm biases the fidelity complement
    upward by an amount proportional to ``1/N``. With ``F_N`` from the full
    ensemble and ``F_A``, ``F_B`` from its halves, ``2 F_N - (F_A + F_B) / 2``
    cancels that leading term; ``|F_A - F_B| / 2`` estimates the standard
    error of ``F_N``.
    """
    if arm.halves is None:
        raise ValueError("bias correction needs a split reference arm")
    rtn_states = _rtn_states(p_rtn, rho0, grid)

    def avg(ref):
        vals = np.array([1.0 - fidelity(a, b) for a, b in zip(ref.states, rtn_states)])
        return time_average(MeasureCurve(grid.times, vals))

    full = avg(arm.full)
    fa, fb = (avg(h) for h in arm.halves)
    return 2.0 * full - 0.5 * (fa + fb), 0.5 * abs(fa - fb)


@dataclass(frozen=True)
class GammaFit:
    """Optimizer outcome; unpacks as ``gamma_star, value``.

    ``value`` is the bias-corrected average when the optimizer ran with
    ``debias=True``; ``raw_value`` is the plain estimate at ``gamma_star``
    and ``spread`` its statistical error.
    """

    gamma_star: float
    value: float
    resolved: bool
    raw_value: float
    spread: float
    scan_gammas: np.ndarray
    scan_values: np.ndarray

    def __iter__(self):
        return iter((self.gamma_star, self.value))


def optimize_gamma_rtn(
    p_ou: ModelParams,
    rho0,
    T: float,
    search_interval=(0.1, 10.0),
    grid: TimeGrid | None = None,
    ens: EnsembleConfig | None = None,
    n_scan: int = 16,
    reference_kind: str = OU,
    debias: bool = True,
    xtol: float = 1e-4,
) -> GammaFit:
    """RTN switching rate that best reproduces the reference noise dynamics.

    The reference arm (OU by default; ``reference_kind="rtn"`` gives the
    self-comparison check) is simulated once. The averaged fidelity
    complement is scanned on ``n_scan`` points, log-spaced when the
    interval spans more than a decade, and the best bracket is refined with
    a bounded Brent search (golden section with parabolic steps).
    ``resolved`` is false when the scanned variation does not exceed the
    trapezoid error estimate.
    """
    lo, hi = map(float, search_interval)
    if not 0 < lo < hi:
        raise ValueError("search interval must be positive and increasing")
    if n_scan < 3:
        raise ValueError("n_scan must be at least 3")
    grid = grid or default_grid(p_ou, T)
    ens = ens or EnsembleConfig()
    rho0 = check_density(rho0)
    arm = reference_evolution(p_ou, rho0, grid, ens, reference_kind, split=debias)

    def objective(g):
        p = ModelParams(p_ou.omega, g)
        if debias:
            return debiased_average_fidelity_complement(p, rho0, grid, arm)[0]
        return time_average(fidelity_complement_curve(p_ou, p, rho0, grid, ens, arm))

    gammas = np.geomspace(lo, hi, n_scan) if hi / lo > 10 else np.linspace(lo, hi, n_scan)
    values = np.array([objective(g) for g in gammas])
    i = int(np.argmin(values))
    a, b = gammas[max(i - 1, 0)], gammas[min(i + 1, n_scan - 1)]
    res = minimize_scalar(objective, bounds=(a, b), method="bounded", options={"xatol": xtol})
    if res.fun <= values[i]:
        g_star, v_star = float(res.x), float(res.fun)
    else:
        g_star, v_star = float(gammas[i]), float(values[i])
    p_star = ModelParams(p_ou.omega, g_star)
    c = fidelity_complement_curve(p_ou, p_star, rho0, grid, ens, arm)
    # trapezoid error estimate from halving the resolution at the optimum
    coarse = MeasureCurve(c.times[::2], c.values[::2])
    quad_err = abs(time_average(c) - time_average(coarse)) / 3.0 if c.times.size > 4 else np.inf
    spread = debiased_average_fidelity_complement(p_star, rho0, grid, arm)[1] if debias else np.nan
    resolved = bool(values.max() - values.min() > quad_err)
    return GammaFit(g_star, v_star, resolved, time_average(c), spread, gammas, values)


_EVEN_SIGNS = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
_PERMS = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]


def tetrahedron_coordinates(C, continuous: bool = True) -> np.ndarray:
    """Bell-tetrahedron coordinates of correlation blocks.

    Local rotations bring any correlation block to diagonal form with the
    signed singular values on the diagonal. These are defined only up to
    permutations and pairwise sign flips. With ``continuous`` set, each time
    step picks the variant closest to the previous one so that trajectories
    do not jump between equivalent corners.
    """
    C = np.asarray(C, dtype=float)
    single = C.ndim == 2
    s = _signed_singular_values(C[None] if single else C)
    if not continuous:
        return s[0] if single else s
    out = np.empty_like(s)
    out[0] = s[0]
    for k in range(1, len(s)):
        variants = np.array([s[k][list(p)] * sg for p in _PERMS for sg in _EVEN_SIGNS])
        out[k] = variants[np.argmin(np.abs(variants - out[k - 1]).sum(axis=1))]
    return out[0] if single else out
