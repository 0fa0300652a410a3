"""Non-Markovianity of the single-qubit RTN channel.

The trace-distance (BLP) measure sums the revivals of ``D(t)`` for the
best pair of initial states; the entanglement (RHP) measure sums the
revivals of the negativity of a maximally entangled pair when only one
half goes through the channel. Both are evaluated on a uniform grid as
sums of positive differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .correlations import MeasureCurve, negativity_from_correlations
from .montecarlo import propagate
from .noise import OU, EnsembleConfig, TimeGrid
from .rtn import eigen_cubics, iter_transfer_blocks, single_flow
from .states import GeneralizedBlochVector, ModelParams, check_density

# correlation matrix of (|00> + |11>)/sqrt(2)
MAX_ENTANGLED_C = np.diag([1.0, -1.0, 1.0])


@dataclass(frozen=True)
class BLPSearchConfig:
    """Grid and search settings for :func:`blp_measure`.

    ``horizon`` and ``grid`` default to values derived from the eigenvalues
    (see :func:`measure_grid`). Polar rows cover the hemisphere at
    ``90 / polar_samples`` degree spacing with ``polar_azimuth_step``
    degree azimuth steps.
    """

    azimuth_samples: int = 180
    polar_samples: int = 9
    polar_azimuth_step: float = 20.0
    refinement_tol: float = 1e-5
    horizon: float | None = None
    grid: TimeGrid | None = None
    tail_eps: float = 1e-6
    samples_per_period: int = 40
    max_steps: int = 2_000_000
    increment_tol: float = 1e-12


@dataclass(frozen=True)
class NonMarkovResult:
    value: float
    curve: MeasureCurve
    optimal_pair: tuple[np.ndarray, np.ndarray] | None = None
    converged: bool = True
    abs_integral: float | None = None


def _decaying_modes(p: ModelParams):
    """Roots with nonzero decay rate, and the oscillating subset of them."""
    roots = eigen_cubics(p).all
    scale = max(1.0, np.abs(roots).max())
    # modes that never decay (omega = 0) carry no revivals
    roots = roots[np.abs(roots.real) > 1e-12 * scale]
    osc = roots[np.abs(roots.imag) > 1e-9 * scale]
    return roots, osc


def _slowest_rate(roots, osc) -> float:
    return np.abs(osc.real).min() if osc.size else np.abs(roots.real).min()


def measure_grid(
    p: ModelParams,
    horizon: float | None = None,
    tail_eps: float = 1e-6,
    samples_per_period: int = 40,
    max_steps: int = 2_000_000,
) -> tuple[TimeGrid, bool]:
    """Default time grid for the revival measures and whether it is converged.

    The step resolves the fastest oscillation with ``samples_per_period``
    points and the fastest decay with five. The horizon is where the slowest
    oscillating mode has decayed below ``tail_eps`` (the slowest mode of any
    kind when no root is complex). Grids that would need more than
    ``max_steps`` steps are truncated and reported as not converged.
    """
    roots, osc = _decaying_modes(p)
    dt = 0.2 / np.abs(roots.real).max()
    if osc.size:
        dt = min(dt, 2 * np.pi / np.abs(osc.imag).max() / samples_per_period)
    needed = np.log(1.0 / tail_eps) / _slowest_rate(roots, osc)
    if horizon is None:
        horizon = needed
    converged = horizon >= needed * (1 - 1e-12)
    if horizon / dt > max_steps:
        horizon = max_steps * dt
        converged = False
    return TimeGrid.covering(horizon, dt), bool(converged)


def _grid_for(p, cfg: BLPSearchConfig):
    if cfg.grid is not None:
        slow = _slowest_rate(*_decaying_modes(p))
        return cfg.grid, bool(np.exp(-slow * cfg.grid.horizon) <= cfg.tail_eps)
    return measure_grid(p, cfg.horizon, cfg.tail_eps, cfg.samples_per_period, cfg.max_steps)


def _transfer_series(p: ModelParams, grid: TimeGrid) -> np.ndarray:
    return np.concatenate(list(iter_transfer_blocks(single_flow(p), grid.dt, grid.n_steps)))


def _direction(theta, phi):
    theta, phi = np.asarray(theta, float), np.asarray(phi, float)
    return np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1)


_GOLDEN = 0.5 * (3.0 - np.sqrt(5.0))


def _negativity_extremum_gain(M: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Variation of ``E = negativity(M)`` missed by the grid at interior extrema.

    ``M`` holds correlation blocks (times, 3, 3) and ``E`` their negativities
    (times, 1). The blocks are smooth in time while ``E`` has cusps where it
    touches zero, so ``M`` is interpolated by parabolas through the three
    samples around each grid extremum and ``E`` is optimized on the
    interpolant by a vectorized golden-section search.
    """
    E = E[:, 0]
    a, b, c = E[:-2], E[1:-1], E[2:]
    is_min = (b <= a) & (b <= c) & ((a > b) | (c > b))
    is_max = (b >= a) & (b >= c) & ((a < b) | (c < b))
    k = np.nonzero(is_min | is_max)[0]
    if k.size == 0:
        return np.zeros(1)
    Mb = M[k + 1]
    b1, b2 = 0.5 * (M[k + 2] - M[k]), 0.5 * (M[k] - 2 * Mb + M[k + 2])
    sign = np.where(is_max[k], -1.0, 1.0)

    def f(s):
        return sign * negativity_from_correlations(Mb + b1 * s[:, None, None] + b2 * (s * s)[:, None, None])

    lo, hi = np.full(k.size, -1.0), np.full(k.size, 1.0)
    x1, x2 = lo + _GOLDEN * (hi - lo), hi - _GOLDEN * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(45):
        left = f1 <= f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        x1n = np.where(left, lo + _GOLDEN * (hi - lo), x2)
        x2n = np.where(left, x1, hi - _GOLDEN * (hi - lo))
        fn = f(np.where(left, x1n, x2n))
        f1, f2 = np.where(left, fn, f2), np.where(left, f1, fn)
        x1, x2 = x1n, x2n
    best = np.minimum(f1, f2)
    return np.atleast_1d(np.clip(sign * b[k] - best, 0.0, None).sum())


def _vector_extremum_gain(V: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Variation of ``|v(t)|`` missed by the grid at interior extrema.

    ``V`` has shape (times, 3, M) and ``Q`` holds its squared lengths. Around each grid extremum of ``|v|`` the
    components are interpolated by parabolas and ``|v(s)|^2`` is optimized
    with Newton steps; unlike a parabola through ``|v|^2`` this stays exact
    to second order at cusps where ``v`` passes near zero.
    """
    a, b, c = V[:-2], V[1:-1], V[2:]
    qa, qb, qc = Q[:-2], Q[1:-1], Q[2:]
    curv = qa - 2 * qb + qc
    is_min = (qb <= qa) & (qb <= qc) & (curv > 0)
    is_max = (qb >= qa) & (qb >= qc) & (curv < 0)
    k, m = np.nonzero(is_min | is_max)
    if k.size == 0:
        return np.zeros(V.shape[2])
    a, b, c = a[k, :, m], b[k, :, m], c[k, :, m]
    b1, b2 = 0.5 * (c - a), 0.5 * (a - 2 * b + c)
    s = np.clip(-(qc[k, m] - qa[k, m]) / (2 * curv[k, m]), -1.0, 1.0)
    for _ in range(6):
        v = b + b1 * s[:, None] + b2 * (s * s)[:, None]
        v1 = b1 + 2 * b2 * s[:, None]
        g1 = (v * v1).sum(axis=1)
        g2 = (v1 * v1).sum(axis=1) + 2 * (v * b2).sum(axis=1)
        ok = np.where(is_min[k, m], g2 > 0, g2 < 0)
        step = np.where(ok, g1 / np.where(g2 == 0, 1.0, g2), 0.0)
        s = np.clip(s - step, -1.0, 1.0)
    v = b + b1 * s[:, None] + b2 * (s * s)[:, None]
    ext, mid = np.linalg.norm(v, axis=1), np.linalg.norm(b, axis=1)
    gain = np.where(is_max[k, m], ext - mid, mid - ext)
    return np.bincount(m, weights=np.clip(gain, 0.0, None), minlength=V.shape[2])


def _lengths(V):
    Q = np.einsum("kim,kim->km", V, V)
    return np.sqrt(Q), lambda: _vector_extremum_gain(V, Q)


def _negativities(M):
    E = negativity_from_correlations(M)[:, None]
    return E, lambda: _negativity_extremum_gain(M, E)


def _revival_sum(slabs, measure, tol: float):
    """Sum of positive increments over a stream of sample blocks (time along axis 0).

    ``measure`` maps a block to the monitored values (times, M) and a
    callable giving the variation missed at interior extrema (see
    :func:`_vector_extremum_gain` and :func:`_negativity_extremum_gain`).
    Refining the extrema removes the first-order error of sampling a peak or
    a cusp between grid points.
    """
    total = None
    prev = None
    for y in slabs:
        y = np.asarray(y, dtype=float)
        # two carried rows make the previous block's last sample an interior point
        n_prev = 0 if prev is None else len(prev)
        Y = y if prev is None else np.concatenate([prev, y])
        D, missed = measure(Y)
        inc = np.diff(D[max(n_prev - 1, 0):], axis=0)
        part = np.where(inc > tol, inc, 0.0).sum(axis=0)
        if len(Y) >= 3:
            part = part + missed()
        total = part if total is None else total + part
        prev = Y[-2:]
    return total


def _positive_part(values: np.ndarray, tol: float) -> float:
    inc = np.diff(values)
    return float(np.where(inc > tol, inc, 0.0).sum())


def _orbit_slabs(Tser: np.ndarray, N: np.ndarray):
    """Blocks of ``T(t) n`` for the columns ``n`` of ``N``, bounded in memory."""
    step = max(64, 2_000_000 // (3 * N.shape[1]))
    for a in range(0, len(Tser), step):
        yield Tser[a:a + step] @ N


def blp_measure(p: ModelParams, cfg: BLPSearchConfig | None = None) -> NonMarkovResult:
    """Trace-distance non-Markovianity maximized over antipodal pure-state pairs.

    For the pair ``(n, -n)`` the trace distance is ``|T(t) n|``. Candidates
    are scanned on the equator (``azimuth_samples`` points over 180 degrees)
    and on polar rows; the best one is refined in azimuth by a bounded
    scalar search and then without constraint by Nelder-Mead. Ties go to
    the smaller azimuth.
    """
    cfg = cfg or BLPSearchConfig()
    if not p.gamma > 0:
        raise ValueError("gamma must be positive")
    grid, converged = _grid_for(p, cfg)
    Tser = _transfer_series(p, grid)

    phi_eq = np.pi * np.arange(cfg.azimuth_samples) / cfg.azimuth_samples
    th_rows = 0.5 * np.pi * np.arange(cfg.polar_samples) / cfg.polar_samples
    th_p, ph_p = np.meshgrid(th_rows, np.deg2rad(np.arange(0.0, 360.0, cfg.polar_azimuth_step)), indexing="ij")
    thetas = np.concatenate([np.full_like(phi_eq, 0.5 * np.pi), th_p.ravel()])
    phis = np.concatenate([phi_eq, ph_p.ravel()])
    scores = _revival_sum(_orbit_slabs(Tser, _direction(thetas, phis).T), _lengths, cfg.increment_tol)
    best = int(np.argmax(scores))
    theta, phi, value = thetas[best], phis[best], scores[best]

    def score(th, ph):
        return _revival_sum(_orbit_slabs(Tser, _direction(th, ph)[:, None]), _lengths, cfg.increment_tol)[0]

    half = np.pi / cfg.azimuth_samples
    res = minimize_scalar(lambda x: -score(theta, x), bounds=(phi - half, phi + half),
                          method="bounded", options={"xatol": cfg.refinement_tol})
    if -res.fun > value:
        phi, value = float(res.x), -float(res.fun)
    res = minimize(lambda x: -score(x[0], x[1]), [theta, phi], method="Nelder-Mead",
                   options={"xatol": cfg.refinement_tol, "fatol": 1e-14,
                            "initial_simplex": [[theta, phi], [theta - half, phi], [theta, phi + half]]})
    if -res.fun > value * (1 + 1e-12):
        theta, phi, value = float(res.x[0]), float(res.x[1]), -float(res.fun)

    n = _direction(theta, phi)
    if n[2] < 0 or (n[2] == 0 and n[1] < 0):
        n = -n
    orbit = Tser @ n
    value = float(_revival_sum([orbit[:, :, None]], _lengths, cfg.increment_tol)[0])
    return NonMarkovResult(value, MeasureCurve(grid.times, np.linalg.norm(orbit, axis=1)), (n, -n), converged)


def pair_revival_sum(p: ModelParams, n1, n2, grid: TimeGrid | None = None, increment_tol: float = 1e-12) -> float:
    """Summed trace-distance revivals of one pair of Bloch vectors under the RTN map.

    ``D(t) = |T(t) (n1 - n2)| / 2``; uses the same grid and extremum
    refinement as :func:`blp_measure`.
    """
    if not p.gamma > 0:
        raise ValueError("gamma must be positive")
    if grid is None:
        grid, _ = measure_grid(p)
    d = 0.5 * (np.asarray(n1, dtype=float) - np.asarray(n2, dtype=float))
    return float(_revival_sum(_orbit_slabs(_transfer_series(p, grid), d[:, None]), _lengths, increment_tol)[0])


def apply_channel_one_side(T, v: GeneralizedBlochVector) -> GeneralizedBlochVector:
    """Action of ``channel (x) identity`` on generalized Bloch coordinates."""
    T = np.asarray(T, dtype=float)
    return GeneralizedBlochVector(T @ v.a, v.b.copy(), T @ v.C)


def rhp_measure(p: ModelParams, grid: TimeGrid | None = None, increment_tol: float = 1e-12) -> NonMarkovResult:
    """Entanglement non-Markovianity with a maximally entangled ancilla.

    The measure is the sum of positive negativity increments;
    ``abs_integral`` holds the total variation ``sum |dE|`` for comparison.
    """
    if not p.gamma > 0:
        raise ValueError("gamma must be positive")
    converged = True
    if grid is None:
        grid, converged = measure_grid(p)
    blocks = [T @ MAX_ENTANGLED_C for T in iter_transfer_blocks(single_flow(p), grid.dt, grid.n_steps)]
    value = float(_revival_sum(blocks, _negativities, increment_tol)[0])
    E = negativity_from_correlations(np.concatenate(blocks))
    return NonMarkovResult(value, MeasureCurve(grid.times, E), None, converged, float(np.abs(np.diff(E)).sum()))


def rhp_threshold(omega: float, lo: float = 0.01, hi: float = 100.0, rtol: float = 1e-3) -> float:
    """Switching rate above which the RHP measure is zero, by bisection in ``log gamma``.

    Assumes a single crossing in ``[lo, hi]``; returns ``nan`` if the
    measure is zero at ``lo`` or positive at ``hi``.
    """
    def positive(g):
        return rhp_measure(ModelParams(omega, g)).value > 0

    if not positive(lo) or positive(hi):
        return float("nan")
    while hi / lo > 1 + rtol:
        mid = np.sqrt(lo * hi)
        lo, hi = (mid, hi) if positive(mid) else (lo, mid)
    return float(np.sqrt(lo * hi))


@dataclass(frozen=True)
class ProbeResult:
    curve: MeasureCurve
    value: float
    stderr: float
    revivals_detected: bool

    @property
    def inconclusive(self) -> bool:
        return not self.revivals_detected


def trace_distance_probe_ou(p: ModelParams, pair, grid: TimeGrid, ens: EnsembleConfig, **kwargs) -> ProbeResult:
    """Trace distance between two states evolved with the same OU trajectories.

    The difference operator is propagated directly. A revival counts as
    detected when some rise of ``D`` between a local minimum and the next
    local maximum exceeds three standard errors; ``value`` is the sum of
    positive increments, a lower bound on the OU trace-distance measure.
    """
    rho1, rho2 = (check_density(r) for r in pair)
    if rho1.shape != (2, 2) or rho2.shape != (2, 2):
        raise ValueError("the probe takes a pair of single-qubit states")
    res = propagate(p, OU, rho1 - rho2, grid, ens, **kwargs)
    delta = res.states
    # traceless Hermitian 2x2: eigenvalues are +-sqrt(d00^2 + |d01|^2)
    D = np.sqrt((0.5 * (delta[:, 0, 0] - delta[:, 1, 1]).real) ** 2 + np.abs(delta[:, 0, 1]) ** 2)
    stderr = np.sqrt(3.0) * res.stderr_max
    rises = []
    low = D[0]
    for k in range(1, len(D)):
        low = min(low, D[k])
        if k == len(D) - 1 or D[k] >= D[k + 1]:
            rises.append(D[k] - low)
            low = D[k]
    detected = bool(rises) and max(rises) > 3 * stderr
    return ProbeResult(MeasureCurve(grid.times, D), _positive_part(D, 0.0), float(stderr), detected)
