"""Ensemble-averaged unitary evolution under sampled noise trajectories.

Each trajectory is propagated with piecewise-constant step unitaries
``exp(-i (omega sigma_z + B sigma_x) dt)`` and the density matrices are
averaged over the ensemble. Trajectories are processed in fixed-size chunks
whose partial sums are combined in chunk order, so results do not depend on
the number of worker threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .noise import OU, RTN, EnsembleConfig, TimeGrid, ou_values, rtn_values
from .states import EPS_TOL, ModelParams, check_density

COMMON = "common"
INDEPENDENT = "independent"
TOPOLOGIES = (COMMON, INDEPENDENT)
LEFT = "left"
MIDPOINT = "midpoint"

CHUNK = 4096
THREADS_ENV = "TRANSNOISE_THREADS"


def thread_count() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        n = int(env)
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be a positive integer")
        return n
    return min(8, os.cpu_count() or 1)


@dataclass(frozen=True)
class EvolutionResult:
    times: np.ndarray
    states: np.ndarray
    stderr: np.ndarray  # per element, max of real- and imaginary-part standard errors
    n_realizations: int

    @property
    def stderr_max(self) -> float:
        return float(self.stderr.max())


def step_unitary(omega: float, b, dt: float) -> np.ndarray:
    """``exp(-i (omega sigma_z + b sigma_x) dt)`` in closed form; vectorized over ``b``."""
    b = np.asarray(b, dtype=float)
    r = np.sqrt(omega * omega + b * b)
    c = np.cos(r * dt)
    s = dt * np.sinc(r * dt / np.pi)  # sin(r dt) / r, finite at r = 0
    U = np.empty(b.shape + (2, 2), dtype=complex)
    U[..., 0, 0] = c - 1j * s * omega
    U[..., 1, 1] = c + 1j * s * omega
    U[..., 0, 1] = -1j * s * b
    U[..., 1, 0] = -1j * s * b
    return U


def pairwise_sum(x: np.ndarray) -> np.ndarray:
    """Sum over the leading axis by recursive halving."""
    while x.shape[0] > 1:
        if x.shape[0] % 2:
            x = np.concatenate([x[:-1:2] + x[1::2], x[-1:]])
        else:
            x = x[0::2] + x[1::2]
    return x[0]


def _noise(kind, gamma, grid, seed, index, stream, sampling):
    """Noise value held over each step; shape (len(index), n_steps)."""
    if sampling not in (LEFT, MIDPOINT):
        raise ValueError(f"sampling must be {LEFT!r} or {MIDPOINT!r}")
    offset = 0.0 if sampling == LEFT else 0.5 * grid.dt
    if kind == RTN:
        return rtn_values(gamma, grid.times[:-1] + offset, seed, index, stream)
    if kind == OU:
        if sampling == LEFT:
            return ou_values(gamma, grid, seed, index, stream)[:, :-1]
        fine = TimeGrid(grid.dt / 2, 2 * grid.n_steps)
        return ou_values(gamma, fine, seed, index, stream)[:, 1::2]
    raise ValueError(f"noise kind must be {RTN!r} or {OU!r}")


def _ensemble_sums(rho: np.ndarray):
    """Pairwise sums of the elements, squared real parts and squared imaginary parts."""
    flat = np.ascontiguousarray(rho.reshape(rho.shape[0], -1).T)
    d = rho.shape[-1]
    return (
        flat.sum(axis=1).reshape(d, d),
        (flat.real**2).sum(axis=1).reshape(d, d),
        (flat.imag**2).sum(axis=1).reshape(d, d),
    )


def _rotate_single(r, c, s, omega, b):
    """Apply ``U . U^dagger`` elementwise to stacked 2x2 operators ``r = (r00, r01, r10, r11)``."""
    alpha = c - 1j * s * omega
    beta = -1j * s * b
    ac, bc = alpha.conj(), beta.conj()
    m00 = alpha * r[0] + beta * r[2]
    m01 = alpha * r[1] + beta * r[3]
    m10 = beta * r[0] + ac * r[2]
    m11 = beta * r[1] + ac * r[3]
    return (m00 * ac + m01 * bc, m00 * bc + m01 * alpha, m10 * ac + m11 * bc, m10 * bc + m11 * alpha)


def _chunk(args):
    p, kind, rho0, grid, seed, start, stop, qubits, topology, sampling, scale = args
    index = np.arange(start, stop)
    n = index.size
    B1 = scale * _noise(kind, p.gamma, grid, seed, index, 0, sampling)
    if qubits == 2:
        B2 = B1 if topology == COMMON else scale * _noise(kind, p.gamma, grid, seed, index, 1, sampling)
    d = rho0.shape[0]
    K = grid.n_steps
    s1 = np.empty((K + 1, d, d), dtype=complex)
    s2 = np.empty((K + 1, 2, d, d))
    s1[0] = n * rho0
    s2[0, 0] = n * rho0.real**2
    s2[0, 1] = n * rho0.imag**2
    if qubits == 1:
        r = tuple(np.full(n, v) for v in rho0.ravel())
        for k in range(K):
            b = B1[:, k]
            rr = np.sqrt(p.omega**2 + b * b)
            r = _rotate_single(r, np.cos(rr * grid.dt), grid.dt * np.sinc(rr * grid.dt / np.pi), p.omega, b)
            flat = np.stack(r)
            s1[k + 1] = flat.sum(axis=1).reshape(2, 2)
            s2[k + 1, 0] = (flat.real**2).sum(axis=1).reshape(2, 2)
            s2[k + 1, 1] = (flat.imag**2).sum(axis=1).reshape(2, 2)
        return s1, s2
    rho = np.broadcast_to(rho0, (n, d, d)).copy()
    for k in range(K):
        U = step_unitary(p.omega, B1[:, k], grid.dt)
        U2 = U if topology == COMMON else step_unitary(p.omega, B2[:, k], grid.dt)
        U = np.einsum("nab,ncd->nacbd", U, U2).reshape(n, 4, 4)
        rho = U @ rho @ U.conj().swapaxes(1, 2)
        s1[k + 1], s2[k + 1, 0], s2[k + 1, 1] = _ensemble_sums(rho)
    return s1, s2


def propagate(
    p: ModelParams,
    kind: str,
    rho0,
    grid: TimeGrid,
    ens: EnsembleConfig,
    qubits: int = 1,
    topology: str = COMMON,
    sampling: str = LEFT,
    noise_scale: float = 1.0,
    threads: int | None = None,
    first_index: int = 0,
) -> EvolutionResult:
    """Average ``U(t) rho0 U(t)^dagger`` over the ensemble for any operator ``rho0``.

    Unlike the ``evolve_*`` wrappers this does not require ``rho0`` to be a
    state, which lets linear combinations (e.g. differences of states) be
    propagated with the same trajectories. ``first_index`` offsets the
    trajectory indices, so disjoint sub-ensembles of one master seed can be
    drawn separately.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (2**qubits, 2**qubits):
        raise ValueError(f"operator must be {2**qubits}x{2**qubits} for {qubits} qubit(s)")
    if topology not in TOPOLOGIES:
        raise ValueError(f"topology must be one of {TOPOLOGIES}")
    if kind not in (RTN, OU):
        raise ValueError(f"noise kind must be {RTN!r} or {OU!r}")
    N = ens.n_realizations
    jobs = [
        (p, kind, rho0, grid, ens.master_seed, first_index + a, first_index + min(a + CHUNK, N),
         qubits, topology, sampling, noise_scale)
        for a in range(0, N, CHUNK)
    ]
    workers = threads or thread_count()
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk, jobs))
    else:
        parts = [_chunk(j) for j in jobs]
    s1 = pairwise_sum(np.stack([a for a, _ in parts]))
    s2 = pairwise_sum(np.stack([b for _, b in parts]))
    mean = s1 / N
    var_re = np.clip(s2[:, 0] / N - mean.real**2, 0.0, None)
    var_im = np.clip(s2[:, 1] / N - mean.imag**2, 0.0, None)
    stderr = np.sqrt(np.maximum(var_re, var_im) / N)
    return EvolutionResult(grid.times, mean, stderr, N)


def evolve_single_mc(p: ModelParams, kind: str, rho0, grid: TimeGrid, ens: EnsembleConfig, **kwargs) -> EvolutionResult:
    """Monte Carlo evolution of one qubit; see :func:`propagate` for options."""
    rho0 = check_density(rho0)
    if rho0.shape != (2, 2):
        raise ValueError("single-qubit evolution needs a 2x2 state")
    return propagate(p, kind, rho0, grid, ens, qubits=1, **kwargs)


def evolve_two_mc(
    p: ModelParams, kind: str, topology: str, rho0, grid: TimeGrid, ens: EnsembleConfig, **kwargs
) -> EvolutionResult:
    """Monte Carlo evolution of two qubits in a common or independent environment.

    A common environment drives both qubits with the same trajectory; in
    independent environments the second qubit uses a separate random stream.
    """
    rho0 = check_density(rho0)
    if rho0.shape != (4, 4):
        raise ValueError("two-qubit evolution needs a 4x4 state")
    return propagate(p, kind, rho0, grid, ens, qubits=2, topology=topology, **kwargs)


def is_physical_within(result: EvolutionResult, tol: float = EPS_TOL) -> bool:
    """Whether every averaged state is a density matrix within ``tol + 3 stderr_max``."""
    bound = tol + 3 * result.stderr_max
    herm = np.abs(result.states - result.states.conj().swapaxes(1, 2)).max()
    tr = np.abs(np.trace(result.states, axis1=1, axis2=2) - 1).max()
    lmin = np.linalg.eigvalsh(0.5 * (result.states + result.states.conj().swapaxes(1, 2))).min()
    return herm <= bound and tr <= bound and lmin >= -bound
