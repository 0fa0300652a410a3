"""Seeded samplers for random telegraph noise (RTN) and Ornstein-Uhlenbeck (OU) noise.

Both processes are stationary with unit variance and autocorrelation
``exp(-2 gamma |t - t'|)``. Trajectory ``i`` of an ensemble is a pure
function of ``(master_seed, stream, i)``; see :mod:`transnoise._rng`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from . import _rng
from .states import ModelParams

RTN = "rtn"
OU = "ou"
NOISE_KINDS = (RTN, OU)
DEFAULT_SEED = 0xC0FFEE
DEFAULT_REALIZATIONS = 100_000


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k * dt`` for ``k = 0..n_steps``."""

    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def horizon(self) -> float:
        return self.dt * self.n_steps

    @classmethod
    def covering(cls, horizon: float, dt: float) -> "TimeGrid":
        """Grid with step at most ``dt`` that ends exactly at ``horizon``."""
        n = max(1, int(np.ceil(horizon / dt - 1e-9)))
        return cls(horizon / n, n)


def default_grid(p: ModelParams, horizon: float, min_steps: int = 200) -> TimeGrid:
    """``dt = 0.05 / max(1, omega, gamma)``, refined so there are at least ``min_steps`` steps."""
    dt = 0.05 / max(1.0, p.omega, p.gamma)
    return TimeGrid.covering(horizon, min(dt, horizon / min_steps))


@dataclass(frozen=True)
class EnsembleConfig:
    n_realizations: int = DEFAULT_REALIZATIONS
    master_seed: int = DEFAULT_SEED

    def __post_init__(self):
        if int(self.n_realizations) != self.n_realizations or self.n_realizations < 1:
            raise ValueError("n_realizations must be a positive integer")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must fit in an unsigned 64-bit integer")


@dataclass(frozen=True)
class NoiseTrajectory:
    values: np.ndarray
    kind: str
    grid: TimeGrid = field(repr=False)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times


def rtn_values(gamma: float, times, seed: int, index, stream: int = 0) -> np.ndarray:
    """RTN values at ``times`` for the trajectories listed in ``index``.

    The initial sign is +1 or -1 with equal probability; switching times are
    built from exponential waiting times with rate ``gamma``. The value at a
    sample time is the initial sign times the parity of all switches up to it,
    so there is no time-discretization bias.

    Returns
    -------
    ndarray, shape (len(index), len(times))
    """
    times = np.asarray(times, dtype=float)
    index = np.atleast_1d(np.asarray(index))
    keys = _rng.stream_keys(seed, stream, index)
    n, m = index.size, times.size
    sign0 = np.where(_rng.uniform(keys, 0) < 0.5, 1.0, -1.0)
    slots = []
    if gamma > 0 and m:
        t_switch = np.zeros(n)
        active = np.arange(n)
        draw = 1
        while active.size:
            t_switch[active] += _rng.exponential(keys[active], draw) / gamma
            active = active[t_switch[active] <= times[-1]]
            slots.append(active * m + np.searchsorted(times, t_switch[active], side="left"))
            draw += 1
    counts = np.bincount(np.concatenate(slots or [np.zeros(0, np.int64)]), minlength=n * m)
    parity = np.bitwise_xor.accumulate((counts & 1).astype(np.uint8).reshape(n, m), axis=1)
    return np.where(parity, -sign0[:, None], sign0[:, None])


def ou_values(gamma: float, grid: TimeGrid, seed: int, index, stream: int = 0) -> np.ndarray:
    """Unit-variance OU values on ``grid`` via the exact AR(1) transition.

    ``B_{k+1} = B_k e^{-2 gamma dt} + sqrt(1 - e^{-4 gamma dt}) xi_k`` with
    ``B_0`` and ``xi_k`` standard normal.
    """
    if not gamma > 0:
        raise ValueError("OU noise requires gamma > 0")
    index = np.atleast_1d(np.asarray(index))
    keys = _rng.stream_keys(seed, stream, index)[:, None]
    decay = np.exp(-2.0 * gamma * grid.dt)
    kick = np.sqrt(-np.expm1(-4.0 * gamma * grid.dt))
    x = _rng.normal(keys, np.arange(grid.n_steps + 1))
    x[:, 1:] *= kick
    return lfilter([1.0], [1.0, -decay], x, axis=1)


def sample_rtn(p: ModelParams, grid: TimeGrid, seed: int) -> NoiseTrajectory:
    values = rtn_values(p.gamma, grid.times, seed, [0])[0]
    return NoiseTrajectory(values, RTN, grid)


def sample_ou(p: ModelParams, grid: TimeGrid, seed: int) -> NoiseTrajectory:
    values = ou_values(p.gamma, grid, seed, [0])[0]
    return NoiseTrajectory(values, OU, grid)


def lorentzian_spectrum(gamma: float, w):
    """Power spectrum ``4 gamma / (4 gamma^2 + w^2)`` of both noise models."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    w = np.asarray(w, dtype=float)
    return 4.0 * gamma / (4.0 * gamma**2 + w**2)


def write_trajectory_csv(traj: NoiseTrajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "B"])
        for t, b in zip(traj.times, traj.values):
            w.writerow([repr(float(t)), repr(float(b))])
