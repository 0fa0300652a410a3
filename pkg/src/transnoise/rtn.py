"""Exact RTN dynamics from the fluctuator-augmented generator.

The qubit Bloch vector and the two-state fluctuator form a 6-dimensional
linear system. With ``L_i`` the SO(3) generators, ``(L_i)_{jk} = -i eps_ijk``,
the generator is

    P = gamma (1 - sigma_1) (x) 1_3 - 2i omega 1_2 (x) L_z - 2i sigma_3 (x) L_x

and the averaged transfer matrix is the fluctuator-reduced block
``<x_f| exp(-t P^T) |i_f>`` with ``|x_f> = |i_f> = (|+> + |->)/sqrt 2``.
``P`` is real; the transpose makes the Bloch vector rotate with the sense set
by ``H = omega sigma_z + B sigma_x`` (``dn/dt = 2 h x n``) acting on column
vectors. Both have the same spectrum: the eigenvalues of ``-P`` are the roots
of the two cubics in :func:`eigen_cubics`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np
from scipy.linalg import block_diag, expm

from .states import ModelParams

FAST = "fast"
SLOW = "slow"

LEVI_CIVITA = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    LEVI_CIVITA[_i, _j, _k], LEVI_CIVITA[_i, _k, _j] = 1.0, -1.0
L_GEN = -1j * LEVI_CIVITA
L_X, L_Y, L_Z = L_GEN

_S1 = np.array([[0.0, 1.0], [1.0, 0.0]])
_S3 = np.diag([1.0, -1.0])
_I2 = np.eye(2)
_XF = np.full(2, 1.0 / np.sqrt(2.0))


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------

def build_P(p: ModelParams) -> np.ndarray:
    """Single-qubit 6x6 generator (fluctuator (x) Bloch), complex dtype."""
    if not p.gamma > 0:
        raise ValueError("the fluctuator generator requires gamma > 0")
    return (
        np.kron(p.gamma * (_I2 - _S1), np.eye(3))
        - 2j * p.omega * np.kron(_I2, L_Z)
        - 2j * np.kron(_S3, L_X)
    )


def _two_qubit_Q(L: np.ndarray) -> np.ndarray:
    return block_diag(L, L, np.kron(L, np.eye(3)) + np.kron(np.eye(3), L))


def build_P2_ce(p: ModelParams) -> np.ndarray:
    """30x30 generator for two qubits sharing one fluctuator."""
    if not p.gamma > 0:
        raise ValueError("the fluctuator generator requires gamma > 0")
    return np.kron(p.gamma * (_I2 - _S1), np.eye(15)) - 2j * (
        p.omega * np.kron(_I2, _two_qubit_Q(L_Z)) + np.kron(_S3, _two_qubit_Q(L_X))
    )


def _flow(P: np.ndarray) -> np.ndarray:
    # P is real up to rounding; see module docstring for the transpose
    return np.ascontiguousarray(P.T.real)


def _reduce(E: np.ndarray) -> np.ndarray:
    r = E.shape[-1] // 2
    return np.einsum("a,...aibj,b->...ij", _XF, E.reshape(*E.shape[:-2], 2, r, 2, r), _XF)


# --------------------------------------------------------------------------
# eigenvalues
# --------------------------------------------------------------------------

def _sort_roots(z: np.ndarray) -> np.ndarray:
    order = sorted(range(len(z)), key=lambda i: (-round(z[i].real, 10), z[i].imag))
    return z[order]


def cubic_residual(coeffs, x) -> np.ndarray:
    """``|f(x)|`` scaled by the sum of the magnitudes of its terms."""
    b, c, d = coeffs
    x = np.asarray(x, dtype=complex)
    f = ((x + b) * x + c) * x + d
    scale = np.abs(x) ** 3 + abs(b) * np.abs(x) ** 2 + abs(c) * np.abs(x) + abs(d)
    return np.abs(f) / np.where(scale > 0, scale, 1.0)


def solve_cubic(b: float, c: float, d: float, polish: int = 2) -> np.ndarray:
    """Roots of the monic real cubic ``x^3 + b x^2 + c x + d``.

    Cardano's formula in complex arithmetic followed by ``polish`` Newton
    steps. When the discriminant shows three real roots, the roots are
    returned with exactly zero imaginary part. Ordering: descending real
    part, ties broken by ascending imaginary part.
    """
    d0 = b * b - 3.0 * c
    d1 = 2.0 * b**3 - 9.0 * b * c + 27.0 * d
    scale = max(abs(b), np.sqrt(abs(c)), np.cbrt(abs(d)))
    if abs(d0) <= 1e-14 * scale**2 and abs(d1) <= 1e-14 * scale**3:
        x = np.full(3, -b / 3.0, dtype=complex)
    else:
        sq = np.sqrt(complex(d1 * d1 - 4.0 * d0**3))
        big = d1 + sq if abs(d1 + sq) >= abs(d1 - sq) else d1 - sq
        C = (big / 2.0) ** (1.0 / 3.0)
        xi = np.exp(2j * np.pi / 3.0) ** np.arange(3)
        x = -(b + xi * C + d0 / (xi * C)) / 3.0
        # a tiny root loses all relative accuracy to cancellation; Vieta recovers it
        k = int(np.argmin(np.abs(x)))
        others = np.delete(x, k)
        if abs(x[k]) < 1e-3 * np.abs(others).max():
            x[k] = -d / (others[0] * others[1])
    for _ in range(polish):
        f = ((x + b) * x + c) * x + d
        fp = (3.0 * x + 2.0 * b) * x + c
        ok = np.abs(fp) > 1e-300
        x = np.where(ok, x - f / np.where(ok, fp, 1.0), x)
    disc = 18 * b * c * d - 4 * b**3 * d + b * b * c * c - 4 * c**3 - 27 * d * d
    if disc > 0:
        x = x.real.astype(complex)
    return _sort_roots(x)


@dataclass(frozen=True)
class EigenSet:
    """Roots ``mu`` of the first cubic and ``eta`` of the second (eigenvalues of ``-P``)."""

    mu: np.ndarray
    eta: np.ndarray

    @property
    def all(self) -> np.ndarray:
        return np.concatenate([self.mu, self.eta])


def mu_coefficients(p: ModelParams):
    return 2.0 * p.gamma, 4.0 * (1.0 + p.omega**2), 8.0 * p.omega**2 * p.gamma


def eta_coefficients(p: ModelParams):
    return 4.0 * p.gamma, 4.0 * (1.0 + p.gamma**2 + p.omega**2), 8.0 * p.gamma


def eigen_cubics(p: ModelParams) -> EigenSet:
    if not p.gamma > 0:
        raise ValueError("gamma must be positive")
    return EigenSet(solve_cubic(*mu_coefficients(p)), solve_cubic(*eta_coefficients(p)))


def decay_time(p: ModelParams) -> float:
    """Exact longest decay time ``1 / min |Re root|``."""
    return 1.0 / np.min(np.abs(eigen_cubics(p).all.real))


def real_region_boundaries(omega: float, tol: float = 1e-12):
    """Bounds ``(gamma1, gamma2)`` of the region where all roots are real.

    Positive roots of ``4 w^2 g^4 + (8 w^4 - 20 w^2 - 1) g^2 + 4 (w^2 + 1)^3``.
    Returns ``None`` above the threshold ``omega = 1/(2 sqrt 2)``; at the
    threshold the two bounds coincide. For ``omega = 0`` the upper bound is
    infinite.
    """
    if omega < 0:
        raise ValueError("omega must be >= 0")
    w2 = omega * omega
    A, B, C = 4.0 * w2, 8.0 * w2 * w2 - 20.0 * w2 - 1.0, 4.0 * (w2 + 1.0) ** 3
    if A == 0.0:
        return 2.0, np.inf
    disc = B * B - 4.0 * A * C
    if disc < -tol * B * B:
        return None
    root = np.sqrt(max(disc, 0.0))
    # numerically stable pair of roots in g = gamma^2
    q = -0.5 * (B - root)
    g_hi, g_lo = q / A, C / q
    return float(np.sqrt(g_lo)), float(np.sqrt(g_hi))


def limiting_decay_time(p: ModelParams, regime: str) -> float:
    """Asymptotic longest decay time for fast (gamma >> omega) or slow noise.

    The regime is not checked against the parameters.
    """
    if regime == FAST:
        return p.gamma
    if regime == SLOW:
        if p.omega > 1.0 / np.sqrt(2.0):
            return (1.0 + p.omega**2) / p.gamma
        return 0.5 * (1.0 + 1.0 / p.omega**2) / p.gamma
    raise ValueError(f"regime must be {FAST!r} or {SLOW!r}")


# --------------------------------------------------------------------------
# transfer matrices
# --------------------------------------------------------------------------

def transfer_single(p: ModelParams, t: float) -> np.ndarray:
    """3x3 averaged transfer matrix acting on the Bloch vector at time ``t``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return np.eye(3)
    return _reduce(expm(-t * _flow(build_P(p))))


def transfer_two_ce(p: ModelParams, t: float) -> np.ndarray:
    """15x15 transfer matrix for a common fluctuator."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return np.eye(15)
    return _reduce(expm(-t * _flow(build_P2_ce(p))))


def ie_from_single(T: np.ndarray) -> np.ndarray:
    """``blockdiag(T, T, T (x) T)`` for one matrix or a stack of them."""
    T = np.asarray(T)
    lead = T.shape[:-2]
    out = np.zeros(lead + (15, 15))
    out[..., :3, :3] = T
    out[..., 3:6, 3:6] = T
    out[..., 6:, 6:] = np.einsum("...ik,...jl->...ijkl", T, T).reshape(lead + (9, 9))
    return out


def transfer_two_ie(p: ModelParams, t: float) -> np.ndarray:
    return ie_from_single(transfer_single(p, t))


def iter_transfer_blocks(flow: np.ndarray, dt: float, n_steps: int, block: int | None = None) -> Iterator[np.ndarray]:
    """Yield reduced transfer matrices at ``t_k = k dt``, ``k = 0..n_steps``, in blocks.

    Uses ``T_{jm+i} = X E^i . E^{jm} Y`` with ``E = exp(-dt G)`` so that only
    ``O(m + n/m)`` dense products are chained and rounding stays small.
    """
    d = flow.shape[0]
    r = d // 2
    m = block or max(1, int(np.ceil(np.sqrt(n_steps + 1))))
    E = expm(-dt * flow)
    X = np.kron(_XF[None, :], np.eye(r))
    Y = X.T.copy()
    left = np.empty((m, r, d))
    acc = X.copy()
    for i in range(m):
        left[i] = acc
        acc = acc @ E
    Em = np.linalg.matrix_power(E, m)
    right = Y
    total = n_steps + 1
    start = 0
    while start < total:
        count = min(m, total - start)
        yield left[:count] @ right
        right = Em @ right
        start += count


def _series(flow, dt, n_steps):
    return np.concatenate(list(iter_transfer_blocks(flow, dt, n_steps)))


def transfer_single_series(p: ModelParams, dt: float, n_steps: int) -> np.ndarray:
    """Transfer matrices at ``k dt`` for ``k = 0..n_steps``; shape ``(n_steps+1, 3, 3)``."""
    return _series(_flow(build_P(p)), dt, n_steps)


def transfer_two_ce_series(p: ModelParams, dt: float, n_steps: int) -> np.ndarray:
    return _series(_flow(build_P2_ce(p)), dt, n_steps)


def transfer_two_ie_series(p: ModelParams, dt: float, n_steps: int) -> np.ndarray:
    return ie_from_single(transfer_single_series(p, dt, n_steps))


def single_flow(p: ModelParams) -> np.ndarray:
    """Real 6x6 matrix ``G`` with ``T(t) = <x_f| exp(-t G) |i_f>``."""
    return _flow(build_P(p))


def two_ce_flow(p: ModelParams) -> np.ndarray:
    return _flow(build_P2_ce(p))


# --------------------------------------------------------------------------
# closed-form elements
# --------------------------------------------------------------------------

class ClosedFormElements(NamedTuple):
    T11: float
    T12: float
    T22: float
    T33: float
    reliable: bool


def transfer_elements_closed_form(p: ModelParams, t: float, min_denominator: float = 1e-8) -> ClosedFormElements:
    """Nonzero elements of the single-qubit transfer matrix from the cubic roots.

    ``T21 = -T12`` and ``T13 = T23 = T31 = T32 = 0``. The expressions divide by
    polynomials in the roots that vanish when roots coincide; if any such
    denominator falls below ``min_denominator`` the result is flagged
    unreliable and :func:`transfer_single` should be used instead.
    """
    roots = eigen_cubics(p)
    m1, m2, m3 = roots.mu
    e1, e2, e3 = roots.eta
    g, w2 = p.gamma, p.omega**2
    w = p.omega
    ex = np.exp

    def dmu(m):
        return 4 * (1 - w2 * (2 * g * g + w2)) + 2 * g * m * (1 - 6 * w2) + m * m * (1 - 5 * w2)

    def dmu_neg(m):
        return 8 * g * g * w2 - 4 - 2 * g * m * (1 - 6 * w2) - m * m * (1 - 5 * w2) + 4 * w2 * w2

    def deta(e):
        return 8 * (1 - w2 * (g * g + w2)) + 4 * g * e * (1 - 4 * w2) + 2 * e * e * (1 - 5 * w2)

    d22 = 4 * (1 + 2 * w2 * (1 - g * g) + w2 * w2) + 2 * g * m3 * (1 - 2 * w2) + m3 * m3 * (1 + w2)
    d33 = 8 * (g * g * w2 - 1 + w2 * w2) - 2 * e3 * (2 * g * (1 - 4 * w2) + e3 * (1 - 5 * w2))
    dens = [dmu(m1), dmu(m2), dmu(m3), dmu_neg(m1), dmu_neg(m2), dmu_neg(m3),
            deta(e1), deta(e2), d22, d33]
    reliable = min(abs(x) for x in dens) >= min_denominator
    with np.errstate(divide="ignore", invalid="ignore"):
        T11 = (
            ex(m2 * t) * (m1 * m3 * (1 - 2 * w2) - 2 * w2 * (2 * g * g + g * m2 - 4 * w2)) / dmu(m2)
            + ex(m3 * t) * (4 - 4 * w2 * (g * g + 1) + 2 * g * m3 * (1 - 3 * w2) + m3 * m3 * (1 - 2 * w2)) / dmu(m3)
            + ex(m1 * t) * (2 * g * m3 * w2 + m2 * (2 * g * w2 + m3 * (1 - 2 * w2)) + 8 * w2 * w2) / dmu(m1)
        )
        T12 = w * (
            ex(m2 * t) * (4 * w2 * (3 * g + m2) - g * m1 * m3) / dmu(m2)
            + ex(m1 * t) * (4 * w2 * (m3 - g) + m2 * (g * m3 + 4 * w2)) / dmu_neg(m1)
            + ex(m3 * t) * (m3 * (2 * g * g + g * m3 - 4 * w2) + 4 * g * (1 - 2 * w2)) / dmu_neg(m3)
        )
        T22 = 2 * g * w2 * (
            ex(m1 * t) * (m2 * (g - m3) + g * m3 + 4 * (1 + w2)) / (g * dmu(m1))
            + ex(m2 * t) * (2 * g * g + g * m2 - 4 + m1 * m3 - 4 * w2) / (g * dmu_neg(m2))
            - (2 * g + m3) * ex(m3 * t) / d22
        )
        T33 = 2 * w2 * (
            (8 - e1 * e3) * ex(e2 * t) / deta(e2)
            + (8 - e2 * e3) * ex(e1 * t) / deta(e1)
            + ex(e3 * t) * (4 * g * e3 + 4 * (g * g - 1 + w2) + e3 * e3) / d33
        )
    return ClosedFormElements(float(np.real(T11)), float(np.real(T12)), float(np.real(T22)),
                              float(np.real(T33)), bool(reliable))
