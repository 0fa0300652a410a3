"""Bloch-coordinate and density-matrix algebra for one and two qubits.

Conventions
-----------
* Computational basis is sigma_z-diagonal with ``|0>`` the +1 eigenvector.
* A two-qubit state is stored as the 15-component generalized Bloch vector
  ``(a, b, vec(C))`` with ``vec`` row-major, so that

  .. math:: \\rho = \\tfrac14\\Big(I + \\sum_i a_i\\sigma_i\\otimes I
            + \\sum_i b_i I\\otimes\\sigma_i
            + \\sum_{ij} c_{ij}\\sigma_i\\otimes\\sigma_j\\Big).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS_TOL = 1e-9

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = np.stack([SIGMA_X, SIGMA_Y, SIGMA_Z])
ID2 = np.eye(2, dtype=complex)

# sigma_i (x) sigma_j, shape (3, 3, 4, 4)
_PAULI_PAIRS = np.einsum("iab,jcd->ijacbd", PAULI, PAULI).reshape(3, 3, 4, 4)
_PAULI_A = np.stack([np.kron(s, ID2) for s in PAULI])
_PAULI_B = np.stack([np.kron(ID2, s) for s in PAULI])


@dataclass(frozen=True)
class ModelParams:
    """Dimensionless model parameters (energies and rates in units of the coupling)."""

    omega: float
    gamma: float

    def __post_init__(self):
        if not np.isfinite(self.omega) or self.omega < 0:
            raise ValueError(f"omega must be finite and >= 0, got {self.omega}")
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ValueError(f"gamma must be finite and >= 0, got {self.gamma}")


@dataclass(frozen=True)
class GeneralizedBlochVector:
    """Two-qubit state in Pauli coordinates: marginals ``a``, ``b`` and correlations ``C``."""

    a: np.ndarray
    b: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(3))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(3))
        object.__setattr__(self, "C", np.asarray(self.C, dtype=float).reshape(3, 3))

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.a, self.b, self.C.ravel()])

    @classmethod
    def from_array(cls, v) -> "GeneralizedBlochVector":
        v = np.asarray(v, dtype=float)
        if v.shape != (15,):
            raise ValueError(f"expected a 15-vector, got shape {v.shape}")
        return cls(v[:3], v[3:6], v[6:].reshape(3, 3))


def density_from_bloch(n) -> np.ndarray:
    """Return ``(I + n.sigma) / 2``."""
    n = np.asarray(n, dtype=float)
    return 0.5 * (ID2 + np.einsum("i,iab->ab", n, PAULI))


def bloch_from_density(rho) -> np.ndarray:
    """Bloch vector ``n_i = Tr(rho sigma_i)`` of a 2x2 matrix."""
    rho = np.asarray(rho)
    return np.einsum("...ab,iba->...i", rho, PAULI).real


def density_from_generalized_bloch(v: GeneralizedBlochVector) -> np.ndarray:
    rho = np.eye(4, dtype=complex)
    rho += np.einsum("i,iab->ab", v.a, _PAULI_A)
    rho += np.einsum("i,iab->ab", v.b, _PAULI_B)
    rho += np.einsum("ij,ijab->ab", v.C, _PAULI_PAIRS)
    return rho / 4


def generalized_bloch_from_density(rho) -> GeneralizedBlochVector:
    rho = np.asarray(rho)
    a = np.einsum("ab,iba->i", rho, _PAULI_A).real
    b = np.einsum("ab,iba->i", rho, _PAULI_B).real
    C = np.einsum("ab,ijba->ij", rho, _PAULI_PAIRS).real
    return GeneralizedBlochVector(a, b, C)


def correlation_from_density(rho) -> np.ndarray:
    """Correlation block ``c_ij = Tr(rho sigma_i (x) sigma_j)``; accepts stacks of states."""
    return np.einsum("...ab,ijba->...ij", np.asarray(rho), _PAULI_PAIRS).real


def partial_trace(rho, keep: int) -> np.ndarray:
    """Reduced state of qubit ``keep`` (0 or 1) of a 4x4 matrix."""
    r = np.asarray(rho).reshape(2, 2, 2, 2)
    if keep == 0:
        return np.einsum("ajbj->ab", r)
    if keep == 1:
        return np.einsum("jajb->ab", r)
    raise ValueError("keep must be 0 or 1")


def partial_transpose(rho) -> np.ndarray:
    """Transpose the second tensor factor of a 4x4 matrix (or a stack of them)."""
    r = np.asarray(rho)
    lead = r.shape[:-2]
    return r.reshape(*lead, 2, 2, 2, 2).swapaxes(-1, -3).reshape(*lead, 4, 4)


def check_density(rho, tol: float = EPS_TOL) -> np.ndarray:
    """Validate a density matrix and return it as a complex array.

    Raises
    ------
    ValueError
        If ``rho`` is not square 2x2/4x4, not Hermitian, not unit trace, or
        has an eigenvalue below ``-tol``.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape not in ((2, 2), (4, 4)):
        raise ValueError(f"density matrix must be 2x2 or 4x4, got {rho.shape}")
    if np.abs(rho - rho.conj().T).max() > tol:
        raise ValueError("density matrix is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1) > tol:
        raise ValueError(f"density matrix trace is {tr}, expected 1")
    lmin = np.linalg.eigvalsh(rho).min()
    if lmin < -tol:
        raise ValueError(f"density matrix has negative eigenvalue {lmin:.3e}")
    return rho


def bell_diagonal_state(c) -> np.ndarray:
    """Bell-diagonal state with correlation matrix ``diag(c)`` and maximally mixed marginals."""
    return density_from_generalized_bloch(GeneralizedBlochVector(np.zeros(3), np.zeros(3), np.diag(c)))


def werner_state(p: float) -> np.ndarray:
    """``p |s><s| + (1-p) I/4`` with ``|s> = (|01> - |10>)/sqrt 2``."""
    s = np.array([0, 1, -1, 0], dtype=complex) / np.sqrt(2)
    return p * np.outer(s, s.conj()) + (1 - p) * np.eye(4) / 4


def _proper(O: np.ndarray) -> np.ndarray:
    if np.linalg.det(O) < 0:
        O = O.copy()
        O[:, -1] *= -1
    return O


def diagonalize_correlation(C, previous=None, tol: float = EPS_TOL):
    """Diagonalize a symmetric correlation matrix by a local rotation.

    Parameters
    ----------
    C : (3, 3) array_like
        Real symmetric correlation block.
    previous : (3,) array_like, optional
        Coordinates from the previous time step. When given, eigenvalues are
        permuted to the ordering closest to it (continuous trajectories);
        otherwise they are sorted in descending order.

    Returns
    -------
    eigenvalues : (3,) ndarray
        Coordinates in the Bell tetrahedron.
    rotations : tuple of two (3, 3) ndarrays
        Proper rotations ``(O_A, O_B)`` with ``O_A.T @ C @ O_B = diag(eigenvalues)``.
    """
    C = np.asarray(C, dtype=float)
    if np.abs(C - C.T).max() > tol:
        raise ValueError("correlation matrix is not symmetric")
    w, O = np.linalg.eigh(0.5 * (C + C.T))
    order = np.argsort(w)[::-1]
    if previous is not None:
        prev = np.asarray(previous, dtype=float)
        perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
        order = np.array(min(perms, key=lambda p: np.abs(w[list(p)] - prev).sum()))
    w, O = w[order], _proper(O[:, order])
    return w, (O, O.copy())
