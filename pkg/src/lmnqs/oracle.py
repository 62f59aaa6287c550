"""Exact diagonalization reference energies and error metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse.linalg

from .hilbert import DEFAULT_MAX_SITES, UNRESTRICTED, ResourceError, SymmetrySector, enumerate_basis
from .operators import PauliHamiltonian

DENSE_MAX_DIM = 4096
DEGENERACY_TOL = 1e-8


@dataclass
class ExactSolution:
    E0: float
    ground_vector: Optional[np.ndarray]
    degeneracy: int
    basis: Optional[np.ndarray] = None

    def full_vector(self, n_sites: int) -> np.ndarray:
        """Ground vector embedded in the unrestricted 2^N basis."""
        from .hilbert import basis_index
        if self.ground_vector is None or self.basis is None:
            raise ValueError("no eigenvector stored")
        psi = np.zeros(1 << n_sites, dtype=complex)
        psi[basis_index(self.basis)] = self.ground_vector
        return psi


def exact_ground_state(ham: PauliHamiltonian, sector: SymmetrySector = UNRESTRICTED,
                       with_vector: bool = True, max_sites: int = DEFAULT_MAX_SITES) -> ExactSolution:
    """Lowest eigenpair of ``ham`` restricted to ``sector``.

    Dense ``eigh`` below dimension 4096, ARPACK Lanczos above.
    """
    n = ham.n_sites
    if n > max_sites:
        raise ResourceError(f"exact diagonalization capped at {max_sites} sites")
    basis = enumerate_basis(n, sector, max_sites=max_sites)
    mat = ham.to_sparse(sector)
    dim = mat.shape[0]
    if dim == 0:
        raise ValueError("empty sector")
    if dim <= DENSE_MAX_DIM:
        dense = mat.toarray()
        evals, evecs = np.linalg.eigh(0.5 * (dense + dense.conj().T))
    else:
        k = min(6, dim - 2)
        evals, evecs = scipy.sparse.linalg.eigsh(mat, k=k, which="SA", tol=1e-12)
        order = np.argsort(evals)
        evals, evecs = evals[order], evecs[:, order]
    e0 = float(evals[0])
    scale = max(1.0, abs(e0))
    degeneracy = int(np.sum(evals - e0 <= DEGENERACY_TOL * scale))
    vec = evecs[:, 0].astype(complex) if with_vector else None
    return ExactSolution(E0=e0, ground_vector=vec, degeneracy=degeneracy,
                         basis=basis if with_vector else None)


def relative_error(e_vmc: float, e0: float) -> float:
    """|E0 - E| / |E0|."""
    if e0 == 0:
        raise ValueError("relative error undefined for E0 = 0")
    return abs(e0 - e_vmc) / abs(e0)


def tangent_space_matrices(ham_dense: np.ndarray, psi: np.ndarray, dpsi: np.ndarray):
    """Dense-algebra overlap and Hamilton matrices of the normalized state and
    its projected tangent vectors.

    ``psi`` is the (unnormalized) state vector and ``dpsi[:, k]`` = d psi / d theta_k.
    Returns (S_bar, H_bar) in the basis {psi_0, psi_1, ...} with
    psi_0 = psi / ||psi|| and psi_k = (1 - |psi_0><psi_0|) dpsi_k / ||psi||.
    """
    norm = np.linalg.norm(psi)
    psi0 = psi / norm
    tang = dpsi / norm
    tang = tang - np.outer(psi0, psi0.conj() @ tang)
    basis = np.column_stack([psi0, tang])
    s_bar = basis.conj().T @ basis
    h_bar = basis.conj().T @ (ham_dense @ basis)
    return s_bar, h_bar
