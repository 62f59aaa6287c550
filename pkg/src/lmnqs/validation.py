"""Exact-mode self checks: estimators against dense linear algebra, the SR
descent property and Jordan-Wigner anticommutation relations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from .estimators import compute_local_quantities, exact_batch, exact_energy, exact_expectations
from .hilbert import enumerate_basis
from .operators import annihilation_operator, build_tfi, creation_operator
from .optimizers import SrConfig, sr_step
from .oracle import exact_ground_state, tangent_space_matrices
from .wavefunction import LogAmplitudeTable, Rbm


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def __post_init__(self):
        self.passed = bool(self.passed)


def _random_rbm(n: int, seed: int, scale: float = 0.1, symmetric: bool = False) -> Rbm:
    return Rbm.random(n, 2, symmetric, rng=np.random.default_rng(seed), scale=scale)


def state_vector(wf, n_sites: int) -> np.ndarray:
    return np.exp(wf.log_psi(enumerate_basis(n_sites)))


def derivative_vectors(wf, n_sites: int) -> np.ndarray:
    """Columns d psi / d theta_k = psi * D_k over the full basis."""
    x = enumerate_basis(n_sites)
    return state_vector(wf, n_sites)[:, None] * wf.log_derivatives(x)


def finite_difference_force(ham, wf, step: float = 1e-5) -> np.ndarray:
    """Wirtinger-style force (dE/dRe + i dE/dIm) / 2 by central differences."""
    grad = np.empty(wf.n_var, dtype=complex)
    for k in range(wf.n_var):
        parts = []
        for direction in (1.0, 1j):
            e = np.zeros(wf.n_var, dtype=complex)
            e[k] = step * direction
            plus = exact_energy(ham, wf.with_params(wf.params + e))
            minus = exact_energy(ham, wf.with_params(wf.params - e))
            parts.append((plus - minus) / (2 * step))
        grad[k] = 0.5 * (parts[0] + 1j * parts[1])
    return grad


def check_force(n: int = 3, seed: int = 0) -> CheckResult:
    ham = build_tfi(n, 1.0)
    wf = _random_rbm(n, seed)
    sr, _, _ = exact_expectations(ham, wf, with_lm=False)
    fd = finite_difference_force(ham, wf)
    err = np.linalg.norm(sr.f - fd) / np.linalg.norm(fd)
    return CheckResult("force matches finite-difference gradient", err < 1e-4, f"rel err {err:.2e}")


def check_fisher(n: int = 4, seed: int = 1) -> CheckResult:
    ham = build_tfi(n, 1.0)
    sr, _, _ = exact_expectations(ham, _random_rbm(n, seed), with_lm=False)
    herm = np.abs(sr.S - sr.S.conj().T).max()
    low = np.linalg.eigvalsh(sr.S).min()
    ok = herm < 1e-12 and low > -1e-10
    return CheckResult("Fisher matrix Hermitian PSD", ok, f"asym {herm:.1e}, min eig {low:.1e}")


def check_lm_matrices(n: int = 3, seed: int = 2) -> CheckResult:
    ham = build_tfi(n, 1.0)
    wf = _random_rbm(n, seed)
    _, lm, _ = exact_expectations(ham, wf)
    s_ref, h_ref = tangent_space_matrices(ham.to_dense(), state_vector(wf, n), derivative_vectors(wf, n))
    err = max(np.abs(lm.S_bar - s_ref).max(), np.abs(lm.H_bar - h_ref).max())
    return CheckResult("LM matrices match dense tangent-space algebra", err < 1e-10, f"max err {err:.1e}")


def check_zero_variance(n: int = 4) -> CheckResult:
    ham = build_tfi(n, 1.0)
    sol = exact_ground_state(ham)
    psi = sol.ground_vector * np.exp(-1j * np.angle(sol.ground_vector[0]))
    wf = LogAmplitudeTable.from_vector(n, psi)
    sr, lm, energy = exact_expectations(ham, wf)
    batch = compute_local_quantities(exact_batch(wf, n), ham, wf)
    var = float(batch.weights @ np.abs(batch.eloc - energy) ** 2)
    f_norm = np.linalg.norm(sr.f)
    h0k = np.abs(lm.H_bar[0, 1:]).max()
    ok = var < 1e-20 and f_norm < 1e-10 and h0k < 1e-10
    return CheckResult("zero variance at an exact eigenstate", ok,
                       f"var {var:.1e}, |f| {f_norm:.1e}, max|H0k| {h0k:.1e}")


def check_sr_descent(n: int = 4, seeds: int = 100, eta: float = 0.01) -> CheckResult:
    ham = build_tfi(n, 1.0)
    lowered = 0
    for seed in range(seeds):
        wf = _random_rbm(n, seed, scale=0.1)
        sr, _, e_before = exact_expectations(ham, wf, with_lm=False)
        step = sr_step(sr, SrConfig(eta=eta))
        lowered += exact_energy(ham, wf.with_params(wf.params + step.delta)) < e_before
    return CheckResult("SR step lowers exact energy", lowered >= 0.95 * seeds, f"{lowered}/{seeds}")


def check_anticommutation(modes: int = 4) -> CheckResult:
    a = [annihilation_operator(modes, j).to_dense() for j in range(modes)]
    ad = [creation_operator(modes, j).to_dense() for j in range(modes)]
    eye = np.eye(1 << modes)
    err = 0.0
    for i in range(modes):
        for j in range(modes):
            err = max(err, np.abs(a[i] @ ad[j] + ad[j] @ a[i] - (i == j) * eye).max())
            err = max(err, np.abs(a[i] @ a[j] + a[j] @ a[i]).max())
    return CheckResult("Jordan-Wigner anticommutation relations", err < 1e-12, f"max err {err:.1e}")


CHECKS: List[Callable[[], CheckResult]] = [
    check_force,
    check_fisher,
    check_lm_matrices,
    check_zero_variance,
    check_sr_descent,
    check_anticommutation,
]


def run_all() -> List[CheckResult]:
    return [check() for check in CHECKS]
