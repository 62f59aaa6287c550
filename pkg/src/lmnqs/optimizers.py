"""Parameter updates: stochastic reconfiguration (SR) and the linear method (LM).

SR solves the shifted Fisher system (S + a_diag I) x = f with a matrix-free
conjugate-gradient iteration and steps by -eta * x.  LM solves the shifted,
Tikhonov-damped generalized eigenproblem for several damping strengths and
keeps the candidate whose correlated-sampling energy is lowest.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .estimators import LmSystem, SrSystem, local_energies
from .operators import PauliHamiltonian
from .sampling import SampleBatch

log = logging.getLogger(__name__)

SR_DENSE_MAX = 2000


class LmStepError(RuntimeError):
    """No admissible eigenpair for the linear-method pencil."""


@dataclass(frozen=True)
class SrConfig:
    eta: float = 0.01
    a_diag: float = 0.01
    cg_tol: float = 1e-10
    cg_max_iter: Optional[int] = None

    def validate(self) -> None:
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.a_diag >= 0:
            raise ValueError("a_diag must be non-negative")
        if not self.cg_tol > 0:
            raise ValueError("cg_tol must be positive")
        if self.cg_max_iter is not None and self.cg_max_iter <= 0:
            raise ValueError("cg_max_iter must be positive")


@dataclass(frozen=True)
class LmConfig:
    kappa0: float = 0.5
    a_diag: float = 0.01
    eigen_im_tol: float = 1e-2
    c_min: float = 1e-8
    n_kappa: int = 3

    def validate(self) -> None:
        if not self.kappa0 > 0:
            raise ValueError("kappa0 must be positive")
        if not self.a_diag >= 0:
            raise ValueError("a_diag must be non-negative")
        if not self.eigen_im_tol >= 0:
            raise ValueError("eigen_im_tol must be non-negative")
        if not self.c_min >= 0:
            raise ValueError("c_min must be non-negative")
        if self.n_kappa < 1:
            raise ValueError("n_kappa must be at least 1")

    @property
    def kappas(self) -> list[float]:
        return [self.kappa0 * 10.0 ** n for n in range(self.n_kappa)]


@dataclass
class UpdateResult:
    delta: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    t_u: float = 0.0

    @property
    def skipped(self) -> bool:
        return bool(self.diagnostics.get("skipped", False))


# ---------------------------------------------------------------------------
# SR
# ---------------------------------------------------------------------------

def conjugate_gradient(matvec: Callable[[np.ndarray], np.ndarray], b: np.ndarray,
                       tol: float = 1e-10, max_iter: Optional[int] = None,
                       x0: Optional[np.ndarray] = None) -> tuple[np.ndarray, int, bool]:
    """CG for a Hermitian positive-definite operator.

    Stops when ||A x - b|| <= tol * ||b||.  Returns (x, iterations, converged).
    """
    b = np.asarray(b, dtype=complex)
    n = b.size
    max_iter = 10 * max(n, 1) if max_iter is None else max_iter
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros_like(b), 0, True
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=complex)
    r = b - matvec(x) if x0 is not None else b.copy()
    p = r.copy()
    rs = np.vdot(r, r).real
    target = (tol * b_norm) ** 2
    if rs <= target:
        return x, 0, True
    for it in range(1, max_iter + 1):
        ap = matvec(p)
        denom = np.vdot(p, ap).real
        if denom <= 0.0 or not np.isfinite(denom):
            return x, it, False
        step = rs / denom
        x += step * p
        r -= step * ap
        rs_new = np.vdot(r, r).real
        if rs_new <= target:
            # guard against drift of the recursive residual
            true_r = b - matvec(x)
            if np.vdot(true_r, true_r).real <= target:
                return x, it, True
            r = true_r
            rs_new = np.vdot(r, r).real
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, max_iter, False


def _shifted_dense(sys: SrSystem, a_diag: float) -> np.ndarray:
    return sys.S + a_diag * np.eye(sys.n_var)


def sr_solve_dense(sys: SrSystem, cfg: SrConfig) -> UpdateResult:
    """Reference SR step via a dense Cholesky / LU solve."""
    start = time.perf_counter()
    if sys.n_var > SR_DENSE_MAX:
        raise ValueError(f"dense SR solve limited to {SR_DENSE_MAX} parameters")
    a = _shifted_dense(sys, cfg.a_diag)
    try:
        x = scipy.linalg.solve(a, sys.f, assume_a="her")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise np.linalg.LinAlgError(f"regularized Fisher matrix is singular: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError("regularized Fisher matrix is singular")
    return UpdateResult(delta=-cfg.eta * x, diagnostics={"solver": "dense"},
                        t_u=time.perf_counter() - start)


def sr_step(sys: SrSystem, cfg: SrConfig) -> UpdateResult:
    """SR step -eta (S + a_diag I)^{-1} f with a matrix-free CG solve."""
    start = time.perf_counter()
    if sys.f.ndim != 1 or sys.S.shape != (sys.n_var, sys.n_var):
        raise ValueError("inconsistent SR system dimensions")
    a_diag = cfg.a_diag

    def matvec(v):
        return sys.matvec(v) + a_diag * v

    x, iters, ok = conjugate_gradient(matvec, sys.f, cfg.cg_tol, cfg.cg_max_iter)
    diag = {"cg_iterations": iters, "solver": "cg"}
    if not ok:
        warnings.warn(f"CG did not converge in {iters} iterations; using dense solve",
                      RuntimeWarning, stacklevel=2)
        x = scipy.linalg.solve(_shifted_dense(sys, a_diag), sys.f, assume_a="her")
        diag["solver"] = "dense-fallback"
    return UpdateResult(delta=-cfg.eta * x, diagnostics=diag,
                        t_u=time.perf_counter() - start)


# ---------------------------------------------------------------------------
# LM
# ---------------------------------------------------------------------------

def regularized_pencil(sys: LmSystem, kappa: float, a_diag: float) -> tuple[np.ndarray, np.ndarray]:
    """(H~, S~): kappa and a_diag added to every diagonal entry but the first."""
    n = sys.n_var + 1
    shift = np.ones(n)
    shift[0] = 0.0
    h = sys.H_bar + np.diag(kappa * shift)
    s = sys.S_bar + np.diag(a_diag * shift)
    return h, s


def lm_solve(sys: LmSystem, kappa: float, a_diag: float,
             eigen_im_tol: float = 1e-2, c_min: float = 1e-8) -> tuple[complex, complex, np.ndarray]:
    """Lowest admissible eigenpair of H~ u = lambda S~ u.

    Returns (lambda0, c, v0) with u = (c, v0).
    """
    h, s = regularized_pencil(sys, kappa, a_diag)
    with np.errstate(all="ignore"):
        lam, vecs = scipy.linalg.eig(h, s)
    norms = np.linalg.norm(vecs, axis=0)
    ok = np.isfinite(lam) & np.all(np.isfinite(vecs), axis=0)
    ok &= np.abs(lam.imag) <= eigen_im_tol * np.abs(lam.real) + eigen_im_tol
    ok &= np.abs(vecs[0]) >= c_min * norms
    ok &= norms > 0
    if not np.any(ok):
        raise LmStepError("no admissible eigenpair")
    idx = np.flatnonzero(ok)
    best = idx[np.argmin(lam.real[idx])]
    u = vecs[:, best]
    return complex(lam[best]), complex(u[0]), u[1:].copy()


def correlated_energy(batch: SampleBatch, p_old, p_new, ham: PauliHamiltonian) -> tuple[float, float]:
    """Energy of ``p_new`` reweighted from a batch drawn under ``p_old``.

    Returns (energy, effective sample size).  A vanishing weight sum gives +inf.
    """
    x = batch.configs
    lp_old = batch.log_psi if batch.log_psi is not None else p_old.log_psi(x)
    lp_new = p_new.log_psi(x)
    logw = 2.0 * (lp_new.real - lp_old.real)
    if batch.weights is not None:
        with np.errstate(divide="ignore"):
            logw = logw + np.log(batch.weights)
    if np.any(np.isnan(logw)):
        return np.inf, 0.0
    # weights stay unnormalized so that global underflow is detectable
    with np.errstate(over="ignore", under="ignore"):
        w = np.exp(logw)
    total = w.sum()
    if not np.isfinite(total) or total <= 0.0:
        return np.inf, 0.0
    eloc = local_energies(ham, p_new, x, lp_new)
    keep = w > 0
    if not np.all(np.isfinite(eloc[keep])):
        return np.inf, 0.0
    energy = float(np.dot(w[keep], eloc[keep].real) / total)
    ess = float(total / w.max())
    return energy, ess


def lm_step(sys: LmSystem, cfg: LmConfig, batch: SampleBatch, p, ham: PauliHamiltonian) -> UpdateResult:
    """Three-kappa LM update chosen by correlated-sampling energy."""
    start = time.perf_counter()
    kappas = cfg.kappas
    energies = [np.inf] * len(kappas)
    ess = [0.0] * len(kappas)
    lambdas: list[Optional[complex]] = [None] * len(kappas)
    steps: list[Optional[np.ndarray]] = [None] * len(kappas)
    c_abs: list[Optional[float]] = [None] * len(kappas)
    for n, kappa in enumerate(kappas):
        try:
            lam, c, v = lm_solve(sys, kappa, cfg.a_diag, cfg.eigen_im_tol, cfg.c_min)
        except LmStepError:
            continue
        with np.errstate(all="ignore"):
            delta = v / c
        if not np.all(np.isfinite(delta)):
            continue
        lambdas[n], steps[n], c_abs[n] = lam, delta, abs(c)
        energies[n], ess[n] = correlated_energy(batch, p, p.with_params(p.params + delta), ham)

    diag = {
        "kappas": kappas,
        "correlated_energies": energies,
        "ess": ess,
        "lambdas": lambdas,
    }
    finite = [i for i, e in enumerate(energies) if np.isfinite(e)]
    if not finite:
        warnings.warn("all LM candidates inadmissible; epoch skipped", RuntimeWarning, stacklevel=2)
        diag.update(skipped=True, kappa=None, lambda0=None, c_abs=None)
        return UpdateResult(delta=np.zeros(sys.n_var, dtype=complex), diagnostics=diag,
                            t_u=time.perf_counter() - start)
    best = min(finite, key=lambda i: energies[i])
    diag.update(skipped=False, kappa=kappas[best], lambda0=lambdas[best], c_abs=c_abs[best],
                ess_chosen=ess[best], step_norm=float(np.linalg.norm(steps[best])))
    return UpdateResult(delta=steps[best], diagnostics=diag, t_u=time.perf_counter() - start)
