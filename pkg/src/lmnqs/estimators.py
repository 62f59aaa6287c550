"""Local energies, their parameter derivatives and the SR / LM estimator systems.

All batch means are weighted: Markov-chain batches use uniform weights,
exact-mode batches use normalized Born weights over the enumerated basis,
so every estimator has an exact counterpart without sampling noise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .hilbert import UNRESTRICTED, SymmetrySector, enumerate_basis
from .operators import PauliHamiltonian
from .sampling import SampleBatch

log = logging.getLogger(__name__)

EXACT_MAX_SITES = 14
LM_MAX_PARAMS = 5000
_CHUNK_ELEMENTS = 2_000_000


# ---------------------------------------------------------------------------
# local quantities
# ---------------------------------------------------------------------------

def _connected_terms(ham: PauliHamiltonian, wf, x: np.ndarray, log_psi_x: np.ndarray):
    """Matrix elements, connected configs and psi(x')/psi(x) for a chunk of samples."""
    comp = ham.compiled
    elems = comp.elements(x)                      # (n, m)
    xp = comp.flipped(x)                          # (n, m, N)
    n, m, n_sites = xp.shape
    lp = wf.log_psi(xp.reshape(n * m, n_sites)).reshape(n, m)
    nz = elems != 0
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.where(nz, np.exp(lp - log_psi_x[:, None]), 0.0)
    return elems, xp, ratio


def _chunks(n: int, per_sample: int):
    step = max(1, _CHUNK_ELEMENTS // max(per_sample, 1))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def local_energies(ham: PauliHamiltonian, wf, x: np.ndarray,
                   log_psi_x: Optional[np.ndarray] = None) -> np.ndarray:
    """H_loc(x) = sum_x' <x|H|x'> psi(x')/psi(x) for a batch of configurations."""
    x = np.atleast_2d(x)
    if log_psi_x is None:
        log_psi_x = wf.log_psi(x)
    out = np.empty(x.shape[0], dtype=complex)
    per = ham.compiled.n_masks * (x.shape[1] + getattr(wf, "n_hidden", 1))
    for sl in _chunks(x.shape[0], per):
        elems, _, ratio = _connected_terms(ham, wf, x[sl], log_psi_x[sl])
        out[sl] = np.sum(elems * ratio, axis=1)
    return out


def local_energy(ham: PauliHamiltonian, wf, x: np.ndarray) -> complex:
    return complex(local_energies(ham, wf, np.asarray(x)[None, :])[0])


def local_energy_derivatives(ham: PauliHamiltonian, wf, x: np.ndarray,
                             log_psi_x: Optional[np.ndarray] = None,
                             eloc: Optional[np.ndarray] = None,
                             derivs: Optional[np.ndarray] = None) -> np.ndarray:
    """H_loc,k(x) = H_k(x) - H_loc(x) D_k(x), with
    H_k(x) = sum_x' <x|H|x'> D_k(x') psi(x')/psi(x).  Shape (n, n_var)."""
    single = np.asarray(x).ndim == 1
    x = np.atleast_2d(x)
    if log_psi_x is None:
        log_psi_x = wf.log_psi(x)
    if derivs is None:
        derivs = wf.log_derivatives(x)
    n_sites = x.shape[1]
    h_k = np.empty((x.shape[0], wf.n_var), dtype=complex)
    e_loc = np.empty(x.shape[0], dtype=complex)
    per = ham.compiled.n_masks * max(getattr(wf, "n_dense", wf.n_var), n_sites)
    for sl in _chunks(x.shape[0], per):
        elems, xp, ratio = _connected_terms(ham, wf, x[sl], log_psi_x[sl])
        coef = elems * ratio                                  # (n, m)
        n, m, _ = xp.shape
        d_prime = wf.log_derivatives(xp.reshape(n * m, n_sites)).reshape(n, m, -1)
        h_k[sl] = np.einsum("nm,nmk->nk", coef, d_prime)
        e_loc[sl] = coef.sum(axis=1)
    if eloc is None:
        eloc = e_loc
    out = h_k - eloc[:, None] * derivs
    return out[0] if single else out


def compute_local_quantities(batch: SampleBatch, ham: PauliHamiltonian, wf,
                             with_eloc_derivs: bool = False,
                             spike_factor: float = 1e3) -> SampleBatch:
    """Fill ``eloc``, ``derivs`` (and optionally ``eloc_derivs``) on the batch.

    Samples with non-finite local energy (vanishing amplitude) are dropped with
    a warning.  Large but finite spikes are logged and retained.
    """
    x = batch.configs
    lp = wf.log_psi(x)
    batch.log_psi = lp
    eloc = local_energies(ham, wf, x, lp)
    bad = ~np.isfinite(eloc)
    if np.any(bad):
        log.warning("dropping %d samples with non-finite local energy", int(bad.sum()))
        keep = ~bad
        batch.configs = x = x[keep]
        batch.log_psi = lp = lp[keep]
        eloc = eloc[keep]
        if batch.weights is not None:
            w = batch.weights[keep]
            batch.weights = w / w.sum()
    if eloc.size:
        med = np.median(np.abs(eloc))
        spikes = np.abs(eloc) > spike_factor * max(med, 1e-300)
        if np.any(spikes):
            log.warning("%d local-energy spikes above %.0e x median retained",
                        int(spikes.sum()), spike_factor)
    batch.eloc = eloc
    batch.derivs = wf.log_derivatives(x) if len(x) else np.zeros((0, wf.n_var), complex)
    if with_eloc_derivs:
        if wf.n_var > LM_MAX_PARAMS:
            raise ValueError(f"LM limited to {LM_MAX_PARAMS} parameters, got {wf.n_var}")
        batch.eloc_derivs = local_energy_derivatives(ham, wf, x, lp, eloc, batch.derivs)
    return batch


# ---------------------------------------------------------------------------
# systems
# ---------------------------------------------------------------------------

@dataclass
class SrSystem:
    """Quantum Fisher matrix S (dense) and force f, plus the centered data
    needed for matrix-free products S v = O_c^H W O_c v."""

    S: np.ndarray
    f: np.ndarray
    centered: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    energy: complex = 0j

    @property
    def n_var(self) -> int:
        return self.f.size

    def matvec(self, v: np.ndarray) -> np.ndarray:
        if self.centered is None:
            return self.S @ v
        return self.centered.conj().T @ (self.weights * (self.centered @ v))


@dataclass
class LmSystem:
    """Overlap and Hamilton matrices in the basis {psi_0, psi_1, ..., psi_nvar}."""

    S_bar: np.ndarray
    H_bar: np.ndarray

    @property
    def n_var(self) -> int:
        return self.S_bar.shape[0] - 1


def _check_batch(batch: SampleBatch) -> None:
    if batch.eloc is None or batch.derivs is None:
        raise ValueError("batch has no local quantities; call compute_local_quantities first")
    if len(batch) == 0:
        raise ValueError("empty batch")


def assemble_sr(batch: SampleBatch) -> SrSystem:
    """S_kk' = <<D_k^* D_k'>> - <<D_k^*>><<D_k'>>, f_k = <<D_k^* H_loc>> - <<D_k^*>><<H_loc>>."""
    _check_batch(batch)
    w = batch.mean_weights
    d = batch.derivs
    d_mean = w @ d
    e_mean = w @ batch.eloc
    centered = d - d_mean
    s = centered.conj().T @ (w[:, None] * centered)
    s = 0.5 * (s + s.conj().T)
    f = (w * (batch.eloc - e_mean)) @ centered.conj()
    return SrSystem(S=s, f=f, centered=centered, weights=w, energy=e_mean)


def assemble_lm(batch: SampleBatch, sr: Optional[SrSystem] = None) -> LmSystem:
    """Overlap/Hamilton matrices with the covariance / tri-covariance estimators.

    With O_k = D_k - <<D_k>> the six-term H_kk' estimator collapses to
    <<O_k^* (H_loc O_k' + H_loc,k')>>, and H_0k' to <<H_loc,k'>> + <<H_loc O_k'>>.
    """
    _check_batch(batch)
    if batch.eloc_derivs is None:
        raise ValueError("LM needs local-energy derivatives on the batch")
    if sr is None:
        sr = assemble_sr(batch)
    w = batch.mean_weights
    o = sr.centered
    e = batch.eloc
    hd = batch.eloc_derivs
    n = sr.n_var
    s_bar = np.zeros((n + 1, n + 1), dtype=complex)
    s_bar[0, 0] = 1.0
    s_bar[1:, 1:] = sr.S
    h_bar = np.empty((n + 1, n + 1), dtype=complex)
    h_bar[0, 0] = w @ e
    h_bar[1:, 0] = sr.f
    h_bar[0, 1:] = w @ hd + (w * e) @ o
    h_bar[1:, 1:] = o.conj().T @ (w[:, None] * (e[:, None] * o + hd))
    return LmSystem(S_bar=s_bar, H_bar=h_bar)


# ---------------------------------------------------------------------------
# exact mode
# ---------------------------------------------------------------------------

def exact_batch(wf, n_sites: int, sector: SymmetrySector = UNRESTRICTED) -> SampleBatch:
    """The whole (sector) basis as a batch weighted by |psi(x)|^2 / sum |psi|^2."""
    if n_sites > EXACT_MAX_SITES:
        from .hilbert import ResourceError
        raise ResourceError(f"exact enumeration capped at {EXACT_MAX_SITES} sites")
    x = enumerate_basis(n_sites, sector)
    lp = wf.log_psi(x)
    logw = 2.0 * lp.real
    keep = np.isfinite(logw)
    x, lp, logw = x[keep], lp[keep], logw[keep]
    w = np.exp(logw - logw.max())
    return SampleBatch(configs=x, log_psi=lp, weights=w / w.sum())


def exact_energy(ham: PauliHamiltonian, wf, sector: SymmetrySector = UNRESTRICTED) -> float:
    batch = exact_batch(wf, ham.n_sites, sector)
    return float(np.real(batch.weights @ local_energies(ham, wf, batch.configs, batch.log_psi)))


def exact_expectations(ham: PauliHamiltonian, wf, n_sites: Optional[int] = None,
                       sector: SymmetrySector = UNRESTRICTED, with_lm: bool = True):
    """Exact (SrSystem, LmSystem, energy) with Born weights over the full basis."""
    n_sites = ham.n_sites if n_sites is None else n_sites
    batch = exact_batch(wf, n_sites, sector)
    compute_local_quantities(batch, ham, wf, with_eloc_derivs=with_lm)
    sr = assemble_sr(batch)
    lm = assemble_lm(batch, sr) if with_lm else None
    return sr, lm, float(sr.energy.real)
