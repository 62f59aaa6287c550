"""Metropolis-Hastings sampling of |psi(x)|^2 for RBM wavefunctions.

Three proposal kernels are available:

* ``local``: flip one uniformly chosen site.
* ``exchange``: pick one of the N ring bonds uniformly and swap its two
  spins; a bond with aligned spins yields a counted, rejected proposal.
  Both choices keep the proposal symmetric and conserve magnetization.
* ``hamiltonian``: move to a uniformly chosen off-diagonal connected state
  of the Hamiltonian, with the Hastings factor |C(x)| / |C(x')|.

The chain loop runs in numba.  Random numbers are drawn up front from a
per-chain ``numpy.random.Generator`` so runs are bit-reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numba
import numpy as np

from .hilbert import UNRESTRICTED, SymmetrySector, random_config
from .operators import PauliHamiltonian
from .wavefunction import LookupTable, Rbm

KERNELS = ("local", "exchange", "hamiltonian")
_KERNEL_ID = {name: i for i, name in enumerate(KERNELS)}
_ELEM_TOL = 1e-14


@dataclass
class SamplerConfig:
    kernel: str = "local"
    n_samples: int = 1000
    burn_in_sweeps: int = 100
    downsample: Optional[int] = None  # proposal attempts between samples; None -> N
    n_chains: int = 4
    init_sector: Optional[SymmetrySector] = None
    resync_sweeps: int = 10

    def validate(self) -> None:
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.n_samples < 0:
            raise ValueError("n_samples must be non-negative")
        if self.burn_in_sweeps < 0 or self.n_chains <= 0:
            raise ValueError("burn_in_sweeps must be >= 0 and n_chains > 0")
        if self.downsample is not None and self.downsample <= 0:
            raise ValueError("downsample interval must be positive")
        if self.kernel == "exchange" and (
            self.init_sector is not None and self.init_sector.kind == "unrestricted"
        ):
            raise ValueError("exchange kernel requires a fixed-magnetization initial state")

    def interval(self, n_sites: int) -> int:
        return self.downsample if self.downsample is not None else n_sites

    def sector(self, n_sites: int) -> SymmetrySector:
        if self.init_sector is not None:
            return self.init_sector
        if self.kernel == "exchange":
            return SymmetrySector.magnetization(n_sites % 2)
        return UNRESTRICTED


@dataclass
class ChainState:
    x: np.ndarray
    lut: LookupTable
    log_amp: complex
    rng: np.random.Generator
    accepted: int = 0
    proposed: int = 0

    @classmethod
    def start(cls, rbm: Rbm, x: np.ndarray, rng: np.random.Generator) -> "ChainState":
        x = np.array(x, dtype=np.int8)
        return cls(x, LookupTable.build(rbm, x), complex(rbm.log_psi(x)), rng)

    def resync(self, rbm: Rbm) -> None:
        self.lut = LookupTable.build(rbm, self.x)
        self.log_amp = complex(rbm.log_psi(self.x))

    @property
    def acceptance(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0


@dataclass
class SampleBatch:
    """Samples plus cached per-sample quantities.

    ``weights`` is None for Markov-chain batches (uniform 1/n); exact-mode
    batches carry normalized Born weights over the full basis.
    """

    configs: np.ndarray
    log_psi: np.ndarray
    weights: Optional[np.ndarray] = None
    t_s: float = 0.0
    accept_rate: float = float("nan")
    chains: List[ChainState] = field(default_factory=list, repr=False)
    eloc: Optional[np.ndarray] = None
    derivs: Optional[np.ndarray] = None
    eloc_derivs: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.configs.shape[0]

    @property
    def mean_weights(self) -> np.ndarray:
        n = len(self)
        if self.weights is None:
            return np.full(n, 1.0 / n)
        return self.weights


# ---------------------------------------------------------------------------
# Hamiltonian connectivity tables for the numba kernel
# ---------------------------------------------------------------------------

@dataclass
class _HamTables:
    masks: np.ndarray        # (n_off, N) bool
    term_ptr: np.ndarray     # (n_off+1,) term ranges per mask
    term_coef: np.ndarray    # (n_terms,)
    site_ptr: np.ndarray     # (n_terms+1,) sign-site ranges per term
    sites: np.ndarray        # sign sites concatenated

    @classmethod
    def empty(cls, n: int) -> "_HamTables":
        return cls(np.zeros((0, n), dtype=np.bool_), np.zeros(1, np.int64),
                   np.zeros(0, complex), np.zeros(1, np.int64), np.zeros(0, np.int64))

    @classmethod
    def build(cls, ham: PauliHamiltonian) -> "_HamTables":
        comp = ham.compiled
        off = comp.offdiagonal_masks()
        term_ptr, coefs, site_ptr, sites = [0], [], [0], []
        for m in off:
            for t in np.nonzero(comp.term_mask == m)[0]:
                coefs.append(comp.term_coef[t])
                s = np.nonzero(comp.sign_sites[t])[0]
                sites.extend(s.tolist())
                site_ptr.append(len(sites))
            term_ptr.append(len(coefs))
        return cls(
            comp.masks[off].copy(),
            np.array(term_ptr, np.int64),
            np.array(coefs, complex),
            np.array(site_ptr, np.int64),
            np.array(sites, np.int64),
        )


def _ring_bonds(n: int) -> np.ndarray:
    bonds = {tuple(sorted((i, (i + 1) % n))) for i in range(n) if n > 1}
    return np.array(sorted(bonds), dtype=np.int64).reshape(-1, 2)


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _log1pexp(z):
    if z.real > 0:
        return z + np.log1p(np.exp(-z))
    return np.log1p(np.exp(z))


@numba.njit(cache=True)
def _connections(x, masks, term_ptr, term_coef, site_ptr, sites, out):
    """Fill ``out`` with indices of off-diagonal masks having non-zero element; return count."""
    count = 0
    for m in range(masks.shape[0]):
        val = 0j
        for t in range(term_ptr[m], term_ptr[m + 1]):
            sgn = 1
            for k in range(site_ptr[t], site_ptr[t + 1]):
                sgn *= x[sites[k]]
            val += term_coef[t] * sgn
        if abs(val) >= 1e-14:
            out[count] = m
            count += 1
    return count


@numba.njit(cache=True)
def _propose(kernel, x, u, bonds, masks, term_ptr, term_coef, site_ptr, sites, flips, conn):
    """Write proposed flip sites into ``flips``; return (n_flips, log q-ratio).

    n_flips == 0 signals a proposal that is rejected outright.
    """
    n = x.shape[0]
    if kernel == 0:
        flips[0] = min(int(u * n), n - 1)
        return 1, 0.0
    if kernel == 1:
        nb = bonds.shape[0]
        if nb == 0:
            return 0, 0.0
        k = min(int(u * nb), nb - 1)
        i = bonds[k, 0]
        j = bonds[k, 1]
        if x[i] == x[j]:
            return 0, 0.0
        flips[0] = i
        flips[1] = j
        return 2, 0.0
    c_here = _connections(x, masks, term_ptr, term_coef, site_ptr, sites, conn)
    if c_here == 0:
        return 0, 0.0
    m = conn[min(int(u * c_here), c_here - 1)]
    nf = 0
    for i in range(n):
        if masks[m, i]:
            flips[nf] = i
            nf += 1
    for k in range(nf):
        x[flips[k]] = -x[flips[k]]
    c_there = _connections(x, masks, term_ptr, term_coef, site_ptr, sites, conn)
    for k in range(nf):
        x[flips[k]] = -x[flips[k]]
    return nf, np.log(c_here / c_there)


@numba.njit(cache=True)
def _mh_loop(x, theta, log_amp, a, b, w, kernel, uniforms, burn, interval, n_record,
             out_x, out_logamp, resync, bonds, masks, term_ptr, term_coef, site_ptr, sites):
    n = x.shape[0]
    m_hidden = theta.shape[0]
    flips = np.empty(n, np.int64)
    conn = np.empty(max(masks.shape[0], 1), np.int64)
    new_theta = np.empty(m_hidden, np.complex128)
    accepted = 0
    proposed = 0
    recorded = 0
    n_steps = uniforms.shape[0]
    for step in range(n_steps):
        proposed += 1
        nf, logq = _propose(kernel, x, uniforms[step, 0], bonds, masks, term_ptr,
                            term_coef, site_ptr, sites, flips, conn)
        if nf > 0:
            delta = 0j
            for j in range(m_hidden):
                new_theta[j] = theta[j]
            for k in range(nf):
                i = flips[k]
                xi = x[i]
                delta -= 2.0 * a[i] * xi
                for j in range(m_hidden):
                    new_theta[j] -= 2.0 * w[i, j] * xi
            for j in range(m_hidden):
                delta += _log1pexp(new_theta[j]) - _log1pexp(theta[j])
            log_acc = 2.0 * delta.real + logq
            if log_acc >= 0.0 or uniforms[step, 1] < np.exp(log_acc):
                accepted += 1
                for k in range(nf):
                    x[flips[k]] = -x[flips[k]]
                for j in range(m_hidden):
                    theta[j] = new_theta[j]
                log_amp += delta
        if resync > 0 and (step + 1) % resync == 0:
            log_amp = 0j
            for j in range(m_hidden):
                t = b[j]
                for i in range(n):
                    t += w[i, j] * x[i]
                theta[j] = t
                log_amp += _log1pexp(t)
            for i in range(n):
                log_amp += a[i] * x[i]
        if step >= burn and (step + 1 - burn) % interval == 0 and recorded < n_record:
            for i in range(n):
                out_x[recorded, i] = x[i]
            out_logamp[recorded] = log_amp
            recorded += 1
    return log_amp, accepted, proposed


class ChainRunner:
    """Binds an RBM, a kernel and (optionally) a Hamiltonian to the numba loop."""

    def __init__(self, rbm: Rbm, kernel: str, ham: Optional[PauliHamiltonian] = None):
        if kernel not in KERNELS:
            raise ValueError(f"unknown kernel {kernel!r}")
        if kernel == "hamiltonian" and ham is None:
            raise ValueError("hamiltonian kernel needs a Hamiltonian")
        self.rbm = rbm
        self.kernel = kernel
        n = rbm.n_sites
        self.bonds = _ring_bonds(n)
        self.tables = _HamTables.build(ham) if kernel == "hamiltonian" else _HamTables.empty(n)
        self.a = np.ascontiguousarray(rbm.a, dtype=complex)
        self.b = np.ascontiguousarray(rbm.b, dtype=complex)
        self.w = np.ascontiguousarray(rbm.w, dtype=complex)

    def run(self, state: ChainState, n_steps: int, burn: int = 0, interval: int = 1,
            n_record: int = 0, resync: int = 0) -> Tuple[np.ndarray, np.ndarray]:
        n = self.rbm.n_sites
        uniforms = state.rng.random((n_steps, 2))
        out_x = np.empty((n_record, n), np.int8)
        out_logamp = np.empty(n_record, complex)
        t = self.tables
        log_amp, acc, prop = _mh_loop(
            state.x, state.lut.theta, complex(state.log_amp), self.a, self.b, self.w,
            _KERNEL_ID[self.kernel], uniforms, burn, interval, n_record, out_x, out_logamp,
            resync, self.bonds, t.masks, t.term_ptr, t.term_coef, t.site_ptr, t.sites,
        )
        state.log_amp = log_amp
        state.accepted += acc
        state.proposed += prop
        return out_x, out_logamp


# ---------------------------------------------------------------------------
# single-step API
# ---------------------------------------------------------------------------

def _single_proposal(state: ChainState, kernel: str, ham: Optional[PauliHamiltonian]):
    runner_tables = _HamTables.build(ham) if kernel == "hamiltonian" else _HamTables.empty(len(state.x))
    n = len(state.x)
    flips = np.empty(n, np.int64)
    conn = np.empty(max(runner_tables.masks.shape[0], 1), np.int64)
    x = state.x.copy()
    nf, logq = _propose(_KERNEL_ID[kernel], x, state.rng.random(), _ring_bonds(n),
                        runner_tables.masks, runner_tables.term_ptr, runner_tables.term_coef,
                        runner_tables.site_ptr, runner_tables.sites, flips, conn)
    if nf == 0:
        return None, 0.0
    x[flips[:nf]] *= -1
    return x, float(logq)


def propose_local(state: ChainState) -> Tuple[np.ndarray, float]:
    """Flip one uniformly chosen site; the log proposal ratio is 0."""
    return _single_proposal(state, "local", None)


def propose_exchange(state: ChainState) -> Tuple[Optional[np.ndarray], float]:
    """Swap the spins of a uniformly chosen ring bond; ``None`` if they are aligned."""
    return _single_proposal(state, "exchange", None)


def propose_hamiltonian(state: ChainState, ham: PauliHamiltonian) -> Tuple[Optional[np.ndarray], float]:
    """Jump to a uniformly chosen off-diagonal connected state of ``ham``."""
    return _single_proposal(state, "hamiltonian", ham)


def mh_step(state: ChainState, rbm: Rbm, kernel: str = "local",
            ham: Optional[PauliHamiltonian] = None) -> ChainState:
    """One Metropolis-Hastings proposal/acceptance, updating ``state`` in place."""
    ChainRunner(rbm, kernel, ham).run(state, 1)
    return state


def proposal_distribution(x: np.ndarray, kernel: str,
                          ham: Optional[PauliHamiltonian] = None) -> List[Tuple[np.ndarray, float, float]]:
    """Enumerate ``(x', q(x -> x'), log q-ratio)`` for every move the kernel can make.

    The probability mass of outright-rejected proposals is omitted (it stays at x).
    """
    x = np.asarray(x, dtype=np.int8)
    n = x.size
    out = []
    if kernel == "local":
        for i in range(n):
            xp = x.copy()
            xp[i] *= -1
            out.append((xp, 1.0 / n, 0.0))
    elif kernel == "exchange":
        bonds = _ring_bonds(n)
        for i, j in bonds:
            if x[i] != x[j]:
                xp = x.copy()
                xp[[i, j]] *= -1
                out.append((xp, 1.0 / len(bonds), 0.0))
    elif kernel == "hamiltonian":
        comp = ham.compiled
        off = comp.offdiagonal_masks()

        def n_conn(y):
            e = comp.elements(y)[0][off]
            return int(np.sum(np.abs(e) >= _ELEM_TOL))

        e = comp.elements(x)[0]
        c_here = n_conn(x)
        for m in off:
            if abs(e[m]) >= _ELEM_TOL:
                xp = x.copy()
                xp[comp.masks[m]] *= -1
                out.append((xp, 1.0 / c_here, float(np.log(c_here / n_conn(xp)))))
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    return out


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------

def init_chains(rbm: Rbm, cfg: SamplerConfig, seed=None) -> List[ChainState]:
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    sector = cfg.sector(rbm.n_sites)
    states = []
    for child in seq.spawn(cfg.n_chains):
        rng = np.random.default_rng(child)
        x = random_config(rbm.n_sites, sector, rng)
        states.append(ChainState.start(rbm, x, rng))
    return states


def run_chain(rbm: Rbm, cfg: SamplerConfig, ham: Optional[PauliHamiltonian] = None,
              states: Optional[List[ChainState]] = None, seed=None) -> SampleBatch:
    """Draw ``cfg.n_samples`` samples split over ``cfg.n_chains`` chains.

    Each chain first performs ``burn_in_sweeps`` sweeps of N proposals and then
    records one sample every ``cfg.interval(N)`` proposals.  Passing the
    ``chains`` of a previous batch continues those chains (their lookup tables
    are rebuilt for the new parameters).
    """
    cfg.validate()
    start = time.perf_counter()
    n = rbm.n_sites
    if states is None:
        states = init_chains(rbm, cfg, seed)
    else:
        for st in states:
            st.resync(rbm)
    if cfg.n_samples == 0:
        return SampleBatch(np.zeros((0, n), np.int8), np.zeros(0, complex),
                           t_s=time.perf_counter() - start, chains=states)
    runner = ChainRunner(rbm, cfg.kernel, ham)
    per_chain = np.full(len(states), cfg.n_samples // len(states))
    per_chain[: cfg.n_samples % len(states)] += 1
    burn = cfg.burn_in_sweeps * n
    interval = cfg.interval(n)
    xs, amps = [], []
    acc0 = sum(s.accepted for s in states)
    prop0 = sum(s.proposed for s in states)
    for st, k in zip(states, per_chain):
        if k == 0:
            continue
        out_x, out_amp = runner.run(st, burn + int(k) * interval, burn, interval, int(k),
                                    resync=cfg.resync_sweeps * n)
        xs.append(out_x)
        amps.append(out_amp)
    acc = sum(s.accepted for s in states) - acc0
    prop = sum(s.proposed for s in states) - prop0
    return SampleBatch(
        configs=np.concatenate(xs),
        log_psi=np.concatenate(amps),
        t_s=time.perf_counter() - start,
        accept_rate=acc / prop if prop else float("nan"),
        chains=states,
    )
