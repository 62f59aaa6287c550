import logging

import numpy as np
import pytest

from conftest import dense_tfi
from lmnqs.estimators import (
    SrSystem,
    assemble_lm,
    assemble_sr,
    compute_local_quantities,
    exact_batch,
    exact_energy,
    exact_expectations,
    local_energies,
    local_energy,
    local_energy_derivatives,
)
from lmnqs.hilbert import ResourceError, enumerate_basis
from lmnqs.operators import build_j1j2, build_tfi, marshall_transform
from lmnqs.oracle import exact_ground_state, tangent_space_matrices
from lmnqs.sampling import SampleBatch
from lmnqs.wavefunction import LogAmplitudeTable, Rbm

# exact energy of the constant wavefunction for TFI(N=2, h=1), from a 4x4 dense product
E_CONST_TFI_N2 = -2.0


def _rbm(n, seed, symmetric=False, scale=0.2):
    return Rbm.random(n, 2, symmetric, rng=np.random.default_rng(seed), scale=scale)


def _ground_table(ham):
    sol = exact_ground_state(ham)
    psi = sol.ground_vector * np.exp(-1j * np.angle(sol.ground_vector[np.argmax(np.abs(sol.ground_vector))]))
    return sol.E0, LogAmplitudeTable.from_vector(ham.n_sites, psi)


def _batch(x, wf):
    return SampleBatch(configs=np.asarray(x, dtype=np.int8), log_psi=wf.log_psi(x))


# -- local energy --------------------------------------------------------------

def test_local_energy_classical_point():
    rbm = _rbm(4, 0)
    assert local_energy(build_tfi(4, 0.0), rbm, np.ones(4, dtype=np.int8)) == pytest.approx(-4.0)


def test_local_energy_constant_wavefunction():
    h = 0.7
    x = enumerate_basis(5)
    got = local_energies(build_tfi(5, h), Rbm(5, 2), x)
    expected = -np.sum(x * np.roll(x, -1, axis=1), axis=1) - h * 5
    assert np.allclose(got, expected)


@pytest.mark.parametrize("n,h", [(3, 1.0), (4, 0.6)])
def test_local_energy_matches_dense_ratio(n, h):
    rbm = _rbm(n, 1, scale=0.4)
    x = enumerate_basis(n)
    psi = np.exp(rbm.log_psi(x))
    expected = (dense_tfi(n, h) @ psi) / psi
    assert np.allclose(local_energies(build_tfi(n, h), rbm, x), expected, atol=1e-12)


def test_local_energy_exact_eigenstate_constant():
    ham = build_tfi(4, 1.0)
    e0, table = _ground_table(ham)
    eloc = local_energies(ham, table, enumerate_basis(4))
    assert np.allclose(eloc, e0, atol=1e-10)


def test_nonfinite_samples_dropped(caplog):
    ham = build_tfi(2, 1.0)
    psi = np.array([1.0, 0.5, 0.0, 0.5])
    table = LogAmplitudeTable.from_vector(2, psi)
    batch = _batch(enumerate_basis(2), table)
    with caplog.at_level(logging.WARNING):
        compute_local_quantities(batch, ham, table)
    assert len(batch) == 3 and np.all(np.isfinite(batch.eloc))
    assert "non-finite" in caplog.text


def test_spikes_logged_and_retained(caplog):
    ham = build_tfi(2, 1.0)
    table = LogAmplitudeTable.from_vector(2, np.array([1.0, 1e-5, 1e-5, 1.0]))
    x = np.repeat(enumerate_basis(2), [400, 1, 1, 400], axis=0)
    batch = _batch(x, table)
    with caplog.at_level(logging.WARNING):
        compute_local_quantities(batch, ham, table)
    assert len(batch) == 802
    assert "spike" in caplog.text


# -- local energy derivatives ----------------------------------------------------

def test_eloc_derivs_mean_vanishes_at_eigenstate():
    # pointwise values are nonzero; only the Born average vanishes for Hermitian H
    ham = build_tfi(3, 0.8)
    _, table = _ground_table(ham)
    x = enumerate_basis(3)
    out = local_energy_derivatives(ham, table, x)
    born = np.exp(2 * table.log_psi(x).real)
    born /= born.sum()
    assert np.abs(born @ out).max() < 1e-12
    assert np.abs(out).max() > 0.1


def test_eloc_derivs_zero_for_diagonal_hamiltonian():
    rbm = _rbm(4, 2)
    out = local_energy_derivatives(build_tfi(4, 0.0), rbm, enumerate_basis(4))
    assert np.abs(out).max() < 1e-12


@pytest.mark.parametrize("symmetric", [False, True])
def test_eloc_derivs_finite_difference(symmetric):
    ham = build_tfi(4, 1.0)
    rbm = _rbm(4, 3, symmetric, scale=0.3)
    x = enumerate_basis(4)[[0, 5, 11]]
    got = local_energy_derivatives(ham, rbm, x)
    eps = 1e-5
    for k in range(rbm.n_var):
        e = np.zeros(rbm.n_var, dtype=complex)
        e[k] = eps
        fd = (local_energies(ham, rbm.with_params(rbm.params + e), x)
              - local_energies(ham, rbm.with_params(rbm.params - e), x)) / (2 * eps)
        assert np.abs(fd - got[:, k]).max() < 1e-6


# -- SR system -------------------------------------------------------------------

def test_identical_samples_give_zero_covariances():
    ham = build_tfi(4, 1.0)
    rbm = _rbm(4, 4)
    x = np.tile(np.array([1, -1, 1, 1], dtype=np.int8), (7, 1))
    batch = compute_local_quantities(_batch(x, rbm), ham, rbm, with_eloc_derivs=True)
    sr = assemble_sr(batch)
    assert np.abs(sr.S).max() < 1e-14 and np.abs(sr.f).max() < 1e-12
    lm = assemble_lm(batch, sr)
    assert np.abs(lm.H_bar[1:, 1:]).max() < 1e-12
    assert np.abs(lm.H_bar[1:, 0]).max() < 1e-12
    assert lm.H_bar[0, 0] == pytest.approx(batch.eloc[0])


def test_constant_wavefunction_visible_block_identity():
    sr, _, _ = exact_expectations(build_tfi(3, 1.0), Rbm(3, 2), with_lm=False)
    assert np.allclose(sr.S[:3, :3], np.eye(3), atol=1e-14)


def test_exact_energy_constant_wavefunction():
    assert exact_energy(build_tfi(2, 1.0), Rbm(2, 2)) == pytest.approx(E_CONST_TFI_N2, abs=1e-12)


def test_fisher_hermitian_psd_and_matvec():
    sr, _, _ = exact_expectations(build_tfi(4, 1.0), _rbm(4, 5), with_lm=False)
    assert np.array_equal(sr.S, sr.S.conj().T)
    ev = np.linalg.eigvalsh(sr.S)
    assert ev.min() >= -1e-10 * np.abs(ev).max()
    v = np.random.default_rng(0).normal(size=sr.n_var) + 0j
    assert np.allclose(sr.matvec(v), sr.S @ v)
    dense_only = SrSystem(S=sr.S, f=sr.f)
    assert np.allclose(dense_only.matvec(v), sr.S @ v)


def _exact_energy_with(ham, wf, k, delta):
    p = wf.params.copy()
    p[k] += delta
    return exact_energy(ham, wf.with_params(p))


def test_force_is_gradient_real_axis():
    ham = build_tfi(4, 1.0)
    wf = _rbm(4, 6)
    sr, _, _ = exact_expectations(ham, wf, with_lm=False)
    eps = 1e-5
    for k in range(0, wf.n_var, 5):
        change = _exact_energy_with(ham, wf, k, eps) - _exact_energy_with(ham, wf, k, 0.0)
        assert change == pytest.approx(2 * eps * sr.f[k].real, abs=10 * eps ** 2)


def test_force_wirtinger_gradient_random_points():
    ham = build_tfi(4, 1.0)
    eps = 1e-5
    for seed in range(20):
        wf = _rbm(4, 100 + seed, symmetric=bool(seed % 2), scale=0.2)
        sr, _, _ = exact_expectations(ham, wf, with_lm=False)
        grad = np.empty(wf.n_var, dtype=complex)
        for k in range(wf.n_var):
            d_re = (_exact_energy_with(ham, wf, k, eps) - _exact_energy_with(ham, wf, k, -eps)) / (2 * eps)
            d_im = (_exact_energy_with(ham, wf, k, 1j * eps) - _exact_energy_with(ham, wf, k, -1j * eps)) / (2 * eps)
            grad[k] = 0.5 * (d_re + 1j * d_im)
        assert np.linalg.norm(sr.f - grad) <= 1e-4 * np.linalg.norm(grad)


def test_stochastic_estimates_converge_to_exact():
    ham = build_tfi(3, 1.0)
    wf = _rbm(3, 7, symmetric=True, scale=0.4)
    sr_ex, _, _ = exact_expectations(ham, wf, with_lm=False)
    basis = enumerate_basis(3)
    p = np.exp(2 * wf.log_psi(basis).real)
    p /= p.sum()
    draws = np.random.default_rng(1).choice(len(basis), size=1_000_000, p=p)
    batch = compute_local_quantities(_batch(basis[draws], wf), ham, wf)
    sr = assemble_sr(batch)
    n = len(batch)
    o = batch.derivs - batch.derivs.mean(axis=0)
    e = batch.eloc - batch.eloc.mean()
    s_terms = o.conj()[:, :, None] * o[:, None, :]
    s_err = np.sqrt(s_terms.real.var(axis=0) / n) + 1j * np.sqrt(s_terms.imag.var(axis=0) / n)
    f_terms = o.conj() * e[:, None]
    f_err = np.sqrt(f_terms.real.var(axis=0) / n) + 1j * np.sqrt(f_terms.imag.var(axis=0) / n)
    assert np.all(np.abs((sr.S - sr_ex.S).real) <= 5 * s_err.real + 1e-12)
    assert np.all(np.abs((sr.S - sr_ex.S).imag) <= 5 * s_err.imag + 1e-12)
    assert np.all(np.abs((sr.f - sr_ex.f).real) <= 5 * f_err.real + 1e-12)
    assert np.all(np.abs((sr.f - sr_ex.f).imag) <= 5 * f_err.imag + 1e-12)


# -- LM system -------------------------------------------------------------------

def _dense_tangent(ham_dense, wf, n):
    """Independent dense construction of (S_bar, H_bar) from the state vector."""
    x = enumerate_basis(n)
    psi = np.exp(wf.log_psi(x))
    dpsi = psi[:, None] * wf.log_derivatives(x)
    nrm = np.linalg.norm(psi)
    e0 = psi / nrm
    vecs = [e0]
    for k in range(dpsi.shape[1]):
        v = dpsi[:, k] / nrm
        vecs.append(v - e0 * np.vdot(e0, v))
    b = np.array(vecs).T
    return b.conj().T @ b, b.conj().T @ ham_dense @ b


@pytest.mark.parametrize("symmetric", [False, True])
def test_lm_matrices_match_dense_algebra(symmetric):
    ham = build_tfi(3, 1.0)
    wf = _rbm(3, 8, symmetric, scale=0.4)
    _, lm, energy = exact_expectations(ham, wf)
    s_ref, h_ref = _dense_tangent(dense_tfi(3, 1.0), wf, 3)
    assert np.abs(lm.S_bar - s_ref).max() < 1e-10
    assert np.abs(lm.H_bar - h_ref).max() < 1e-10
    assert lm.H_bar[0, 0].real == pytest.approx(energy)
    s_pkg, h_pkg = tangent_space_matrices(dense_tfi(3, 1.0), np.exp(wf.log_psi(enumerate_basis(3))),
                                          np.exp(wf.log_psi(enumerate_basis(3)))[:, None]
                                          * wf.log_derivatives(enumerate_basis(3)))
    assert np.allclose(s_pkg, s_ref) and np.allclose(h_pkg, h_ref)


def test_lm_structure_and_shared_block():
    ham = marshall_transform(build_j1j2(4, 0.2))
    wf = _rbm(4, 9, scale=0.3)
    sr, lm, _ = exact_expectations(ham, wf)
    assert lm.S_bar[0, 0] == 1
    assert np.all(lm.S_bar[0, 1:] == 0) and np.all(lm.S_bar[1:, 0] == 0)
    assert np.array_equal(lm.S_bar[1:, 1:], sr.S)
    assert np.array_equal(lm.H_bar[1:, 0], sr.f)


def test_zero_variance_principle():
    ham = build_tfi(4, 1.0)
    e0, table = _ground_table(ham)
    batch = compute_local_quantities(exact_batch(table, 4), ham, table, with_eloc_derivs=True)
    sr = assemble_sr(batch)
    lm = assemble_lm(batch, sr)
    var = batch.weights @ np.abs(batch.eloc - sr.energy) ** 2
    assert var < 1e-20
    assert np.linalg.norm(sr.f) < 1e-10
    assert np.abs(lm.H_bar[0, 1:]).max() < 1e-10
    assert np.abs(lm.H_bar[1:, 0]).max() < 1e-10
    assert lm.H_bar[0, 0].real == pytest.approx(e0, abs=1e-10)
    assert exact_energy(ham, table) == pytest.approx(e0, abs=1e-10)


def test_errors():
    rbm = _rbm(3, 0)
    empty = SampleBatch(np.zeros((0, 3), np.int8), np.zeros(0, complex))
    empty.eloc = np.zeros(0, complex)
    empty.derivs = np.zeros((0, rbm.n_var), complex)
    with pytest.raises(ValueError):
        assemble_sr(empty)
    with pytest.raises(ValueError):
        assemble_sr(_batch(enumerate_basis(3), rbm))
    batch = compute_local_quantities(_batch(enumerate_basis(3), rbm), build_tfi(3, 1.0), rbm)
    with pytest.raises(ValueError):
        assemble_lm(batch)
    with pytest.raises(ResourceError):
        exact_batch(Rbm(15, 1), 15)
