import json
from pathlib import Path

import numpy as np
import pytest

from conftest import dense_heisenberg, dense_tfi
from lmnqs.hilbert import ResourceError, SymmetrySector
from lmnqs.operators import build_j1j2, build_tfi, marshall_transform
from lmnqs.oracle import exact_ground_state, relative_error

FIXTURE = Path(__file__).parent / "fixtures" / "oracle_energies.jsonl"

# dense eigensolve of an independently assembled 4x4 matrix
E0_TFI_N2_H1 = -2.8284271247461894


def free_fermion_tfi(n: int, h: float) -> float:
    """Ground energy of the periodic TFI chain from its free-fermion dispersion."""
    k = (2 * np.arange(n) + 1) * np.pi / n
    return -float(np.sum(np.sqrt(1 + h * h - 2 * h * np.cos(k))))


def _fixture_rows():
    return [json.loads(line) for line in FIXTURE.read_text().splitlines() if line.strip()]


def test_classical_point():
    sol = exact_ground_state(build_tfi(4, 0.0))
    assert sol.E0 == pytest.approx(-4.0, abs=1e-12)
    assert sol.degeneracy == 2


def test_two_site_tfi():
    assert exact_ground_state(build_tfi(2, 1.0)).E0 == pytest.approx(E0_TFI_N2_H1, abs=1e-12)


def test_heisenberg_ring():
    assert exact_ground_state(build_j1j2(4, 0.0)).E0 == pytest.approx(-8.0, abs=1e-12)


def test_residual_of_eigenvector():
    ham = build_tfi(6, 0.7)
    sol = exact_ground_state(ham)
    mat = ham.to_dense()
    v = sol.full_vector(6)
    assert np.linalg.norm(mat @ v - sol.E0 * v) <= 1e-9 * np.linalg.norm(mat, 2)


def test_iterative_branch_matches_free_fermions():
    # dimension 2^13 exceeds the dense threshold
    sol = exact_ground_state(build_tfi(13, 0.8), with_vector=False)
    assert sol.E0 == pytest.approx(free_fermion_tfi(13, 0.8), abs=1e-9)


@pytest.mark.parametrize("n", [6, 8])
def test_sector_minimum_equals_unrestricted(n):
    ham = build_j1j2(n, 0.3)
    full = exact_ground_state(ham, with_vector=False).E0
    sectors = [exact_ground_state(ham, SymmetrySector.magnetization(m), with_vector=False).E0
               for m in range(-n, n + 1, 2)]
    assert min(sectors) == pytest.approx(full, abs=1e-9)


def test_marshall_preserves_spectrum():
    ham = build_j1j2(8, 0.4)
    a = exact_ground_state(ham, with_vector=False).E0
    b = exact_ground_state(marshall_transform(ham), with_vector=False).E0
    assert a == pytest.approx(b, abs=1e-9)


def test_size_cap():
    with pytest.raises(ResourceError):
        exact_ground_state(build_tfi(17, 1.0))


def test_relative_error():
    assert relative_error(-4.0, -4.0) == 0
    assert relative_error(-3.992, -4.0) == pytest.approx(0.002)
    assert relative_error(-3.992, -4.0) <= 2e-3 + 1e-15
    with pytest.raises(ValueError):
        relative_error(-1.0, 0.0)


@pytest.mark.parametrize("row", [r for r in _fixture_rows() if r["model"] == "tfi"],
                         ids=lambda r: f"tfi-N{r['N']}-h{r['param']}")
def test_fixture_tfi_against_independent_references(row):
    n, h = row["N"], row["param"]
    assert row["E0"] == pytest.approx(free_fermion_tfi(n, h), abs=1e-9)
    if n <= 8:
        assert row["E0"] == pytest.approx(np.linalg.eigvalsh(dense_tfi(n, h))[0], abs=1e-9)


@pytest.mark.parametrize("row", [r for r in _fixture_rows() if r["model"] == "j1j2"],
                         ids=lambda r: f"j1j2-N{r['N']}-j2{r['param']}")
def test_fixture_j1j2_against_dense_kron(row):
    ref = np.linalg.eigvalsh(dense_heisenberg(row["N"], row["param"]))[0]
    assert row["E0"] == pytest.approx(ref, abs=1e-9)
