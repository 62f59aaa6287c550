import warnings
from functools import reduce

import numpy as np
import pytest

PAULI = {
    "I": np.eye(2),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.diag([1.0, -1.0]).astype(complex),
}


def kron_string(n, factors):
    """Dense 2^n matrix of a Pauli string {site: 'X'|'Y'|'Z'}, site 0 leftmost."""
    return reduce(np.kron, [PAULI[factors.get(i, "I")] for i in range(n)])


def dense_tfi(n, h):
    """Independent dense TFI: -sum_i Z_i Z_{i+1} - h sum_i X_i on a ring."""
    mat = np.zeros((1 << n, 1 << n), dtype=complex)
    for i in range(n):
        j = (i + 1) % n
        if i == j:
            continue
        mat -= kron_string(n, {i: "Z", j: "Z"})
        mat -= h * kron_string(n, {i: "X"})
    return mat


def dense_heisenberg(n, j2):
    mat = np.zeros((1 << n, 1 << n), dtype=complex)
    for dist, coupling in ((1, 1.0), (2, j2)):
        for i in range(n):
            for p in "XYZ":
                mat += coupling * kron_string(n, {i: p, (i + dist) % n: p})
    return mat


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_runtime_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield
