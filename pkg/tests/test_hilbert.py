import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmnqs.hilbert import (
    ResourceError,
    SymmetrySector,
    basis_index,
    config_from_string,
    config_to_string,
    enumerate_basis,
    index_to_config,
    magnetization,
    random_config,
    translate,
)


def test_enumerate_sizes():
    assert enumerate_basis(2).shape == (4, 2)
    assert enumerate_basis(4, SymmetrySector.magnetization(0)).shape == (6, 4)
    assert enumerate_basis(10).shape == (1024, 10)


def test_enumerate_order_and_values():
    basis = enumerate_basis(2)
    assert basis.tolist() == [[1, 1], [1, -1], [-1, 1], [-1, -1]]
    full = enumerate_basis(5)
    assert np.array_equal(basis_index(full), np.arange(32))
    assert set(np.unique(full)) == {-1, 1}


def test_enumerate_distinct():
    basis = enumerate_basis(8)
    assert len({tuple(r) for r in basis}) == 256


def test_enumerate_cap():
    with pytest.raises(ResourceError):
        enumerate_basis(17)
    with pytest.raises(ResourceError):
        enumerate_basis(6, max_sites=5)


def test_sector_validation():
    with pytest.raises(ValueError):
        enumerate_basis(4, SymmetrySector.magnetization(1))
    with pytest.raises(ValueError):
        enumerate_basis(4, SymmetrySector.magnetization(6))
    with pytest.raises(ValueError):
        enumerate_basis(3, SymmetrySector.occupation(4))


def test_occupation_sector_counts_down_sites():
    basis = enumerate_basis(4, SymmetrySector.occupation(1))
    assert basis.shape == (4, 4)
    assert np.all(np.sum(basis < 0, axis=1) == 1)


def test_translate_examples():
    x = np.array([1, -1, -1, 1])
    assert translate(x, 1).tolist() == [1, 1, -1, -1]
    assert translate(x, 0).tolist() == x.tolist()
    y = np.array([1, -1])
    assert translate(translate(y, 1), 1).tolist() == [1, -1]
    assert translate(x, 4).tolist() == x.tolist()


@given(st.lists(st.sampled_from([-1, 1]), min_size=1, max_size=12), st.integers(-20, 20))
def test_translate_preserves_magnetization(spins, shift):
    x = np.array(spins, dtype=np.int8)
    assert magnetization(translate(x, shift)) == magnetization(x)


def test_random_config_sector_and_determinism():
    sec = SymmetrySector.magnetization(0)
    x = random_config(4, sec, np.random.default_rng(3))
    assert sorted(x.tolist()) == [-1, -1, 1, 1]
    y = random_config(4, sec, np.random.default_rng(3))
    assert np.array_equal(x, y)
    assert random_config(1, rng=np.random.default_rng(0)).tolist() in ([1], [-1])


def test_random_config_empty_sector():
    with pytest.raises(ValueError):
        random_config(3, SymmetrySector.magnetization(0), np.random.default_rng(0))


def test_random_config_uniform_over_sector():
    rng = np.random.default_rng(11)
    sec = SymmetrySector.magnetization(0)
    n_draws = 10_000
    counts = {}
    for _ in range(n_draws):
        key = tuple(random_config(4, sec, rng))
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 6
    p = 1 / 6
    sigma = np.sqrt(n_draws * p * (1 - p))
    for c in counts.values():
        assert abs(c - n_draws * p) < 5 * sigma


@settings(max_examples=50)
@given(st.integers(1, 10), st.data())
def test_index_roundtrip(n, data):
    idx = data.draw(st.integers(0, (1 << n) - 1))
    assert basis_index(index_to_config(idx, n)) == idx


def test_string_roundtrip():
    x = np.array([1, -1, -1, 1], dtype=np.int8)
    assert config_to_string(x) == "+--+"
    assert np.array_equal(config_from_string("+--+"), x)
    with pytest.raises(ValueError):
        config_from_string("+0-")
