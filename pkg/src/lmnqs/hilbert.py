"""Spin-1/2 configurations, symmetry sectors and basis enumeration.

A configuration is a 1-D ``int8`` array of Pauli-Z eigenvalues (+1/-1),
site 0 first.  Internally +1 maps to bit 0 and -1 to bit 1, and the
canonical basis order is lexicographic in that bit string with site 0 as
the most significant bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

DEFAULT_MAX_SITES = 16


class ResourceError(RuntimeError):
    """Requested object is too large for dense treatment."""


@dataclass(frozen=True)
class SymmetrySector:
    """Subspace selector for basis enumeration and chain initialisation.

    ``kind`` is one of ``"unrestricted"``, ``"magnetization"`` (total
    ``sum(x) == value``) or ``"occupation"`` (number of sites at -1, i.e.
    occupied fermionic modes under the Jordan-Wigner encoding, equals
    ``value``).
    """

    kind: str = "unrestricted"
    value: Optional[int] = None

    @classmethod
    def unrestricted(cls) -> "SymmetrySector":
        return cls("unrestricted", None)

    @classmethod
    def magnetization(cls, mz: int) -> "SymmetrySector":
        return cls("magnetization", int(mz))

    @classmethod
    def occupation(cls, n: int) -> "SymmetrySector":
        return cls("occupation", int(n))

    def n_down(self, n_sites: int) -> Optional[int]:
        """Number of -1 sites fixed by the sector (None if unrestricted)."""
        if self.kind == "unrestricted":
            return None
        if self.kind == "magnetization":
            return (n_sites - self.value) // 2
        if self.kind == "occupation":
            return self.value
        raise ValueError(f"unknown sector kind {self.kind!r}")

    def validate(self, n_sites: int) -> None:
        if n_sites <= 0:
            raise ValueError("number of sites must be positive")
        if self.kind == "unrestricted":
            return
        if self.value is None:
            raise ValueError(f"sector {self.kind!r} needs a value")
        if self.kind == "magnetization":
            if abs(self.value) > n_sites or (n_sites - self.value) % 2:
                raise ValueError(
                    f"magnetization {self.value} impossible for {n_sites} sites"
                )
        elif self.kind == "occupation":
            if not 0 <= self.value <= n_sites:
                raise ValueError(
                    f"occupation {self.value} impossible for {n_sites} sites"
                )
        else:
            raise ValueError(f"unknown sector kind {self.kind!r}")

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Boolean mask (or scalar) telling which configurations lie in the sector."""
        x = np.asarray(x)
        if self.kind == "unrestricted":
            return np.ones(x.shape[:-1], dtype=bool) if x.ndim > 1 else np.bool_(True)
        n_dn = self.n_down(x.shape[-1])
        return np.sum(x < 0, axis=-1) == n_dn


UNRESTRICTED = SymmetrySector.unrestricted()


def to_bits(x: np.ndarray) -> np.ndarray:
    return ((1 - np.asarray(x, dtype=np.int64)) // 2).astype(np.int64)


def from_bits(bits: np.ndarray) -> np.ndarray:
    return (1 - 2 * np.asarray(bits, dtype=np.int64)).astype(np.int8)


def basis_index(x: np.ndarray) -> np.ndarray:
    """Index of configuration(s) in the unrestricted canonical order."""
    bits = to_bits(x)
    n = bits.shape[-1]
    weights = 1 << np.arange(n - 1, -1, -1, dtype=np.int64)
    return bits @ weights


def index_to_config(index, n_sites: int) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    shifts = np.arange(n_sites - 1, -1, -1, dtype=np.int64)
    bits = (index[..., None] >> shifts) & 1
    return from_bits(bits)


def enumerate_basis(
    n_sites: int,
    sector: SymmetrySector = UNRESTRICTED,
    max_sites: int = DEFAULT_MAX_SITES,
) -> np.ndarray:
    """All configurations of the sector as a ``(dim, n_sites)`` int8 array.

    Rows follow the canonical order (+1 < -1, site 0 most significant).
    """
    sector.validate(n_sites)
    if n_sites > max_sites:
        raise ResourceError(
            f"basis enumeration for {n_sites} sites exceeds cap of {max_sites}"
        )
    configs = index_to_config(np.arange(1 << n_sites), n_sites)
    if sector.kind != "unrestricted":
        configs = configs[sector.contains(configs)]
    return configs


def translate(x: np.ndarray, shift: int) -> np.ndarray:
    """Cyclic shift: site ``i`` of the result holds ``x[i - shift]``."""
    return np.roll(np.asarray(x), shift, axis=-1)


def magnetization(x: np.ndarray) -> np.ndarray:
    return np.sum(np.asarray(x, dtype=np.int64), axis=-1)


def random_config(
    n_sites: int,
    sector: SymmetrySector = UNRESTRICTED,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Uniform random configuration inside ``sector``."""
    if rng is None:
        rng = np.random.default_rng()
    try:
        sector.validate(n_sites)
    except ValueError as exc:
        raise ValueError(f"empty sector: {exc}") from exc
    n_dn = sector.n_down(n_sites)
    if n_dn is None:
        return rng.choice(np.array([1, -1], dtype=np.int8), size=n_sites)
    x = np.ones(n_sites, dtype=np.int8)
    x[rng.permutation(n_sites)[:n_dn]] = -1
    return x


def config_to_string(x: np.ndarray) -> str:
    return "".join("+" if s > 0 else "-" for s in np.asarray(x))


def config_from_string(s: str) -> np.ndarray:
    table = {"+": 1, "-": -1}
    try:
        return np.array([table[c] for c in s.strip()], dtype=np.int8)
    except KeyError as exc:
        raise ValueError(f"invalid configuration string {s!r}") from exc
