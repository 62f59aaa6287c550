"""Pauli-string Hamiltonians, lattice model builders, Jordan-Wigner mapping
and the line-oriented Hamiltonian text format.

Basis convention: site value +1 is the Z=+1 state |0>, -1 is |1>.  For a
Pauli string the row ``x`` has exactly one non-zero column ``x'`` (``x``
with the X/Y sites flipped) and

    <x|P|x'> = c * prod_{Z,Y sites} x_i * (-i)^{#Y}.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property, reduce
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .hilbert import (
    UNRESTRICTED,
    ResourceError,
    SymmetrySector,
    basis_index,
    enumerate_basis,
)

DROP_TOL = 1e-14
DENSE_MAX_SITES = 12

_PRODUCT = {
    ("X", "X"): (1, None), ("Y", "Y"): (1, None), ("Z", "Z"): (1, None),
    ("X", "Y"): (1j, "Z"), ("Y", "X"): (-1j, "Z"),
    ("Y", "Z"): (1j, "X"), ("Z", "Y"): (-1j, "X"),
    ("Z", "X"): (1j, "Y"), ("X", "Z"): (-1j, "Y"),
}

_MATRICES = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

Key = Tuple[Tuple[int, str], ...]


class HamiltonianValidationError(ValueError):
    pass


class PauliParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class PauliString:
    """Sparse Pauli product: ``factors`` maps site -> 'X' | 'Y' | 'Z'."""

    factors: Key
    coefficient: complex = 1.0

    @classmethod
    def from_dict(cls, factors: Mapping[int, str], coefficient: complex = 1.0) -> "PauliString":
        for site, op in factors.items():
            if op not in ("X", "Y", "Z"):
                raise ValueError(f"invalid Pauli operator {op!r}")
            if site < 0:
                raise ValueError("site indices must be non-negative")
        return cls(tuple(sorted((int(s), op) for s, op in factors.items())), complex(coefficient))

    @property
    def sites(self) -> Tuple[int, ...]:
        return tuple(s for s, _ in self.factors)

    def __str__(self) -> str:
        ops = " ".join(f"{op}{s}" for s, op in self.factors)
        return f"({_format_coefficient(self.coefficient)}) {ops}".rstrip()


def _multiply_keys(k1: Key, k2: Key) -> Tuple[complex, Key]:
    phase = 1 + 0j
    merged: Dict[int, str] = dict(k1)
    for site, op in k2:
        if site in merged:
            ph, res = _PRODUCT[(merged[site], op)]
            phase *= ph
            if res is None:
                del merged[site]
            else:
                merged[site] = res
        else:
            merged[site] = op
    return phase, tuple(sorted(merged.items()))


class PauliHamiltonian:
    """Weighted sum of Pauli strings on ``n_sites`` spins.

    Terms are canonical at all times: duplicate strings are merged and
    coefficients with modulus below 1e-14 are dropped.  Instances are
    treated as immutable.
    """

    def __init__(self, n_sites: int, terms: Union[Mapping[Key, complex], Iterable[PauliString]] = ()):
        if n_sites <= 0:
            raise ValueError("n_sites must be positive")
        self.n_sites = int(n_sites)
        acc: Dict[Key, complex] = {}
        items = terms.items() if isinstance(terms, Mapping) else ((t.factors, t.coefficient) for t in terms)
        for key, coef in items:
            for site, _ in key:
                if site >= self.n_sites:
                    raise ValueError(f"site {site} out of range for {self.n_sites} sites")
            if len({s for s, _ in key}) != len(key):
                raise ValueError(f"repeated site in Pauli string {key}")
            acc[key] = acc.get(key, 0j) + complex(coef)
        self._terms = {k: c for k, c in acc.items() if abs(c) >= DROP_TOL}

    # -- container protocol -------------------------------------------------
    @property
    def terms(self) -> List[PauliString]:
        return [PauliString(k, c) for k, c in self._terms.items()]

    def coefficients(self) -> Dict[Key, complex]:
        return dict(self._terms)

    def __len__(self) -> int:
        return len(self._terms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PauliHamiltonian):
            return NotImplemented
        return self.n_sites == other.n_sites and self._terms == other._terms

    def isclose(self, other: "PauliHamiltonian", atol: float = 1e-12) -> bool:
        if self.n_sites != other.n_sites:
            return False
        keys = set(self._terms) | set(other._terms)
        return all(abs(self._terms.get(k, 0) - other._terms.get(k, 0)) <= atol for k in keys)

    def __repr__(self) -> str:
        return f"PauliHamiltonian(n_sites={self.n_sites}, n_terms={len(self)})"

    # -- algebra ------------------------------------------------------------
    def __add__(self, other: "PauliHamiltonian") -> "PauliHamiltonian":
        self._check_compatible(other)
        acc = dict(self._terms)
        for k, c in other._terms.items():
            acc[k] = acc.get(k, 0j) + c
        return PauliHamiltonian(self.n_sites, acc)

    def __sub__(self, other: "PauliHamiltonian") -> "PauliHamiltonian":
        return self + (-1.0) * other

    def __mul__(self, other):
        if isinstance(other, PauliHamiltonian):
            self._check_compatible(other)
            acc: Dict[Key, complex] = {}
            for k1, c1 in self._terms.items():
                for k2, c2 in other._terms.items():
                    phase, key = _multiply_keys(k1, k2)
                    acc[key] = acc.get(key, 0j) + phase * c1 * c2
            return PauliHamiltonian(self.n_sites, acc)
        return PauliHamiltonian(self.n_sites, {k: c * other for k, c in self._terms.items()})

    __rmul__ = __mul__

    def adjoint(self) -> "PauliHamiltonian":
        return PauliHamiltonian(self.n_sites, {k: np.conj(c) for k, c in self._terms.items()})

    def _check_compatible(self, other: "PauliHamiltonian") -> None:
        if self.n_sites != other.n_sites:
            raise ValueError("Hamiltonians act on different numbers of sites")

    def is_hermitian(self, atol: float = 1e-12) -> bool:
        """Pauli strings are Hermitian and linearly independent, so the sum is
        Hermitian iff every canonical coefficient is real."""
        return all(abs(c.imag) <= atol for c in self._terms.values())

    # -- matrix elements ----------------------------------------------------
    @cached_property
    def compiled(self) -> "CompiledHamiltonian":
        return CompiledHamiltonian.build(self)

    def connected_states(self, x: np.ndarray) -> List[Tuple[np.ndarray, complex]]:
        """All ``(x', <x|H|x'>)`` with non-zero element, diagonal included."""
        x = np.asarray(x, dtype=np.int8)
        comp = self.compiled
        elems = comp.elements(x[None, :])[0]
        out = []
        for m, val in enumerate(elems):
            if abs(val) < DROP_TOL:
                continue
            xp = x.copy()
            xp[comp.masks[m]] *= -1
            out.append((xp, complex(val)))
        return out

    def to_dense(self) -> np.ndarray:
        """Dense matrix assembled term by term from Kronecker products."""
        if self.n_sites > DENSE_MAX_SITES:
            raise ResourceError(f"dense matrix for {self.n_sites} sites is too large")
        dim = 1 << self.n_sites
        mat = np.zeros((dim, dim), dtype=complex)
        for key, coef in self._terms.items():
            ops = dict(key)
            factors = [_MATRICES[ops.get(i, "I")] for i in range(self.n_sites)]
            mat += coef * reduce(np.kron, factors)
        return mat

    def to_sparse(self, sector: SymmetrySector = UNRESTRICTED) -> sp.csr_matrix:
        """Sparse matrix in the sector basis, built from connected states.

        Raises ``ValueError`` when the Hamiltonian couples the sector to its
        complement.
        """
        basis = enumerate_basis(self.n_sites, sector)
        dim = basis.shape[0]
        full_index = basis_index(basis)
        lookup = -np.ones(1 << self.n_sites, dtype=np.int64)
        lookup[full_index] = np.arange(dim)
        comp = self.compiled
        elems = comp.elements(basis)
        rows, cols, vals = [], [], []
        for m in range(comp.n_masks):
            nz = np.abs(elems[:, m]) >= DROP_TOL
            if not np.any(nz):
                continue
            flipped = basis[nz].copy()
            flipped[:, comp.masks[m]] *= -1
            target = lookup[basis_index(flipped)]
            if np.any(target < 0):
                raise ValueError("Hamiltonian does not conserve the requested sector")
            rows.append(np.nonzero(nz)[0])
            cols.append(target)
            vals.append(elems[nz, m])
        if not rows:
            return sp.csr_matrix((dim, dim), dtype=complex)
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(dim, dim),
        )


@dataclass
class CompiledHamiltonian:
    """Vectorised form: terms grouped by the set of sites they flip."""

    n_sites: int
    masks: np.ndarray          # (n_masks, N) bool; sites flipped by each group
    sign_sites: np.ndarray     # (n_terms, N) int64; 1 where factor is Z or Y
    term_coef: np.ndarray      # (n_terms,) coefficient times (-i)^{#Y}
    term_mask: np.ndarray      # (n_terms,) group index of each term
    grouping: np.ndarray = field(repr=False)  # (n_terms, n_masks) indicator

    @classmethod
    def build(cls, ham: PauliHamiltonian) -> "CompiledHamiltonian":
        n = ham.n_sites
        mask_index: Dict[Tuple[int, ...], int] = {}
        masks, sign_rows, coefs, owner = [], [], [], []
        for key, coef in ham.coefficients().items():
            flips = tuple(s for s, op in key if op in ("X", "Y"))
            if flips not in mask_index:
                mask_index[flips] = len(masks)
                row = np.zeros(n, dtype=bool)
                row[list(flips)] = True
                masks.append(row)
            sign = np.zeros(n, dtype=np.int64)
            n_y = 0
            for s, op in key:
                if op in ("Z", "Y"):
                    sign[s] = 1
                n_y += op == "Y"
            sign_rows.append(sign)
            coefs.append(coef * (-1j) ** n_y)
            owner.append(mask_index[flips])
        n_terms, n_masks = len(coefs), len(masks)
        grouping = np.zeros((n_terms, n_masks))
        grouping[np.arange(n_terms), owner] = 1.0
        return cls(
            n_sites=n,
            masks=np.array(masks, dtype=bool).reshape(n_masks, n),
            sign_sites=np.array(sign_rows, dtype=np.int64).reshape(n_terms, n),
            term_coef=np.array(coefs, dtype=complex),
            term_mask=np.array(owner, dtype=np.int64),
            grouping=grouping,
        )

    @property
    def n_masks(self) -> int:
        return self.masks.shape[0]

    def elements(self, x: np.ndarray) -> np.ndarray:
        """Matrix elements ``<x|H|x'_m>`` for every group ``m``: shape (n, n_masks)."""
        x = np.atleast_2d(np.asarray(x))
        bits = (1 - x.astype(np.int64)) // 2
        parity = (bits @ self.sign_sites.T) & 1
        vals = (1 - 2 * parity) * self.term_coef
        return vals @ self.grouping

    def flipped(self, x: np.ndarray) -> np.ndarray:
        """All connected configurations: shape (n, n_masks, N)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.int8))
        factor = np.where(self.masks, -1, 1).astype(np.int8)
        return x[:, None, :] * factor[None, :, :]

    def offdiagonal_masks(self) -> np.ndarray:
        return np.nonzero(self.masks.any(axis=1))[0]


# ---------------------------------------------------------------------------
# model builders
# ---------------------------------------------------------------------------

def _bond_terms(n: int, distance: int, ops: Sequence[str], coef: float) -> Dict[Key, complex]:
    acc: Dict[Key, complex] = {}
    for i in range(n):
        j = (i + distance) % n
        for op in ops:
            key = tuple(sorted(((i, op), (j, op))))
            acc[key] = acc.get(key, 0j) + coef
    return acc


def build_tfi(n_sites: int, h: float) -> PauliHamiltonian:
    """-sum_<ij> Z_i Z_j - h sum_i X_i on a periodic chain (N bonds)."""
    if n_sites < 2:
        raise ValueError("TFI chain needs at least 2 sites")
    terms = _bond_terms(n_sites, 1, ("Z",), -1.0)
    for i in range(n_sites):
        terms[((i, "X"),)] = -float(h)
    return PauliHamiltonian(n_sites, terms)


def build_j1j2(n_sites: int, j2: float) -> PauliHamiltonian:
    """Periodic J1-J2 chain in Pauli units with J1 = 1."""
    if n_sites < 4 or n_sites % 2:
        raise ValueError("J1J2 chain needs an even number of sites >= 4")
    if j2 < 0:
        raise ValueError("j2 must be non-negative")
    ops = ("X", "Y", "Z")
    ham = PauliHamiltonian(n_sites, _bond_terms(n_sites, 1, ops, 1.0))
    if j2 != 0:
        ham = ham + PauliHamiltonian(n_sites, _bond_terms(n_sites, 2, ops, float(j2)))
    return ham


def marshall_transform(ham: PauliHamiltonian) -> PauliHamiltonian:
    """Conjugate by a pi rotation about Z on every odd site (X, Y -> -X, -Y)."""
    if ham.n_sites % 2:
        raise ValueError("Marshall transform needs an even number of sites")
    out = {}
    for key, coef in ham.coefficients().items():
        n_odd = sum(1 for s, op in key if s % 2 == 1 and op in ("X", "Y"))
        out[key] = coef * (-1) ** n_odd
    return PauliHamiltonian(ham.n_sites, out)


# ---------------------------------------------------------------------------
# Jordan-Wigner
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FermionTerm:
    """coefficient * a+_{c0} a+_{c1} ... a_{a0} a_{a1} ... (operators in the given order)."""

    creation: Tuple[int, ...]
    annihilation: Tuple[int, ...]
    coefficient: complex = 1.0

    def __post_init__(self):
        object.__setattr__(self, "creation", tuple(int(i) for i in self.creation))
        object.__setattr__(self, "annihilation", tuple(int(i) for i in self.annihilation))


def _ladder(modes: int, j: int, dagger: bool) -> PauliHamiltonian:
    # occupied mode <-> spin -1 (|1>): a+ = Z-string (X - iY)/2, a = Z-string (X + iY)/2
    z_string = tuple((i, "Z") for i in range(j))
    sign = -1j if dagger else 1j
    return PauliHamiltonian(
        modes,
        {z_string + ((j, "X"),): 0.5, z_string + ((j, "Y"),): 0.5 * sign},
    )


def annihilation_operator(modes: int, j: int) -> PauliHamiltonian:
    return _ladder(modes, j, dagger=False)


def creation_operator(modes: int, j: int) -> PauliHamiltonian:
    return _ladder(modes, j, dagger=True)


def jordan_wigner(modes: int, terms: Iterable[FermionTerm]) -> PauliHamiltonian:
    """Map one- and two-body fermionic terms to a canonical Pauli sum."""
    identity = PauliHamiltonian(modes, {(): 1.0})
    total = PauliHamiltonian(modes, {})
    for term in terms:
        if len(term.creation) > 2 or len(term.annihilation) > 2:
            raise ValueError(f"unsupported term rank: {term}")
        for idx in term.creation + term.annihilation:
            if not 0 <= idx < modes:
                raise ValueError(f"mode index {idx} out of range for {modes} modes")
        op = identity
        for j in term.creation:
            op = op * creation_operator(modes, j)
        for j in term.annihilation:
            op = op * annihilation_operator(modes, j)
        total = total + op * term.coefficient
    return total


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------

_COEF_RE = re.compile(r"^\(\s*([^,()\s]+)\s*(?:,\s*([^,()\s]+)\s*)?\)")
_FACTOR_RE = re.compile(r"^([IXYZ])(\d+)$")
_HEADER_RE = re.compile(r"^N\s*(?:=\s*|\s+)(\d+)$")


def _format_coefficient(c: complex) -> str:
    c = complex(c)
    if c.imag == 0:
        return repr(float(c.real))
    return f"{float(c.real)!r},{float(c.imag)!r}"


def parse_pauli_text(
    text: str, n_sites: int = None, allow_non_hermitian: bool = False
) -> PauliHamiltonian:
    """Parse the Hamiltonian text format.

    Grammar (one term per line, or several separated by ``;``)::

        # comment
        N 4                   optional site-count header
        (-1.05) Z0
        (0.39) X0 X1
        (0.1,-0.2) Y0 Z2      complex coefficient as (re,im)
        (0.5)                 identity term
    """
    declared = n_sites
    entries: List[Tuple[int, Key, complex]] = []
    text = text.replace("−", "-")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        header = _HEADER_RE.match(line)
        if header:
            if entries:
                raise PauliParseError(lineno, "site-count header must precede terms")
            declared = int(header.group(1))
            continue
        for chunk in line.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            m = _COEF_RE.match(chunk)
            if not m:
                raise PauliParseError(lineno, f"expected '(coefficient)' in {chunk!r}")
            try:
                coef = complex(float(m.group(1)), float(m.group(2)) if m.group(2) else 0.0)
            except ValueError:
                raise PauliParseError(lineno, f"bad coefficient in {chunk!r}") from None
            factors: Dict[int, str] = {}
            for tok in chunk[m.end():].split():
                fm = _FACTOR_RE.match(tok)
                if not fm:
                    raise PauliParseError(lineno, f"bad Pauli factor {tok!r}")
                site = int(fm.group(2))
                if site in factors:
                    raise PauliParseError(lineno, f"site {site} repeated")
                if fm.group(1) != "I":
                    factors[site] = fm.group(1)
                else:
                    factors.setdefault(site, None)
            key = tuple(sorted((s, op) for s, op in factors.items() if op is not None))
            entries.append((lineno, key, coef))
    if not entries:
        raise HamiltonianValidationError("Hamiltonian file contains no terms")
    max_site = max((s for _, key, _ in entries for s, _ in key), default=-1)
    if declared is None:
        declared = max_site + 1 if max_site >= 0 else 1
    for lineno, key, _ in entries:
        for s, _ in key:
            if s >= declared:
                raise PauliParseError(lineno, f"site {s} outside declared N={declared}")
    acc: Dict[Key, complex] = {}
    for _, key, coef in entries:
        acc[key] = acc.get(key, 0j) + coef
    ham = PauliHamiltonian(declared, acc)
    if len(ham) == 0:
        raise HamiltonianValidationError("all terms cancel")
    if not allow_non_hermitian and not ham.is_hermitian():
        raise HamiltonianValidationError("Hamiltonian is not Hermitian")
    return ham


def load_pauli_file(path, allow_non_hermitian: bool = False) -> PauliHamiltonian:
    text = Path(path).read_text()
    return parse_pauli_text(text, allow_non_hermitian=allow_non_hermitian)


def format_pauli_text(ham: PauliHamiltonian) -> str:
    lines = [f"N {ham.n_sites}"]
    lines += [str(t) for t in ham.terms]
    return "\n".join(lines) + "\n"


def save_pauli_file(ham: PauliHamiltonian, path) -> None:
    Path(path).write_text(format_pauli_text(ham))


def connected_states(ham: PauliHamiltonian, x: np.ndarray):
    return ham.connected_states(x)
