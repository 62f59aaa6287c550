"""Complex RBM amplitudes with analytic log-derivatives.

    psi(x) = exp(a.x) * prod_j (1 + exp(theta_j(x))),
    theta_j(x) = b_j + sum_i w_ij x_i,

with visible spins x_i in {-1, +1} and hidden units traced over {0, 1}.

Flattened parameter order (dense mode): a[0..N-1], b[0..M-1], w row-major
(visible index major).  In symmetric mode the independent parameters are
one shared visible bias, ``alpha`` hidden biases and ``alpha`` filters of
N weights; hidden unit ``j = f*N + s`` is filter ``f`` translated by ``s``
so that ``w[i, f*N + s] = W[f, (i - s) mod N]``.
"""

from __future__ import annotations

import json
from typing import Optional, Sequence

import numpy as np

from .hilbert import basis_index


def log1pexp(z):
    """log(1 + exp(z)) for complex z without overflow."""
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    pos = z.real > 0
    zp = z[pos]
    out[pos] = zp + np.log1p(np.exp(-zp))
    zn = z[~pos]
    out[~pos] = np.log1p(np.exp(zn))
    return out


def sigmoid(z):
    """exp(z) / (1 + exp(z)), evaluated stably for complex z."""
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    pos = z.real > 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _tying_matrix(n: int, alpha: int, symmetric: bool, visible_bias: bool) -> Optional[np.ndarray]:
    """Real 0/1 matrix T with dense_params = T @ params (None means identity)."""
    m = alpha * n
    n_dense = n + m + n * m
    if not symmetric:
        if visible_bias:
            return None
        t = np.zeros((n_dense, m + n * m))
        t[n:, :] = np.eye(m + n * m)
        return t
    n_vis = 1 if visible_bias else 0
    n_var = n_vis + alpha + alpha * n
    t = np.zeros((n_dense, n_var))
    if visible_bias:
        t[:n, 0] = 1.0
    for f in range(alpha):
        for s in range(n):
            j = f * n + s
            t[n + j, n_vis + f] = 1.0
            for i in range(n):
                d = (i - s) % n
                t[n + m + i * m + j, n_vis + alpha + f * n + d] = 1.0
    return t


class Rbm:
    """Restricted Boltzmann machine wavefunction with complex parameters.

    Parameters are held as a flat vector of independent values; the dense
    biases and weights are derived views.  Instances are immutable in
    practice: use :meth:`with_params` to move in parameter space.
    """

    def __init__(
        self,
        n_sites: int,
        alpha: int = 2,
        symmetric: bool = False,
        visible_bias: bool = True,
        params: Optional[np.ndarray] = None,
    ):
        if n_sites <= 0:
            raise ValueError("n_sites must be positive")
        if int(alpha) != alpha or alpha <= 0:
            raise ValueError("alpha must be a positive integer")
        self.n_sites = int(n_sites)
        self.alpha = int(alpha)
        self.symmetric = bool(symmetric)
        self.visible_bias = bool(visible_bias)
        self.n_hidden = self.alpha * self.n_sites
        self.tying = _tying_matrix(self.n_sites, self.alpha, self.symmetric, self.visible_bias)
        n_dense = self.n_sites + self.n_hidden + self.n_sites * self.n_hidden
        self.n_dense = n_dense
        self.n_var = n_dense if self.tying is None else self.tying.shape[1]
        if params is None:
            params = np.zeros(self.n_var, dtype=complex)
        params = np.asarray(params, dtype=complex).ravel()
        if params.shape != (self.n_var,):
            raise ValueError(f"expected {self.n_var} parameters, got {params.shape}")
        self.params = params.copy()
        self.params.setflags(write=False)
        dense = self.params if self.tying is None else self.tying @ self.params
        n, m = self.n_sites, self.n_hidden
        self.a = dense[:n]
        self.b = dense[n:n + m]
        self.w = dense[n + m:].reshape(n, m)

    @classmethod
    def random(
        cls,
        n_sites: int,
        alpha: int = 2,
        symmetric: bool = False,
        visible_bias: bool = True,
        rng: Optional[np.random.Generator] = None,
        scale: float = 0.01,
    ) -> "Rbm":
        shape = cls(n_sites, alpha, symmetric, visible_bias)
        return shape.with_params(_gaussian_complex(rng, scale, shape.n_var))

    def with_params(self, params: np.ndarray) -> "Rbm":
        return Rbm(self.n_sites, self.alpha, self.symmetric, self.visible_bias, params)

    def __repr__(self) -> str:
        return (
            f"Rbm(n_sites={self.n_sites}, alpha={self.alpha}, symmetric={self.symmetric}, "
            f"n_var={self.n_var})"
        )

    # -- amplitudes -----------------------------------------------------------
    def theta(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.b + x @ self.w

    def log_psi(self, x: np.ndarray) -> np.ndarray:
        """Complex log-amplitude for one configuration or a batch (last axis = sites)."""
        xf = np.asarray(x, dtype=float)
        return xf @ self.a + log1pexp(self.theta(xf)).sum(axis=-1)

    def log_psi_ratio(self, x: np.ndarray, flips: Sequence[int], lut: "LookupTable") -> complex:
        """log psi(x') - log psi(x) for x' = x with ``flips`` inverted, in O(|flips| M)."""
        flips = np.asarray(list(flips), dtype=np.int64)
        if flips.size == 0:
            return 0j
        xs = np.asarray(x, dtype=float)[flips]
        new_theta = lut.theta - 2.0 * (xs @ self.w[flips])
        d_vis = -2.0 * np.dot(self.a[flips], xs)
        return complex(d_vis + np.sum(log1pexp(new_theta) - log1pexp(lut.theta)))

    # -- derivatives ----------------------------------------------------------
    def dense_log_derivatives(self, x: np.ndarray) -> np.ndarray:
        """d log psi / d(a, b, w) for the dense parametrisation."""
        xf = np.atleast_2d(np.asarray(x, dtype=float))
        sig = sigmoid(self.theta(xf))
        d_w = xf[:, :, None] * sig[:, None, :]
        return np.concatenate(
            [xf.astype(complex), sig, d_w.reshape(xf.shape[0], -1)], axis=1
        )

    def log_derivatives(self, x: np.ndarray) -> np.ndarray:
        """D_k(x) for the independent parameters; shape (n, n_var) or (n_var,)."""
        single = np.asarray(x).ndim == 1
        if self.symmetric:
            d = self._symmetric_log_derivatives(np.atleast_2d(x))
        else:
            d = self.dense_log_derivatives(x)
            if self.tying is not None:
                d = d @ self.tying
        return d[0] if single else d

    def _symmetric_log_derivatives(self, x: np.ndarray) -> np.ndarray:
        # orbit sums of the dense derivatives, without forming them
        n, alpha = self.n_sites, self.alpha
        xf = np.asarray(x, dtype=float)
        sig = sigmoid(self.theta(xf)).reshape(-1, alpha, n)      # (batch, f, s)
        shift = (np.arange(n)[:, None] + np.arange(n)[None, :]) % n
        x_sd = xf[:, shift]                                      # x[(s + d) % N]
        d_w = np.einsum("nsd,nfs->nfd", x_sd, sig)
        parts = [sig.sum(axis=2), d_w.reshape(xf.shape[0], -1)]
        if self.visible_bias:
            parts.insert(0, xf.sum(axis=1, keepdims=True).astype(complex))
        return np.concatenate(parts, axis=1)

    # -- serialisation --------------------------------------------------------
    def to_dict(self) -> dict:
        inter = np.empty(2 * self.n_var)
        inter[0::2] = self.params.real
        inter[1::2] = self.params.imag
        return {
            "kind": "rbm",
            "n_sites": self.n_sites,
            "alpha": self.alpha,
            "symmetric": self.symmetric,
            "visible_bias": self.visible_bias,
            "shape": [self.n_var],
            "values_re_im": inter.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Rbm":
        inter = np.asarray(data["values_re_im"], dtype=float)
        params = inter[0::2] + 1j * inter[1::2]
        rbm = cls(data["n_sites"], data["alpha"], data["symmetric"], data["visible_bias"], params)
        if list(data["shape"]) != [rbm.n_var]:
            raise ValueError("snapshot shape does not match architecture")
        return rbm

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "Rbm":
        return cls.from_dict(json.loads(text))


class LookupTable:
    """Cached hidden pre-activations theta for one chain configuration."""

    def __init__(self, theta: np.ndarray):
        self.theta = np.array(theta, dtype=complex)

    @classmethod
    def build(cls, rbm: Rbm, x: np.ndarray) -> "LookupTable":
        return cls(rbm.theta(x))

    def update(self, rbm: Rbm, x: np.ndarray, flips: Sequence[int]) -> None:
        """Account for flipping ``flips`` of the *old* configuration ``x``."""
        flips = np.asarray(list(flips), dtype=np.int64)
        if flips.size:
            self.theta -= 2.0 * (np.asarray(x, dtype=float)[flips] @ rbm.w[flips])


class LogAmplitudeTable:
    """Fully flexible ansatz whose parameters are the log-amplitudes of every
    basis state.  Used to load exact eigenvectors into the estimator code."""

    def __init__(self, n_sites: int, log_amplitudes: np.ndarray):
        log_amplitudes = np.asarray(log_amplitudes, dtype=complex)
        if log_amplitudes.shape != (1 << n_sites,):
            raise ValueError("need one log-amplitude per basis state")
        self.n_sites = int(n_sites)
        self.params = log_amplitudes.copy()
        self.n_var = self.params.size

    @classmethod
    def from_vector(cls, n_sites: int, psi: np.ndarray) -> "LogAmplitudeTable":
        with np.errstate(divide="ignore"):
            return cls(n_sites, np.log(np.asarray(psi, dtype=complex)))

    def with_params(self, params: np.ndarray) -> "LogAmplitudeTable":
        return LogAmplitudeTable(self.n_sites, params)

    def log_psi(self, x: np.ndarray) -> np.ndarray:
        return self.params[basis_index(x)]

    def log_derivatives(self, x: np.ndarray) -> np.ndarray:
        idx = np.atleast_1d(basis_index(x))
        d = np.zeros((idx.size, self.n_var), dtype=complex)
        d[np.arange(idx.size), idx] = 1.0
        return d[0] if np.asarray(x).ndim == 1 else d


def _gaussian_complex(rng: Optional[np.random.Generator], scale: float, size: int) -> np.ndarray:
    if scale < 0:
        raise ValueError("scale must be non-negative")
    if rng is None:
        rng = np.random.default_rng()
    z = rng.normal(0.0, 1.0, size) + 1j * rng.normal(0.0, 1.0, size)
    return scale * z


def init_params(
    rng: Optional[np.random.Generator],
    scale: float,
    n_sites: int,
    alpha: int = 2,
    symmetric: bool = False,
    visible_bias: bool = True,
) -> Rbm:
    """RBM with real and imaginary parts of every parameter i.i.d. N(0, scale^2)."""
    return Rbm.random(n_sites, alpha, symmetric, visible_bias, rng=rng, scale=scale)


def log_psi(rbm: Rbm, x: np.ndarray):
    return rbm.log_psi(x)


def log_psi_ratio(rbm: Rbm, x: np.ndarray, flips, lut: LookupTable) -> complex:
    return rbm.log_psi_ratio(x, flips, lut)


def log_derivatives(rbm: Rbm, x: np.ndarray) -> np.ndarray:
    return rbm.log_derivatives(x)
