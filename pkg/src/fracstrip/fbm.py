"""Exact sampling of fractional Brownian motion.

Paths are produced on uniform grids by circulant embedding of the stationary
increment sequence (fractional Gaussian noise), with a dense Cholesky
factorisation of the path covariance as fallback and small-grid oracle.

Seeding
-------
Every random stream is a :class:`numpy.random.SeedSequence` obtained from the
user seed by appending integer counters to its ``spawn_key``:

* ``sample_fbm(H, grid, seed)`` draws from ``SeedSequence(seed)``;
* mode ``j`` of ``sample_cylindrical_fbm(H, K, grid, seed)`` draws from
  ``SeedSequence(seed, spawn_key=(j,))``;
* Monte Carlo replica ``r`` uses ``SeedSequence(seed, spawn_key=(r,))`` and its
  cylindrical modes ``spawn_key=(r, j)``.

Any single path can therefore be regenerated in isolation with
:func:`derive_seed`.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np
import scipy.fft

from .errors import FbmSamplingError, ValidationError

log = logging.getLogger(__name__)

SeedLike = Union[int, np.random.SeedSequence]

#: Relative size of tolerated negative embedding eigenvalues.
CLAMP_TOL = 1e-8

_BLOCK = 256


@dataclass(frozen=True)
class HurstIndex:
    """Hurst index ``H`` in the open interval (0, 1)."""

    value: float

    def __post_init__(self):
        v = float(self.value)
        if not 0.0 < v < 1.0:
            raise ValidationError(f"H out of (0,1): {self.value!r}")
        object.__setattr__(self, "value", v)

    def __float__(self) -> float:
        return self.value

    def spde_admissible(self) -> bool:
        """Cylindrical noise on the torus needs ``H > 1/4``."""
        return self.value > 0.25


def hurst_value(H) -> float:
    """Return ``H`` as a validated float (accepts floats and :class:`HurstIndex`)."""
    if isinstance(H, HurstIndex):
        return H.value
    return HurstIndex(H).value


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_j = j T / N`` on ``[0, T]``."""

    T: float
    N: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValidationError(f"horizon T must be positive, got {self.T!r}")
        if int(self.N) != self.N or self.N < 1:
            raise ValidationError(f"N must be a positive integer, got {self.N!r}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "N", int(self.N))

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.N + 1) * self.dt
        t[-1] = self.T
        return t

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Index of the node equal to ``t``; raises if ``t`` is not a node."""
        j = int(round(t / self.dt))
        if not 0 <= j <= self.N or abs(j * self.dt - t) > tol * max(1.0, self.T):
            raise ValidationError(f"time {t} is not a node of {self}")
        return j


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FbmPath:
    """A discretised fBm realisation; ``values[0] == 0``."""

    grid: TimeGrid
    values: np.ndarray
    H: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.N + 1,):
            raise ValidationError(f"values must have length N+1={self.grid.N + 1}")
        if v[0] != 0.0:
            raise ValidationError("fBm paths start at the origin")
        object.__setattr__(self, "values", _frozen(v.copy()))

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    def coarsen(self, factor: int) -> "FbmPath":
        """Restriction to every ``factor``-th node (still an exact fBm sample)."""
        if self.grid.N % factor:
            raise ValidationError(f"N={self.grid.N} not divisible by {factor}")
        return FbmPath(TimeGrid(self.grid.T, self.grid.N // factor), self.values[::factor], self.H)


@dataclass(frozen=True)
class CylindricalFbmPath:
    """Independent fBm paths for the real trigonometric basis on the torus.

    Row ``0`` drives the constant mode, rows ``1..K`` the functions
    ``sqrt(2) cos(2 pi k x)`` and rows ``K+1..2K`` the functions
    ``sqrt(2) sin(2 pi k x)``; the basis is orthonormal in ``L^2``.
    """

    K: int
    grid: TimeGrid
    values: np.ndarray
    H: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (2 * self.K + 1, self.grid.N + 1):
            raise ValidationError("values must have shape (2K+1, N+1)")
        object.__setattr__(self, "values", _frozen(v.copy()))

    def mode(self, j: int) -> FbmPath:
        return FbmPath(self.grid, self.values[j], self.H)

    def complex_coefficients(self) -> np.ndarray:
        """Noise coefficients ``W_k`` for ``k = -K..K`` (shape ``(2K+1, N+1)``).

        ``W_k = (W_cos,k - i W_sin,k)/sqrt(2)`` for ``k >= 1`` and
        ``W_{-k} = conj(W_k)``, so that ``E|W_k(t)|^2 = t^{2H}``.
        """
        K = self.K
        c, s = self.values[1:K + 1], self.values[K + 1:]
        pos = (c - 1j * s) / np.sqrt(2.0)
        return np.concatenate([np.conj(pos[::-1]), self.values[:1].astype(complex), pos])


def derive_seed(seed: SeedLike, *key: int) -> np.random.SeedSequence:
    """Child stream ``key`` of ``seed`` (counter-mode: appended to ``spawn_key``)."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(key))
    return np.random.SeedSequence(int(seed), spawn_key=tuple(key))


def _generator(seed: SeedLike) -> np.random.Generator:
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.PCG64(seed))


def fbm_covariance(t, s, H) -> np.ndarray:
    """``E[W_t W_s] = (t^{2H} + s^{2H} - |t-s|^{2H}) / 2`` (broadcasting)."""
    H = hurst_value(H)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise ValidationError("fbm_covariance needs t, s >= 0")
    return 0.5 * (t ** (2 * H) + s ** (2 * H) - np.abs(t - s) ** (2 * H))


def fgn_autocovariance(H, n: int) -> np.ndarray:
    """Autocovariance of unit-spacing fractional Gaussian noise at lags ``0..n-1``."""
    H = hurst_value(H)
    k = np.arange(n, dtype=float)
    return 0.5 * (np.abs(k + 1) ** (2 * H) - 2 * k ** (2 * H) + np.abs(k - 1) ** (2 * H))


@functools.lru_cache(maxsize=64)
def _embedding_sqrt(H: float, N: int) -> np.ndarray | None:
    """``sqrt(lambda / M)`` for the size ``M = 2N`` embedding, or None if invalid."""
    gamma = fgn_autocovariance(H, N + 1)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    lam = scipy.fft.fft(row).real
    lam_max = lam.max()
    lam_min = lam.min()
    if lam_min < 0:
        if lam_min < -CLAMP_TOL * lam_max:
            log.warning("circulant embedding for H=%g, N=%d has eigenvalue %.3e; "
                        "falling back to Cholesky", H, N, lam_min)
            return None
        log.warning("clamping negative embedding eigenvalue %.3e to zero (H=%g, N=%d)",
                    lam_min, H, N)
        lam = np.clip(lam, 0.0, None)
    return _frozen(np.sqrt(lam / row.size))


@functools.lru_cache(maxsize=16)
def _cholesky_factor(H: float, N: int) -> np.ndarray:
    """Lower Cholesky factor of ``Cov(W_{t_1..t_N})`` on the unit-spacing grid."""
    j = np.arange(1, N + 1, dtype=float)
    cov = fbm_covariance(j[:, None], j[None, :], H)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise FbmSamplingError(
            f"fBm covariance (H={H}, N={N}) is not numerically positive definite") from exc
    return _frozen(L)


def _unit_paths(H: float, N: int, seeds: Sequence[SeedLike], method: str) -> np.ndarray:
    """Rows of fBm on the grid ``0, 1, ..., N`` (unit spacing)."""
    out = np.zeros((len(seeds), N + 1))
    if method == "circulant":
        root = _embedding_sqrt(H, N)
        if root is None:
            method = "cholesky"
        else:
            M = root.size
            # blocks bound the complex work arrays for large batches
            for lo in range(0, len(seeds), _BLOCK):
                block = seeds[lo:lo + _BLOCK]
                z = np.empty((len(block), M), dtype=complex)
                for i, seed in enumerate(block):
                    draw = _generator(seed).standard_normal(2 * M)
                    z[i].real = draw[:M]
                    z[i].imag = draw[M:]
                y = scipy.fft.fft(root * z, axis=1).real[:, :N]
                np.cumsum(y, axis=1, out=out[lo:lo + len(block), 1:])
            return out
    if method == "cholesky":
        L = _cholesky_factor(H, N)
        z = np.stack([_generator(seed).standard_normal(N) for seed in seeds]) if len(seeds) else \
            np.zeros((0, N))
        out[:, 1:] = z @ L.T
        return out
    raise ValidationError(f"unknown fBm sampling method {method!r}")


def sample_fbm_matrix(H, grid: TimeGrid, seeds: Iterable[SeedLike],
                      method: str = "circulant") -> np.ndarray:
    """Stack of fBm paths, row ``i`` drawn from its own stream ``seeds[i]``.

    Row ``i`` equals ``sample_fbm(H, grid, seeds[i], method).values``.
    """
    H = hurst_value(H)
    seeds = list(seeds)
    return _unit_paths(H, grid.N, seeds, method) * grid.dt ** H


def sample_fbm(H, grid: TimeGrid, seed: SeedLike, method: str = "circulant") -> FbmPath:
    """Exact fBm sample on ``grid``; a deterministic function of ``(H, grid, seed)``.

    ``method="circulant"`` (default) uses the FFT embedding of the increment
    covariance; it falls back to Cholesky when the embedding has eigenvalues
    below ``-1e-8 * max``.  ``method="cholesky"`` factorises the dense path
    covariance.
    """
    H = hurst_value(H)
    values = sample_fbm_matrix(H, grid, [seed], method)[0]
    return FbmPath(grid, values, H)


def sample_cylindrical_fbm(H, K: int, grid: TimeGrid, seed: SeedLike,
                           method: str = "circulant") -> CylindricalFbmPath:
    """``2K+1`` independent fBm paths, mode ``j`` from ``derive_seed(seed, j)``."""
    H = hurst_value(H)
    if int(K) != K or K < 0:
        raise ValidationError(f"K must be a non-negative integer, got {K!r}")
    seeds = [derive_seed(seed, j) for j in range(2 * K + 1)]
    return CylindricalFbmPath(int(K), grid, sample_fbm_matrix(H, grid, seeds, method), H)


def cylindrical_matrix(H, K: int, grid: TimeGrid, seeds: Sequence[SeedLike],
                       method: str = "circulant") -> np.ndarray:
    """Batch of cylindrical paths, shape ``(len(seeds), 2K+1, N+1)``."""
    mode_seeds = [derive_seed(s, j) for s in seeds for j in range(2 * K + 1)]
    flat = sample_fbm_matrix(H, grid, mode_seeds, method)
    return flat.reshape(len(seeds), 2 * K + 1, grid.N + 1)
