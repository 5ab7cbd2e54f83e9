"""Dense vector kernels, ball projection, seeded Gaussian sampling and PCA.

Vectors are plain float64 ``numpy`` arrays. Everything random goes through
:class:`RngStream` so a run is reproducible from a single integer seed.
"""
from __future__ import annotations

import warnings
import zlib
from dataclasses import dataclass

import numpy as np


class RngStream:
    """Seeded PCG64 stream with a draw counter and named sub-streams.

    Two streams built from the same ``(seed, key)`` emit identical draws.
    ``child("noise", 3)`` derives an independent stream by extending the
    seed-sequence spawn key; strings are mapped to ints with CRC32.
    """

    algorithm = "pcg64"

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.PCG64(ss))
        self.draws = 0

    @staticmethod
    def _key_part(part: int | str) -> int:
        if isinstance(part, str):
            return zlib.crc32(part.encode("utf-8"))
        return int(part)

    def child(self, *parts: int | str) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(self._key_part(p) for p in parts))

    def reset(self) -> None:
        self.__init__(self.seed, self.key)

    def uniform(self, size: int | None = None):
        n = 1 if size is None else int(size)
        self.draws += n
        return self._gen.random(size)

    def integers(self, high: int, size: int | None = None):
        self.draws += 1 if size is None else int(size)
        return self._gen.integers(0, high, size=size)

    def permutation(self, values) -> np.ndarray:
        arr = np.array(values, copy=True)
        self.draws += len(arr)
        self._gen.shuffle(arr)
        return arr

    def choice(self, n: int, size: int) -> np.ndarray:
        """``size`` distinct indices from ``range(n)``."""
        self.draws += size
        return self._gen.choice(n, size=size, replace=False)

    def standard_normal(self, n: int) -> np.ndarray:
        """``n`` standard normal draws by the Box-Muller transform."""
        pairs = (n + 1) // 2
        u1 = 1.0 - self.uniform(pairs)  # in (0, 1], log is finite
        u2 = self.uniform(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(theta)
        z[1::2] = radius * np.sin(theta)
        return z[:n]


def as_vector(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def dot(a, b) -> float:
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(np.dot(a, b))


def norm(a) -> float:
    return float(np.linalg.norm(as_vector(a)))


def project_to_ball(w, radius: float) -> np.ndarray:
    """Euclidean projection onto the closed L2 ball of the given radius."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    w = as_vector(w)
    r = float(np.linalg.norm(w))
    if r <= radius:
        return w
    out = w * (radius / r)
    # rounding can leave the norm a hair above radius; one more rescale fixes it
    r2 = float(np.linalg.norm(out))
    if r2 > radius:
        out = out * (radius / r2)
    return out


def gaussian_vector(rng: RngStream, dim: int, sigma: float) -> np.ndarray:
    """``dim`` i.i.d. draws from N(0, sigma^2)."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.zeros(dim)
    return sigma * rng.standard_normal(dim)


@dataclass
class PCAResult:
    components: np.ndarray  # (k, d), orthonormal rows
    mean: np.ndarray
    eigenvalues: np.ndarray
    total_variance: float
    iterations: int
    rank_deficient: bool = False
    converged: bool = True

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance == 0:
            return np.zeros_like(self.eigenvalues)
        return self.eigenvalues / self.total_variance

    def transform(self, rows) -> np.ndarray:
        return (np.asarray(rows, dtype=np.float64) - self.mean) @ self.components.T


def _canonical_signs(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each row made positive
    idx = np.argmax(np.abs(vectors), axis=1)
    signs = np.sign(vectors[np.arange(len(vectors)), idx])
    signs[signs == 0] = 1.0
    return vectors * signs[:, None]


def pca_top_k(rows, k: int, rng: RngStream | None = None, tol: float = 1e-9,
              max_iter: int = 1000, oversample: int = 8) -> PCAResult:
    """Top-``k`` principal directions of mean-centred data.

    Block power (orthogonal) iteration on the sample covariance with a
    Rayleigh-Ritz step each sweep. Stops when the top-``k`` Ritz subspace moves
    by less than ``tol`` (spectral norm of the projector residual). If the data
    has rank below ``k`` only the non-null directions are returned and
    ``rank_deficient`` is set.
    """
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("pca_top_k needs a 2-D array with at least 2 rows")
    n, d = X.shape
    if k < 1 or k > min(n, d):
        raise ValueError(f"k={k} must lie in [1, min(rows, cols)={min(n, d)}]")
    rng = rng if rng is not None else RngStream(0)

    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / (n - 1)
    total = float(np.trace(cov))

    p = min(d, k + oversample)
    Q, _ = np.linalg.qr(rng.standard_normal(d * p).reshape(d, p))
    V_prev = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Q, _ = np.linalg.qr(cov @ Q)
        H = Q.T @ cov @ Q
        evals, evecs = np.linalg.eigh((H + H.T) / 2)
        order = np.argsort(evals)[::-1]
        V = Q @ evecs[:, order[:k]]
        # null directions never settle, so only the non-null part is checked
        live = evals[order[:k]] > max(float(evals[order[0]]), 1e-300) * 1e-10 * d
        if V_prev is not None:
            residual = V_prev[:, live] - V[:, live] @ (V[:, live].T @ V_prev[:, live])
            if np.linalg.norm(residual, 2) < tol:
                converged = True
                break
        V_prev = V
    evals = evals[order[:k]]

    scale = max(float(evals[0]) if len(evals) else 0.0, 1e-300)
    keep = evals > scale * 1e-10 * d
    rank_deficient = bool(not keep.all())
    if rank_deficient:
        warnings.warn(f"data rank {int(keep.sum())} is below k={k}; returning fewer components",
                      RuntimeWarning, stacklevel=2)
        V = V[:, keep]
        evals = evals[keep]
    comps = _canonical_signs(V.T.copy())
    return PCAResult(components=comps, mean=mean, eigenvalues=np.maximum(evals, 0.0),
                     total_variance=total, iterations=it,
                     rank_deficient=rank_deficient, converged=converged)


__all__ = [
    "RngStream", "as_vector", "dot", "norm", "project_to_ball", "gaussian_vector",
    "PCAResult", "pca_top_k",
]
