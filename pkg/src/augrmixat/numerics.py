"""Numeric primitives shared by every other module.

Tensors are plain :class:`numpy.ndarray` values (row-major).  Single precision
is the default; float64 is used for gradient verification.
"""
from __future__ import annotations

import hashlib
import math
import struct

import numpy as np

DEFAULT_DTYPE = np.float32
PROB_FLOOR = 1e-12


class NonFiniteError(ValueError):
    """Raised when logits contain inf or nan (a diverged model)."""


def derive_seed(parent_seed: int, index: int) -> int:
    """Deterministic 64-bit child seed from ``(parent_seed, index)``."""
    payload = struct.pack("<QQ", parent_seed & 0xFFFFFFFFFFFFFFFF, index & 0xFFFFFFFFFFFFFFFF)
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


class Rng:
    """Seeded random stream.

    One owner per instance.  Parallel or per-purpose consumers take
    :meth:`child` streams so that adding draws in one place never shifts the
    sequence seen by another.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, index: int) -> "Rng":
        return Rng(derive_seed(self.seed, index))

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, options):
        return options[int(self._gen.integers(len(options)))]

    def poisson(self, lam) -> np.ndarray:
        return self._gen.poisson(lam)

    def gamma(self, alpha: float, size=None):
        """Gamma(alpha, 1) draws: Marsaglia-Tsang, boosted for ``alpha < 1``."""
        if not alpha > 0:
            raise ValueError(f"gamma shape must be positive, got {alpha}")
        shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        if alpha < 1.0:
            boost = self._gen.uniform(size=n) ** (1.0 / alpha)
            out = self._marsaglia_tsang(alpha + 1.0, n) * boost
        else:
            out = self._marsaglia_tsang(alpha, n)
        return float(out[0]) if size is None else out.reshape(shape)

    def _marsaglia_tsang(self, alpha: float, n: int) -> np.ndarray:
        d = alpha - 1.0 / 3.0
        c = 1.0 / np.sqrt(9.0 * d)
        if n <= 8:
            # scalar loop: far cheaper than array ops for the handful of draws mixing needs
            out = np.empty(n)
            for i in range(n):
                while True:
                    x = self._gen.standard_normal()
                    v = (1.0 + c * x) ** 3
                    if v > 0 and math.log(self._gen.random()) < 0.5 * x * x + d - d * v + d * math.log(v):
                        out[i] = d * v
                        break
            return out
        out = np.empty(n)
        todo = np.arange(n)
        while todo.size:
            x = self._gen.standard_normal(todo.size)
            v = (1.0 + c * x) ** 3
            u = self._gen.uniform(size=todo.size)
            ok = v > 0
            logv = np.log(np.where(ok, v, 1.0))
            ok &= np.log(u) < 0.5 * x * x + d - d * v + d * logv
            out[todo[ok]] = d * v[ok]
            todo = todo[~ok]
        return out


def sample_dirichlet(rng: Rng, k: int, alpha: float) -> np.ndarray:
    if k < 1:
        raise ValueError(f"dirichlet needs k >= 1, got {k}")
    if not alpha > 0:
        raise ValueError(f"dirichlet concentration must be positive, got {alpha}")
    g = rng.gamma(alpha, k)
    total = g.sum()
    if total <= 0.0:
        # every draw underflowed (tiny alpha): fall back to a random vertex
        g = np.zeros(k)
        g[rng.integers(k)] = 1.0
        total = 1.0
    return g / total


def sample_beta(rng: Rng, alpha: float) -> float:
    """Symmetric Beta(alpha, alpha) from two Gamma draws."""
    if not alpha > 0:
        raise ValueError(f"beta concentration must be positive, got {alpha}")
    a, b = rng.gamma(alpha, 2)
    if a + b <= 0.0:
        return float(rng.integers(2))
    return float(a / (a + b))


def sample_gaussian(rng: Rng, shape) -> np.ndarray:
    return rng.normal(shape)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(logits)):
        raise NonFiniteError("non-finite logits")
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ValueError(f"softmax expects [N, C>=2] logits, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise NonFiniteError("non-finite logits")
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def one_hot(labels, num_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1
    return out
