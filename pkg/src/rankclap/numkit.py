"""Dense numeric primitives, deterministic RNG, and a finite-difference oracle.

All matrices are C-contiguous float64 numpy arrays (row-major).  Everything
here is pure: no global state, no hidden RNG.  RngStream instances are the
only mutable objects and must not be shared between concurrent tasks.
"""

from __future__ import annotations

import hashlib
import math
from typing import Callable

import numpy as np

from rankclap import kernels
from rankclap._kernels_py import splitmix64, step_u64

ZERO_NORM_FLOOR = 1e-30


class DegenerateEmbeddingError(ValueError):
    """A row with (near-)zero norm was fed to a direction-based operation."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return a 2-D finite float64 C-order view of ``a``."""
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {out.shape}")
    if not np.isfinite(out).all():
        raise ValueError(f"{name} contains non-finite entries")
    return out


def matmul(a, b) -> np.ndarray:
    """Matrix product with dimension validation."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def row_norms(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", a, a))


def cosine_similarity_matrix(a, b) -> np.ndarray:
    """Pairwise cosine similarity: out[i, j] = cos(a[i], b[j]).

    Raises DegenerateEmbeddingError if any row norm is below 1e-30, because
    a zero-length row has no direction to compare.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    na = row_norms(a)
    nb = row_norms(b)
    if (na < ZERO_NORM_FLOOR).any() or (nb < ZERO_NORM_FLOOR).any():
        raise DegenerateEmbeddingError("zero-norm row in cosine similarity input")
    return (a / na[:, None]) @ (b / nb[:, None]).T


def logsumexp(xs) -> float:
    """log(sum(exp(xs))) with max-shift; safe for |x| up to ~700."""
    arr = np.asarray(xs, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("logsumexp of an empty sequence")
    if not np.isfinite(arr).all():
        raise ValueError("logsumexp input contains non-finite entries")
    m = float(arr.max())
    return m + math.log(float(np.exp(arr - m).sum()))


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector.

    This is the verification oracle for every hand-derived gradient in the
    package; it must stay independent of the code paths it checks.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=np.float64).ravel().copy()
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + h
        fp = float(f(x))
        x[i] = orig - h
        fm = float(f(x))
        x[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ArithmeticError(f"non-finite evaluation at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def derive_seed(seed: int, *tags) -> int:
    """Deterministically derive an independent 64-bit seed from seed + tags.

    Tags may be strings or ints; the same (seed, tags) always yields the same
    value on every platform.
    """
    h = splitmix64(seed & ((1 << 64) - 1))
    for tag in tags:
        digest = hashlib.blake2b(repr(tag).encode("utf-8"), digest_size=8).digest()
        h = splitmix64(h ^ int.from_bytes(digest, "little"))
    return h


class RngStream:
    """Deterministic xoshiro256++ stream with explicit seeding.

    Identical seeds produce identical draw sequences; bulk fills and scalar
    draws consume the same underlying 64-bit sequence (one step per uniform,
    two per Box-Muller pair), so call granularity never changes the stream's
    state advance for a fixed number of values.
    """

    def __init__(self, seed: int):
        self.seed = seed & ((1 << 64) - 1)
        s = self.seed
        state = []
        for _ in range(4):
            s = splitmix64(s)
            state.append(s)
        self._state = tuple(state)

    def child(self, *tags) -> "RngStream":
        """Independent stream keyed by (this stream's seed, tags)."""
        return RngStream(derive_seed(self.seed, *tags))

    def next_u64(self) -> int:
        out, *state = step_u64(*self._state)
        self._state = tuple(state)
        return out

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1)."""
        out, self._state = kernels.fill_uniform(self._state, int(n))
        return out

    def normal(self, n: int) -> np.ndarray:
        """n standard normal doubles."""
        out, self._state = kernels.fill_normal(self._state, int(n))
        return out

    def normal_matrix(self, rows: int, cols: int) -> np.ndarray:
        return self.normal(rows * cols).reshape(rows, cols)

    def below(self, n: int) -> int:
        """Bounded draw in [0, n) via multiply-shift (bias < 2**-64 per unit)."""
        return (n * self.next_u64()) >> 64

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def sample_without_replacement(self, pool: int, k: int) -> np.ndarray:
        """k distinct indices from range(pool), in draw order."""
        if k > pool:
            raise ValueError(f"cannot sample {k} from pool of {pool}")
        idx = np.arange(pool, dtype=np.int64)
        for i in range(k):
            j = i + self.below(pool - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k].copy()
