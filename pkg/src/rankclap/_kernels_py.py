"""Pure-Python/numpy kernels: the fallback backend behind rankclap.kernels.

Every function here has a compiled twin in the optional ``rankclap._accel``
extension.  The two backends implement identical algorithms; integer paths
(RNG state, retrieval indices) agree bit-for-bit, floating-point paths agree
to within a few ulp (libm vs numpy SIMD transcendentals).
"""

import math

import numpy as np

ACCELERATED = False

_MASK64 = (1 << 64) - 1
_INV53 = 2.0**-53
_TWO_PI = 6.283185307179586


def splitmix64(z: int) -> int:
    """One SplitMix64 step; used for seeding and deriving sub-seeds."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def step_u64(s0: int, s1: int, s2: int, s3: int):
    """Advance xoshiro256++ one step; returns (draw, s0, s1, s2, s3)."""
    out = (_rotl((s0 + s3) & _MASK64, 23) + s0) & _MASK64
    t = (s1 << 17) & _MASK64
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    return out, s0, s1, s2, s3


def fill_uniform(state, n):
    """Draw n doubles in [0, 1), one 64-bit step per draw."""
    s0, s1, s2, s3 = state
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        x, s0, s1, s2, s3 = step_u64(s0, s1, s2, s3)
        out[i] = (x >> 11) * _INV53
    return out, (s0, s1, s2, s3)


def fill_normal(state, n):
    """Draw n standard normals via Box-Muller, two 64-bit steps per pair.

    Always consumes 2*ceil(n/2) RNG steps so the state advance depends only
    on n, never on the drawn values.
    """
    s0, s1, s2, s3 = state
    out = np.empty(n, dtype=np.float64)
    npairs = (n + 1) // 2
    for i in range(npairs):
        x, s0, s1, s2, s3 = step_u64(s0, s1, s2, s3)
        y, s0, s1, s2, s3 = step_u64(s0, s1, s2, s3)
        u1 = ((x >> 11) + 1) * _INV53
        u2 = (y >> 11) * _INV53
        r = math.sqrt(-2.0 * math.log(u1))
        a = _TWO_PI * u2
        out[2 * i] = r * math.cos(a)
        if 2 * i + 1 < n:
            out[2 * i + 1] = r * math.sin(a)
    return out, (s0, s1, s2, s3)


def rnc_scan(z_sorted, same_as_prev):
    """Per-anchor scan of the ranked-contrast objective.

    Inputs are per-row sorted by ascending label distance: ``z_sorted[i, t]``
    is the scaled similarity of anchor i to its t-th closest candidate and
    ``same_as_prev[i, t]`` marks distance ties with position t-1 (column 0 is
    always 0).  For each position the candidate set is {self} plus every
    strictly farther candidate.

    Returns ``(denom, grad)`` where ``denom[i, t]`` is the log-sum-exp over
    that candidate set and ``grad[i, t]`` is the derivative of
    ``sum(denom - z_sorted)`` with respect to ``z_sorted[i, t]``.
    """
    z_sorted = np.ascontiguousarray(z_sorted, dtype=np.float64)
    n, m = z_sorted.shape
    new_group = ~same_as_prev.astype(bool)
    new_group[:, 0] = True
    idx = np.arange(m)

    # suffix[i, t] = logsumexp(z_sorted[i, t:]); one -inf pad column at m
    acc = np.logaddexp.accumulate(z_sorted[:, ::-1], axis=1)[:, ::-1]
    suffix = np.concatenate([acc, np.full((n, 1), -np.inf)], axis=1)

    # b[t] = start of the next tie group (m when none): strictly-farther set
    cand = np.where(new_group, idx, m)
    suffmin = np.minimum.accumulate(cand[:, ::-1], axis=1)[:, ::-1]
    b = np.concatenate([suffmin[:, 1:], np.full((n, 1), m)], axis=1)

    denom = np.logaddexp(np.take_along_axis(suffix, b, axis=1), z_sorted)
    w = np.exp(-denom)

    # a[t] = start of t's own tie group; c[t] = sum of w over earlier groups
    a = np.maximum.accumulate(np.where(new_group, idx, -1), axis=1)
    csum = np.concatenate([np.zeros((n, 1)), np.cumsum(w, axis=1)], axis=1)
    c = np.take_along_axis(csum, a, axis=1)

    # exp(z - denom) is the self term; exact 1 when the candidate set is {self}
    grad = np.exp(z_sorted) * c + np.exp(z_sorted - denom) - 1.0
    return denom, grad


def greedy_retrieve(sim):
    """Row-by-row argmax retrieval without replacement.

    ``sim`` is (queries, gallery); each query takes the highest-similarity
    gallery item not already taken (ties break to the lowest index).
    Requires queries <= gallery.
    """
    sim = np.asarray(sim, dtype=np.float64)
    n_q, n_g = sim.shape
    avail = np.ones(n_g, dtype=bool)
    picks = np.empty(n_q, dtype=np.int64)
    for q in range(n_q):
        row = np.where(avail, sim[q], -np.inf)
        k = int(np.argmax(row))
        picks[q] = k
        avail[k] = False
    return picks
