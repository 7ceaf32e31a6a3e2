"""Embedding-distribution alignment and cross-modal ordinality evaluation.

Alignment: kernel two-sample statistic (RBF, median-heuristic bandwidth) and
a sliced 1-D optimal-transport distance, repeated over seeded subsample
trials.  Ordinality: greedy no-replacement retrieval of pool items for query
lists that sweep one label attribute, scored with tie-corrected Kendall tau.
Welch's two-sample t test (two-tailed) backs the significance comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from rankclap import kernels
from rankclap.labels_data import (
    Dataset,
    dataset_matrices,
    eval_grid,
    grid_values,
    label_distance_matrix,
)
from rankclap.model import TwoTowerModel, project_audio, project_text
from rankclap.numkit import RngStream, ZERO_NORM_FLOOR, as_matrix, derive_seed, row_norms


class UndefinedStatisticError(ValueError):
    """A statistic's denominator vanished (all ties / zero variance)."""


# ---------------------------------------------------------------------------
# distribution distances
# ---------------------------------------------------------------------------

def pairwise_sqdist(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    nx = np.einsum("ij,ij->i", x, x)
    ny = np.einsum("ij,ij->i", y, y)
    d2 = nx[:, None] + ny[None, :] - 2.0 * (x @ y.T)
    return np.maximum(d2, 0.0)


def median_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    """Median pairwise distance over the pooled rows, floored at 1e-12."""
    z = np.vstack([x, y])
    d2 = pairwise_sqdist(z, z)
    iu = np.triu_indices(z.shape[0], k=1)
    med = float(np.median(np.sqrt(d2[iu])))
    return max(med, 1e-12)


def mmd_rbf(x, y, bandwidth: Optional[float] = None) -> float:
    """RBF-kernel two-sample statistic between row sets x and y.

    Biased estimator: mean(Kxx) + mean(Kyy) - 2 mean(Kxy) with
    k(a, b) = exp(-|a-b|^2 / (2 sigma^2)); returns sqrt(max(0, .)).  sigma
    defaults to the pooled median distance.  Arguments are canonicalized by
    content before computing, so swapping x and y returns the identical float,
    and byte-identical inputs return exactly 0.
    """
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if x.shape[1] != y.shape[1]:
        raise ValueError("feature dims differ")
    if x.shape[0] < 2 or y.shape[0] < 2:
        raise ValueError("each sample needs at least 2 rows")
    key_x = (x.shape[0], x.tobytes())
    key_y = (y.shape[0], y.tobytes())
    if key_x == key_y:
        return 0.0
    if key_y < key_x:
        x, y = y, x
    n = x.shape[0]
    z = np.vstack([x, y])
    d2 = pairwise_sqdist(z, z)
    if bandwidth is None:
        iu = np.triu_indices(z.shape[0], k=1)
        sigma = max(float(np.median(np.sqrt(d2[iu]))), 1e-12)
    else:
        sigma = float(bandwidth)
    if sigma <= 0:
        raise ValueError("bandwidth must be positive")
    kern = np.exp((-0.5 / (sigma * sigma)) * d2)
    k_xx = float(np.mean(kern[:n, :n]))
    k_yy = float(np.mean(kern[n:, n:]))
    k_xy = float(np.mean(kern[:n, n:]))
    return math.sqrt(max(0.0, k_xx + k_yy - 2.0 * k_xy))


def sliced_wasserstein(x, y, n_projections: int = 128, seed: int = 0) -> float:
    """Mean 1-D 2-Wasserstein distance over seeded random projections.

    Each unit direction projects both clouds to the line, where the optimal
    coupling is the sorted pairing (equal sizes) or linear quantile
    interpolation at max(n, m) midpoints (unequal sizes).
    """
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if x.shape[1] != y.shape[1]:
        raise ValueError("feature dims differ")
    if n_projections < 1:
        raise ValueError("n_projections must be >= 1")
    dim = x.shape[1]
    dirs = RngStream(derive_seed(seed, "sw-dirs")).normal_matrix(n_projections, dim)
    dirs = dirs / row_norms(dirs)[:, None]
    px = np.sort(x @ dirs.T, axis=0)  # (n, P)
    py = np.sort(y @ dirs.T, axis=0)  # (m, P)
    if x.shape[0] == y.shape[0]:
        diff = px - py
    else:
        t = max(x.shape[0], y.shape[0])
        q = (np.arange(t) + 0.5) / t
        diff = np.quantile(px, q, axis=0) - np.quantile(py, q, axis=0)
    w2 = np.sqrt(np.mean(diff * diff, axis=0))
    return float(np.mean(w2))


def exact_wasserstein(x, y) -> float:
    """Exact 2-Wasserstein via optimal assignment; oracle for small clouds."""
    from scipy.optimize import linear_sum_assignment

    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    n = x.shape[0]
    if y.shape[0] != n or n > 64:
        raise ValueError("exact mode needs equal sizes n <= 64")
    cost = pairwise_sqdist(x, y)
    rows, cols = linear_sum_assignment(cost)
    return math.sqrt(float(cost[rows, cols].sum()) / n)


# ---------------------------------------------------------------------------
# rank correlation and significance
# ---------------------------------------------------------------------------

def kendall_tau_b(x: Sequence[float], y: Sequence[float]) -> float:
    """Tie-corrected Kendall rank correlation.

    tau_b = (C - D) / sqrt((C + D + Tx)(C + D + Ty)); pairs tied in both
    sequences count nowhere.  Raises UndefinedStatisticError when either
    sequence is fully tied (zero denominator).
    """
    xs = [float(v) for v in x]
    ys = [float(v) for v in y]
    if len(xs) != len(ys):
        raise ValueError("sequences must have equal length")
    if len(xs) < 2:
        raise ValueError("need at least 2 observations")
    conc = disc = tx = ty = 0
    for i in range(len(xs)):
        for j in range(i + 1, len(xs)):
            dx = xs[i] - xs[j]
            dy = ys[i] - ys[j]
            if dx == 0.0 and dy == 0.0:
                continue
            if dx == 0.0:
                tx += 1
            elif dy == 0.0:
                ty += 1
            elif (dx > 0.0) == (dy > 0.0):
                conc += 1
            else:
                disc += 1
    denom = math.sqrt((conc + disc + tx) * (conc + disc + ty))
    if denom == 0.0:
        raise UndefinedStatisticError("all ties in a sequence; tau undefined")
    return (conc - disc) / denom


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the regularized incomplete beta (Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) by continued fraction."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def welch_t_test(a: Sequence[float], b: Sequence[float]):
    """Welch's unequal-variance t test; returns (t, two-tailed p).

    Degrees of freedom follow Welch-Satterthwaite; the p-value evaluates the
    t distribution tail through the incomplete beta function.
    """
    xa = np.asarray(a, dtype=np.float64).ravel()
    xb = np.asarray(b, dtype=np.float64).ravel()
    na, nb = xa.size, xb.size
    if na < 2 or nb < 2:
        raise ValueError("each sample needs at least 2 observations")
    va = float(np.var(xa, ddof=1))
    vb = float(np.var(xb, ddof=1))
    if va == 0.0 and vb == 0.0:
        raise UndefinedStatisticError("zero variance in both samples")
    sa, sb = va / na, vb / nb
    se = math.sqrt(sa + sb)
    t = (float(np.mean(xa)) - float(np.mean(xb))) / se
    df = (sa + sb) ** 2 / (
        (sa * sa) / (na - 1) + (sb * sb) / (nb - 1)
    )
    if t == 0.0:
        return 0.0, 1.0
    p = betainc_reg(df / 2.0, 0.5, df / (df + t * t))
    return t, min(1.0, max(0.0, p))


# ---------------------------------------------------------------------------
# protocol: alignment trials
# ---------------------------------------------------------------------------

@dataclass
class AlignmentReport:
    mmd_values: List[float]
    wasserstein_values: List[float]
    n_trials: int
    n_samples: int
    n_projections: int
    seed: int

    @property
    def mmd_mean(self) -> float:
        return float(np.mean(self.mmd_values))

    @property
    def mmd_std(self) -> float:
        return float(np.std(self.mmd_values, ddof=1)) if self.n_trials > 1 else 0.0

    @property
    def wasserstein_mean(self) -> float:
        return float(np.mean(self.wasserstein_values))

    @property
    def wasserstein_std(self) -> float:
        return (
            float(np.std(self.wasserstein_values, ddof=1)) if self.n_trials > 1 else 0.0
        )

    def to_dict(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "n_samples": self.n_samples,
            "n_projections": self.n_projections,
            "seed": self.seed,
            "mmd": self.mmd_values,
            "wasserstein": self.wasserstein_values,
            "mmd_mean": self.mmd_mean,
            "mmd_std": self.mmd_std,
            "wasserstein_mean": self.wasserstein_mean,
            "wasserstein_std": self.wasserstein_std,
        }

    def summary_csv(self) -> str:
        lines = ["trial,mmd,wasserstein"]
        for i, (m, w) in enumerate(zip(self.mmd_values, self.wasserstein_values), 1):
            lines.append(f"{i},{m!r},{w!r}")
        lines.append(f"mean,{self.mmd_mean!r},{self.wasserstein_mean!r}")
        lines.append(f"std,{self.mmd_std!r},{self.wasserstein_std!r}")
        return "\n".join(lines) + "\n"


def alignment_trials(
    e_a_pool,
    e_t_pool,
    n_trials: int,
    n_samples: int,
    seed: int,
    n_projections: int = 128,
) -> AlignmentReport:
    """Repeated paired-subsample alignment measurement between two pools.

    Each trial draws ``n_samples`` paired indices without replacement (the
    same indices on both sides, preserving pairing) and records both
    distribution distances.  Trial sub-seeds derive from ``seed``, so reports
    are reproducible and trial-order independent.
    """
    e_a_pool = as_matrix(e_a_pool, "e_a_pool")
    e_t_pool = as_matrix(e_t_pool, "e_t_pool")
    if e_a_pool.shape[0] != e_t_pool.shape[0]:
        raise ValueError("pools must be paired (equal row counts)")
    pool = e_a_pool.shape[0]
    if n_samples > pool:
        raise ValueError(f"n_samples {n_samples} exceeds pool size {pool}")
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    mmds, sws = [], []
    for trial in range(n_trials):
        stream = RngStream(derive_seed(seed, "align-trial", trial))
        idx = stream.sample_without_replacement(pool, n_samples)
        xa = e_a_pool[idx]
        xt = e_t_pool[idx]
        mmds.append(mmd_rbf(xa, xt))
        sws.append(
            sliced_wasserstein(
                xa, xt, n_projections, seed=derive_seed(seed, "align-sw", trial)
            )
        )
    return AlignmentReport(mmds, sws, n_trials, n_samples, n_projections, seed)


# ---------------------------------------------------------------------------
# protocol: ordinality retrieval
# ---------------------------------------------------------------------------

@dataclass
class OrdinalityReport:
    mode: str
    taus: List[float]
    fixed_values: List[float]  # per list
    grid_varied: List[float]  # shared by every list, ascending
    retrieved: List[List[float]]  # ground-truth varied attr of retrieved items
    seed: int
    n_degenerate: int = 0
    n_tau_undefined: int = 0  # lists whose retrievals were fully tied (tau recorded as 0)
    query_order: str = "ascending-varied"

    @property
    def mean(self) -> float:
        return float(np.mean(self.taus))

    @property
    def std(self) -> float:
        return float(np.std(self.taus, ddof=1)) if len(self.taus) > 1 else 0.0

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "query_order": self.query_order,
            "n_lists": len(self.taus),
            "grid_varied": self.grid_varied,
            "fixed_values": self.fixed_values,
            "taus": self.taus,
            "tau_mean": self.mean,
            "tau_std": self.std,
            "n_degenerate": self.n_degenerate,
            "n_tau_undefined": self.n_tau_undefined,
        }

    def summary_csv(self) -> str:
        lines = ["list,fixed_value,tau"]
        for i, (fv, tau) in enumerate(zip(self.fixed_values, self.taus), 1):
            lines.append(f"{i},{fv!r},{tau!r}")
        lines.append(f"mean,,{self.mean!r}")
        lines.append(f"std,,{self.std!r}")
        return "\n".join(lines) + "\n"

    def retrieval_csv(self) -> str:
        """Plot-ready: one row per query with its retrieved ground truth."""
        lines = ["list,query_value,retrieved_value"]
        for li, values in enumerate(self.retrieved, 1):
            for qv, rv in zip(self.grid_varied, values):
                lines.append(f"{li},{qv!r},{rv!r}")
        return "\n".join(lines) + "\n"


def _guarded_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine similarity where zero-norm rows score -1 against everything.

    ReLU towers can output an all-zero row, which has no direction; ranking
    it below every valid cosine (range [0, 1] here) keeps retrieval total and
    deterministic.  Returns (sims, n_degenerate).
    """
    na = row_norms(a)
    nb = row_norms(b)
    bad_a = na < ZERO_NORM_FLOOR
    bad_b = nb < ZERO_NORM_FLOOR
    ah = np.where(bad_a[:, None], 0.0, a / np.where(bad_a, 1.0, na)[:, None])
    bh = np.where(bad_b[:, None], 0.0, b / np.where(bad_b, 1.0, nb)[:, None])
    sims = ah @ bh.T
    if bad_a.any():
        sims[bad_a, :] = -1.0
    if bad_b.any():
        sims[:, bad_b] = -1.0
    return sims, int(bad_a.sum()) + int(bad_b.sum())


def ordinality_test(
    model: Optional[TwoTowerModel],
    audio_pool: Dataset,
    mode: str,
    n_lists: int,
    seed: int,
    query_features: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    oracle: bool = False,
) -> OrdinalityReport:
    """Greedy no-replacement retrieval sweep scored with Kendall tau.

    Builds the query grid for ``mode``, turns each query label into a
    text-side embedding (via ``query_features`` then the text tower), and for
    every list retrieves pool items by descending cosine similarity without
    replacement; the pool resets between lists.  Queries run in ascending
    order of the varied attribute.  Per-list tau compares the query values
    with the retrieved items' ground-truth values of the varied attribute.

    ``oracle=True`` replaces model similarity with negative label distance,
    which must produce tau = 1 whenever the pool covers the grid: it
    validates the harness independently of any model.
    """
    grid = eval_grid(mode, n_lists)
    pool_x, _, pool_labels, _ = dataset_matrices(audio_pool)
    n_pool = pool_x.shape[0]
    list_len = len(grid[0])
    if n_pool < list_len:
        raise ValueError(f"pool size {n_pool} smaller than list length {list_len}")
    attr = 0 if mode.lower() == "voc" else 1

    all_labels = np.array(
        [(l.valence, l.arousal) for lst in grid for l in lst], dtype=np.float64
    )
    n_degenerate = 0
    if oracle:
        sims_all = -label_distance_matrix(all_labels, pool_labels)
    else:
        if model is None or query_features is None:
            raise ValueError("model and query_features required unless oracle=True")
        q_x = query_features(all_labels)
        e_q = project_text(model, q_x)
        e_pool = project_audio(model, pool_x)
        sims_all, n_degenerate = _guarded_cosine(e_q, e_pool)
        # ReLU towers emit nonnegative embeddings, so every valid cosine must
        # land in [0, 1]; anything else means a broken projection
        if float(sims_all.max()) > 1.0 + 1e-9:
            raise RuntimeError("cosine similarity above 1: invalid embeddings")
        valid = sims_all[sims_all != -1.0]
        if valid.size and float(valid.min()) < -1e-9:
            raise RuntimeError("negative cosine from nonnegative embeddings")

    taus: List[float] = []
    retrieved: List[List[float]] = []
    fixed_values: List[float] = []
    n_tau_undefined = 0
    varied = grid_values()
    for li, labels in enumerate(grid):
        sims = sims_all[li * list_len : (li + 1) * list_len]
        picks = kernels.greedy_retrieve(sims)
        if len(set(picks.tolist())) != list_len:
            raise RuntimeError("retrieval returned a duplicate pool item")
        got = pool_labels[picks, attr].tolist()
        try:
            taus.append(kendall_tau_b(varied, got))
        except UndefinedStatisticError:
            # all retrieved values tied: no ordinal association measurable
            taus.append(0.0)
            n_tau_undefined += 1
        retrieved.append(got)
        fixed_values.append(labels[0].arousal if attr == 0 else labels[0].valence)

    return OrdinalityReport(
        mode=mode.lower(),
        taus=taus,
        fixed_values=fixed_values,
        grid_varied=varied,
        retrieved=retrieved,
        seed=seed,
        n_degenerate=n_degenerate,
        n_tau_undefined=n_tau_undefined,
    )
