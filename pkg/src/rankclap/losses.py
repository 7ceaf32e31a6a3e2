"""Cross-modal contrastive losses over cosine similarity, with analytic grads.

Three objectives share one interface:

* ``rnc_cm_loss``   - ranked contrast: for every anchor/candidate pair the
  denominator covers the candidate itself plus every candidate whose label
  sits strictly farther from the anchor, so closer pairs face more negatives.
* ``sce_loss``      - symmetric cross-entropy with diagonal targets.
* ``supcon_cm_loss``- supervised contrast where all same-category candidates
  in the other modality count as positives.

All gradients are hand-derived (w.r.t. both embedding matrices and the log
temperature) and checked against the central-difference oracle in
``verify_gradients``.  Temperature is carried as theta with tau = exp(theta),
which keeps tau positive under any gradient step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from rankclap import kernels
from rankclap.labels_data import label_array, label_distance_matrix
from rankclap.numkit import (
    RngStream,
    as_matrix,
    cosine_similarity_matrix,
    derive_seed,
    finite_diff_grad,
    row_norms,
)

LOSS_KINDS = ("rnc_cm", "sce", "supcon")


@dataclass
class TemperatureParam:
    """Learnable temperature, parameterized as tau = exp(theta)."""

    theta: float = 0.0

    @property
    def tau(self) -> float:
        return math.exp(self.theta)


@dataclass
class LossResult:
    loss: float
    grad_audio: np.ndarray  # dL/dE_a, same shape as E_a
    grad_text: np.ndarray  # dL/dE_t, same shape as E_t
    grad_theta: float  # dL/dtheta where tau = exp(theta)


@dataclass
class RankSets:
    """Explicit strictly-farther candidate sets, mainly for oracle tests.

    ``set_for(i, j)`` lists candidate indices k (0-based) whose label distance
    to anchor i strictly exceeds that of candidate j; ties are excluded and j
    itself never appears.
    """

    sets: List[List[Tuple[int, ...]]]

    def set_for(self, i: int, j: int) -> Tuple[int, ...]:
        return self.sets[i][j]


def build_rank_sets(labels_a, labels_t) -> RankSets:
    la = label_array(labels_a)
    lt = label_array(labels_t)
    if la.shape[0] != lt.shape[0]:
        raise ValueError("label lists must have equal length")
    dist = label_distance_matrix(la, lt)
    n = dist.shape[0]
    sets: List[List[Tuple[int, ...]]] = []
    for i in range(n):
        row = dist[i]
        sets.append([tuple(np.nonzero(row > row[j])[0].tolist()) for j in range(n)])
    return RankSets(sets)


def _rnc_direction(z: np.ndarray, dist: np.ndarray) -> Tuple[float, np.ndarray]:
    """One anchoring direction: rows of z are anchors, columns candidates.

    Returns the un-normalized loss sum and dL/dz.  Row-max shifting keeps the
    scan overflow-free; the shift cancels in both outputs.
    """
    z = z - z.max(axis=1, keepdims=True)
    order = np.argsort(dist, axis=1, kind="stable")
    d_sorted = np.take_along_axis(dist, order, axis=1)
    z_sorted = np.take_along_axis(z, order, axis=1)
    same = np.zeros(dist.shape, dtype=np.uint8)
    same[:, 1:] = d_sorted[:, 1:] == d_sorted[:, :-1]
    denom, grad_sorted = kernels.rnc_scan(z_sorted, same)
    loss_sum = float(np.sum(denom - z_sorted))
    grad = np.empty_like(z)
    np.put_along_axis(grad, order, grad_sorted, axis=1)
    return loss_sum, grad


def _cosine_backward(a, b, sims, g_sims):
    na = row_norms(a)
    nb = row_norms(b)
    ah = a / na[:, None]
    bh = b / nb[:, None]
    grad_a = (g_sims @ bh - np.sum(g_sims * sims, axis=1)[:, None] * ah) / na[:, None]
    grad_b = (g_sims.T @ ah - np.sum(g_sims * sims, axis=0)[:, None] * bh) / nb[:, None]
    return grad_a, grad_b


def _propagate(e_a, e_t, sims, z, g_z, tau):
    """Chain dL/dz into (dL/dtheta, dL/dE_a, dL/dE_t).

    z = sims / tau with tau = exp(theta), so dz/dtheta = -z and the theta
    gradient is -sum(g_z * z); the embedding gradients go through the cosine.
    """
    grad_theta = -float(np.sum(g_z * z))
    grad_a, grad_b = _cosine_backward(e_a, e_t, sims, g_z / tau)
    return grad_theta, grad_a, grad_b


def rnc_cm_loss(
    e_a,
    e_t,
    labels_a,
    labels_t,
    temp: TemperatureParam,
    symmetric: bool = False,
    dist: Optional[np.ndarray] = None,
) -> LossResult:
    """Ranked contrastive loss over all anchor/candidate pairs.

    loss = mean over the n*n pairs (i, j) of
    -log( exp(sim_ij / tau) / sum_{k in {j} + farther(i, j)} exp(sim_ik / tau) ).

    Audio rows anchor by default; ``symmetric=True`` averages in the
    text-anchored direction as well.  ``dist`` overrides the label distance
    matrix (any strictly increasing transform of it leaves the result
    unchanged, since only the ordering enters).
    """
    e_a = as_matrix(e_a, "e_a")
    e_t = as_matrix(e_t, "e_t")
    n = e_a.shape[0]
    if e_t.shape[0] != n:
        raise ValueError("embedding row counts differ")
    if dist is None:
        dist = label_distance_matrix(labels_a, labels_t)
    dist = np.asarray(dist, dtype=np.float64)
    if dist.shape != (n, n):
        raise ValueError(f"distance matrix must be ({n}, {n})")
    sims = cosine_similarity_matrix(e_a, e_t)
    tau = temp.tau
    z = sims / tau

    loss_sum, g_z = _rnc_direction(z, dist)
    if symmetric:
        loss_sum_t, g_z_t = _rnc_direction(z.T, dist.T)
        loss = (loss_sum + loss_sum_t) / (2.0 * n * n)
        g_z = (g_z + g_z_t.T) / (2.0 * n * n)
    else:
        loss = loss_sum / (n * n)
        g_z = g_z / (n * n)

    grad_theta, grad_a, grad_b = _propagate(e_a, e_t, sims, z, g_z, tau)
    return LossResult(loss, grad_a, grad_b, grad_theta)


def _row_softmax(z):
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    lse = (m + np.log(s)).ravel()
    return e / s, lse


def sce_loss(e_a, e_t, temp: TemperatureParam) -> LossResult:
    """Symmetric cross-entropy with diagonal targets (both directions, 1/2 each)."""
    e_a = as_matrix(e_a, "e_a")
    e_t = as_matrix(e_t, "e_t")
    n = e_a.shape[0]
    if e_t.shape[0] != n:
        raise ValueError("embedding row counts differ")
    if n < 2:
        raise ValueError("contrastive targets need at least 2 pairs")
    sims = cosine_similarity_matrix(e_a, e_t)
    tau = temp.tau
    z = sims / tau

    p_row, lse_row = _row_softmax(z)
    p_col, lse_col = _row_softmax(z.T)
    diag = np.diag(z)
    loss = 0.5 * (float(np.mean(lse_row - diag)) + float(np.mean(lse_col - diag)))
    eye = np.eye(n)
    g_z = (p_row - eye) / (2.0 * n) + (p_col.T - eye) / (2.0 * n)

    grad_theta, grad_a, grad_b = _propagate(e_a, e_t, sims, z, g_z, tau)
    return LossResult(loss, grad_a, grad_b, grad_theta)


def supcon_cm_loss(e_a, e_t, categories, temp: TemperatureParam) -> LossResult:
    """Supervised contrast: same-category candidates across modalities are positives.

    Each anchor averages -log softmax mass over its positive set; the
    denominator runs over all candidates.  With all categories distinct this
    reduces exactly to ``sce_loss``.
    """
    e_a = as_matrix(e_a, "e_a")
    e_t = as_matrix(e_t, "e_t")
    n = e_a.shape[0]
    if e_t.shape[0] != n:
        raise ValueError("embedding row counts differ")
    if n < 2:
        raise ValueError("contrastive targets need at least 2 pairs")
    cats = np.asarray(categories)
    if cats.shape != (n,):
        raise ValueError(f"categories must have shape ({n},)")
    pos = (cats[:, None] == cats[None, :]).astype(np.float64)
    counts = pos.sum(axis=1)
    if (counts == 0).any():
        raise ValueError("an anchor has no same-category candidate")
    sims = cosine_similarity_matrix(e_a, e_t)
    tau = temp.tau
    z = sims / tau

    p_row, lse_row = _row_softmax(z)
    p_col, lse_col = _row_softmax(z.T)
    pos_mean_row = (pos * z).sum(axis=1) / counts
    pos_mean_col = (pos * z).sum(axis=0) / counts  # pos is symmetric
    loss = 0.5 * (
        float(np.mean(lse_row - pos_mean_row)) + float(np.mean(lse_col - pos_mean_col))
    )
    g_z = (p_row - pos / counts[:, None]) / (2.0 * n) + (
        p_col.T - pos / counts[None, :]
    ) / (2.0 * n)

    grad_theta, grad_a, grad_b = _propagate(e_a, e_t, sims, z, g_z, tau)
    return LossResult(loss, grad_a, grad_b, grad_theta)


def evaluate_loss(
    kind: str,
    e_a,
    e_t,
    labels,
    categories,
    temp: TemperatureParam,
    symmetric_rnc: bool = False,
) -> LossResult:
    """Uniform dispatcher used by the trainer and the gradient checker."""
    if kind == "rnc_cm":
        return rnc_cm_loss(e_a, e_t, labels, labels, temp, symmetric=symmetric_rnc)
    if kind == "sce":
        return sce_loss(e_a, e_t, temp)
    if kind == "supcon":
        if categories is None:
            raise ValueError("supcon loss needs categories")
        return supcon_cm_loss(e_a, e_t, categories, temp)
    raise ValueError(f"unknown loss kind {kind!r} (expected one of {LOSS_KINDS})")


def verify_gradients(
    loss_kind: str, n: int, d: int, seed: int, symmetric_rnc: bool = False
) -> float:
    """Max deviation between analytic and central-difference gradients.

    Builds a random batch, flattens (E_a, E_t, theta) into one vector and
    compares both gradient routes coordinate-wise.  Returns
    max|analytic - numeric| / max(1, |grad|_inf).  Sizes are capped because
    finite differences cost two loss evaluations per coordinate.
    """
    if n > 16 or d > 8:
        raise ValueError("gradient check capped at n <= 16, d <= 8")
    rng = RngStream(derive_seed(seed, "gradcheck", loss_kind))
    e_a = rng.normal_matrix(n, d)
    e_t = rng.normal_matrix(n, d)
    labels = 1.0 + 6.0 * rng.uniform(2 * n).reshape(n, 2)
    cats = np.array([rng.below(3) for _ in range(n)], dtype=np.int64)
    theta0 = 0.25

    def unpack(vec):
        ea = vec[: n * d].reshape(n, d)
        et = vec[n * d : 2 * n * d].reshape(n, d)
        return ea, et, TemperatureParam(float(vec[-1]))

    def f(vec) -> float:
        ea, et, temp = unpack(vec)
        return evaluate_loss(
            loss_kind, ea, et, labels, cats, temp, symmetric_rnc
        ).loss

    x0 = np.concatenate([e_a.ravel(), e_t.ravel(), [theta0]])
    res = evaluate_loss(
        loss_kind, e_a, e_t, labels, cats, TemperatureParam(theta0), symmetric_rnc
    )
    analytic = np.concatenate(
        [res.grad_audio.ravel(), res.grad_text.ravel(), [res.grad_theta]]
    )
    numeric = finite_diff_grad(f, x0, h=1e-6)
    scale = max(1.0, float(np.abs(numeric).max()), float(np.abs(analytic).max()))
    return float(np.abs(analytic - numeric).max()) / scale
