"""Deterministic mini-batch training loop with Adam and best-checkpoint tracking.

Every source of randomness flows through seed-derived streams, so a (config,
seed) pair reproduces the exact same parameter trajectory, logs and best
checkpoint.  Validation runs over the dev set in fixed batches and the
checkpoint with the lowest validation loss wins, earliest step on ties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from rankclap.labels_data import Dataset, dataset_matrices
from rankclap.losses import LOSS_KINDS, evaluate_loss
from rankclap.model import (
    CheckpointMeta,
    ModelGrads,
    TwoTowerModel,
    backward,
    clone_model,
    config_digest,
    forward,
    get_params,
    set_params,
)
from rankclap.numkit import RngStream, ZERO_NORM_FLOOR, derive_seed, row_norms


@dataclass
class TrainConfig:
    loss_kind: str = "rnc_cm"
    symmetric_rnc: bool = False
    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 15
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    validation_every: Optional[int] = None  # None: validate once per epoch
    grad_clip: Optional[float] = None

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
        # lr 0 is allowed: it must leave parameters untouched, which is useful
        # as a determinism probe
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def digest_payload(self) -> dict:
        return {
            "loss_kind": self.loss_kind,
            "symmetric_rnc": self.symmetric_rnc,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "validation_every": self.validation_every,
            "grad_clip": self.grad_clip,
            "init": "uniform-fanin-v1",
        }


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0


def adam_init(params: Dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adam_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    for k, p in params.items():
        if grads[k].shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {k!r}")
    t = state.t + 1
    new_params, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[k] = m
        new_v[k] = v
    return new_params, AdamState(new_m, new_v, t)


@dataclass
class TrainLog:
    """Per-step and per-validation records plus batch bookkeeping.

    tau in a step record is the temperature after that step's update.
    """

    steps: List[Tuple[int, float, float]] = field(default_factory=list)
    validations: List[Tuple[int, float]] = field(default_factory=list)
    skipped_batches: int = 0
    dropped_rows: int = 0

    def train_csv(self) -> str:
        lines = ["step,train_loss,tau"]
        lines += [f"{s},{loss!r},{tau!r}" for s, loss, tau in self.steps]
        return "\n".join(lines) + "\n"

    def val_csv(self) -> str:
        lines = ["step,val_loss"]
        lines += [f"{s},{loss!r}" for s, loss in self.validations]
        return "\n".join(lines) + "\n"


def _grads_to_dict(g: ModelGrads, grad_theta: float) -> Dict[str, np.ndarray]:
    return {
        "audio_w": g.audio_w,
        "audio_b": g.audio_b,
        "text_w": g.text_w,
        "text_b": g.text_b,
        "theta": np.array([grad_theta]),
    }


def _clip(grads: Dict[str, np.ndarray], max_norm: float) -> Dict[str, np.ndarray]:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


def _nonzero_rows(e_a: np.ndarray, e_t: np.ndarray) -> np.ndarray:
    return (row_norms(e_a) >= ZERO_NORM_FLOOR) & (row_norms(e_t) >= ZERO_NORM_FLOOR)


def batch_loss(model: TwoTowerModel, x_a, x_t, labels, cats, cfg: TrainConfig):
    """Loss and caches for one batch, dropping rows a ReLU head zeroed out.

    The contrastive losses reject zero-norm embeddings, so pairs where either
    side collapsed to the zero vector are excluded (deterministically) before
    the loss sees them.  Returns None when fewer than 2 pairs survive.
    """
    e_a, e_t, cache = forward(model, x_a, x_t)
    keep = _nonzero_rows(e_a, e_t)
    n_dropped = int((~keep).sum())
    if n_dropped:
        if int(keep.sum()) < 2:
            return None, n_dropped
        x_a, x_t = x_a[keep], x_t[keep]
        labels = labels[keep]
        cats = cats[keep] if cats is not None else None
        e_a, e_t, cache = forward(model, x_a, x_t)
    result = evaluate_loss(
        cfg.loss_kind, e_a, e_t, labels, cats, model.temp, cfg.symmetric_rnc
    )
    return (result, cache, int(keep.sum())), n_dropped


def validation_loss(model, x_a, x_t, labels, cats, cfg: TrainConfig) -> float:
    """Size-weighted mean loss over fixed, unshuffled dev batches.

    Batches with fewer than 2 usable pairs are skipped; +inf when nothing is
    usable, so such a state never wins checkpoint selection.
    """
    n = x_a.shape[0]
    total, count = 0.0, 0
    for start in range(0, n, cfg.batch_size):
        idx = slice(start, min(start + cfg.batch_size, n))
        if idx.stop - idx.start < 2:
            continue
        out, _ = batch_loss(
            model, x_a[idx], x_t[idx], labels[idx], cats[idx] if cats is not None else None, cfg
        )
        if out is None:
            continue
        result, _, kept = out
        total += result.loss * kept
        count += kept
    return total / count if count else math.inf


def train(
    model: TwoTowerModel, train_ds: Dataset, dev_ds: Dataset, cfg: TrainConfig
):
    """Run the full regime; returns (best checkpoint, best meta, log).

    The passed-in model is updated in place and ends at the final step; the
    returned checkpoint model is a snapshot of the best-validation state.
    """
    xa_tr, xt_tr, lab_tr, cat_tr = dataset_matrices(train_ds)
    xa_dev, xt_dev, lab_dev, cat_dev = dataset_matrices(dev_ds)
    if cfg.loss_kind == "supcon" and (cat_tr is None or cat_dev is None):
        raise ValueError("supcon training needs category tags on every item")
    if xa_tr.shape[1] != model.audio_dim or xt_tr.shape[1] != model.text_dim:
        raise ValueError("dataset dims do not match model dims")

    digest = config_digest(
        {
            **cfg.digest_payload(),
            "dims": [model.audio_dim, model.text_dim, model.embed_dim],
        }
    )
    n = xa_tr.shape[0]
    rng = RngStream(derive_seed(cfg.seed, "shuffle"))
    params = get_params(model)
    state = adam_init(params)
    log = TrainLog()
    step = 0
    best: Optional[Tuple[float, int, Dict[str, np.ndarray]]] = None

    def validate(at_step: int):
        nonlocal best
        v = validation_loss(model, xa_dev, xt_dev, lab_dev, cat_dev, cfg)
        log.validations.append((at_step, v))
        if best is None or v < best[0]:
            best = (v, at_step, get_params(model))

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            if idx.size < 2:
                log.skipped_batches += 1
                continue
            out, n_dropped = batch_loss(
                model,
                xa_tr[idx],
                xt_tr[idx],
                lab_tr[idx],
                cat_tr[idx] if cat_tr is not None else None,
                cfg,
            )
            log.dropped_rows += n_dropped
            if out is None:
                log.skipped_batches += 1
                continue
            result, cache, _ = out
            if not math.isfinite(result.loss):
                raise RuntimeError(
                    f"non-finite loss {result.loss} at step {step + 1} "
                    f"(epoch {epoch + 1}, batch indices {idx.tolist()}, "
                    f"tau {model.temp.tau})"
                )
            head_grads = backward(model, cache, result.grad_audio, result.grad_text)
            grads = _grads_to_dict(head_grads, result.grad_theta)
            if cfg.grad_clip is not None:
                grads = _clip(grads, cfg.grad_clip)
            params, state = adam_step(
                params, grads, state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps
            )
            set_params(model, params)
            step += 1
            log.steps.append((step, result.loss, model.temp.tau))
            if cfg.validation_every and step % cfg.validation_every == 0:
                validate(step)
        if not cfg.validation_every:
            validate(step)

    if best is None:  # epochs >= 1 guarantees at least one validation
        raise RuntimeError("training produced no validation point")
    best_val, best_step, best_params = best
    best_model = clone_model(model)
    set_params(best_model, best_params)
    meta = CheckpointMeta(step=best_step, val_loss=best_val, config_digest=digest)
    return best_model, meta, log
