"""Two-tower projection model: one affine+ReLU head per modality plus a
learnable temperature, with bit-exact JSON checkpointing.

Checkpoint files are JSON with every float serialized through ``float.hex``,
so a round trip reproduces parameters exactly on any platform.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from rankclap.losses import TemperatureParam
from rankclap.numkit import RngStream, as_matrix, derive_seed

CHECKPOINT_VERSION = 1

PARAM_NAMES = ("audio_w", "audio_b", "text_w", "text_b", "theta")


class CheckpointFormatError(ValueError):
    """A checkpoint file is corrupt or has an unsupported version."""


class StaleCacheError(RuntimeError):
    """A forward cache was used after the model's parameters changed."""


@dataclass
class ProjectionHead:
    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)


@dataclass
class TwoTowerModel:
    proj_audio: ProjectionHead
    proj_text: ProjectionHead
    temp: TemperatureParam
    audio_dim: int
    text_dim: int
    embed_dim: int
    version: int = 0  # bumped on every parameter update; guards caches


@dataclass
class ForwardCache:
    pre_audio: np.ndarray
    pre_text: np.ndarray
    x_audio: np.ndarray
    x_text: np.ndarray
    model_version: int


@dataclass
class ModelGrads:
    audio_w: np.ndarray
    audio_b: np.ndarray
    text_w: np.ndarray
    text_b: np.ndarray


@dataclass
class CheckpointMeta:
    step: int
    val_loss: float
    config_digest: str


def init_model(audio_dim: int, text_dim: int, embed_dim: int, seed: int) -> TwoTowerModel:
    """Fresh model: weights uniform in +-sqrt(6/in_dim), zero biases, tau = 1."""
    if min(audio_dim, text_dim, embed_dim) < 1:
        raise ValueError("all dims must be >= 1")

    def head(in_dim: int, tag: str) -> ProjectionHead:
        stream = RngStream(derive_seed(seed, "init", tag))
        bound = math.sqrt(6.0 / in_dim)
        w = (2.0 * stream.uniform(embed_dim * in_dim) - 1.0) * bound
        return ProjectionHead(w.reshape(embed_dim, in_dim), np.zeros(embed_dim))

    return TwoTowerModel(
        proj_audio=head(audio_dim, "audio"),
        proj_text=head(text_dim, "text"),
        temp=TemperatureParam(0.0),
        audio_dim=audio_dim,
        text_dim=text_dim,
        embed_dim=embed_dim,
    )


def _apply_head(head: ProjectionHead, x: np.ndarray) -> np.ndarray:
    return x @ head.weight.T + head.bias


def project_audio(model: TwoTowerModel, x) -> np.ndarray:
    """Audio tower only: relu(W x + b) per row."""
    x = as_matrix(x, "x_audio")
    if x.shape[1] != model.audio_dim:
        raise ValueError(f"expected audio dim {model.audio_dim}, got {x.shape[1]}")
    return np.maximum(_apply_head(model.proj_audio, x), 0.0)


def project_text(model: TwoTowerModel, x) -> np.ndarray:
    """Text tower only: relu(W x + b) per row."""
    x = as_matrix(x, "x_text")
    if x.shape[1] != model.text_dim:
        raise ValueError(f"expected text dim {model.text_dim}, got {x.shape[1]}")
    return np.maximum(_apply_head(model.proj_text, x), 0.0)


def forward(model: TwoTowerModel, x_audio, x_text):
    """Project both sides; returns (e_audio, e_text, cache for backward)."""
    x_audio = as_matrix(x_audio, "x_audio")
    x_text = as_matrix(x_text, "x_text")
    if x_audio.shape[1] != model.audio_dim:
        raise ValueError(f"expected audio dim {model.audio_dim}, got {x_audio.shape[1]}")
    if x_text.shape[1] != model.text_dim:
        raise ValueError(f"expected text dim {model.text_dim}, got {x_text.shape[1]}")
    pre_a = _apply_head(model.proj_audio, x_audio)
    pre_t = _apply_head(model.proj_text, x_text)
    cache = ForwardCache(pre_a, pre_t, x_audio, x_text, model.version)
    return np.maximum(pre_a, 0.0), np.maximum(pre_t, 0.0), cache


def backward(model: TwoTowerModel, cache: ForwardCache, grad_e_audio, grad_e_text) -> ModelGrads:
    """Chain upstream embedding gradients through ReLU into head parameters."""
    if cache.model_version != model.version:
        raise StaleCacheError(
            f"cache built at model version {cache.model_version}, "
            f"model now at {model.version}"
        )
    gp_a = np.asarray(grad_e_audio, dtype=np.float64) * (cache.pre_audio > 0.0)
    gp_t = np.asarray(grad_e_text, dtype=np.float64) * (cache.pre_text > 0.0)
    return ModelGrads(
        audio_w=gp_a.T @ cache.x_audio,
        audio_b=gp_a.sum(axis=0),
        text_w=gp_t.T @ cache.x_text,
        text_b=gp_t.sum(axis=0),
    )


def get_params(model: TwoTowerModel) -> Dict[str, np.ndarray]:
    """Copy of all trainable parameters, keyed by name (theta as shape (1,))."""
    return {
        "audio_w": model.proj_audio.weight.copy(),
        "audio_b": model.proj_audio.bias.copy(),
        "text_w": model.proj_text.weight.copy(),
        "text_b": model.proj_text.bias.copy(),
        "theta": np.array([model.temp.theta]),
    }


def set_params(model: TwoTowerModel, params: Dict[str, np.ndarray]) -> None:
    """Install parameters (copied) and bump the cache-guard version."""
    model.proj_audio.weight = np.array(params["audio_w"], dtype=np.float64)
    model.proj_audio.bias = np.array(params["audio_b"], dtype=np.float64)
    model.proj_text.weight = np.array(params["text_w"], dtype=np.float64)
    model.proj_text.bias = np.array(params["text_b"], dtype=np.float64)
    model.temp = TemperatureParam(float(np.asarray(params["theta"]).ravel()[0]))
    model.version += 1


def clone_model(model: TwoTowerModel) -> TwoTowerModel:
    out = init_model(model.audio_dim, model.text_dim, model.embed_dim, seed=0)
    set_params(out, get_params(model))
    return out


def _hex_list(arr: np.ndarray):
    return [float(v).hex() for v in np.asarray(arr, dtype=np.float64).ravel()]


def _from_hex(values, shape, what: str) -> np.ndarray:
    expected = int(np.prod(shape))
    if not isinstance(values, list) or len(values) != expected:
        raise CheckpointFormatError(f"{what}: expected {expected} values")
    try:
        arr = np.array([float.fromhex(v) for v in values], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"{what}: bad hex float: {exc}") from exc
    return arr.reshape(shape)


def save_checkpoint(model: TwoTowerModel, meta: CheckpointMeta, path) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "dims": {
            "audio": model.audio_dim,
            "text": model.text_dim,
            "embed": model.embed_dim,
        },
        "weights_hexfloat": {
            "audio": _hex_list(model.proj_audio.weight),
            "text": _hex_list(model.proj_text.weight),
        },
        "biases_hexfloat": {
            "audio": _hex_list(model.proj_audio.bias),
            "text": _hex_list(model.proj_text.bias),
        },
        "theta_hexfloat": float(model.temp.theta).hex(),
        "step": meta.step,
        "val_loss": float(meta.val_loss).hex(),
        "config_digest": meta.config_digest,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> Tuple[TwoTowerModel, CheckpointMeta]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"corrupt checkpoint payload: {exc}") from exc
    if not isinstance(payload, dict):
        raise CheckpointFormatError("checkpoint must be a JSON object")
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(
            f"unsupported checkpoint version {version!r} (expected {CHECKPOINT_VERSION})"
        )
    try:
        dims = payload["dims"]
        v, u, d = int(dims["audio"]), int(dims["text"]), int(dims["embed"])
        weights = payload["weights_hexfloat"]
        biases = payload["biases_hexfloat"]
        model = TwoTowerModel(
            proj_audio=ProjectionHead(
                _from_hex(weights["audio"], (d, v), "weights_hexfloat.audio"),
                _from_hex(biases["audio"], (d,), "biases_hexfloat.audio"),
            ),
            proj_text=ProjectionHead(
                _from_hex(weights["text"], (d, u), "weights_hexfloat.text"),
                _from_hex(biases["text"], (d,), "biases_hexfloat.text"),
            ),
            temp=TemperatureParam(float.fromhex(payload["theta_hexfloat"])),
            audio_dim=v,
            text_dim=u,
            embed_dim=d,
        )
        meta = CheckpointMeta(
            step=int(payload["step"]),
            val_loss=float.fromhex(payload["val_loss"]),
            config_digest=str(payload["config_digest"]),
        )
    except CheckpointFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"corrupt checkpoint payload: {exc}") from exc
    return model, meta


def config_digest(payload: dict) -> str:
    """Stable digest of a config mapping (canonical JSON, sha256)."""
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
