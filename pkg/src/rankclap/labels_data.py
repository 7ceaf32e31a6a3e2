"""Valence-arousal label space, paired synthetic data, ingestion IO, prompts.

The ingestion file format (version 1) is the contract with any external
feature exporter: UTF-8 text, one JSON header line
``{"version": 1, "audio_dim": V, "text_dim": U, "split": "train"}`` followed
by one JSON record per item
``{"valence": f, "arousal": f, "category": int|null, "audio": [f; V],
"text": [f; U]}``.  Files containing NaN/Inf anywhere are rejected.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from rankclap.numkit import RngStream

VALENCE_MIN = 0.5
VALENCE_MAX = 7.0
SPLITS = ("train", "dev", "test")

INGEST_VERSION = 1

# Fixed instruction template for emitting speaking-style description requests
# to an external language model.  {v} and {a} carry one-decimal label values.
PROMPT_TEMPLATE = (
    "Given the following scale of emotions - valence (1-very negative; "
    "7-very positive), arousal (1-very calm; 7-very active), write a sentence "
    "describing a speaking style that is {v} on valence, {a} on arousal. "
    "Do not use any numbers in the sentence. "
    "The sentence should start with: The person is speaking ..."
)

# Deterministic caption vocabulary: five buckets per attribute, no digits.
VALENCE_PHRASES = (
    "very negative",
    "somewhat negative",
    "neutral",
    "somewhat positive",
    "very positive",
)
AROUSAL_PHRASES = (
    "very calm",
    "somewhat calm",
    "steady",
    "somewhat active",
    "highly active",
)


class DatasetFormatError(ValueError):
    """An ingestion file violates the version-1 format contract."""


@dataclass(frozen=True)
class ValenceArousal:
    """A point in the 2-D emotion label plane, both axes on [0.5, 7]."""

    valence: float
    arousal: float

    def __post_init__(self):
        for name, v in (("valence", self.valence), ("arousal", self.arousal)):
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v!r}")
            if not VALENCE_MIN <= v <= VALENCE_MAX:
                raise ValueError(
                    f"{name} {v} outside [{VALENCE_MIN}, {VALENCE_MAX}]"
                )


@dataclass
class LabeledPair:
    audio_features: np.ndarray
    text_features: np.ndarray
    label: ValenceArousal
    category: Optional[int] = None


@dataclass
class Dataset:
    items: List[LabeledPair]
    split: str
    audio_dim: int
    text_dim: int
    provenance: str = ""

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        if not self.items:
            raise ValueError("dataset must contain at least one item")
        for i, item in enumerate(self.items):
            if item.audio_features.shape != (self.audio_dim,):
                raise ValueError(f"item {i}: audio dim != {self.audio_dim}")
            if item.text_features.shape != (self.text_dim,):
                raise ValueError(f"item {i}: text dim != {self.text_dim}")

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for the paired synthetic benchmark generator.

    ``map_seed`` keys the frozen feature maps; leaving it None ties the maps
    to ``seed``.  Splits that should share one synthetic "world" (train/dev/
    test of a single experiment) use distinct seeds but one map_seed.
    """

    n_items: int
    audio_dim: int = 32
    text_dim: int = 24
    latent_dim: int = 8
    noise_audio: float = 0.0
    noise_text: float = 0.0
    gap_magnitude: float = 3.0
    seed: int = 0
    map_seed: Optional[int] = None
    split: str = "train"

    def __post_init__(self):
        if self.n_items < 1:
            raise ValueError("n_items must be >= 1")
        for name in ("audio_dim", "text_dim", "latent_dim"):
            if getattr(self, name) < 2:
                raise ValueError(f"{name} must be >= 2")
        for name in ("noise_audio", "noise_text", "gap_magnitude"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}")


@dataclass(frozen=True)
class StylePrompt:
    label: ValenceArousal
    prompt_text: str


def label_array(labels) -> np.ndarray:
    """(n, 2) float64 array from ValenceArousal objects or an array-like."""
    if isinstance(labels, np.ndarray):
        arr = np.ascontiguousarray(labels, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError(f"label array must be (n, 2), got {arr.shape}")
        return arr
    return np.array([(l.valence, l.arousal) for l in labels], dtype=np.float64)


def label_distance(a: ValenceArousal, b: ValenceArousal) -> float:
    """Euclidean distance in the valence-arousal plane."""
    return math.hypot(a.valence - b.valence, a.arousal - b.arousal)


def label_distance_matrix(labels_a, labels_t) -> np.ndarray:
    """Pairwise label distances: out[i, j] = ||labels_a[i] - labels_t[j]||."""
    la = label_array(labels_a)
    lt = label_array(labels_t)
    dv = la[:, 0:1] - lt[None, :, 0]
    da = la[:, 1:2] - lt[None, :, 1]
    return np.hypot(dv, da)


def quadrant_category(label: ValenceArousal) -> int:
    """Quadrant of the label around (4, 4); values 0-3.

    Low/low -> 0, high valence -> +1, high arousal -> +2; boundaries at
    exactly 4 count as low.
    """
    return (1 if label.valence > 4.0 else 0) + (2 if label.arousal > 4.0 else 0)


@dataclass(frozen=True)
class SyntheticMaps:
    """Frozen feature maps shared by paired synthetic audio/text features.

    Both modalities mix the same smooth sinusoidal feature lift g(label);
    text additionally receives a fixed offset of ``gap_magnitude`` along the
    unit vector ``gap_direction``.
    """

    cfg: SyntheticConfig
    phase_weights: np.ndarray  # (ceil(K/2), 2)
    phase_offsets: np.ndarray  # (ceil(K/2),)
    mix_audio: np.ndarray  # (V, K)
    mix_text: np.ndarray  # (U, K)
    gap_direction: np.ndarray  # (U,), unit norm

    def latent(self, labels) -> np.ndarray:
        la = label_array(labels)
        phase = la @ self.phase_weights.T + self.phase_offsets
        k = self.cfg.latent_dim
        return np.concatenate(
            [np.sin(phase), np.cos(phase[:, : k // 2])], axis=1
        )

    def audio_features(self, labels) -> np.ndarray:
        return self.latent(labels) @ self.mix_audio.T

    def text_features(self, labels, include_gap: bool = True) -> np.ndarray:
        base = self.latent(labels) @ self.mix_text.T
        if include_gap:
            return base + self.cfg.gap_magnitude * self.gap_direction
        return base


# Lengthscale of the sinusoidal label lift: a sizeable fraction of the label
# range, so features vary smoothly (near-monotone) across the plane.
_LIFT_LENGTHSCALE = 3.0

# Feature spread relative to a unit semantic offset.  Kept well below 1 to
# mimic encoder embedding anisotropy: real pooled speech/sentence embeddings
# are tightly clustered, with semantic variation small against the cluster
# offset, which is what makes an injected modality gap hard to project away.
_MIX_SCALE = 0.2


def synthetic_maps(cfg: SyntheticConfig) -> SyntheticMaps:
    """Build the deterministic feature maps for a config (labels not drawn).

    Mixing matrices are keyed by (seed, output dim) so two modalities with
    equal dims share one map.  The gap direction lies inside the span of the
    text mixing map (a rigid semantic bias, not removable by uniformly
    rescaling the signal); it never depends on noise or gap settings.
    """
    root = RngStream(cfg.seed if cfg.map_seed is None else cfg.map_seed)
    k = cfg.latent_dim
    half = (k + 1) // 2
    lift = root.child("lift")
    w = lift.normal_matrix(half, 2) / _LIFT_LENGTHSCALE
    beta = lift.uniform(half) * (2.0 * math.pi)
    mix_a = root.child("mix", cfg.audio_dim).normal_matrix(cfg.audio_dim, k)
    mix_a = mix_a * (_MIX_SCALE / math.sqrt(k))
    mix_t = root.child("mix", cfg.text_dim).normal_matrix(cfg.text_dim, k)
    mix_t = mix_t * (_MIX_SCALE / math.sqrt(k))
    g = mix_t @ root.child("gap").normal(k)
    g = g / np.linalg.norm(g)
    return SyntheticMaps(cfg, w, beta, mix_a, mix_t, g)


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Paired dataset with shared labels and an injected modality gap.

    Labels are uniform on [1, 7]^2; audio and text features are noisy linear
    mixes of one shared label lift, so the two modalities carry the same
    semantics up to noise plus a rigid text-side offset.  Byte-identical for
    equal configs.
    """
    maps = synthetic_maps(cfg)
    root = RngStream(cfg.seed)
    n = cfg.n_items
    labels = 1.0 + 6.0 * root.child("labels").uniform(2 * n).reshape(n, 2)
    audio = maps.audio_features(labels)
    text = maps.text_features(labels, include_gap=False)
    if cfg.noise_audio > 0:
        audio = audio + cfg.noise_audio * root.child("noise", "audio").normal_matrix(
            n, cfg.audio_dim
        )
    if cfg.noise_text > 0:
        text = text + cfg.noise_text * root.child("noise", "text").normal_matrix(
            n, cfg.text_dim
        )
    text = text + cfg.gap_magnitude * maps.gap_direction

    items = []
    for i in range(n):
        label = ValenceArousal(float(labels[i, 0]), float(labels[i, 1]))
        items.append(
            LabeledPair(
                audio_features=audio[i].copy(),
                text_features=text[i].copy(),
                label=label,
                category=quadrant_category(label),
            )
        )
    provenance = (
        f"synthetic seed={cfg.seed} n={n} dims=({cfg.audio_dim},{cfg.text_dim},"
        f"{cfg.latent_dim}) noise=({cfg.noise_audio},{cfg.noise_text}) "
        f"gap={cfg.gap_magnitude}"
    )
    return Dataset(items, cfg.split, cfg.audio_dim, cfg.text_dim, provenance)


def dataset_matrices(ds: Dataset):
    """Stack a dataset into (audio (n,V), text (n,U), labels (n,2), categories)."""
    x_a = np.stack([it.audio_features for it in ds.items])
    x_t = np.stack([it.text_features for it in ds.items])
    labels = np.array(
        [(it.label.valence, it.label.arousal) for it in ds.items], dtype=np.float64
    )
    if any(it.category is None for it in ds.items):
        cats = None
    else:
        cats = np.array([it.category for it in ds.items], dtype=np.int64)
    return x_a, x_t, labels, cats


def _reject_constant(value: str):
    raise DatasetFormatError(f"non-finite JSON constant {value!r} not allowed")


def _check_vector(values, dim: int, record: int, side: str) -> np.ndarray:
    if not isinstance(values, list) or len(values) != dim:
        raise DatasetFormatError(
            f"record {record}: {side} length {len(values) if isinstance(values, list) else '??'}"
            f" does not match header dim {dim}"
        )
    arr = np.asarray(values, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise DatasetFormatError(f"record {record}: non-finite {side} value")
    return arr


def save_dataset(ds: Dataset, path) -> None:
    """Write the version-1 ingestion format; exact float round-trip."""
    for i, item in enumerate(ds.items, start=1):
        if not (
            np.isfinite(item.audio_features).all()
            and np.isfinite(item.text_features).all()
        ):
            raise DatasetFormatError(f"record {i}: non-finite feature value")
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "version": INGEST_VERSION,
            "audio_dim": ds.audio_dim,
            "text_dim": ds.text_dim,
            "split": ds.split,
        }
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for item in ds.items:
            rec = {
                "valence": item.label.valence,
                "arousal": item.label.arousal,
                "category": item.category,
                "audio": item.audio_features.tolist(),
                "text": item.text_features.tolist(),
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_dataset(path) -> Dataset:
    """Read the version-1 ingestion format, validating every record."""
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise DatasetFormatError("missing header line")
        try:
            header = json.loads(header_line, parse_constant=_reject_constant)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"malformed header: {exc}") from exc
        if not isinstance(header, dict):
            raise DatasetFormatError("header must be a JSON object")
        version = header.get("version")
        if version != INGEST_VERSION:
            raise DatasetFormatError(
                f"unsupported format version {version!r} (expected {INGEST_VERSION})"
            )
        for key in ("audio_dim", "text_dim", "split"):
            if key not in header:
                raise DatasetFormatError(f"header missing {key!r}")
        audio_dim = header["audio_dim"]
        text_dim = header["text_dim"]
        split = header["split"]
        if not (isinstance(audio_dim, int) and isinstance(text_dim, int)):
            raise DatasetFormatError("header dims must be integers")
        if split not in SPLITS:
            raise DatasetFormatError(f"header split must be one of {SPLITS}")

        items = []
        record = 0
        for line in fh:
            if not line.strip():
                continue
            record += 1
            try:
                rec = json.loads(line, parse_constant=_reject_constant)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"record {record}: malformed JSON: {exc}") from exc
            for key in ("valence", "arousal", "category", "audio", "text"):
                if key not in rec:
                    raise DatasetFormatError(f"record {record}: missing {key!r}")
            try:
                label = ValenceArousal(float(rec["valence"]), float(rec["arousal"]))
            except (TypeError, ValueError) as exc:
                raise DatasetFormatError(f"record {record}: bad label: {exc}") from exc
            category = rec["category"]
            if category is not None and not isinstance(category, int):
                raise DatasetFormatError(f"record {record}: category must be int or null")
            audio = _check_vector(rec["audio"], audio_dim, record, "audio")
            text = _check_vector(rec["text"], text_dim, record, "text")
            items.append(LabeledPair(audio, text, label, category))

    if not items:
        raise DatasetFormatError("file contains no records")
    return Dataset(items, split, audio_dim, text_dim, provenance=f"loaded from {path}")


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    """Exact equality, features compared bit-for-bit."""
    if (a.split, a.audio_dim, a.text_dim, len(a)) != (b.split, b.audio_dim, b.text_dim, len(b)):
        return False
    for x, y in zip(a.items, b.items):
        if x.label != y.label or x.category != y.category:
            return False
        if not (
            np.array_equal(x.audio_features, y.audio_features)
            and np.array_equal(x.text_features, y.text_features)
        ):
            return False
    return True


def render_style_prompt(label: ValenceArousal) -> StylePrompt:
    """Instruction text for requesting one style description from an LLM."""
    text = PROMPT_TEMPLATE.format(v=f"{label.valence:.1f}", a=f"{label.arousal:.1f}")
    return StylePrompt(label, text)


def _bucket(x: float) -> int:
    if x < 2.5:
        return 0
    if x < 3.5:
        return 1
    if x <= 4.5:
        return 2
    if x <= 5.5:
        return 3
    return 4


def template_caption(label: ValenceArousal) -> str:
    """Deterministic digit-free speaking-style sentence for a label.

    Five buckets per attribute; the full label plane maps onto 25 sentences.
    """
    v_phrase = VALENCE_PHRASES[_bucket(label.valence)]
    a_phrase = AROUSAL_PHRASES[_bucket(label.arousal)]
    return f"The person is speaking in a {v_phrase} tone with {a_phrase} energy."


GRID_STEPS = 14


def grid_values() -> List[float]:
    """The 14 attribute values 0.5, 1.0, ..., 7.0."""
    return [0.5 * k for k in range(1, GRID_STEPS + 1)]


def eval_grid(mode: str, n_lists: int) -> List[List[ValenceArousal]]:
    """Query label lists for the ordinal-consistency retrieval protocol.

    Each list varies one attribute over 0.5..7.0 in steps of 0.5 while the
    other attribute stays fixed; the fixed value starts at 0.5, increases by
    0.5 per list and wraps back to 0.5 after reaching 7.  mode "voc" varies
    valence, mode "aoc" varies arousal.
    """
    mode = mode.lower()
    if mode not in ("voc", "aoc"):
        raise ValueError(f"mode must be 'voc' or 'aoc', got {mode!r}")
    if n_lists < 1:
        raise ValueError("n_lists must be >= 1")
    varied = grid_values()
    lists = []
    for li in range(n_lists):
        fixed = 0.5 + 0.5 * (li % GRID_STEPS)
        if mode == "voc":
            lists.append([ValenceArousal(v, fixed) for v in varied])
        else:
            lists.append([ValenceArousal(fixed, a) for a in varied])
    return lists
