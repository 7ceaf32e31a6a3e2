"""Export job definition and manifest parsing.

Manifest: CSV with header ``path,caption,valence,arousal,category``; category
may be empty.  Every row must carry both modalities and a label.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional


class ManifestError(ValueError):
    pass


@dataclass
class ManifestRow:
    audio_path: Path
    caption: str
    valence: float
    arousal: float
    category: Optional[int] = None


@dataclass
class ExportJob:
    rows: List[ManifestRow]
    out_path: Path
    encoder: str = "deterministic"  # "deterministic" | "pretrained"
    split: str = "train"
    device: str = "cpu"
    batch_size: int = 8

    AUDIO_DIM = 1024
    TEXT_DIM = 768


def read_manifest(path, base_dir: Optional[Path] = None) -> List[ManifestRow]:
    path = Path(path)
    base = base_dir if base_dir is not None else path.parent
    rows: List[ManifestRow] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"path", "caption", "valence", "arousal", "category"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ManifestError(
                f"manifest must have columns {sorted(required)}, got {reader.fieldnames}"
            )
        for i, rec in enumerate(reader, start=1):
            if not rec["path"] or not rec["caption"]:
                raise ManifestError(f"manifest row {i}: path and caption are required")
            try:
                valence = float(rec["valence"])
                arousal = float(rec["arousal"])
            except (TypeError, ValueError):
                raise ManifestError(f"manifest row {i}: bad label values")
            if not (math.isfinite(valence) and math.isfinite(arousal)):
                raise ManifestError(f"manifest row {i}: non-finite label")
            category = rec["category"].strip() if rec["category"] else ""
            audio_path = Path(rec["path"])
            if not audio_path.is_absolute():
                audio_path = base / audio_path
            rows.append(
                ManifestRow(
                    audio_path=audio_path,
                    caption=rec["caption"],
                    valence=valence,
                    arousal=arousal,
                    category=int(category) if category else None,
                )
            )
    if not rows:
        raise ManifestError("manifest contains no rows")
    return rows
