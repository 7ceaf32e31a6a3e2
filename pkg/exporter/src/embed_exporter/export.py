"""Export pipeline: encode manifest rows and write ingestion format v1."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np

from embed_exporter.encoders import AudioReadError, make_encoder
from embed_exporter.job import ExportJob

INGEST_VERSION = 1


@dataclass
class ExportSummary:
    n_written: int
    n_skipped: int
    errors: List[str] = field(default_factory=list)


def _format_float(v: float) -> float:
    """Round-trip through 7 significant digits (float32-level provenance)."""
    return float(f"{v:.7g}")


def export_embeddings(job: ExportJob) -> ExportSummary:
    """Encode every manifest row in order and write the ingestion file.

    Rows whose audio cannot be read are skipped with a logged error; the
    output preserves manifest order for the surviving rows.  Raises if no
    row survives (no file is written in that case).
    """
    encoder = make_encoder(job.encoder, device=job.device)
    records = []
    errors: List[str] = []
    for i, row in enumerate(job.rows, start=1):
        try:
            audio = encoder.encode_audio(row.audio_path)
            text = encoder.encode_text(row.caption)
        except AudioReadError as exc:
            errors.append(f"row {i}: {exc}")
            continue
        if not (np.isfinite(audio).all() and np.isfinite(text).all()):
            errors.append(f"row {i}: encoder produced non-finite values")
            continue
        records.append(
            {
                "valence": row.valence,
                "arousal": row.arousal,
                "category": row.category,
                "audio": [_format_float(v) for v in audio],
                "text": [_format_float(v) for v in text],
            }
        )
    if not records:
        raise RuntimeError(
            "no rows exported; errors: " + "; ".join(errors) if errors else "empty job"
        )

    out_path = Path(job.out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "version": INGEST_VERSION,
        "audio_dim": job.AUDIO_DIM,
        "text_dim": job.TEXT_DIM,
        "split": job.split,
    }
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")

    manifest_path = out_path.with_suffix(out_path.suffix + ".export.json")
    manifest = {
        "kind": "rankclap-export",
        "encoder": encoder.describe(),
        "n_written": len(records),
        "n_skipped": len(errors),
        "errors": errors,
    }
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return ExportSummary(len(records), len(errors), errors)
