import json
import math
import subprocess
import sys
import wave
from pathlib import Path

import numpy as np
import pytest

from embed_exporter.cli import main
from embed_exporter.encoders import (
    DeterministicEncoder,
    crop_or_pad,
    load_wav_mono,
    resample_linear,
)
from embed_exporter.export import export_embeddings
from embed_exporter.job import ExportJob, ManifestError, read_manifest


def write_wav(path: Path, freq: float, seconds: float = 0.25, rate: int = 8000):
    n = int(seconds * rate)
    samples = (0.4 * np.sin(2 * math.pi * freq * np.arange(n) / rate) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(rate)
        wav.writeframes(samples.tobytes())


def toy_manifest(tmp_path: Path, n_rows: int = 3) -> Path:
    rows = ["path,caption,valence,arousal,category"]
    for i in range(n_rows):
        wav_path = tmp_path / f"clip{i}.wav"
        write_wav(wav_path, freq=200.0 + 50 * i)
        rows.append(f"clip{i}.wav,The person is speaking plainly,{2.0 + i},{3.0 + i},{i % 2}")
    manifest = tmp_path / "manifest.csv"
    manifest.write_text("\n".join(rows) + "\n")
    return manifest


class TestPreprocessing:
    def test_wav_decode_and_resample(self, tmp_path):
        path = tmp_path / "a.wav"
        write_wav(path, freq=440.0, seconds=0.5, rate=8000)
        samples, rate = load_wav_mono(path)
        assert rate == 8000 and samples.size == 4000
        resampled = resample_linear(samples, rate)
        assert abs(resampled.size - 8000) <= 1  # 0.5 s at 16 kHz

    def test_crop_and_pad(self):
        short = np.ones(100)
        padded = crop_or_pad(short)
        assert padded.size == 160_000 and padded[100:].sum() == 0.0
        long = np.ones(200_000)
        assert crop_or_pad(long).size == 160_000


class TestDeterministicEncoder:
    def test_shapes_and_determinism(self, tmp_path):
        path = tmp_path / "x.wav"
        write_wav(path, 330.0)
        enc = DeterministicEncoder()
        a1, a2 = enc.encode_audio(path), enc.encode_audio(path)
        t1, t2 = enc.encode_text("hello there"), enc.encode_text("hello there")
        assert a1.shape == (1024,) and t1.shape == (768,)
        assert np.array_equal(a1, a2) and np.array_equal(t1, t2)
        assert not np.array_equal(t1, enc.encode_text("different caption"))


class TestManifest:
    def test_missing_columns_rejected(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("path,caption\nx.wav,hi\n")
        with pytest.raises(ManifestError):
            read_manifest(bad)

    def test_empty_manifest_rejected_and_no_file_written(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("path,caption,valence,arousal,category\n")
        with pytest.raises(ManifestError):
            read_manifest(empty)
        assert not (tmp_path / "out.jsonl").exists()


class TestExport:
    def test_three_row_export_loads_in_primary_format(self, tmp_path):
        manifest = toy_manifest(tmp_path)
        out = tmp_path / "features.jsonl"
        job = ExportJob(rows=read_manifest(manifest), out_path=out, encoder="deterministic")
        summary = export_embeddings(job)
        assert summary.n_written == 3 and summary.n_skipped == 0

        header = json.loads(out.read_text().splitlines()[0])
        assert header == {"version": 1, "audio_dim": 1024, "text_dim": 768, "split": "train"}

        # the primary component accepts the file (external-interface check)
        from rankclap.labels_data import load_dataset

        ds = load_dataset(out)
        assert len(ds) == 3 and ds.audio_dim == 1024 and ds.text_dim == 768
        assert [it.label.valence for it in ds.items] == [2.0, 3.0, 4.0]

    def test_rerun_byte_identical(self, tmp_path):
        manifest = toy_manifest(tmp_path)
        out = tmp_path / "features.jsonl"
        job = ExportJob(rows=read_manifest(manifest), out_path=out, encoder="deterministic")
        export_embeddings(job)
        first = out.read_bytes()
        export_embeddings(job)
        assert out.read_bytes() == first

    def test_unreadable_audio_skipped_with_count(self, tmp_path):
        manifest = toy_manifest(tmp_path)
        (tmp_path / "clip1.wav").write_bytes(b"not a wav file")
        out = tmp_path / "features.jsonl"
        job = ExportJob(rows=read_manifest(manifest), out_path=out, encoder="deterministic")
        summary = export_embeddings(job)
        assert summary.n_written == 2 and summary.n_skipped == 1
        assert "row 2" in summary.errors[0]
        # order preserved for the surviving rows
        from rankclap.labels_data import load_dataset

        ds = load_dataset(out)
        assert [it.label.valence for it in ds.items] == [2.0, 4.0]

    def test_cli_roundtrip(self, tmp_path):
        manifest = toy_manifest(tmp_path)
        out = tmp_path / "cli_features.jsonl"
        rc = main(["--manifest", str(manifest), "--out", str(out), "--encoder", "deterministic"])
        assert rc == 0
        assert out.exists()
        export_manifest = json.loads((tmp_path / "cli_features.jsonl.export.json").read_text())
        assert export_manifest["n_written"] == 3
        assert export_manifest["encoder"]["encoder"] == "deterministic"


class TestPrimaryTrainsOnExport:
    def test_exported_file_trains_two_steps_via_primary_cli(self, tmp_path):
        # 3 rows, batch 2 -> one usable batch per epoch; 2 epochs = 2 steps
        manifest = toy_manifest(tmp_path)
        data_dir = tmp_path / "run" / "data"
        data_dir.mkdir(parents=True)
        for split in ("train", "dev"):
            job = ExportJob(
                rows=read_manifest(manifest),
                out_path=data_dir / f"{split}.jsonl",
                encoder="deterministic",
                split=split,
            )
            export_embeddings(job)

        cfg = tmp_path / "exp.toml"
        cfg.write_text(
            f'master_seed = 1\nout_dir = "{(tmp_path / "run").as_posix()}"\n'
            "[data.ingest]\n"
            f'train = "{(data_dir / "train.jsonl").as_posix()}"\n'
            f'dev = "{(data_dir / "dev.jsonl").as_posix()}"\n'
            f'test = "{(data_dir / "train.jsonl").as_posix()}"\n'
            "[train]\nloss = \"rnc_cm\"\nbatch_size = 2\nepochs = 2\nprojection_dim = 4\n"
        )
        proc = subprocess.run(
            [sys.executable, "-m", "rankclap.cli", "train", "--config", str(cfg)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        log = (tmp_path / "run" / "train_rnc_cm" / "train_log.csv").read_text().splitlines()
        assert len(log) == 1 + 2  # header + exactly two steps
        assert (tmp_path / "run" / "train_rnc_cm" / "checkpoint.json").exists()
