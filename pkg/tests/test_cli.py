import hashlib
import json
import os
from pathlib import Path

import pytest

from rankclap.cli import main
from rankclap.labels_data import load_dataset

TINY_CONFIG = """
master_seed = 7
out_dir = "{out}"

[data.synthetic]
n_train = 96
n_dev = 32
n_test = 64
audio_dim = 12
text_dim = 10
latent_dim = 4

[train]
loss = "rnc_cm"
batch_size = 32
epochs = 2
projection_dim = 6

[eval]
trials = 3
samples = 40
lists = 6
projections = 16
"""


def write_config(tmp_path: Path) -> Path:
    cfg = tmp_path / "exp.toml"
    cfg.write_text(TINY_CONFIG.format(out=(tmp_path / "run").as_posix()))
    return cfg


def tree_digest(root: Path) -> dict:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


class TestGenData:
    def test_writes_valid_files(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["gen-data", "--config", str(cfg)]) == 0
        data_dir = tmp_path / "run" / "data"
        for split, n in (("train", 96), ("dev", 32), ("test", 64)):
            ds = load_dataset(data_dir / f"{split}.jsonl")
            assert len(ds) == n and ds.split == split
        manifest = json.loads((data_dir / "manifest.json").read_text())
        assert manifest["kind"] == "rankclap-synthetic-data"

    def test_rerun_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["gen-data", "--config", str(cfg)]) == 0
        first = tree_digest(tmp_path / "run")
        assert main(["gen-data", "--config", str(cfg)]) == 0
        assert tree_digest(tmp_path / "run") == first

    def test_zero_items_rejected(self, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text(
            TINY_CONFIG.format(out=(tmp_path / "run").as_posix()).replace(
                "n_train = 96", "n_train = 0"
            )
        )
        assert main(["gen-data", "--config", str(cfg)]) != 0

    def test_two_data_sources_rejected(self, tmp_path):
        cfg = tmp_path / "bad.toml"
        body = TINY_CONFIG.format(out=(tmp_path / "run").as_posix())
        body += '\n[data.ingest]\ntrain = "x"\ndev = "y"\ntest = "z"\n'
        cfg.write_text(body)
        assert main(["gen-data", "--config", str(cfg)]) != 0


class TestTrain:
    def test_smoke_and_digest_differs_by_loss(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["gen-data", "--config", str(cfg)]) == 0
        assert main(["train", "--config", str(cfg), "--loss", "rnc_cm"]) == 0
        assert main(["train", "--config", str(cfg), "--loss", "sce"]) == 0
        assert main(["train", "--config", str(cfg), "--loss", "supcon"]) == 0
        run = tmp_path / "run"
        ck_rnc = (run / "train_rnc_cm" / "checkpoint.json").read_bytes()
        ck_sce = (run / "train_sce" / "checkpoint.json").read_bytes()
        assert hashlib.sha256(ck_rnc).hexdigest() != hashlib.sha256(ck_sce).hexdigest()
        log = (run / "train_rnc_cm" / "train_log.csv").read_text()
        assert log.splitlines()[0] == "step,train_loss,tau"

    def test_missing_dataset_names_path(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        rc = main(["train", "--config", str(cfg)])
        assert rc != 0
        err = capsys.readouterr().err
        assert "train.jsonl" in err

    def test_rerun_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        main(["gen-data", "--config", str(cfg)])
        assert main(["train", "--config", str(cfg)]) == 0
        first = tree_digest(tmp_path / "run" / "train_rnc_cm")
        assert main(["train", "--config", str(cfg)]) == 0
        assert tree_digest(tmp_path / "run" / "train_rnc_cm") == first

    def test_env_seed_changes_result(self, tmp_path):
        cfg = write_config(tmp_path)
        main(["gen-data", "--config", str(cfg)])
        main(["train", "--config", str(cfg)])
        base = (tmp_path / "run" / "train_rnc_cm" / "checkpoint.json").read_bytes()
        os.environ["RANKCLAP_SEED"] = "12345"
        try:
            main(["train", "--config", str(cfg)])
        finally:
            del os.environ["RANKCLAP_SEED"]
        changed = (tmp_path / "run" / "train_rnc_cm" / "checkpoint.json").read_bytes()
        assert base != changed


class TestEval:
    @pytest.fixture()
    def trained(self, tmp_path):
        cfg = write_config(tmp_path)
        main(["gen-data", "--config", str(cfg)])
        main(["train", "--config", str(cfg), "--loss", "rnc_cm"])
        main(["train", "--config", str(cfg), "--loss", "sce"])
        run = tmp_path / "run"
        return (
            cfg,
            run / "train_rnc_cm" / "checkpoint.json",
            run / "train_sce" / "checkpoint.json",
            run / "data" / "test.jsonl",
        )

    def test_writes_reports_and_is_deterministic(self, trained, tmp_path):
        _, ckpt, _, data = trained
        out = tmp_path / "eval1"
        args = ["eval", "--checkpoint", str(ckpt), "--data", str(data),
                "--trials", "3", "--samples", "40", "--lists", "6",
                "--projections", "16", "--seed", "3", "--out", str(out)]
        assert main(args) == 0
        for name in ("alignment.json", "alignment.csv", "ordinality_voc.json",
                     "ordinality_aoc.json", "retrieval_voc.csv"):
            assert (out / name).exists()
        first = tree_digest(out)
        assert main(args) == 0
        assert tree_digest(out) == first

    def test_voc_only_skips_aoc(self, trained, tmp_path):
        _, ckpt, _, data = trained
        out = tmp_path / "evalvoc"
        assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data),
                     "--mode", "voc", "--trials", "2", "--samples", "30",
                     "--lists", "3", "--projections", "8", "--out", str(out)]) == 0
        assert (out / "ordinality_voc.json").exists()
        assert not (out / "ordinality_aoc.json").exists()

    def test_compare_emits_welch_p_values(self, trained, tmp_path):
        _, ckpt, ckpt2, data = trained
        out = tmp_path / "evalcmp"
        assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data),
                     "--compare", str(ckpt2), "--trials", "3", "--samples", "40",
                     "--lists", "6", "--projections", "16", "--out", str(out)]) == 0
        comparison = json.loads((out / "compare.json").read_text())
        for metric in ("mmd", "wasserstein", "voc_tau", "aoc_tau"):
            assert metric in comparison
            assert "p_two_tailed" in comparison[metric]

    def test_dim_mismatch_rejected(self, trained, tmp_path):
        cfg, ckpt, _, _ = trained
        other = tmp_path / "other.toml"
        other.write_text(
            TINY_CONFIG.format(out=(tmp_path / "other_run").as_posix()).replace(
                "audio_dim = 12", "audio_dim = 14"
            )
        )
        main(["gen-data", "--config", str(other)])
        rc = main(["eval", "--checkpoint", str(ckpt),
                   "--data", str(tmp_path / "other_run" / "data" / "test.jsonl")])
        assert rc != 0


class TestIngestionModeEval:
    def test_eval_uses_label_keyed_queries_without_manifest(self, tmp_path):
        # ingested data (no synthetic manifest next to it): text queries must
        # resolve by exact label lookup, so the pool carries every grid label
        import numpy as np

        from rankclap.labels_data import (
            Dataset, LabeledPair, ValenceArousal, grid_values, save_dataset,
        )
        from rankclap.model import CheckpointMeta, init_model, save_checkpoint
        from rankclap.numkit import RngStream

        rng = RngStream(77)
        items = [
            LabeledPair(rng.normal(4) + 2.0, rng.normal(3) + 2.0, ValenceArousal(v, a))
            for v in grid_values()
            for a in grid_values()
        ]
        data = tmp_path / "ingested.jsonl"
        save_dataset(Dataset(items, "test", 4, 3), data)
        ckpt = tmp_path / "ckpt.json"
        save_checkpoint(init_model(4, 3, 2, seed=5), CheckpointMeta(0, 1.0, "d"), ckpt)

        out = tmp_path / "eval"
        rc = main(["eval", "--checkpoint", str(ckpt), "--data", str(data),
                   "--mode", "voc", "--trials", "2", "--samples", "30",
                   "--lists", "3", "--projections", "8", "--out", str(out)])
        assert rc == 0
        assert (out / "ordinality_voc.json").exists()

    def test_eval_missing_grid_label_errors(self, tmp_path):
        import numpy as np

        from rankclap.labels_data import Dataset, LabeledPair, ValenceArousal, save_dataset
        from rankclap.model import CheckpointMeta, init_model, save_checkpoint
        from rankclap.numkit import RngStream

        rng = RngStream(78)
        items = [
            LabeledPair(rng.normal(4), rng.normal(3), ValenceArousal(1 + 0.1 * i, 2.0))
            for i in range(20)
        ]
        data = tmp_path / "ingested.jsonl"
        save_dataset(Dataset(items, "test", 4, 3), data)
        ckpt = tmp_path / "ckpt.json"
        save_checkpoint(init_model(4, 3, 2, seed=5), CheckpointMeta(0, 1.0, "d"), ckpt)
        rc = main(["eval", "--checkpoint", str(ckpt), "--data", str(data),
                   "--mode", "voc", "--lists", "1", "--trials", "2",
                   "--samples", "10", "--out", str(tmp_path / "e")])
        assert rc != 0


class TestGenPrompts:
    def test_line_count_and_preamble(self, tmp_path):
        out = tmp_path / "prompts.jsonl"
        assert main(["gen-prompts", "--mode", "voc", "--lists", "100",
                     "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 1400
        for line in lines[:20]:
            rec = json.loads(line)
            assert rec["llm_prompt"].startswith("Given the following scale of emotions")
            assert not any(ch.isdigit() for ch in rec["template_caption"])

    def test_rerun_byte_identical(self, tmp_path):
        out = tmp_path / "p.jsonl"
        main(["gen-prompts", "--mode", "aoc", "--lists", "5", "--out", str(out)])
        first = out.read_bytes()
        main(["gen-prompts", "--mode", "aoc", "--lists", "5", "--out", str(out)])
        assert out.read_bytes() == first
