"""Command-line entry point: gen-data, train, eval, gen-prompts.

Every command is seed-reproducible: rerunning with the same config and seed
produces byte-identical artifacts.  All outputs land under the configured
output directory; volatile facts (wall time) go to stderr only.  Seed
precedence: RANKCLAP_SEED env var > --seed flag > config file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from rankclap import evalsuite, labels_data, model as model_mod
from rankclap.labels_data import (
    Dataset,
    SyntheticConfig,
    eval_grid,
    generate_synthetic,
    load_dataset,
    render_style_prompt,
    save_dataset,
    synthetic_maps,
    template_caption,
)
from rankclap.model import config_digest, init_model, load_checkpoint, save_checkpoint
from rankclap.numkit import derive_seed
from rankclap.trainer import TrainConfig, train

SPLIT_SIZES = {"train": 2000, "dev": 500, "test": 1000}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    out_dir: Path
    master_seed: int
    source: str  # "synthetic" | "ingest"
    synthetic: dict
    ingest: dict
    train: dict
    eval: dict

    @classmethod
    def from_toml(cls, path: Path) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}")
        data = raw.get("data", {})
        has_synth = "synthetic" in data
        has_ingest = "ingest" in data
        if has_synth == has_ingest:
            raise ConfigError(
                "config must declare exactly one data source: "
                "[data.synthetic] or [data.ingest]"
            )
        out_dir = Path(raw.get("out_dir", "runs/default"))
        return cls(
            out_dir=out_dir,
            master_seed=int(raw.get("master_seed", 0)),
            source="synthetic" if has_synth else "ingest",
            synthetic=data.get("synthetic", {}),
            ingest=data.get("ingest", {}),
            train=raw.get("train", {}),
            eval=raw.get("eval", {}),
        )

    def effective_seed(self, flag_seed: Optional[int]) -> int:
        env = os.environ.get("RANKCLAP_SEED")
        if env is not None:
            return int(env)
        if flag_seed is not None:
            return flag_seed
        return self.master_seed

    def digest_payload(self) -> dict:
        return {
            "source": self.source,
            "synthetic": self.synthetic,
            "ingest": {k: str(v) for k, v in self.ingest.items()},
            "train": self.train,
            "eval": self.eval,
        }


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    if path.read_text(encoding="utf-8") != text:
        raise ConfigError(f"artifact failed re-read validation: {path}")


def _write_json(path: Path, payload: dict) -> None:
    _write_text(path, json.dumps(payload, indent=1, sort_keys=True) + "\n")
    json.loads(path.read_text(encoding="utf-8"))


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _synth_config(cfg: ExperimentConfig, split: str, seed: int) -> SyntheticConfig:
    s = cfg.synthetic
    n_key = f"n_{split}"
    n = int(s.get(n_key, SPLIT_SIZES[split]))
    if n < 1:
        raise ConfigError(f"{n_key} must be >= 1, got {n}")
    return SyntheticConfig(
        n_items=n,
        audio_dim=int(s.get("audio_dim", 32)),
        text_dim=int(s.get("text_dim", 24)),
        latent_dim=int(s.get("latent_dim", 8)),
        noise_audio=float(s.get("noise_audio", 0.0)),
        noise_text=float(s.get("noise_text", 0.0)),
        gap_magnitude=float(s.get("gap_magnitude", 3.0)),
        seed=derive_seed(seed, "data", split),
        map_seed=derive_seed(seed, "maps"),
        split=split,
    )


def cmd_gen_data(args) -> int:
    cfg = ExperimentConfig.from_toml(Path(args.config))
    if cfg.source != "synthetic":
        raise ConfigError("gen-data needs a [data.synthetic] section")
    seed = cfg.effective_seed(args.seed)
    data_dir = cfg.out_dir / "data"
    split_meta = {}
    for split in ("train", "dev", "test"):
        scfg = _synth_config(cfg, split, seed)
        ds = generate_synthetic(scfg)
        path = data_dir / f"{split}.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(ds, path)
        load_dataset(path)  # validate on re-read
        split_meta[split] = {
            "n_items": scfg.n_items,
            "seed": scfg.seed,
            "path": path.name,
        }
        _log(f"wrote {path} ({scfg.n_items} items)")
    manifest = {
        "kind": "rankclap-synthetic-data",
        "master_seed": seed,
        "map_seed": derive_seed(seed, "maps"),
        "config_digest": config_digest(cfg.digest_payload()),
        "synthetic": {
            "audio_dim": int(cfg.synthetic.get("audio_dim", 32)),
            "text_dim": int(cfg.synthetic.get("text_dim", 24)),
            "latent_dim": int(cfg.synthetic.get("latent_dim", 8)),
            "noise_audio": float(cfg.synthetic.get("noise_audio", 0.0)),
            "noise_text": float(cfg.synthetic.get("noise_text", 0.0)),
            "gap_magnitude": float(cfg.synthetic.get("gap_magnitude", 3.0)),
        },
        "splits": split_meta,
    }
    _write_json(data_dir / "manifest.json", manifest)
    _log(f"wrote {data_dir / 'manifest.json'}")
    return 0


def _load_split(cfg: ExperimentConfig, split: str) -> Dataset:
    if cfg.source == "synthetic":
        path = cfg.out_dir / "data" / f"{split}.jsonl"
    else:
        raw = cfg.ingest.get(split)
        if raw is None:
            raise ConfigError(f"[data.ingest] missing {split!r} path")
        path = Path(raw)
    if not path.exists():
        raise ConfigError(f"dataset file not found: {path}")
    return load_dataset(path)


def cmd_train(args) -> int:
    cfg = ExperimentConfig.from_toml(Path(args.config))
    seed = cfg.effective_seed(args.seed)
    loss_kind = args.loss or cfg.train.get("loss", "rnc_cm")
    train_ds = _load_split(cfg, "train")
    dev_ds = _load_split(cfg, "dev")

    tcfg = TrainConfig(
        loss_kind=loss_kind,
        symmetric_rnc=bool(cfg.train.get("symmetric_rnc", False)),
        learning_rate=float(cfg.train.get("learning_rate", 1e-4)),
        batch_size=int(cfg.train.get("batch_size", 64)),
        epochs=int(cfg.train.get("epochs", 15)),
        seed=derive_seed(seed, "train", loss_kind),
        validation_every=int(cfg.train.get("validation_every", 0)) or None,
    )
    embed_dim = int(cfg.train.get("projection_dim", 16))
    net = init_model(
        train_ds.audio_dim, train_ds.text_dim, embed_dim, seed=derive_seed(seed, "init")
    )

    t0 = time.monotonic()
    best_model, meta, log = train(net, train_ds, dev_ds, tcfg)
    wall = time.monotonic() - t0

    run_dir = cfg.out_dir / f"train_{loss_kind}"
    run_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = run_dir / "checkpoint.json"
    save_checkpoint(best_model, meta, ckpt_path)
    load_checkpoint(ckpt_path)  # validate on re-read
    _write_text(run_dir / "train_log.csv", log.train_csv())
    _write_text(run_dir / "val_log.csv", log.val_csv())
    manifest = {
        "kind": "rankclap-train-run",
        "loss": loss_kind,
        "seed": seed,
        "config_digest": meta.config_digest,
        "best_step": meta.step,
        "best_val_loss": float(meta.val_loss).hex(),
        "steps": len(log.steps),
        "skipped_batches": log.skipped_batches,
        "dropped_rows": log.dropped_rows,
        "dims": {
            "audio": best_model.audio_dim,
            "text": best_model.text_dim,
            "embed": best_model.embed_dim,
        },
    }
    _write_json(run_dir / "manifest.json", manifest)
    _log(
        f"trained {loss_kind}: best val {meta.val_loss:.6f} at step {meta.step} "
        f"({wall:.1f}s wall)"
    )
    return 0


def _query_features_fn(data_path: Path, ds: Dataset):
    """Query embedder for grid labels: synthetic maps when the data manifest
    is present, exact label lookup into the dataset otherwise."""
    manifest_path = data_path.parent / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("kind") == "rankclap-synthetic-data":
            s = manifest["synthetic"]
            maps = synthetic_maps(
                SyntheticConfig(
                    n_items=1,
                    audio_dim=int(s["audio_dim"]),
                    text_dim=int(s["text_dim"]),
                    latent_dim=int(s["latent_dim"]),
                    noise_audio=float(s["noise_audio"]),
                    noise_text=float(s["noise_text"]),
                    gap_magnitude=float(s["gap_magnitude"]),
                    seed=int(manifest["map_seed"]),
                )
            )
            return maps.text_features

    by_label = {
        (it.label.valence, it.label.arousal): it.text_features for it in ds.items
    }

    def lookup(labels):
        rows = []
        for v, a in labels:
            key = (float(v), float(a))
            if key not in by_label:
                raise ConfigError(
                    f"no text features for grid label {key}; "
                    "ingestion-mode ordinality needs every grid label present"
                )
            rows.append(by_label[key])
        return np.stack(rows)

    return lookup


def cmd_eval(args) -> int:
    ckpt_path = Path(args.checkpoint)
    data_path = Path(args.data)
    if not ckpt_path.exists():
        raise ConfigError(f"checkpoint not found: {ckpt_path}")
    if not data_path.exists():
        raise ConfigError(f"dataset file not found: {data_path}")
    net, meta = load_checkpoint(ckpt_path)
    ds = load_dataset(data_path)
    if ds.audio_dim != net.audio_dim or ds.text_dim != net.text_dim:
        raise ConfigError(
            f"dataset dims ({ds.audio_dim}, {ds.text_dim}) do not match "
            f"model dims ({net.audio_dim}, {net.text_dim})"
        )
    seed = int(os.environ.get("RANKCLAP_SEED", args.seed))
    out_dir = Path(args.out) if args.out else ckpt_path.parent / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)

    def evaluate(one_net, one_meta):
        from rankclap.model import project_audio, project_text
        from rankclap.numkit import ZERO_NORM_FLOOR, row_norms

        x_a, x_t, _, _ = labels_data.dataset_matrices(ds)
        e_a = project_audio(one_net, x_a)
        e_t = project_text(one_net, x_t)

        def unit(rows):
            norms = row_norms(rows)
            safe = np.where(norms < ZERO_NORM_FLOOR, 1.0, norms)
            return rows / safe[:, None]

        align = evalsuite.alignment_trials(
            unit(e_a),
            unit(e_t),
            n_trials=args.trials,
            n_samples=args.samples,
            seed=derive_seed(seed, "align", one_meta.config_digest),
            n_projections=args.projections,
        )
        reports = {"alignment": align}
        qf = _query_features_fn(data_path, ds)
        for mode in modes:
            reports[mode] = evalsuite.ordinality_test(
                one_net,
                ds,
                mode,
                n_lists=args.lists,
                seed=derive_seed(seed, "ordinality", mode, one_meta.config_digest),
                query_features=qf,
            )
        return reports

    modes = ("voc", "aoc") if args.mode == "both" else (args.mode,)
    reports = evaluate(net, meta)

    align = reports["alignment"]
    _write_json(out_dir / "alignment.json", align.to_dict())
    _write_text(out_dir / "alignment.csv", align.summary_csv())
    for mode in modes:
        rep = reports[mode]
        _write_json(out_dir / f"ordinality_{mode}.json", rep.to_dict())
        _write_text(out_dir / f"ordinality_{mode}.csv", rep.summary_csv())
        _write_text(out_dir / f"retrieval_{mode}.csv", rep.retrieval_csv())
    _log(
        f"alignment: mmd {align.mmd_mean:.4f}+-{align.mmd_std:.4f}, "
        f"wasserstein {align.wasserstein_mean:.4f}+-{align.wasserstein_std:.4f}"
    )
    for mode in modes:
        rep = reports[mode]
        _log(f"{mode} tau: {rep.mean:.4f}+-{rep.std:.4f}")

    if args.compare:
        other_path = Path(args.compare)
        if not other_path.exists():
            raise ConfigError(f"comparison checkpoint not found: {other_path}")
        other_net, other_meta = load_checkpoint(other_path)
        other = evaluate(other_net, other_meta)
        comparison = {"checkpoint_a": str(ckpt_path), "checkpoint_b": str(other_path)}
        pairs = [
            ("mmd", align.mmd_values, other["alignment"].mmd_values),
            (
                "wasserstein",
                align.wasserstein_values,
                other["alignment"].wasserstein_values,
            ),
        ]
        for mode in modes:
            pairs.append((f"{mode}_tau", reports[mode].taus, other[mode].taus))
        for name, a_vals, b_vals in pairs:
            entry = {
                "mean_a": float(np.mean(a_vals)),
                "mean_b": float(np.mean(b_vals)),
            }
            try:
                t, p = evalsuite.welch_t_test(a_vals, b_vals)
                entry["t"] = t
                entry["p_two_tailed"] = p
            except evalsuite.UndefinedStatisticError as exc:
                entry["t"] = None
                entry["p_two_tailed"] = None
                entry["note"] = str(exc)
            comparison[name] = entry
        _write_json(out_dir / "compare.json", comparison)
        _log(f"wrote {out_dir / 'compare.json'}")
    return 0


def cmd_gen_prompts(args) -> int:
    out_path = Path(args.out)
    grid = eval_grid(args.mode, args.lists)
    lines = []
    for labels in grid:
        for label in labels:
            lines.append(
                json.dumps(
                    {
                        "valence": label.valence,
                        "arousal": label.arousal,
                        "llm_prompt": render_style_prompt(label).prompt_text,
                        "template_caption": template_caption(label),
                    },
                    separators=(",", ":"),
                )
            )
    _write_text(out_path, "\n".join(lines) + "\n")
    _log(f"wrote {out_path} ({len(lines)} prompts)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rankclap",
        description="Cross-modal ranked-contrast training and evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic dataset files")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on generated/ingested data")
    p.add_argument("--config", required=True)
    p.add_argument("--loss", choices=["rnc_cm", "sce", "supcon"], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run alignment and ordinality evaluation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["voc", "aoc", "both"], default="both")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--lists", type=int, default=100)
    p.add_argument("--projections", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--compare", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-prompts", help="emit grid prompts and captions")
    p.add_argument("--mode", choices=["voc", "aoc"], required=True)
    p.add_argument("--lists", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_prompts)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, labels_data.DatasetFormatError, model_mod.CheckpointFormatError) as exc:
        _log(f"error: {exc}")
        return 2
    except ValueError as exc:
        _log(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
