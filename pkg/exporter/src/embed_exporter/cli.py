"""Command line: rankclap-export --manifest rows.csv --out features.jsonl"""

import argparse
import sys

from embed_exporter.export import export_embeddings
from embed_exporter.job import ExportJob, ManifestError, read_manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rankclap-export",
        description="Encode audio/caption pairs into the rankclap ingestion format",
    )
    parser.add_argument("--manifest", required=True, help="CSV: path,caption,valence,arousal,category")
    parser.add_argument("--out", required=True, help="output ingestion file (.jsonl)")
    parser.add_argument("--encoder", choices=["deterministic", "pretrained"], default="pretrained")
    parser.add_argument("--split", choices=["train", "dev", "test"], default="train")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", type=int, default=8)
    args = parser.parse_args(argv)

    try:
        rows = read_manifest(args.manifest)
        job = ExportJob(
            rows=rows, out_path=args.out, encoder=args.encoder,
            split=args.split, device=args.device, batch_size=args.batch_size,
        )
        summary = export_embeddings(job)
    except (ManifestError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(
        f"wrote {args.out}: {summary.n_written} records, {summary.n_skipped} skipped",
        file=sys.stderr,
    )
    for err in summary.errors:
        print(f"  skipped {err}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
