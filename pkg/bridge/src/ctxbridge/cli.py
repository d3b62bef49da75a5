"""Command-line entry point for the extraction bridge."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .extract import BridgeError, ExtractionJob, extract_context_vectors


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctxbridge")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    p = sub.add_parser("extract", help="extract masked-context vectors")
    p.add_argument("--corpus", required=True,
                   help='NDJSON of {"id", "entity"|null, "left", "right"}')
    p.add_argument("--model", default="bert-base-cased",
                   help="model identifier or local checkpoint directory")
    p.add_argument("--max-length", type=int, default=128)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--device", default="cpu")
    p.add_argument("--emit", choices=("contexts", "mentions"), default="contexts")
    p.add_argument("--out", required=True)
    p.add_argument("--stats", help="optional path for the extraction stats JSON")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    corpus = Path(args.corpus)
    if not corpus.exists():
        print(f"error: --corpus: no such file: {corpus}", file=sys.stderr)
        return 1
    job = ExtractionJob(corpus=corpus, model=args.model, max_length=args.max_length,
                        batch_size=args.batch_size, device=args.device,
                        emit=args.emit)
    try:
        stats = extract_context_vectors(job, args.out)
    except BridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.stats:
        with open(args.stats, "w", encoding="utf-8") as fh:
            json.dump(stats.as_dict(), fh, indent=2, sort_keys=True)
    print(f"emitted {stats.emitted}/{stats.records} vectors of dim {stats.dim} "
          f"({stats.truncated} truncated, "
          f"{stats.skipped_no_entity + stats.skipped_mask_lost} skipped)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
