"""Command line for the embedding exporter.

Exit codes: 0 success, 2 usage, 3 missing input file, 4 export error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .export import export_images, export_texts
from .writer import ExportError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_EXPORT = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fas-export",
        description="Encode images or texts into the promptfas embedding format",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export-images", help="encode a JSONL image manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", default="hash-pool",
                   help="hash-pool[:dim] or clip:<hf-model-name>")
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=16)
    p.set_defaults(images=True)

    p = sub.add_parser("export-texts", help="encode a text file, one line per row")
    p.add_argument("--texts", required=True, help="UTF-8 text file")
    p.add_argument("--model", default="hash-pool")
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(images=False)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.images:
            if not Path(args.manifest).exists():
                print(f"error: {EXIT_MISSING}: manifest not found: {args.manifest}",
                      file=sys.stderr)
                return EXIT_MISSING
            n = export_images(args.manifest, args.model, args.out, args.batch_size)
        else:
            if not Path(args.texts).exists():
                print(f"error: {EXIT_MISSING}: text file not found: {args.texts}",
                      file=sys.stderr)
                return EXIT_MISSING
            lines = Path(args.texts).read_text("utf-8").splitlines()
            n = export_texts(lines, args.model, args.out, args.batch_size)
    except ExportError as e:
        print(f"error: {EXIT_EXPORT}: {e}", file=sys.stderr)
        return EXIT_EXPORT
    print(f"wrote {n} rows to {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
