"""Command-line entry point for corpus extraction."""

from __future__ import annotations

import argparse
import sys

from .corpus import load_corpus
from .errors import MmextractError
from .extract import extract


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(
        prog="mmextract",
        description="Embed an image/claim corpus into EMB1 + manifest files.",
    )
    parser.add_argument("--corpus", required=True, help="JSONL corpus specification")
    parser.add_argument(
        "--encoder",
        default="hash:256",
        help="encoder id: hash:<dim> (offline) or clip:<model-id> (pretrained)",
    )
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--prefix", default="corpus")
    args = parser.parse_args(argv)

    try:
        spec = load_corpus(args.corpus, encoder=args.encoder, batch_size=args.batch_size)
        result = extract(spec, args.out_dir, prefix=args.prefix)
    except MmextractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(2)
    print(
        f"embedded {result['count']} records at dim {result['dim']}: "
        f"{result['image_emb']}, {result['text_emb']}, {result['manifest']}"
    )


if __name__ == "__main__":
    main()
