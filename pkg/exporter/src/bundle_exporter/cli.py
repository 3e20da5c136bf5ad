"""Exporter CLI: `bundle-export export ...` and `bundle-export validate ...`."""

from __future__ import annotations

import argparse
import sys

from .datasets import DATASETS
from .errors import ExporterError
from .export import (
    ExportJob,
    export_image_embeddings,
    export_text_embeddings,
    validate_bundle,
)


def _cmd_export(args) -> int:
    job = ExportJob(
        dataset=args.dataset,
        out_dir=args.out,
        encoder=args.encoder,
        views=args.views,
        dim=args.dim,
        seed=args.seed,
        images_dir=args.images,
        with_labels=not args.no_labels,
        live_llm=args.live_llm,
    )
    wrote = []
    if args.images:
        wrote.append(export_image_embeddings(job))
    if not args.images_only:
        classes_dir, desc_dir = export_text_embeddings(job)
        wrote.append(classes_dir)
        if desc_dir:
            wrote.append(desc_dir)
    for path in wrote:
        print(f"wrote {path}")
    return 0


def _cmd_validate(args) -> int:
    try:
        stats = validate_bundle(args.bundle)
    except Exception as exc:
        print(f"INVALID: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    print("OK " + " ".join(f"{k}={v}" for k, v in stats.items()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bundle-export",
        description="Export embeddings from frozen encoders into bundle directories")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("export", help="export a dataset's embeddings")
    e.add_argument("--dataset", required=True, choices=DATASETS)
    e.add_argument("--out", required=True)
    e.add_argument("--views", type=int, default=2)
    e.add_argument("--encoder", default="hash", choices=("hash", "clip"))
    e.add_argument("--dim", type=int, default=512,
                   help="feature width (hash backend only)")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--images", help="image folder with one subdirectory per class")
    e.add_argument("--images-only", action="store_true",
                   help="skip the text bundles")
    e.add_argument("--no-labels", action="store_true",
                   help="omit labels.bin (for unlabeled downstream exports)")
    e.add_argument("--live-llm", action="store_true",
                   help="query an LLM for descriptions instead of the cache")
    e.set_defaults(func=_cmd_export)

    v = sub.add_parser("validate", help="validate a bundle directory")
    v.add_argument("bundle")
    v.set_defaults(func=_cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ExporterError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
