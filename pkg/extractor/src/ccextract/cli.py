"""Command-line front end: `ccextract images` and `ccextract texts`."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .encoders import get_encoder
from .extract import ExtractJob, extract_images, extract_texts


def _job_images(args) -> list[tuple[int, Path]]:
    if args.manifest:
        with open(args.manifest) as f:
            doc = json.load(f)
        return [(int(img["id"]), Path(img["path"])) for img in doc["images"]]
    return [(i, Path(p)) for i, p in enumerate(args.paths)]


def cmd_images(args) -> int:
    images = _job_images(args)
    if not images:
        print("no input images", file=sys.stderr)
        return 2
    encoder = get_encoder(args.encoder, dim=args.dim, seed=args.seed)
    job = ExtractJob(images=images, image_side=args.side, k=args.k, mode=args.mode,
                     out_dir=args.out, overwrite=args.force, encoder_seed=args.seed)
    paths = extract_images(job, encoder)
    for entry in job.skipped:
        print(f"skipped {entry['path']}: {entry['error']}", file=sys.stderr)
    if not args.quiet:
        print(f"extracted {len(images) - len(job.skipped)}/{len(images)} images "
              f"-> {paths['patches']}")
    return 0 if len(job.skipped) < len(images) else 1


def cmd_texts(args) -> int:
    names = [c.strip() for c in args.classes.split(",") if c.strip()]
    if not names:
        print("no classes given", file=sys.stderr)
        return 2
    encoder = get_encoder(args.encoder, dim=args.dim, seed=args.seed)
    path = extract_texts(list(enumerate(names)), args.template, encoder,
                         args.out, overwrite=args.force)
    if not args.quiet:
        print(f"wrote {len(names)} class features -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--encoder", default="color-stat")
    common.add_argument("--dim", type=int, default=64)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--force", action="store_true", help="overwrite outputs")
    common.add_argument("--quiet", action="store_true")

    ap = argparse.ArgumentParser(
        prog="ccextract",
        description="Crop cover patches from images and write feature banks.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("images", parents=[common],
                       help="extract patch + whole-image feature banks")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest", help="JSON with an `images` list of {id, path}")
    src.add_argument("--paths", nargs="+", help="image files; ids are 0..n-1")
    p.add_argument("--side", type=int, default=224)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--mode", choices=["table", "provable"], default="table")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_images)

    p = sub.add_parser("texts", parents=[common],
                       help="extract class-prompt text features")
    p.add_argument("--classes", required=True, help="comma-separated class names")
    p.add_argument("--template", default="a photo of a {}")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_texts)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"missing file: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
