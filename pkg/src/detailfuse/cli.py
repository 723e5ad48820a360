"""Single executable mounting all subcommands.

Exit codes: 0 success (for verify-cover: cover complete), 1 incomplete
cover / unexpected failure, 2 bad config or arguments, 3 geometry error,
4 shape error, 5 bank format error, 6 world error, 7 stage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

OUTPUT_ROOT_ENV = "DETAILFUSE_OUT"

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_GEOMETRY = 3
EXIT_SHAPE = 4
EXIT_BANK = 5
EXIT_WORLD = 6
EXIT_STAGE = 7


def _out_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "."))


def _resolve_out(path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else _out_root() / p


def _say(args, *msg):
    if not args.quiet:
        print(*msg)


# -- subcommands -----------------------------------------------------------


def cmd_patches(args) -> int:
    from .geometry import CoverConfig, CoverMode, generate_cc

    cover = generate_cc(CoverConfig(args.side, args.k, CoverMode(args.mode)))
    rows = [(p.level, p.x0, p.y0, p.x1, p.y1) for p in cover.patches]
    if args.format == "json":
        json.dump({"count": len(rows),
                   "per_level": cover.per_level_counts,
                   "min_object_side": cover.min_object_side,
                   "patches": [dict(zip(("level", "x0", "y0", "x1", "y1"), r)) for r in rows]},
                  sys.stdout, indent=2)
        print()
    else:
        for r in rows:
            print(",".join(str(v) for v in r))
    return EXIT_OK


def cmd_verify_cover(args) -> int:
    from .geometry import CoverConfig, CoverMode, generate_cc, verify_cover

    cover = generate_cc(CoverConfig(args.side, args.k, CoverMode(args.mode)))
    min_side = args.min_side if args.min_side is not None else cover.min_object_side
    report = verify_cover(cover, args.k, min_side, stride=args.stride)
    _say(args, f"patches={len(cover.patches)} min_side={min_side} "
               f"checked={report.enumerated} uncovered={len(report.uncovered)}")
    if not args.quiet:
        for side, x, y in report.uncovered[:20]:
            print(f"uncovered side={side} at ({x},{y})")
    return EXIT_OK if report.complete else EXIT_FAIL


def cmd_synth(args) -> int:
    from .geometry import CoverConfig, CoverMode, generate_cc
    from .world import ScaleRegime, WorldConfig, bank_from_world, build_world, manifest_dict

    lo, hi = (int(v) for v in args.instances.split(":"))
    seed = args.seed if args.seed is not None else 0
    cfg = WorldConfig(num_images=args.images, num_classes=args.classes, dim=args.dim,
                      regime=ScaleRegime(args.regime), min_instances=lo, max_instances=hi,
                      seed=seed)
    world = build_world(cfg)
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest_dict(world), f, sort_keys=True)
        f.write("\n")
    cover = generate_cc(CoverConfig(cfg.image_side, args.k, CoverMode(args.mode)))
    bank_from_world(world, cover.patches, out, overwrite=args.force)
    _say(args, f"wrote manifest + banks for {args.images} images to {out}")
    return EXIT_OK


def _load_patch_bank_matrix(path):
    import numpy as np

    from .bank import read_image_bank

    bank = read_image_bank(path)
    feats = np.stack(bank.feats)
    feats /= np.linalg.norm(feats, axis=-1, keepdims=True)
    return bank, feats


def cmd_train(args) -> int:
    import numpy as np

    from .bank import read_text_bank
    from .fusion import FusionConfig, FusionModel, TrainConfig, train

    bank, U = _load_patch_bank_matrix(args.features)
    full = U.mean(axis=1) if args.images is None else None
    if args.images is not None:
        _, fullbank = _load_patch_bank_matrix(args.images)
        full = fullbank[:, 0, :]
    else:
        full /= np.linalg.norm(full, axis=-1, keepdims=True)
    texts = read_text_bank(args.texts).feats
    texts /= np.linalg.norm(texts, axis=1, keepdims=True)
    seed = args.seed if args.seed is not None else 0
    model = FusionModel.create(
        FusionConfig(dim=args.dim, enc_layers=args.enc, dec_layers=args.dec,
                     heads=args.heads),
        seed=seed)
    cfg = TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch,
                      seed=seed)
    curve = train(model, U, full, texts, cfg)
    model.save(_resolve_out(args.out))
    w = csv.writer(sys.stdout)
    w.writerow(["epoch", "mean_loss"])
    for i, loss in enumerate(curve, 1):
        w.writerow([i, f"{loss:.10g}"])
    return EXIT_OK


def cmd_fuse(args) -> int:
    import numpy as np

    from .bank import BankKind, write_image_bank
    from .fusion import FusionModel

    model = FusionModel.load(args.model)
    bank, U = _load_patch_bank_matrix(args.features)
    full = U.mean(axis=1)
    full /= np.linalg.norm(full, axis=-1, keepdims=True)
    if args.images is not None:
        _, fullbank = _load_patch_bank_matrix(args.images)
        full = fullbank[:, 0, :]
    fused = model.fuse(U, full)
    boxes0 = np.zeros((1, 4), dtype=np.float32)
    write_image_bank(_resolve_out(args.out), BankKind.IMAGE_SINGLE, fused.shape[1],
                     [(i, boxes0, v[None, :]) for i, v in zip(bank.image_ids, fused)],
                     overwrite=args.force)
    _say(args, f"fused {len(bank.image_ids)} images -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    import numpy as np

    from .bank import read_text_bank
    from .retrieval import ClassQuery, ImageRecord, QuerySet, SourceTag, evaluate

    with open(args.manifest) as f:
        manifest = json.load(f)
    side_area = {img["id"]: img["side"] ** 2 for img in manifest["images"]}
    rmax_of = {
        img["id"]: max(((o["x1"] - o["x0"]) * (o["y1"] - o["y0"]) / side_area[img["id"]]
                        for o in img["objects"]), default=0.0)
        for img in manifest["images"]
    }
    classes_of = {img["id"]: {o["class"] for o in img["objects"]}
                  for img in manifest["images"]}

    records = []
    for spec in args.features:
        tag, _, path = spec.partition("=")
        if not path:
            tag, path = "full_image", tag
        bank, feats = _load_patch_bank_matrix(path)
        for i, image_id in enumerate(bank.image_ids):
            f = feats[i]
            records.append(ImageRecord(image_id, f[0] if len(f) == 1 else f,
                                       SourceTag(tag)))
    if args.rmax is not None:
        records = [r for r in records if rmax_of.get(r.image_id, 0.0) <= args.rmax]

    texts = read_text_bank(args.texts)
    feats = texts.feats / np.linalg.norm(texts.feats, axis=1, keepdims=True)
    present = {r.image_id for r in records}
    queries = QuerySet([
        ClassQuery(c, name, feats[j],
                   {i for i in present if c in classes_of.get(i, set())})
        for j, (c, name) in enumerate(zip(texts.class_ids, texts.names))
    ])
    ks = tuple(int(v) for v in args.ks.split(","))
    rep = evaluate(records, queries, ks=ks, dataset=manifest.get("name", "dataset"),
                   settings={"rmax": args.rmax})
    with open(_resolve_out(args.report), "w") as f:
        json.dump(rep.to_json(), f, indent=2, sort_keys=True)
        f.write("\n")
    if args.hist:
        h = rep.histogram
        with open(_resolve_out(args.hist), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["bin_lo", "bin_hi", "positive", "negative"])
            for lo, hi, p, n in zip(h.edges[:-1], h.edges[1:], h.positive, h.negative):
                w.writerow([f"{lo:.8g}", f"{hi:.8g}", int(p), int(n)])
    _say(args, "macro " + " ".join(f"R@{k}={v:.4f}" for k, v in rep.macro.items()))
    return EXIT_OK


def cmd_stats(args) -> int:
    from .resources import measure_query_latency, storage_estimate

    est = storage_estimate(args.patches, args.dim)
    w = csv.writer(sys.stdout)
    w.writerow(["metric", "value"])
    w.writerow(["rows_per_image", est.rows_per_image])
    w.writerow(["dim", est.dim])
    w.writerow(["multi_bytes_per_image", est.multi_bytes_per_image])
    w.writerow(["single_bytes_per_image", est.single_bytes_per_image])
    w.writerow(["storage_ratio", f"{est.ratio:.6g}"])
    if args.timing:
        lat = measure_query_latency(num_images=args.timing_images,
                                    rows_per_image=args.patches, dim=args.dim,
                                    seed=args.seed if args.seed is not None else 0)
        w.writerow(["single_query_s", f"{lat.single_query_s:.6g}"])
        w.writerow(["multi_query_s", f"{lat.multi_query_s:.6g}"])
        w.writerow(["speedup", f"{lat.multi_query_s / lat.single_query_s:.4g}"])
    return EXIT_OK


def cmd_run(args) -> int:
    from .runner import load_config, run

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = run(cfg, _resolve_out(args.out))
    _say(args, f"artifacts in {out}")
    return EXIT_OK


# -- argument wiring -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override config seeds")
    common.add_argument("--threads", type=int, default=None,
                        help="cap BLAS threads (best effort)")
    common.add_argument("--quiet", action="store_true")

    ap = argparse.ArgumentParser(
        prog="detailfuse",
        description="Complete-Cover patching, feature fusion, and retrieval evaluation.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=argparse.ArgumentParser)

    def add_parser(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    p = add_parser("patches", help="emit cover patch boxes")
    p.add_argument("--side", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--mode", choices=["table", "provable"], default="table")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.set_defaults(fn=cmd_patches)

    p = add_parser("verify-cover", help="exhaustively verify a cover")
    p.add_argument("--side", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--mode", choices=["table", "provable"], default="provable")
    p.add_argument("--min-side", type=int, default=None)
    p.add_argument("--stride", type=int, default=1)
    p.set_defaults(fn=cmd_verify_cover)

    p = add_parser("synth", help="generate a synthetic world + banks")
    p.add_argument("--images", type=int, required=True)
    p.add_argument("--classes", type=int, default=138)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--regime", choices=["mix", "small", "large"], default="mix")
    p.add_argument("--instances", default="1:50", help="min:max per image")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--mode", choices=["table", "provable"], default="table")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true", help="overwrite existing banks")
    p.set_defaults(fn=cmd_synth)

    p = add_parser("train", help="train the fusion model on a patch bank")
    p.add_argument("--features", required=True, help="patch bank")
    p.add_argument("--images", default=None, help="whole-image bank (default: patch mean)")
    p.add_argument("--texts", required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--enc", type=int, default=3)
    p.add_argument("--dec", type=int, default=3)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.003)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = add_parser("fuse", help="write a single-feature bank via the model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--images", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_fuse)

    p = add_parser("eval", help="Recall@k over feature banks")
    p.add_argument("--features", action="append", required=True,
                   help="bank path, optionally tagged tag=path (repeatable)")
    p.add_argument("--texts", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--rmax", type=float, default=None)
    p.add_argument("--ks", default="1,3,5")
    p.add_argument("--report", required=True)
    p.add_argument("--hist", default=None)
    p.set_defaults(fn=cmd_eval)

    p = add_parser("stats", help="storage arithmetic and query latency")
    p.add_argument("--patches", type=int, default=166)
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--timing", action="store_true")
    p.add_argument("--timing-images", type=int, default=2000)
    p.set_defaults(fn=cmd_stats)

    p = add_parser("run", help="execute a full experiment config or preset")
    p.add_argument("--config", required=True, help="JSON path or preset name")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_run)

    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    from .errors import (BankFormatError, ConfigError, GeometryError, ShapeError,
                         StageError, WorldError)

    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except GeometryError as e:
        print(f"geometry error: {e}", file=sys.stderr)
        return EXIT_GEOMETRY
    except ShapeError as e:
        print(f"shape error: {e}", file=sys.stderr)
        return EXIT_SHAPE
    except BankFormatError as e:
        print(f"bank error: {e}", file=sys.stderr)
        return EXIT_BANK
    except WorldError as e:
        print(f"world error: {e}", file=sys.stderr)
        return EXIT_WORLD
    except StageError as e:
        print(f"stage '{e.stage}' failed: {e.cause}", file=sys.stderr)
        return EXIT_STAGE
    except FileNotFoundError as e:
        print(f"missing file: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
