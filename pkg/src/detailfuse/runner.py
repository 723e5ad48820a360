"""Experiment orchestration: one JSON config in, one artifact directory out.

A run executes world -> patches -> banks -> train -> fuse -> eval and writes
everything needed to reproduce it (resolved config, manifest, banks,
checkpoint, CSV tables, PNG figures, report.json).  All artifacts are
deterministic functions of the config; wall-clock timings are deliberately
kept out of them (use the `stats` subcommand for latency measurements).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import jsonschema
import numpy as np

from .bank import BankKind, read_image_bank, read_text_bank, write_image_bank
from .errors import ConfigError, StageError
from .fusion import FusionConfig, FusionModel, TrainConfig, train
from .geometry import CoverConfig, CoverMode, generate_cc
from .plots import save_loss_curve, save_recall_bars, save_similarity_histogram
from .resources import storage_estimate
from .retrieval import ClassQuery, HistogramConfig, ImageRecord, QuerySet, SourceTag, evaluate
from .world import ScaleRegime, World, WorldConfig, bank_from_world, build_world, manifest_dict

RUN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "world", "cover"],
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "world": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "num_images": {"type": "integer", "minimum": 1},
                "num_classes": {"type": "integer", "minimum": 1},
                "dim": {"type": "integer", "minimum": 2},
                "image_side": {"type": "integer", "minimum": 8},
                "regime": {"enum": ["mix", "small", "large"]},
                "instances": {
                    "type": "array", "items": {"type": "integer", "minimum": 1},
                    "minItems": 2, "maxItems": 2,
                },
                "side_min": {"type": "integer", "minimum": 2},
                "side_max": {"type": "integer", "minimum": 3},
                "noise_sigma": {"type": "number", "minimum": 0},
                "embed_sensitivity": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "text_jitter": {"type": "number", "minimum": 0},
                "allow_overlap": {"type": "boolean"},
            },
        },
        "cover": {
            "type": "object",
            "additionalProperties": False,
            "required": ["k"],
            "properties": {
                "k": {"type": "integer", "minimum": 1},
                "mode": {"enum": ["table", "provable"]},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enc_layers": {"type": "integer", "minimum": 1},
                "dec_layers": {"type": "integer", "minimum": 1},
                "heads": {"type": "integer", "minimum": 1},
                "use_box_encoding": {"type": "boolean"},
                "ln_eps": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "weight_decay": {"type": "number", "minimum": 0},
                "grad_clip": {"type": "number", "exclusiveMinimum": 0},
                "lr_step": {"type": "integer", "minimum": 1},
                "lr_gamma": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "epochs": {"type": "integer", "minimum": 0},
                "warmup_steps": {"type": "integer", "minimum": 0},
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ks": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "rmax": {"type": ["number", "null"], "exclusiveMinimum": 0, "maximum": 1},
                "hist_bins": {"type": "integer", "minimum": 2},
            },
        },
        "limits": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "train_images": {"type": ["integer", "null"], "minimum": 1},
                "test_images": {"type": ["integer", "null"], "minimum": 1},
            },
        },
        "sweep_ks": {
            "type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1,
        },
    },
}

PRESETS: dict[str, dict] = {
    # Three-row comparison: full-image baseline, CC multi-feature, fused
    # single feature.  World parameters were calibrated so that the
    # whole-image embedding is blind to the objects while tight cover
    # patches still register them.
    "detail-injection": {
        "name": "detail-injection",
        "seed": 0,
        "world": {
            "num_images": 750, "num_classes": 20, "dim": 64, "image_side": 224,
            "regime": "small", "instances": [1, 1],
            "side_min": 16, "side_max": 22, "noise_sigma": 0.005,
        },
        "cover": {"k": 5, "mode": "table"},
        "train": {},
        "eval": {"ks": [1, 3, 5]},
        "limits": {"train_images": 500, "test_images": 150},
    },
    # Untrained CC multi-feature recall as a function of k.
    "k-sweep": {
        "name": "k-sweep",
        "seed": 0,
        "world": {
            "num_images": 200, "num_classes": 20, "dim": 64, "image_side": 224,
            "regime": "small", "instances": [1, 3],
        },
        "cover": {"k": 5, "mode": "table"},
        "train": {"epochs": 0},
        "eval": {"ks": [1, 3, 5]},
        "limits": {"test_images": 100},
        "sweep_ks": [2, 3, 4, 5, 6, 7, 8, 9, 10],
    },
}


def validate_config(cfg: dict) -> dict:
    try:
        jsonschema.validate(cfg, RUN_SCHEMA)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"invalid run config: {e.message} (at {list(e.absolute_path)})") from e
    return cfg


def load_config(source: str | Path | dict) -> dict:
    if isinstance(source, dict):
        return validate_config(source)
    source = str(source)
    if source in PRESETS:
        return validate_config(json.loads(json.dumps(PRESETS[source])))
    with open(source) as f:
        return validate_config(json.load(f))


def _world_from_config(cfg: dict) -> WorldConfig:
    w = cfg.get("world", {})
    inst = w.get("instances", [1, 50])
    return WorldConfig(
        num_images=w.get("num_images", 1000),
        num_classes=w.get("num_classes", 138),
        dim=w.get("dim", 64),
        image_side=w.get("image_side", 224),
        regime=ScaleRegime(w.get("regime", "mix")),
        min_instances=inst[0],
        max_instances=inst[1],
        noise_sigma=w.get("noise_sigma", 0.01),
        embed_sensitivity=w.get("embed_sensitivity", 0.01),
        text_jitter=w.get("text_jitter", 0.0),
        allow_overlap=w.get("allow_overlap", True),
        side_min=w.get("side_min"),
        side_max=w.get("side_max"),
        seed=cfg.get("seed", 0),
    )


def _train_from_config(cfg: dict) -> TrainConfig:
    t = cfg.get("train", {})
    return TrainConfig(seed=cfg.get("seed", 0), **t)


def _queries(world: World, image_ids: list[int], texts: np.ndarray) -> QuerySet:
    qs = []
    for c in range(world.config.num_classes):
        rel = {i for i in image_ids if c in world.classes_in(i)}
        qs.append(ClassQuery(class_id=c, prompt=world.class_names[c],
                             feature=texts[c], relevant=rel))
    return QuerySet(qs)


def _write_report(path: Path, rows: list[dict]):
    with open(path, "w") as f:
        json.dump({"rows": rows}, f, indent=2, sort_keys=True)
        f.write("\n")


def _write_hist_csv(path: Path, hist):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bin_lo", "bin_hi", "positive", "negative"])
        for lo, hi, p, n in zip(hist.edges[:-1], hist.edges[1:], hist.positive, hist.negative):
            w.writerow([f"{lo:.8g}", f"{hi:.8g}", int(p), int(n)])


def _stage(name: str):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, StageError):
                raise StageError(name, exc) from exc
            return False

    return _Ctx()


def run(config: dict | str | Path, out_dir: str | Path) -> Path:
    """Execute a full experiment; returns the artifact directory."""
    cfg = load_config(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
        f.write("\n")

    with _stage("world"):
        world = build_world(_world_from_config(cfg))
        with open(out / "manifest.json", "w") as f:
            json.dump(manifest_dict(world, cfg["name"]), f, sort_keys=True)
            f.write("\n")

    limits = cfg.get("limits", {})
    train_ids = world.splits["train"]
    test_ids = world.splits["test"]
    if limits.get("train_images"):
        train_ids = train_ids[: limits["train_images"]]
    if limits.get("test_images"):
        test_ids = test_ids[: limits["test_images"]]

    with _stage("patches"):
        cover_cfg = CoverConfig(
            image_side=world.config.image_side,
            sensitivity_k=cfg["cover"]["k"],
            mode=CoverMode(cfg["cover"].get("mode", "table")),
        )
        cover = generate_cc(cover_cfg)
        with open(out / "patches.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["level", "x0", "y0", "x1", "y1"])
            for p in cover.patches:
                w.writerow([p.level, p.x0, p.y0, p.x1, p.y1])

    with _stage("banks"):
        paths = bank_from_world(world, cover.patches, out, train_ids + test_ids,
                                overwrite=True)
        patch_bank = read_image_bank(paths["patches"])
        full_bank = read_image_bank(paths["full"])
        by_id_patch = dict(zip(patch_bank.image_ids, patch_bank.feats))
        by_id_full = dict(zip(full_bank.image_ids, (f[0] for f in full_bank.feats)))
        texts = read_text_bank(paths["texts"]).feats
        texts /= np.linalg.norm(texts, axis=1, keepdims=True)

        def renorm(x):
            return x / np.linalg.norm(x, axis=-1, keepdims=True)

        U_train = renorm(np.stack([by_id_patch[i] for i in train_ids]))
        U_test = renorm(np.stack([by_id_patch[i] for i in test_ids]))
        full_train = renorm(np.stack([by_id_full[i] for i in train_ids]))
        full_test = renorm(np.stack([by_id_full[i] for i in test_ids]))

    model = None
    epochs = cfg.get("train", {}).get("epochs", TrainConfig().epochs)
    if epochs > 0:
        with _stage("train"):
            fcfg = FusionConfig(dim=world.config.dim, **cfg.get("model", {}))
            model = FusionModel.create(fcfg, seed=cfg.get("seed", 0))
            curve = train(model, U_train, full_train, texts, _train_from_config(cfg),
                          boxes=cover.patches, image_side=world.config.image_side)
            model.save(out / "model.dfw")
            with open(out / "loss_curve.csv", "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["epoch", "mean_loss"])
                for i, loss in enumerate(curve, 1):
                    w.writerow([i, f"{loss:.10g}"])
            save_loss_curve(curve, out / "loss_curve.png", title=cfg["name"])

    fused_test = None
    if model is not None:
        with _stage("fuse"):
            fused_test = model.fuse(U_test, full_test,
                                    boxes=cover.patches,
                                    image_side=world.config.image_side)
            boxes0 = np.zeros((1, 4), dtype=np.float32)
            write_image_bank(out / "fused.dfb", BankKind.IMAGE_SINGLE, world.config.dim,
                             [(i, boxes0, v[None, :]) for i, v in zip(test_ids, fused_test)],
                             overwrite=True)

    with _stage("eval"):
        ecfg = cfg.get("eval", {})
        ks = tuple(ecfg.get("ks", [1, 3, 5]))
        hist_cfg = HistogramConfig(bins=ecfg.get("hist_bins", 40))
        rmax = ecfg.get("rmax")
        eval_ids = test_ids
        if rmax is not None:
            eval_ids = [i for i in test_ids if world.max_object_fraction(i) <= rmax]
            if not eval_ids:
                raise ConfigError(f"rmax={rmax} filtered out every test image")
        queries = _queries(world, eval_ids, texts)
        idx = {i: j for j, i in enumerate(test_ids)}

        variants = [
            ("full_image", SourceTag.FULL_IMAGE,
             [ImageRecord(i, full_test[idx[i]], SourceTag.FULL_IMAGE) for i in eval_ids]),
            ("cc_multi", SourceTag.CC,
             [ImageRecord(i, U_test[idx[i]], SourceTag.CC) for i in eval_ids]),
        ]
        if fused_test is not None:
            variants.append(
                ("fused_single", SourceTag.FUSED,
                 [ImageRecord(i, fused_test[idx[i]], SourceTag.FUSED) for i in eval_ids]))

        rows = []
        recalls_by_k: dict[int, list[float]] = {k: [] for k in ks}
        labels = []
        for label, tag, records in variants:
            rep = evaluate(records, queries, ks=ks, dataset=cfg["name"],
                           histogram=hist_cfg,
                           settings={"source": tag.value, "rmax": rmax})
            rows.append({"variant": label, **rep.to_json()})
            _write_hist_csv(out / f"hist_{label}.csv", rep.histogram)
            save_similarity_histogram(rep.histogram, out / f"hist_{label}.png",
                                      title=f"{cfg['name']}: {label}")
            labels.append(label)
            for k in ks:
                recalls_by_k[k].append(rep.macro[k])
        _write_report(out / "report.json", rows)
        save_recall_bars(labels, recalls_by_k, out / "recall.png", title=cfg["name"])

    with _stage("resources"):
        est = storage_estimate(len(cover.patches), world.config.dim)
        with open(out / "resources.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["rows_per_image", "dim", "multi_bytes_per_image",
                        "single_bytes_per_image", "ratio"])
            w.writerow([est.rows_per_image, est.dim, est.multi_bytes_per_image,
                        est.single_bytes_per_image, f"{est.ratio:.6g}"])

    if cfg.get("sweep_ks"):
        with _stage("k-sweep"):
            _k_sweep(cfg, world, test_ids, texts, out)
    return out


def _k_sweep(cfg: dict, world: World, test_ids: list[int], texts: np.ndarray, out: Path):
    """Untrained CC multi-feature recall as a function of k."""
    ks_eval = tuple(cfg.get("eval", {}).get("ks", [1, 3, 5]))
    mode = CoverMode(cfg["cover"].get("mode", "table"))
    with open(out / "ksweep.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["k", "patches"] + [f"recall@{k}" for k in ks_eval])
        for k in cfg["sweep_ks"]:
            cover = generate_cc(CoverConfig(world.config.image_side, k, mode))
            records = []
            for i in test_ids:
                feats = np.stack([world.embed_patch(i, p) for p in cover.patches])
                records.append(ImageRecord(i, feats, SourceTag.CC))
            rep = evaluate(records, _queries(world, test_ids, texts),
                           ks=ks_eval, histogram=None)
            w.writerow([k, len(cover.patches)] +
                       [f"{rep.macro[q]:.6f}" for q in ks_eval])
