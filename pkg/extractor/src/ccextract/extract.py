"""Crop cover patches from image files and persist encoder features.

Patch geometry comes straight from the retrieval package's generator, so
the boxes written here agree byte-for-byte with its `patches` CSV output.
Bank files are written through the same public writers the retrieval side
reads with, which keeps the binary contract in one place.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from detailfuse import BankKind, CoverConfig, CoverMode, generate_cc, write_image_bank

# neutral mid-gray; the statistics encoder has no fixed input mean
PAD_COLOR = (127, 127, 127)


@dataclass
class ExtractJob:
    images: list[tuple[int, str | Path]]          # (image_id, path)
    image_side: int = 224
    k: int = 10
    mode: str = "table"
    out_dir: str | Path = "."
    overwrite: bool = False
    batch_size: int = 256
    encoder_seed: int = 0
    skipped: list[dict] = field(default_factory=list)

    def __post_init__(self):
        ids = [i for i, _ in self.images]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate image ids in job")


def load_image(path: str | Path) -> np.ndarray:
    """Decode to an RGB uint8 array; raises on unreadable files."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def letterbox(image: np.ndarray, side: int,
              fill: tuple[int, int, int] = PAD_COLOR) -> np.ndarray:
    """Scale the longest edge to `side` and pad (never crop) to a square."""
    h, w = image.shape[:2]
    scale = side / max(h, w)
    nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
    resized = np.asarray(Image.fromarray(image).resize((nw, nh), Image.BILINEAR))
    out = np.empty((side, side, 3), dtype=np.uint8)
    out[:] = fill
    y0, x0 = (side - nh) // 2, (side - nw) // 2
    out[y0:y0 + nh, x0:x0 + nw] = resized
    return out


def _write_boxes_csv(path: Path, patches):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for p in patches:
            w.writerow([p.level, p.x0, p.y0, p.x1, p.y1])


def extract_images(job: ExtractJob, encoder) -> dict[str, Path]:
    """Write patch + whole-image banks, a box CSV, and a JSON sidecar.

    Unreadable images are skipped and listed in the sidecar rather than
    aborting the batch.
    """
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cover = generate_cc(CoverConfig(job.image_side, job.k, CoverMode(job.mode)))
    boxes_px = np.array([[p.x0, p.y0, p.x1, p.y1] for p in cover.patches],
                        dtype=np.float32)
    boxes_norm = boxes_px / job.image_side
    box0 = np.zeros((1, 4), dtype=np.float32)

    patch_records = []
    single_records = []
    job.skipped.clear()
    for image_id, path in job.images:
        try:
            frame = letterbox(load_image(path), job.image_side)
        except (OSError, UnidentifiedImageError, ValueError) as e:
            job.skipped.append({"id": image_id, "path": str(path), "error": str(e)})
            continue
        crops = [frame[p.y0:p.y1, p.x0:p.x1] for p in cover.patches]
        feats = encoder.encode_images(crops)
        patch_records.append((image_id, boxes_norm, feats))
        single_records.append((image_id, box0, encoder.encode_images([frame])))

    paths = {
        "patches": out / "patches.dfb",
        "full": out / "full.dfb",
        "boxes": out / "boxes.csv",
        "sidecar": out / "extract.json",
    }
    write_image_bank(paths["patches"], BankKind.IMAGE_PATCHES, encoder.dim,
                     patch_records, overwrite=job.overwrite)
    write_image_bank(paths["full"], BankKind.IMAGE_SINGLE, encoder.dim,
                     single_records, overwrite=job.overwrite)
    _write_boxes_csv(paths["boxes"], cover.patches)
    with open(paths["sidecar"], "w") as f:
        json.dump({
            "encoder": encoder.name,
            "dim": encoder.dim,
            "precision": "float32",
            "image_side": job.image_side,
            "k": job.k,
            "mode": job.mode,
            "rows_per_image": len(cover.patches),
            "extracted": len(patch_records),
            "skipped": job.skipped,
        }, f, indent=2, sort_keys=True)
        f.write("\n")
    return paths


def extract_texts(classes: list[tuple[int, str]], template: str, encoder,
                  out_path: str | Path, overwrite: bool = False) -> Path:
    """Render class names through the prompt template and persist features."""
    from detailfuse import write_text_bank

    if not classes:
        raise ValueError("empty class list")
    if "{}" not in template:
        raise ValueError(f"template {template!r} has no {{}} placeholder")
    prompts = [template.format(name) for _, name in classes]
    feats = encoder.encode_texts(prompts)
    out_path = Path(out_path)
    write_text_bank(out_path, encoder.dim,
                    [(cid, name, feats[i]) for i, (cid, name) in enumerate(classes)],
                    overwrite=overwrite)
    return out_path
