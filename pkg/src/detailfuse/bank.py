"""Feature-bank persistence (magic "DFB1", little-endian, f32 payload).

Layout:
  header : magic "DFB1", version u32, dim u32, kind u32, count u32
  kind 0 (image_single) / 1 (image_patches), per record:
      image_id u32, num_rows u32,
      rows: box 4*f32 normalized to [0,1] (zeros for the whole image), dim*f32
  kind 2 (text), per record:
      class_id u32, name_len u32, UTF-8 name, dim*f32

Features are stored L2-normalized; readers validate to 1e-3 (f32 storage of
f64 unit vectors).  Reads are streamed record by record.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import BankFormatError

MAGIC = b"DFB1"
VERSION = 1
NORM_TOL = 1e-3


class BankKind(IntEnum):
    IMAGE_SINGLE = 0
    IMAGE_PATCHES = 1
    TEXT = 2


@dataclass
class ImageBank:
    kind: BankKind
    dim: int
    image_ids: list[int]
    boxes: list[np.ndarray]  # per image (r, 4) f32
    feats: list[np.ndarray]  # per image (r, dim) f64

    def rows_per_image(self) -> int:
        counts = {len(f) for f in self.feats}
        return len(self.feats[0]) if len(counts) == 1 else -1

    def stacked(self) -> np.ndarray:
        """(n, r, dim) when every image has the same row count."""
        return np.stack(self.feats)


@dataclass
class TextBank:
    dim: int
    class_ids: list[int]
    names: list[str]
    feats: np.ndarray  # (t, dim) f64


def _open_exclusive(path: Path, overwrite: bool):
    if overwrite:
        path.unlink(missing_ok=True)
    return open(path, "xb")


def _write_header(f, dim: int, kind: BankKind, count: int):
    f.write(MAGIC)
    f.write(struct.pack("<IIII", VERSION, dim, int(kind), count))


def _check_rows(feats: np.ndarray, dim: int, where: str):
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != dim:
        raise BankFormatError(f"{where}: expected rows of dim {dim}, got {feats.shape}")
    norms = np.linalg.norm(feats, axis=1)
    if norms.size and np.abs(norms - 1.0).max() > NORM_TOL:
        raise BankFormatError(f"{where}: features not unit-norm (max dev {np.abs(norms-1).max():.2e})")
    return feats


def write_image_bank(
    path: str | Path,
    kind: BankKind,
    dim: int,
    records: Iterable[tuple[int, np.ndarray, np.ndarray]],
    overwrite: bool = False,
):
    """records: iterable of (image_id, boxes (r,4) in [0,1], feats (r,dim))."""
    if kind not in (BankKind.IMAGE_SINGLE, BankKind.IMAGE_PATCHES):
        raise BankFormatError(f"not an image bank kind: {kind}")
    path = Path(path)
    records = list(records)
    with _open_exclusive(path, overwrite) as f:
        _write_header(f, dim, kind, len(records))
        for image_id, boxes, feats in records:
            feats = _check_rows(feats, dim, f"image {image_id}")
            boxes = np.asarray(boxes, dtype="<f4")
            if boxes.shape != (len(feats), 4):
                raise BankFormatError(f"image {image_id}: boxes shape {boxes.shape} != ({len(feats)}, 4)")
            if kind == BankKind.IMAGE_SINGLE and len(feats) != 1:
                raise BankFormatError(f"image {image_id}: single-feature bank needs exactly 1 row")
            f.write(struct.pack("<II", int(image_id), len(feats)))
            row = np.concatenate([boxes, feats.astype("<f4")], axis=1)
            f.write(np.ascontiguousarray(row, dtype="<f4").tobytes())


def write_text_bank(
    path: str | Path,
    dim: int,
    entries: Iterable[tuple[int, str, np.ndarray]],
    overwrite: bool = False,
):
    path = Path(path)
    entries = list(entries)
    with _open_exclusive(path, overwrite) as f:
        _write_header(f, dim, BankKind.TEXT, len(entries))
        for class_id, name, feat in entries:
            _check_rows(np.atleast_2d(feat), dim, f"class {class_id}")
            raw = name.encode("utf-8")
            f.write(struct.pack("<II", int(class_id), len(raw)))
            f.write(raw)
            f.write(np.ascontiguousarray(np.asarray(feat), dtype="<f4").tobytes())


def _read_exact(f, n: int, path: Path) -> bytes:
    chunk = f.read(n)
    if len(chunk) != n:
        raise BankFormatError(f"truncated bank {path}", offset=f.tell() - len(chunk))
    return chunk


def read_header(f, path: Path) -> tuple[int, BankKind, int]:
    magic = f.read(4)
    if magic != MAGIC:
        raise BankFormatError(f"bad magic {magic!r} in {path}", offset=0)
    version, dim, kind, count = struct.unpack("<IIII", _read_exact(f, 16, path))
    if version != VERSION:
        raise BankFormatError(f"unsupported bank version {version} in {path}", offset=4)
    try:
        kind = BankKind(kind)
    except ValueError:
        raise BankFormatError(f"unknown bank kind {kind} in {path}", offset=12) from None
    return dim, kind, count


def iter_image_records(path: str | Path) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
    """Stream (image_id, boxes (r,4) f32, feats (r,dim) f64) without loading the file."""
    path = Path(path)
    with open(path, "rb") as f:
        dim, kind, count = read_header(f, path)
        if kind == BankKind.TEXT:
            raise BankFormatError(f"{path} is a text bank, not an image bank")
        for _ in range(count):
            image_id, rows = struct.unpack("<II", _read_exact(f, 8, path))
            raw = np.frombuffer(_read_exact(f, rows * (4 + dim) * 4, path), dtype="<f4")
            raw = raw.reshape(rows, 4 + dim)
            feats = raw[:, 4:].astype(np.float64)
            _check_rows(feats, dim, f"{path}: image {image_id}")
            yield image_id, raw[:, :4].copy(), feats


def read_image_bank(path: str | Path) -> ImageBank:
    path = Path(path)
    with open(path, "rb") as f:
        dim, kind, count = read_header(f, path)
    if kind == BankKind.TEXT:
        raise BankFormatError(f"{path} is a text bank, not an image bank")
    ids, boxes, feats = [], [], []
    for image_id, b, x in iter_image_records(path):
        ids.append(image_id)
        boxes.append(b)
        feats.append(x)
    if len(ids) != count:
        raise BankFormatError(f"{path}: header count {count} != {len(ids)} records")
    return ImageBank(kind, dim, ids, boxes, feats)


def read_text_bank(path: str | Path) -> TextBank:
    path = Path(path)
    with open(path, "rb") as f:
        dim, kind, count = read_header(f, path)
        if kind != BankKind.TEXT:
            raise BankFormatError(f"{path} is not a text bank")
        ids, names, feats = [], [], []
        for _ in range(count):
            class_id, name_len = struct.unpack("<II", _read_exact(f, 8, path))
            name = _read_exact(f, name_len, path).decode("utf-8")
            feat = np.frombuffer(_read_exact(f, dim * 4, path), dtype="<f4").astype(np.float64)
            ids.append(class_id)
            names.append(name)
            feats.append(feat)
    mat = np.stack(feats) if feats else np.zeros((0, dim))
    _check_rows(mat, dim, str(path))
    return TextBank(dim, ids, names, mat)
