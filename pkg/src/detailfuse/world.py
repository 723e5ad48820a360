"""Synthetic retrieval world: scenes of class-labelled boxes plus a
deterministic embedding oracle.

Every embedding is a noisy area-weighted mix of per-class unit directions,
so ground-truth relevance and the effect of patch scale are both known
exactly.  All randomness flows from numpy SeedSequence spawns keyed on
(seed, image_id, box), which makes patch embeddings independent of the
order they are requested in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import WorldError
from .geometry import ObjectBox, PatchBox

CLASS_NAMES_POOL = [
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train",
    "truck", "boat", "bench", "bird", "cat", "dog", "horse", "sheep", "cow",
    "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella", "handbag",
    "tie", "suitcase", "frisbee", "skis", "snowboard", "kite", "skateboard",
    "surfboard", "bottle", "cup", "fork", "knife", "spoon", "bowl", "banana",
    "apple", "sandwich", "orange", "broccoli", "carrot", "pizza", "donut",
    "cake", "chair", "couch", "bed", "toilet", "tv", "laptop", "mouse",
    "remote", "keyboard", "microwave", "oven", "toaster", "sink", "book",
    "clock", "vase", "scissors", "toothbrush",
]


class ScaleRegime(str, Enum):
    SMALL_ONLY = "small"
    LARGE_ONLY = "large"
    MIX = "mix"


@dataclass(frozen=True)
class WorldConfig:
    num_images: int = 1000
    num_classes: int = 138
    dim: int = 64
    image_side: int = 224
    regime: ScaleRegime = ScaleRegime.MIX
    min_instances: int = 1
    max_instances: int = 50
    noise_sigma: float = 0.01
    # objects below this fraction of a patch's area do not register in it
    embed_sensitivity: float = 0.01
    text_jitter: float = 0.0
    allow_overlap: bool = True
    # explicit object side range; None defers to the regime defaults
    side_min: int | None = None
    side_max: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.num_images < 1 or self.num_classes < 1 or self.dim < 2:
            raise WorldError("num_images, num_classes and dim must be positive")
        if not (1 <= self.min_instances <= self.max_instances <= 50):
            raise WorldError("instance counts must satisfy 1 <= min <= max <= 50")
        if self.noise_sigma < 0 or not (0 < self.embed_sensitivity < 1):
            raise WorldError("bad noise_sigma or embed_sensitivity")
        if self.text_jitter < 0:
            raise WorldError("text_jitter must be >= 0")
        if self.image_side < 8:
            raise WorldError("image_side too small")
        if self.side_min is not None or self.side_max is not None:
            lo = self.side_min if self.side_min is not None else 2
            hi = self.side_max if self.side_max is not None else self.image_side - 1
            if not (2 <= lo <= hi < self.image_side):
                raise WorldError(
                    f"bad side range [{lo}, {hi}] for image side {self.image_side}")


@dataclass
class Scene:
    image_id: int
    objects: list[ObjectBox]


@dataclass
class World:
    config: WorldConfig
    class_names: list[str]
    class_dirs: np.ndarray  # (C, dim) unit rows
    background: np.ndarray  # (dim,) unit
    scenes: list[Scene]
    splits: dict[str, list[int]] = field(default_factory=dict)

    # -- oracle queries ----------------------------------------------------

    def classes_in(self, image_id: int) -> set[int]:
        return {o.class_id for o in self.scenes[image_id].objects}

    def relevant_images(self, class_id: int, image_ids: list[int] | None = None) -> list[int]:
        ids = image_ids if image_ids is not None else range(len(self.scenes))
        return [i for i in ids if class_id in self.classes_in(i)]

    def embed_text(self, class_id: int) -> np.ndarray:
        if not (0 <= class_id < self.config.num_classes):
            raise WorldError(f"unknown class {class_id}")
        vec = self.class_dirs[class_id].copy()
        if self.config.text_jitter > 0:
            rng = np.random.default_rng(np.random.SeedSequence(
                (self.config.seed, 0xC1A55, class_id)))
            g = rng.standard_normal(self.config.dim)
            # jitter is the norm of the perturbation, not a per-component sigma
            vec = vec + self.config.text_jitter * g / np.linalg.norm(g)
            vec /= np.linalg.norm(vec)
        return vec

    def embed_patch(self, image_id: int, patch: PatchBox) -> np.ndarray:
        """Noisy area-weighted class mix over objects fully inside the patch."""
        area = patch.area
        vec = np.zeros(self.config.dim)
        hit = False
        for o in self.scenes[image_id].objects:
            if (patch.x0 <= o.x0 and patch.y0 <= o.y0
                    and o.x1 <= patch.x1 and o.y1 <= patch.y1
                    and o.area >= self.config.embed_sensitivity * area):
                vec += (o.area / area) * self.class_dirs[o.class_id]
                hit = True
        if not hit:
            vec = self.background.copy()
        rng = np.random.default_rng(np.random.SeedSequence(
            (self.config.seed, image_id, patch.x0, patch.y0, patch.x1, patch.y1)))
        vec = vec + self.config.noise_sigma * rng.standard_normal(self.config.dim)
        n = np.linalg.norm(vec)
        if n == 0.0:
            return self.background.copy()
        return vec / n

    def embed_image(self, image_id: int) -> np.ndarray:
        side = self.config.image_side
        return self.embed_patch(image_id, PatchBox(0, 0, side, side, level=1))

    def max_object_fraction(self, image_id: int) -> float:
        objs = self.scenes[image_id].objects
        total = float(self.config.image_side ** 2)
        return max(o.area for o in objs) / total if objs else 0.0


def _class_directions(num_classes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """num_classes+1 unit rows; the last is the background direction.

    Orthonormal (background exactly orthogonal to every class) whenever they
    fit in dim, otherwise seeded repulsion down to pairwise |cos| <= 0.3.
    """
    if num_classes + 1 <= dim:
        q, _ = np.linalg.qr(rng.standard_normal((dim, num_classes + 1)))
        return q.T.copy()
    # over-complete: seeded repulsion on pairs exceeding the coherence bound
    dirs = rng.standard_normal((num_classes + 1, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    for step in range(5000):
        g = dirs @ dirs.T
        np.fill_diagonal(g, 0.0)
        worst = np.abs(g).max()
        if worst <= 0.3:
            break
        over = np.where(np.abs(g) > 0.28, g, 0.0)
        dirs -= 0.5 * (over @ dirs)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    else:
        raise WorldError(
            f"could not reach coherence 0.3 for {num_classes} classes in dim {dim}")
    return dirs


def _side_range(cfg: WorldConfig) -> tuple[int, int]:
    a = cfg.image_side
    if cfg.side_min is not None or cfg.side_max is not None:
        lo = cfg.side_min if cfg.side_min is not None else 2
        hi = cfg.side_max if cfg.side_max is not None else a - 1
        if not (2 <= lo <= hi < a):
            raise WorldError(f"bad side range [{lo}, {hi}] for image side {a}")
        return lo, hi
    if cfg.regime == ScaleRegime.SMALL_ONLY:
        return max(2, a // 28), max(3, a // 10)
    if cfg.regime == ScaleRegime.LARGE_ONLY:
        return max(3, a // 4), max(4, int(0.7 * a))
    return max(2, a // 28), max(4, int(0.7 * a))


def _overlaps(o: ObjectBox, objs: list[ObjectBox]) -> bool:
    return any(o.x0 < q.x1 and q.x0 < o.x1 and o.y0 < q.y1 and q.y0 < o.y1
               for q in objs)


def _make_scene(image_id: int, cfg: WorldConfig, rng: np.random.Generator) -> Scene:
    lo, hi = _side_range(cfg)
    n = int(rng.integers(cfg.min_instances, cfg.max_instances + 1))
    objs: list[ObjectBox] = []
    for _ in range(n):
        placed = False
        for _attempt in range(200):
            side = int(rng.integers(lo, hi + 1))
            x0 = int(rng.integers(0, cfg.image_side - side + 1))
            y0 = int(rng.integers(0, cfg.image_side - side + 1))
            cls = int(rng.integers(0, cfg.num_classes))
            o = ObjectBox(x0, y0, x0 + side, y0 + side, class_id=cls)
            if cfg.allow_overlap or not _overlaps(o, objs):
                objs.append(o)
                placed = True
                break
        if not placed:
            raise WorldError(
                f"image {image_id}: could not place {n} non-overlapping objects "
                f"(sides {lo}..{hi} in {cfg.image_side})")
    return Scene(image_id, objs)


def _make_splits(num_images: int, rng: np.random.Generator) -> dict[str, list[int]]:
    order = rng.permutation(num_images)
    n_train = int(round(0.7 * num_images))
    n_val = int(round(0.1 * num_images))
    return {
        "train": sorted(int(i) for i in order[:n_train]),
        "val": sorted(int(i) for i in order[n_train:n_train + n_val]),
        "test": sorted(int(i) for i in order[n_train + n_val:]),
    }


def class_names_for(num_classes: int) -> list[str]:
    pool = CLASS_NAMES_POOL
    return [pool[i] if i < len(pool) else f"{pool[i % len(pool)]}-{i // len(pool)}"
            for i in range(num_classes)]


def manifest_dict(world: World, name: str = "synthetic") -> dict:
    split_of = {}
    for split, ids in world.splits.items():
        for i in ids:
            split_of[i] = split
    return {
        "name": name,
        "classes": list(world.class_names),
        "images": [
            {
                "id": s.image_id,
                "side": world.config.image_side,
                "objects": [
                    {"class": o.class_id, "x0": o.x0, "y0": o.y0, "x1": o.x1, "y1": o.y1}
                    for o in s.objects
                ],
                "split": split_of[s.image_id],
            }
            for s in world.scenes
        ],
    }


def bank_from_world(
    world: World,
    patches,
    out_dir,
    image_ids: list[int] | None = None,
    overwrite: bool = False,
) -> dict[str, "object"]:
    """Write patch, whole-image, and text banks for `image_ids` under out_dir.

    `patches` is a sequence of PatchBox (same cover for every image).
    Returns the three paths keyed "patches"/"full"/"texts".
    """
    from pathlib import Path

    from .bank import BankKind, write_image_bank, write_text_bank

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    a = float(world.config.image_side)
    ids = image_ids if image_ids is not None else [s.image_id for s in world.scenes]

    boxes = np.array([[p.x0 / a, p.y0 / a, p.x1 / a, p.y1 / a] for p in patches],
                     dtype=np.float32)
    patch_path = out_dir / "patches.dfb"
    write_image_bank(
        patch_path, BankKind.IMAGE_PATCHES, world.config.dim,
        ((i, boxes, np.stack([world.embed_patch(i, p) for p in patches])) for i in ids),
        overwrite=overwrite)

    full_path = out_dir / "full.dfb"
    write_image_bank(
        full_path, BankKind.IMAGE_SINGLE, world.config.dim,
        ((i, np.zeros((1, 4), dtype=np.float32), world.embed_image(i)[None, :])
         for i in ids),
        overwrite=overwrite)

    text_path = out_dir / "texts.dfb"
    write_text_bank(
        text_path, world.config.dim,
        [(c, world.class_names[c], world.embed_text(c))
         for c in range(world.config.num_classes)],
        overwrite=overwrite)
    return {"patches": patch_path, "full": full_path, "texts": text_path}


def build_world(config: WorldConfig) -> World:
    root = np.random.SeedSequence(config.seed)
    dir_rng, scene_rng, split_rng = (
        np.random.default_rng(s) for s in root.spawn(3))
    dirs = _class_directions(config.num_classes, config.dim, dir_rng)
    scenes = [_make_scene(i, config, scene_rng) for i in range(config.num_images)]
    return World(
        config=config,
        class_names=class_names_for(config.num_classes),
        class_dirs=dirs[:config.num_classes],
        background=dirs[config.num_classes],
        scenes=scenes,
        splits=_make_splits(config.num_images, split_rng),
    )
