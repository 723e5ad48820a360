"""Class-prompted text-to-image retrieval scoring and reporting.

Scoring is exhaustive cosine ranking: single-feature records use the dot
product with the query, multi-feature records the max over their rows.
Recall@k for a class with n relevant images counts hits within the top n*k.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, ShapeError


class SourceTag(str, Enum):
    FULL_IMAGE = "full_image"
    CC = "cc"
    GRID = "grid"
    OBJ = "obj"
    FUSED = "fused"


@dataclass
class ImageRecord:
    image_id: int
    features: np.ndarray  # (d,) single feature or (r, d) multi-feature rows
    source: SourceTag = SourceTag.FULL_IMAGE

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim not in (1, 2):
            raise ShapeError("ImageRecord", self.features.shape)
        norms = np.linalg.norm(np.atleast_2d(self.features), axis=-1)
        if np.abs(norms - 1.0).max() > 1e-6:
            raise ConfigError(f"image {self.image_id}: features not unit-norm (max dev {np.abs(norms-1).max():.2e})")


@dataclass
class ClassQuery:
    class_id: int
    prompt: str
    feature: np.ndarray  # unit d-vector
    relevant: set[int]

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.float64)


@dataclass
class QuerySet:
    queries: list[ClassQuery]

    def __iter__(self):
        return iter(self.queries)

    def __len__(self):
        return len(self.queries)


@dataclass
class HistogramConfig:
    bins: int = 40
    floor: float = 1e-3  # lower edge in shifted (1+s)/2 units


@dataclass
class SimilarityHistogram:
    """Log-spaced histogram of shifted cosines (1+s)/2 for pos/neg pairs."""

    edges: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    positive_geomean: float
    negative_geomean: float


@dataclass
class RetrievalReport:
    dataset: str
    ks: tuple[int, ...]
    per_class: list[dict]  # {"class", "name", "n", "recall": {k: float}}
    macro: dict[int, float]
    skipped_classes: list[int]
    histogram: SimilarityHistogram | None
    settings: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "dataset": self.dataset,
            "per_class": [
                {
                    "class": c["class"],
                    "name": c["name"],
                    "n": c["n"],
                    "recall": {str(k): c["recall"][k] for k in self.ks},
                }
                for c in self.per_class
            ],
            "macro": {str(k): self.macro[k] for k in self.ks},
            "skipped_classes": self.skipped_classes,
            "settings": self.settings,
        }
        return out


def _stack_records(images: list[ImageRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Concatenate all feature rows; returns (rows, row_offsets, image_ids)."""
    ids = np.array([r.image_id for r in images], dtype=np.int64)
    mats = [np.atleast_2d(r.features) for r in images]
    counts = np.array([len(m) for m in mats])
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return np.concatenate(mats, axis=0), offsets, ids


def _image_scores(query: np.ndarray, rows: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    sims = rows @ query
    return np.maximum.reduceat(sims, offsets[:-1])


def score_images(query_feat: np.ndarray, images: list[ImageRecord]) -> list[tuple[int, float]]:
    """Ranked (image_id, similarity), descending; ties broken by lower id."""
    if not images:
        raise ConfigError("score_images: empty image list")
    query = np.asarray(query_feat, dtype=np.float64)
    d = np.atleast_2d(images[0].features).shape[1]
    if query.shape != (d,):
        raise ShapeError("score_images", query.shape, (d,))
    rows, offsets, ids = _stack_records(images)
    scores = _image_scores(query, rows, offsets)
    order = np.lexsort((ids, -scores))
    return [(int(ids[i]), float(scores[i])) for i in order]


def recall_at_k(ranked: list[tuple[int, float]] | list[int], relevant: set[int], k: int) -> float:
    """Fraction of the n relevant images inside the top n*k (capped at list length)."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    n = len(relevant)
    if n == 0:
        raise ConfigError("recall_at_k: empty relevant set")
    ids = [r[0] if isinstance(r, tuple) else r for r in ranked]
    top = ids[: min(n * k, len(ids))]
    return sum(1 for i in top if i in relevant) / n


def filter_by_rmax(scenes, threshold: float):
    """Keep scenes whose largest object-to-image area ratio is <= threshold."""
    if not (0.0 < threshold <= 1.0):
        raise ConfigError(f"threshold must be in (0, 1], got {threshold}")
    kept = []
    for s in scenes:
        area = float(s.side) ** 2
        r_max = max((o.area / area for o in s.objects), default=0.0)
        if r_max <= threshold:
            kept.append(s)
    return kept


def _histogram(
    sims: np.ndarray, positive_mask: np.ndarray, cfg: HistogramConfig
) -> SimilarityHistogram:
    shifted = (1.0 + sims) / 2.0
    clipped = np.clip(shifted, cfg.floor, 1.0)
    edges = np.geomspace(cfg.floor, 1.0, cfg.bins + 1)
    pos = np.histogram(clipped[positive_mask], bins=edges)[0]
    neg = np.histogram(clipped[~positive_mask], bins=edges)[0]
    # np.histogram's last bin is closed on the right, so total mass == pair count
    def gmean(x):
        return float(np.exp(np.mean(np.log(x)))) if x.size else float("nan")

    return SimilarityHistogram(edges, pos, neg, gmean(clipped[positive_mask]), gmean(clipped[~positive_mask]))


def evaluate(
    images: list[ImageRecord],
    queries: QuerySet,
    ks: tuple[int, ...] = (1, 3, 5),
    dataset: str = "dataset",
    histogram: HistogramConfig | None = HistogramConfig(),
    settings: dict | None = None,
) -> RetrievalReport:
    """Per-class Recall@k with macro averaging plus similarity histograms."""
    if not images:
        raise ConfigError("evaluate: empty image list")
    rows, offsets, ids = _stack_records(images)
    present = set(int(i) for i in ids)
    per_class = []
    skipped = []
    all_sims = []
    all_pos = []
    for q in sorted(queries, key=lambda q: q.class_id):
        relevant = {i for i in q.relevant if i in present}
        if not relevant:
            skipped.append(q.class_id)
            continue
        scores = _image_scores(q.feature, rows, offsets)
        order = np.lexsort((ids, -scores))
        ranked = [(int(ids[i]), float(scores[i])) for i in order]
        per_class.append(
            {
                "class": q.class_id,
                "name": q.prompt,
                "n": len(relevant),
                "recall": {k: recall_at_k(ranked, relevant, k) for k in ks},
            }
        )
        if histogram is not None:
            all_sims.append(scores)
            all_pos.append(np.isin(ids, sorted(relevant)))
    if not per_class:
        raise ConfigError("evaluate: every class had an empty relevant set")
    macro = {k: float(np.mean([c["recall"][k] for c in per_class])) for k in ks}
    hist = None
    if histogram is not None and all_sims:
        hist = _histogram(np.concatenate(all_sims), np.concatenate(all_pos), histogram)
    return RetrievalReport(
        dataset=dataset,
        ks=tuple(ks),
        per_class=per_class,
        macro=macro,
        skipped_classes=skipped,
        histogram=hist,
        settings=settings or {},
    )
