"""Storage and query-latency accounting for feature banks."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

FLOAT_BYTES = 4  # features are persisted as f32


@dataclass(frozen=True)
class StorageEstimate:
    rows_per_image: int
    dim: int
    multi_bytes_per_image: int
    single_bytes_per_image: int
    ratio: float


def storage_estimate(rows_per_image: int, dim: int) -> StorageEstimate:
    """Pure feature payload per image for multi- vs single-feature banks."""
    if rows_per_image < 1 or dim < 1:
        raise ConfigError("rows_per_image and dim must be positive")
    multi = rows_per_image * dim * FLOAT_BYTES
    single = dim * FLOAT_BYTES
    return StorageEstimate(rows_per_image, dim, multi, single, multi / single)


@dataclass
class LatencyStats:
    repeats: int
    single_query_s: float  # median wall time per scoring pass
    multi_query_s: float


def _score_single(queries: np.ndarray, feats: np.ndarray) -> np.ndarray:
    return queries @ feats.T


def _score_multi(queries: np.ndarray, feats: np.ndarray) -> np.ndarray:
    # (t, n, r) -> max over rows
    return np.einsum("td,nrd->tnr", queries, feats).max(axis=2)


def measure_query_latency(
    num_images: int = 2000,
    rows_per_image: int = 166,
    dim: int = 512,
    num_queries: int = 64,
    repeats: int = 5,
    seed: int = 0,
) -> LatencyStats:
    """Time exhaustive scoring of single-feature vs multi-feature banks."""
    rng = np.random.default_rng(seed)
    multi = rng.standard_normal((num_images, rows_per_image, dim))
    multi /= np.linalg.norm(multi, axis=2, keepdims=True)
    single = multi[:, 0, :].copy()
    queries = rng.standard_normal((num_queries, dim))
    queries /= np.linalg.norm(queries, axis=1, keepdims=True)

    _score_single(queries, single)  # warm up caches / BLAS threads
    _score_multi(queries, multi)

    def med(fn, feats):
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn(queries, feats)
            times.append(time.perf_counter() - t0)
        return float(np.median(times))

    return LatencyStats(
        repeats=repeats,
        single_query_s=med(_score_single, single),
        multi_query_s=med(_score_multi, multi),
    )
