"""Patch covering geometry.

Generates multi-level square window sets that keep every sufficiently large
square object fully inside some window at adequate relative scale, plus the
grid / object-box baseline patch sets, and a brute-force verifier for the
covering property.

Two generation modes exist because the reference per-level window counts and
a provably complete construction cannot be reconciled:

* ``table``     -- reproduces the reference per-level counts exactly
                   (embedded in PER_AXIS_COUNTS) for sensitivity 1..15.
* ``provable``  -- a greedy/DP cascade whose completeness is guaranteed by
                   construction down to a reported minimum object side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import GeometryError

# Per-axis window counts per level for sensitivity k = 1..15 ("table" mode).
# Level n holds PER_AXIS_COUNTS[k][n-1]**2 windows.
PER_AXIS_COUNTS: dict[int, tuple[int, ...]] = {
    1: (1,),
    2: (1, 2),
    3: (1, 2, 3),
    4: (1, 2, 3, 4),
    5: (1, 2, 3, 5),
    6: (1, 2, 3, 4, 6),
    7: (1, 2, 3, 4, 7),
    8: (1, 2, 3, 5, 8),
    9: (1, 2, 3, 4, 5, 9),
    10: (1, 2, 3, 4, 6, 10),
    11: (1, 2, 3, 4, 6, 11),
    12: (1, 2, 3, 4, 5, 7, 12),
    13: (1, 2, 3, 4, 5, 7, 13),
    14: (1, 2, 3, 4, 5, 8, 14),
    15: (1, 2, 3, 4, 6, 8, 15),
}

TABLE_TOTALS: dict[int, int] = {k: sum(n * n for n in v) for k, v in PER_AXIS_COUNTS.items()}


class CoverMode(str, Enum):
    TABLE_COMPAT = "table"
    PROVABLE = "provable"


@dataclass(frozen=True)
class PatchBox:
    """Axis-aligned half-open pixel rectangle [x0,x1) x [y0,y1)."""

    x0: int
    y0: int
    x1: int
    y1: int
    level: int = 1

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise GeometryError(f"degenerate patch box {self}")
        if self.x0 < 0 or self.y0 < 0:
            raise GeometryError(f"negative patch origin {self}")
        if self.level < 1:
            raise GeometryError(f"patch level must be >= 1, got {self.level}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class ObjectBox:
    """Half-open object bounding box with a class label."""

    x0: int
    y0: int
    x1: int
    y1: int
    class_id: int = 0

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise GeometryError(f"degenerate object box {self}")
        if self.x0 < 0 or self.y0 < 0:
            raise GeometryError(f"negative object origin {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class CoverConfig:
    """Square-image cover parameters.

    ``sensitivity_k`` is the per-axis scale ratio: a window of side s only
    "sees" objects strictly larger than (s/k)^2 in area.  ``min_side`` caps
    the provable cascade's depth; None means "as deep as the patch budget
    ceil(k^2 * pi^2 / 6) allows".
    """

    image_side: int
    sensitivity_k: int
    mode: CoverMode = CoverMode.TABLE_COMPAT
    min_side: int | None = None

    def __post_init__(self):
        if self.sensitivity_k < 1:
            raise GeometryError(f"sensitivity_k must be >= 1, got {self.sensitivity_k}")
        if self.image_side < self.sensitivity_k:
            raise GeometryError(
                f"image_side {self.image_side} < sensitivity_k {self.sensitivity_k}"
            )
        if self.mode == CoverMode.TABLE_COMPAT and self.sensitivity_k not in PER_AXIS_COUNTS:
            raise GeometryError(
                f"table mode supports sensitivity_k in [1, 15], got {self.sensitivity_k}"
            )
        if self.min_side is not None and self.min_side < 1:
            raise GeometryError(f"min_side must be >= 1, got {self.min_side}")


@dataclass
class CoverSet:
    """Ordered patch list: levels ascending, row-major within a level."""

    patches: list[PatchBox]
    config: CoverConfig | None
    per_level_counts: list[int]
    min_object_side: int | None = None

    def __post_init__(self):
        if sum(self.per_level_counts) != len(self.patches):
            raise GeometryError("per_level_counts does not sum to patch count")

    def __len__(self) -> int:
        return len(self.patches)


@dataclass
class VerificationReport:
    image_side: int
    sensitivity_k: int
    min_side: int
    stride: int
    enumerated: int
    uncovered: list[tuple[int, int, int]]  # (side, x, y), sorted

    @property
    def complete(self) -> bool:
        return not self.uncovered


def covers(q: PatchBox, p: ObjectBox, k: int) -> bool:
    """True iff p is fully inside q and p occupies more than area(q)/k^2."""
    if k < 1:
        raise GeometryError(f"sensitivity k must be >= 1, got {k}")
    if q.area == 0 or p.area == 0:  # unreachable via constructors, kept per contract
        raise GeometryError("degenerate box passed to covers()")
    contained = q.x0 <= p.x0 and p.x1 <= q.x1 and q.y0 <= p.y0 and p.y1 <= q.y1
    return contained and p.area * k * k > q.area


def patch_count_bound(config: CoverConfig) -> int:
    """Upper bound ceil(k^2 * pi^2 / 6) on the total cascade patch count."""
    k = config.sensitivity_k
    return math.ceil(k * k * math.pi * math.pi / 6.0)


def _even_positions(a: int, side: int, count: int) -> list[int]:
    """count window origins, first at 0 and last flush with the far edge."""
    if count == 1:
        return [0]
    span = a - side
    return [round(i * span / (count - 1)) for i in range(count)]


def _boxes_for_level(a: int, side: int, positions: list[int], level: int) -> list[PatchBox]:
    out = []
    for y in positions:  # row-major: y outer, x inner
        for x in positions:
            out.append(PatchBox(x, y, x + side, y + side, level=level))
    return out


def _generate_table(config: CoverConfig) -> CoverSet:
    a, k = config.image_side, config.sensitivity_k
    per_axis = PER_AXIS_COUNTS[k]
    patches: list[PatchBox] = []
    counts: list[int] = []
    side = a
    for level, m in enumerate(per_axis, start=1):
        side = max(1, round(a - (level - 1) * a / k))
        patches.extend(_boxes_for_level(a, side, _even_positions(a, side, m), level))
        counts.append(m * m)
    return CoverSet(patches, config, counts, min_object_side=side // k + 1)


def _level_positions(a: int, side: int, stride: int) -> list[int]:
    """Origins 0, stride, 2*stride, ... with the last clamped flush to a-side."""
    span = a - side
    if span <= 0:
        return [0]
    return list(range(0, span, stride)) + [span]


def _plan_budget(a: int, k: int, budget: int) -> tuple[int, list[tuple[int, int, int]]]:
    """Deepest cascade within `budget` total patches.

    Returns (min covered side, levels) where each level is
    (window side, stride, per-axis count).  Level 1 (the full image) is
    implicit and costs 1 patch.  A level with window side s and per-axis
    count n uses stride t = s - M + 1 where M is the largest object side the
    level must still catch; every square object with side in
    [s//k + 1, M] is then fully inside some window that also satisfies the
    strict area-sensitivity test.
    """
    memo: dict[tuple[int, int], tuple[int, int, tuple]] = {}

    def best(m_max: int, remaining: int) -> tuple[int, int, tuple]:
        # -> (final covered min side, patches used, plan)
        key = (m_max, remaining)
        if key in memo:
            return memo[key]
        res = (m_max + 1, 0, ())
        if m_max >= 1:
            for n in range(2, math.isqrt(remaining) + 1):
                s = -(-(a + (n - 1) * (m_max - 1)) // n)  # minimal side for n windows/axis
                if s > min(k * m_max - 1, a - 1):
                    continue
                new_min = s // k + 1
                if new_min > m_max:
                    continue
                sub = best(new_min - 1, remaining - n * n)
                cand = (sub[0], n * n + sub[1], ((s, s - m_max + 1, n),) + sub[2])
                if (cand[0], cand[1]) < (res[0], res[1]):
                    res = cand
        memo[key] = res
        return res

    fin, _, plan = best(a // k, budget - 1)
    return fin, list(plan)


def _plan_floor(a: int, k: int, floor: int) -> tuple[int, list[tuple[int, int, int]]]:
    """Minimum-patch cascade covering all square sides down to `floor`."""
    memo: dict[int, tuple[int, tuple]] = {}

    def best(m_max: int) -> tuple[int, tuple]:
        if m_max < floor:
            return (0, ())
        if m_max in memo:
            return memo[m_max]
        res: tuple[int, tuple] | None = None
        for s in range(m_max, min(k * m_max - 1, a - 1) + 1):
            new_min = s // k + 1
            if new_min > m_max:
                continue
            t = s - m_max + 1
            n = -(-(a - s) // t) + 1
            sub = best(min(new_min - 1, m_max - 1))
            cand = (n * n + sub[0], ((s, t, n),) + sub[1])
            if res is None or cand[0] < res[0]:
                res = cand
        if res is None:
            raise GeometryError(
                f"no window side can cover objects of side {m_max} at sensitivity {k}"
            )
        memo[m_max] = res
        return res

    _, plan = best(a // k)
    fin = min((s // k + 1 for s, _, _ in plan), default=a // k + 1)
    return fin, list(plan)


def _generate_provable(config: CoverConfig) -> CoverSet:
    a, k = config.image_side, config.sensitivity_k
    if k == 1:
        # Strict sensitivity at k=1 covers nothing; min_object_side = a+1 flags that.
        full = PatchBox(0, 0, a, a, level=1)
        return CoverSet([full], config, [1], min_object_side=a + 1)
    if config.min_side is None:
        fin, plan = _plan_budget(a, k, patch_count_bound(config))
    else:
        fin, plan = _plan_floor(a, k, config.min_side)
    fin = min(fin, a // k + 1)  # the full image alone covers sides > a/k
    patches = [PatchBox(0, 0, a, a, level=1)]
    counts = [1]
    for level, (side, stride, n) in enumerate(plan, start=2):
        positions = _level_positions(a, side, stride)
        assert len(positions) == n
        patches.extend(_boxes_for_level(a, side, positions, level))
        counts.append(n * n)
    return CoverSet(patches, config, counts, min_object_side=fin)


def generate_cc(config: CoverConfig) -> CoverSet:
    """Multi-level complete-cover window set for a square image."""
    if config.mode == CoverMode.TABLE_COMPAT:
        return _generate_table(config)
    return _generate_provable(config)


def generate_grid(image_w: int, image_h: int, rows: int, cols: int) -> CoverSet:
    """rows x cols non-overlapping tiles; remainder pixels go to the last row/col."""
    if rows < 1 or cols < 1:
        raise GeometryError(f"grid needs rows, cols >= 1, got {rows}x{cols}")
    if image_w < cols or image_h < rows:
        raise GeometryError(f"grid {rows}x{cols} does not fit image {image_w}x{image_h}")
    tile_w, tile_h = image_w // cols, image_h // rows
    patches = []
    for r in range(rows):
        y0 = r * tile_h
        y1 = image_h if r == rows - 1 else y0 + tile_h
        for c in range(cols):
            x0 = c * tile_w
            x1 = image_w if c == cols - 1 else x0 + tile_w
            patches.append(PatchBox(x0, y0, x1, y1, level=1))
    return CoverSet(patches, None, [rows * cols])


def generate_obj(objects: list[ObjectBox]) -> CoverSet:
    """One patch per object box, order preserved; duplicates kept."""
    if not objects:
        raise GeometryError("generate_obj needs at least one object box")
    patches = [PatchBox(o.x0, o.y0, o.x1, o.y1, level=1) for o in objects]
    return CoverSet(patches, None, [len(patches)])


def verify_cover(
    cover: CoverSet,
    k: int,
    min_side: int,
    stride: int = 1,
    image_side: int | None = None,
) -> VerificationReport:
    """Exhaustively check the cover over all square objects of side >= min_side.

    Enumerates positions and sides at the given stride and reports every box
    that no patch covers (containment plus strict area sensitivity).
    """
    if stride < 1:
        raise GeometryError(f"stride must be >= 1, got {stride}")
    if image_side is None:
        if cover.config is None:
            raise GeometryError("cover has no config; pass image_side explicitly")
        image_side = cover.config.image_side
    a = image_side
    boxes = [(p.x0, p.y0, p.x1, p.y1, p.area) for p in cover.patches]
    uncovered: list[tuple[int, int, int]] = []
    enumerated = 0
    k2 = k * k
    for side in range(min_side, a + 1, stride):
        pos = np.arange(0, a - side + 1, stride)
        enumerated += len(pos) ** 2
        xs = pos[None, :]
        ys = pos[:, None]
        ok = np.zeros((len(pos), len(pos)), dtype=bool)
        obj_area = side * side
        for x0, y0, x1, y1, area in boxes:
            if obj_area * k2 <= area:  # fails the strict sensitivity test
                continue
            ok |= (xs >= x0) & (xs + side <= x1) & (ys >= y0) & (ys + side <= y1)
        if not ok.all():
            bad = np.argwhere(~ok)
            uncovered.extend((side, int(pos[j]), int(pos[i])) for i, j in bad)
    uncovered.sort()
    return VerificationReport(a, k, min_side, stride, enumerated, uncovered)
