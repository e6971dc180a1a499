"""Patch-grid arithmetic, pixel boxes, IoU, and the spatial adjacency predicate.

Boxes are half-open integer-pixel rectangles: pixel (x, y) belongs to a box
iff x_min <= x < x_max and y_min <= y < y_max.  This makes patch tilings exact
and every IoU a ratio of integers.  Patch indices are row-major over the grid:
row = index // cols, col = index % cols.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence


@dataclass(frozen=True)
class GridSpec:
    """A rows x cols tiling of the image by square patches."""

    image_height: int
    image_width: int
    patch_size: int

    def __post_init__(self) -> None:
        if self.patch_size < 1:
            raise ValueError(f"patch_size must be >= 1, got {self.patch_size}")
        if self.image_height < 1 or self.image_width < 1:
            raise ValueError(
                f"image must be non-empty, got {self.image_height}x{self.image_width}"
            )
        if self.image_height % self.patch_size or self.image_width % self.patch_size:
            raise ValueError(
                f"image {self.image_height}x{self.image_width} is not an exact "
                f"multiple of patch_size {self.patch_size}"
            )

    @property
    def rows(self) -> int:
        return self.image_height // self.patch_size

    @property
    def cols(self) -> int:
        return self.image_width // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols

    def row_col(self, index: int) -> tuple[int, int]:
        """Row-major (row, col) of a patch index."""
        if not 0 <= index < self.n_patches:
            raise IndexError(f"patch index {index} out of range [0, {self.n_patches})")
        return index // self.cols, index % self.cols

    def patch_indices(self) -> Iterator[int]:
        return iter(range(self.n_patches))


@dataclass(frozen=True)
class Box:
    """Half-open pixel rectangle; empty boxes are rejected at construction."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self) -> None:
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise ValueError(
                f"empty box ({self.x_min},{self.y_min},{self.x_max},{self.y_max})"
            )

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def to_dict(self) -> dict[str, int]:
        return {
            "x_min": self.x_min,
            "y_min": self.y_min,
            "x_max": self.x_max,
            "y_max": self.y_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        try:
            return cls(int(d["x_min"]), int(d["y_min"]), int(d["x_max"]), int(d["y_max"]))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"box object must carry integer x_min/y_min/x_max/y_max: {d!r}") from exc


def patch_to_box(grid: GridSpec, index: int) -> Box:
    """Pixel box of one patch; boxes of distinct patches tile the image."""
    row, col = grid.row_col(index)
    p = grid.patch_size
    return Box(col * p, row * p, (col + 1) * p, (row + 1) * p)


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two boxes, in [0, 1]."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(0, ix) * max(0, iy)
    union = a.area + b.area - inter
    return inter / union


def union_region_area(boxes: Sequence[Box]) -> int:
    """Exact area of the union region of axis-aligned boxes.

    Coordinate compression: the unique x/y edges split the plane into cells,
    each either fully inside or fully outside every box.
    """
    if not boxes:
        return 0
    xs = sorted({b.x_min for b in boxes} | {b.x_max for b in boxes})
    ys = sorted({b.y_min for b in boxes} | {b.y_max for b in boxes})
    area = 0
    for xi in range(len(xs) - 1):
        x0, x1 = xs[xi], xs[xi + 1]
        for yi in range(len(ys) - 1):
            y0, y1 = ys[yi], ys[yi + 1]
            if any(b.x_min <= x0 and x1 <= b.x_max and b.y_min <= y0 and y1 <= b.y_max
                   for b in boxes):
                area += (x1 - x0) * (y1 - y0)
    return area


def union_box_region_iou(patches: Sequence[Box], gt: Box) -> float:
    """IoU between the union REGION of `patches` (not their hull) and `gt`.

    Exact: both the union area and the intersection-with-gt area decompose
    into disjoint rectangular cells.

    Raises:
        ValueError: if `patches` is empty.
    """
    if not patches:
        raise ValueError("union_box_region_iou requires at least one patch box")
    union_area = union_region_area(patches)
    clipped = []
    for b in patches:
        ix0, ix1 = max(b.x_min, gt.x_min), min(b.x_max, gt.x_max)
        iy0, iy1 = max(b.y_min, gt.y_min), min(b.y_max, gt.y_max)
        if ix0 < ix1 and iy0 < iy1:
            clipped.append(Box(ix0, iy0, ix1, iy1))
    inter_area = union_region_area(clipped)
    total = union_area + gt.area - inter_area
    return inter_area / total


def within_radius(grid: GridSpec, a: int, b: int, r: int) -> bool:
    """Chebyshev adjacency: max(|row delta|, |col delta|) <= r."""
    ra, ca = grid.row_col(a)
    rb, cb = grid.row_col(b)
    return max(abs(ra - rb), abs(ca - cb)) <= r


def chebyshev_neighborhood(grid: GridSpec, center: int, r: int) -> list[int]:
    """All patch indices within Chebyshev radius r of `center` (inclusive)."""
    row, col = grid.row_col(center)
    out = []
    for dr in range(-r, r + 1):
        rr = row + dr
        if not 0 <= rr < grid.rows:
            continue
        for dc in range(-r, r + 1):
            cc = col + dc
            if 0 <= cc < grid.cols:
                out.append(rr * grid.cols + cc)
    return out
