"""Tumor-cell point annotations.

Cells are points with one of two classes: negatively or positively
stained tumor cell.  Four-level HER2 scores collapse onto those two
classes.  For training-style label maps, each point is rasterized as a
filled disk carrying its class code (0 background, 1 TC-, 2 TC+).
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

BACKGROUND_LABEL = 0
DEFAULT_DISK_RADIUS = 7  # pixels at the reference resolution (~1.3 um)


class CellClass(enum.IntEnum):
    """Two-class tumor cell staining call; values are the label-map codes."""

    TC_NEG = 1
    TC_POS = 2


class Her2Score(enum.IntEnum):
    H0 = 0
    H1 = 1
    H2 = 2
    H3 = 3


def remap_her2(score: Her2Score) -> CellClass:
    """Collapse the four HER2 levels onto the binary staining classes:
    H0 is negative, H1 through H3 are positive."""
    return CellClass.TC_NEG if score == Her2Score.H0 else CellClass.TC_POS


@dataclass(frozen=True)
class CellAnnotation:
    x: int
    y: int
    cls: CellClass


@dataclass
class LabelMap:
    """Per-pixel class codes produced by disk rasterization."""

    values: np.ndarray
    disk_radius: int

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


def _disk_offsets(radius: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(rng, rng, indexing="ij")
    keep = dy * dy + dx * dx <= radius * radius
    return dy[keep], dx[keep]


def rasterize(
    annotations: list[CellAnnotation],
    width: int,
    height: int,
    radius: int = DEFAULT_DISK_RADIUS,
) -> LabelMap:
    """Draw a class-coded disk of the given radius around every point.

    Overlaps resolve last-writer-wins in input order; disks are clipped at
    the image border but every center must lie inside the image.
    """
    if radius < 1:
        raise ValueError(f"disk radius must be >= 1, got {radius}")
    values = np.zeros((height, width), dtype=np.uint8)
    dy, dx = _disk_offsets(radius)
    for i, a in enumerate(annotations):
        if not (0 <= a.x < width and 0 <= a.y < height):
            raise ValueError(
                f"annotation {i} at ({a.x}, {a.y}) lies outside the {width}x{height} image"
            )
        ys = a.y + dy
        xs = a.x + dx
        keep = (ys >= 0) & (ys < height) & (xs >= 0) & (xs < width)
        values[ys[keep], xs[keep]] = int(a.cls)
    return LabelMap(values, radius)


def read_annotations(path: str | Path) -> list[CellAnnotation]:
    """Read `x,y,class` CSV; coordinates are floored to integer pixels."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["x", "y", "class"]:
            raise ValueError(f"{path}: expected header 'x,y,class'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                if len(row) != 3:
                    raise ValueError(f"expected 3 fields, got {len(row)}")
                x = float(row[0])
                y = float(row[1])
                if x < 0 or y < 0:
                    raise ValueError("coordinates must be non-negative")
                cls = CellClass[row[2].strip()]
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
            out.append(CellAnnotation(int(math.floor(x)), int(math.floor(y)), cls))
    return out


def write_annotations(annotations: list[CellAnnotation], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "class"])
        for a in annotations:
            writer.writerow([a.x, a.y, a.cls.name])


def write_labelmap(label_map: LabelMap, path: str | Path) -> None:
    """Serialize as 8-bit grayscale PNG with raw class codes {0, 1, 2}."""
    Image.fromarray(label_map.values, mode="L").save(path)


def read_labelmap(path: str | Path, disk_radius: int = DEFAULT_DISK_RADIUS) -> LabelMap:
    with Image.open(path) as im:
        values = np.asarray(im.convert("L"), dtype=np.uint8)
    bad = values > int(CellClass.TC_POS)
    if bad.any():
        raise ValueError(f"{path}: label map contains codes outside {{0, 1, 2}}")
    return LabelMap(values, disk_radius)
