"""Probability-map post-processing into discrete cell detections.

Cells are the local maxima of the summed foreground probability
(TC- plus TC+); each peak takes the argmax class of the two cell
channels and that channel's probability as its confidence score.
"""

from __future__ import annotations

import csv
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from scipy.ndimage import maximum_filter

from .annotations import CellClass
from .inference import TC_NEG_CHANNEL, TC_POS_CHANNEL, ProbabilityMap
from .slide_io import (
    DEFAULT_MIN_TISSUE_FRACTION,
    DEFAULT_WHITE_THRESHOLD,
    REFERENCE_RESOLUTION,
    ResolutionSpec,
    SlideManifest,
    Tile,
    iter_tiles,
)

Backend = Callable[[Tile], ProbabilityMap]


@dataclass(frozen=True)
class PeakParams:
    """Local-maximum extraction parameters.

    min_distance doubles as the neighbourhood radius for the maximum test
    and the suppression radius between accepted peaks.
    """

    min_distance: int = 7
    foreground_threshold: float = 0.5

    def __post_init__(self):
        if self.min_distance < 1:
            raise ValueError("min_distance must be >= 1")
        if not 0.0 < self.foreground_threshold < 1.0:
            raise ValueError("foreground_threshold must be in (0, 1)")


@dataclass(frozen=True)
class Detection:
    x: int
    y: int
    cls: CellClass
    confidence: float


def find_peaks(foreground: np.ndarray, params: PeakParams = PeakParams()) -> list[tuple[int, int]]:
    """Locate local maxima of a 2D plane.

    Candidates must reach `foreground_threshold` and be maximal within a
    (2*min_distance+1)^2 window.  Candidates are then accepted greedily in
    decreasing value (ties by row-major index, lowest first), suppressing
    any later candidate within min_distance of an accepted peak, so
    returned peaks are strictly more than min_distance apart.  Output is
    (x, y) pairs sorted by decreasing value.
    """
    plane = np.asarray(foreground)
    if plane.ndim != 2:
        raise ValueError(f"expected a 2D plane, got shape {plane.shape}")
    if not np.isfinite(plane).all():
        raise ValueError("foreground plane contains non-finite values")
    d = params.min_distance
    neighborhood_max = maximum_filter(plane, size=2 * d + 1, mode="constant", cval=-np.inf)
    candidate = (plane >= params.foreground_threshold) & (plane == neighborhood_max)
    ys, xs = np.nonzero(candidate)
    if len(ys) == 0:
        return []
    vals = plane[ys, xs]
    # nonzero() is row-major, so a stable sort keeps the tie-break order.
    order = np.argsort(-vals, kind="stable")
    acc_x: list[int] = []
    acc_y: list[int] = []
    d2 = float(d) * float(d)
    for k in order:
        x, y = int(xs[k]), int(ys[k])
        if acc_x:
            ax = np.asarray(acc_x, dtype=np.float64)
            ay = np.asarray(acc_y, dtype=np.float64)
            if (((ax - x) ** 2 + (ay - y) ** 2) <= d2).any():
                continue
        acc_x.append(x)
        acc_y.append(y)
    return list(zip(acc_x, acc_y))


def extract_detections(pmap: ProbabilityMap, params: PeakParams = PeakParams()) -> list[Detection]:
    """Peaks of the summed cell-foreground plane, classified by channel argmax.

    Class ties resolve to TC-; confidence is the winning channel's
    probability at the peak.
    """
    neg = pmap.plane(TC_NEG_CHANNEL)
    pos = pmap.plane(TC_POS_CHANNEL)
    foreground = neg + pos
    out = []
    for x, y in find_peaks(foreground, params):
        p_neg = float(neg[y, x])
        p_pos = float(pos[y, x])
        if p_pos > p_neg:
            out.append(Detection(x, y, CellClass.TC_POS, p_pos))
        else:
            out.append(Detection(x, y, CellClass.TC_NEG, p_neg))
    return out


def _detect_tile(tile: Tile, backend: Backend, params: PeakParams) -> list[Detection]:
    pmap = backend(tile)
    return [
        Detection(d.x + tile.x0, d.y + tile.y0, d.cls, d.confidence)
        for d in extract_detections(pmap, params)
    ]


def detect_slide(
    manifest: SlideManifest,
    backend: Backend,
    params: PeakParams = PeakParams(),
    target: ResolutionSpec = REFERENCE_RESOLUTION,
    min_tissue_fraction: float = DEFAULT_MIN_TISSUE_FRACTION,
    white_threshold: int = DEFAULT_WHITE_THRESHOLD,
    workers: int = 1,
) -> list[Detection]:
    """Run a backend tile-by-tile over a slide and pool the detections.

    Tiles are independent (no cross-tile merging); coordinates are global
    target-resolution pixels.  The result is sorted by (y, x, class), so
    it does not depend on worker count or completion order.
    """
    tiles = iter_tiles(manifest, target, min_tissue_fraction, white_threshold)
    detections: list[Detection] = []
    if workers <= 1:
        for tile in tiles:
            detections.extend(_detect_tile(tile, backend, params))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pending = set()
            for tile in tiles:
                pending.add(pool.submit(_detect_tile, tile, backend, params))
                if len(pending) >= workers * 2:
                    done, pending = wait(pending, return_when=FIRST_COMPLETED)
                    for fut in done:
                        detections.extend(fut.result())
            for fut in pending:
                detections.extend(fut.result())
    detections.sort(key=lambda d: (d.y, d.x, int(d.cls)))
    return detections


def write_detections(detections: Iterable[Detection], path: str | Path) -> None:
    """Detections CSV: `x,y,class,confidence` in global pixels."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "class", "confidence"])
        for d in detections:
            writer.writerow([d.x, d.y, d.cls.name, f"{d.confidence:.6g}"])


def read_detections(path: str | Path) -> list[Detection]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:4]] != ["x", "y", "class", "confidence"]:
            raise ValueError(f"{path}: expected header 'x,y,class,confidence'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                x, y = int(float(row[0])), int(float(row[1]))
                cls = CellClass[row[2].strip()]
                conf = float(row[3])
            except (ValueError, KeyError, IndexError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
            out.append(Detection(x, y, cls, conf))
    return out
