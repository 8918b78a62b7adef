"""Patch-representation analysis.

Features are either the raw-pixel baseline (a 1024x1024 patch block-
averaged to 32x32x3 and flattened to 3072 values) or arbitrary vectors
loaded from CSV.  They project to 2D with a built-in PCA, or with
externally computed coordinates supplied as a file.  Downstream exports:
TPS-colored scatter data, a patch mosaic over the discretized
projection, and a cohort-pair rank-sum similarity matrix.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .metrics import midranks, normal_cdf
from .slide_io import PatchImage

PIXEL_FEATURE_SIDE = 32
PIXEL_FEATURE_DIM = PIXEL_FEATURE_SIDE * PIXEL_FEATURE_SIDE * 3


@dataclass
class FeatureVector:
    patch_id: str
    cohort_id: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("feature values must be a flat vector")
        if not np.isfinite(self.values).all():
            raise ValueError(f"patch {self.patch_id!r}: non-finite feature values")


@dataclass
class Projection2D:
    patch_ids: list[str]
    coords: np.ndarray  # (n, 2)
    method: str


@dataclass
class MosaicLayout:
    grid_n: int
    cells: dict[tuple[int, int], str]  # (cell_x, cell_y) -> patch_id
    composite: np.ndarray  # uint8 RGB


@dataclass
class SimilarityMatrix:
    cohorts: list[str]
    p_values: np.ndarray  # (k, k), symmetric, diagonal unused
    summary: float  # mean of the strict upper triangle


def pixel_features(img: PatchImage, patch_id: str = "", cohort_id: str = "") -> FeatureVector:
    """Raw-pixel baseline: area-average to 32x32, flatten, scale to [0, 1].

    Dimensions divisible by 32 use an exact block mean; anything else is
    area-averaged through a box resize first.
    """
    px = img.pixels
    h, w = px.shape[:2]
    side = PIXEL_FEATURE_SIDE
    if h % side == 0 and w % side == 0:
        small = px.reshape(side, h // side, side, w // side, 3).mean(axis=(1, 3))
    else:
        resized = Image.fromarray(px, mode="RGB").resize((side, side), Image.Resampling.BOX)
        small = np.asarray(resized, dtype=np.float64)
    return FeatureVector(patch_id, cohort_id, (small / 255.0).reshape(-1))


def write_features(features: list[FeatureVector], path: str | Path) -> None:
    """Features CSV: `patch_id,cohort_id,f0..f{D-1}`."""
    if not features:
        raise ValueError("no features to write")
    dim = len(features[0].values)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patch_id", "cohort_id"] + [f"f{i}" for i in range(dim)])
        for f in features:
            if len(f.values) != dim:
                raise ValueError(f"patch {f.patch_id!r}: dimension {len(f.values)} != {dim}")
            writer.writerow([f.patch_id, f.cohort_id] + [f"{v:.9g}" for v in f.values])


def read_features(path: str | Path) -> list[FeatureVector]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["patch_id", "cohort_id"]:
            raise ValueError(f"{path}: expected header 'patch_id,cohort_id,f0..'")
        dim = len(header) - 2
        if dim < 1:
            raise ValueError(f"{path}: no feature columns")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise ValueError(f"{path}: line {lineno}: expected {dim + 2} fields, got {len(row)}")
            try:
                values = np.asarray([float(v) for v in row[2:]])
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
            out.append(FeatureVector(row[0], row[1], values))
    return out


def _feature_matrix(features: list[FeatureVector]) -> np.ndarray:
    dims = {len(f.values) for f in features}
    if len(dims) != 1:
        raise ValueError(f"inconsistent feature dimensionality: {sorted(dims)}")
    return np.vstack([f.values for f in features])


def project_2d(
    features: list[FeatureVector],
    method: str = "pca",
    projection_path: str | Path | None = None,
) -> Projection2D:
    """Project feature vectors to 2D.

    The built-in method is PCA on the mean-centered matrix (top two
    principal axes, the largest-magnitude loading of each axis made
    positive).  `method="external"` instead looks coordinates up in a
    precomputed `patch_id,u,v` file, the hook for projections produced by
    other tools.
    """
    if len(features) < 2:
        raise ValueError("projection needs at least 2 feature vectors")
    ids = [f.patch_id for f in features]
    if method == "external":
        if projection_path is None:
            raise ValueError("external projection requires a projection file")
        table = read_projection(projection_path)
        missing = [i for i in ids if i not in table]
        if missing:
            raise ValueError(f"projection file lacks {len(missing)} patch ids, e.g. {missing[:3]}")
        coords = np.asarray([table[i] for i in ids])
        return Projection2D(ids, coords, "external")
    if method != "pca":
        raise ValueError(f"unknown projection method {method!r}")
    x = _feature_matrix(features)
    centered = x - x.mean(axis=0)
    if not centered.any():
        raise ValueError("degenerate feature matrix: all vectors are identical")
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2].copy()
    if components.shape[0] < 2:  # single feature dimension
        components = np.vstack([components, np.zeros_like(components[0])])
    for row in components:
        peak = int(np.argmax(np.abs(row)))
        if row[peak] < 0:
            row *= -1.0
    coords = centered @ components.T
    return Projection2D(ids, coords, "pca")


def write_projection(proj: Projection2D, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patch_id", "u", "v"])
        for pid, (u, v) in zip(proj.patch_ids, proj.coords):
            writer.writerow([pid, f"{u:.9g}", f"{v:.9g}"])


def read_projection(path: str | Path) -> dict[str, tuple[float, float]]:
    out: dict[str, tuple[float, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["patch_id", "u", "v"]:
            raise ValueError(f"{path}: expected header 'patch_id,u,v'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out[row[0]] = (float(row[1]), float(row[2]))
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    return out


def mosaic(
    proj: Projection2D,
    patches: dict[str, np.ndarray],
    grid_n: int,
    thumb_size: int = 64,
) -> MosaicLayout:
    """Discretize the projection into grid_n x grid_n cells and composite
    one representative patch per occupied cell.

    The representative minimizes the summed projection-space distance to
    the cell's other members (the single member when alone), so it is
    always a member of its cell.
    """
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    n = len(proj.patch_ids)
    if n == 0:
        raise ValueError("empty projection")
    coords = proj.coords
    mins = coords.min(axis=0)
    span = coords.max(axis=0) - mins
    span = np.where(span > 0, span, 1.0)
    cells_idx = np.clip(((coords - mins) / span * grid_n).astype(int), 0, grid_n - 1)
    members: dict[tuple[int, int], list[int]] = {}
    for i in range(n):
        members.setdefault((int(cells_idx[i, 0]), int(cells_idx[i, 1])), []).append(i)
    layout: dict[tuple[int, int], str] = {}
    composite = np.full((grid_n * thumb_size, grid_n * thumb_size, 3), 255, dtype=np.uint8)
    for cell, idxs in members.items():
        if len(idxs) == 1:
            rep = idxs[0]
        else:
            pts = coords[idxs]
            dist_sums = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)).sum(axis=1)
            rep = idxs[int(np.argmin(dist_sums))]
        pid = proj.patch_ids[rep]
        layout[cell] = pid
        if pid not in patches:
            raise KeyError(f"no patch image supplied for representative {pid!r}")
        thumb = Image.fromarray(patches[pid], mode="RGB").resize(
            (thumb_size, thumb_size), Image.Resampling.BILINEAR
        )
        cx, cy = cell
        y0, x0 = cy * thumb_size, cx * thumb_size
        composite[y0 : y0 + thumb_size, x0 : x0 + thumb_size] = np.asarray(thumb)
    return MosaicLayout(grid_n, layout, composite)


def rank_sum_test(x: np.ndarray, y: np.ndarray) -> float:
    """Two-sided Mann-Whitney rank-sum p-value, normal approximation with
    tie-corrected variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n1, n2 = len(x), len(y)
    if n1 == 0 or n2 == 0:
        raise ValueError("rank-sum test needs non-empty samples")
    pooled = np.concatenate([x, y])
    n = n1 + n2
    ranks = midranks(pooled)
    u1 = float(ranks[:n1].sum()) - n1 * (n1 + 1) / 2.0
    mean = n1 * n2 / 2.0
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(((tie_counts**3) - tie_counts).sum())
    variance = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if variance <= 0:
        return 1.0
    z = (u1 - mean) / math.sqrt(variance)
    return min(1.0, 2.0 * normal_cdf(-abs(z)))


def cohort_similarity(features: list[FeatureVector]) -> SimilarityMatrix:
    """Pairwise cohort distinguishability as rank-sum p-values.

    Each patch is reduced to its distance from the global feature
    centroid; cohort pairs compare those scalars.  The summary is the
    mean of the strict upper triangle, and a higher value means the
    cohorts cannot be told apart.
    """
    by_cohort: dict[str, list[np.ndarray]] = {}
    for f in features:
        by_cohort.setdefault(f.cohort_id, []).append(f.values)
    if len(by_cohort) < 2:
        raise ValueError("cohort similarity needs at least 2 cohorts")
    for cohort, vecs in by_cohort.items():
        if len(vecs) < 2:
            raise ValueError(f"cohort {cohort!r} has fewer than 2 patches")
    centroid = _feature_matrix(features).mean(axis=0)
    scalars = {
        c: np.linalg.norm(np.vstack(v) - centroid, axis=1) for c, v in by_cohort.items()
    }
    cohorts = list(by_cohort)
    k = len(cohorts)
    p_values = np.ones((k, k), dtype=np.float64)
    for i in range(k):
        for j in range(i + 1, k):
            p = rank_sum_test(scalars[cohorts[i]], scalars[cohorts[j]])
            p_values[i, j] = p_values[j, i] = p
    summary = float(p_values[np.triu_indices(k, 1)].mean())
    return SimilarityMatrix(cohorts, p_values, summary)
