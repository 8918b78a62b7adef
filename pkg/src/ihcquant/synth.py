"""Synthetic patches and slides with exact ground truth.

Cells are rendered as soft-edged stained disks (solid core, linear
falloff) over a light background, placed by rejection sampling with a
minimum spacing.  The default colors land cleanly on the H-DAB stain
basis so the whole pipeline can be verified end to end without any
clinical data.  Everything is deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .annotations import CellAnnotation, CellClass
from .inference import ProbabilityMap
from .slide_io import (
    REFERENCE_MPP,
    PatchImage,
    ResolutionSpec,
    SlideManifest,
    TileRecord,
    save_patch,
    write_manifest,
)

MAX_PLACEMENT_ATTEMPTS = 10_000


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    width: int = 512
    height: int = 512
    n_cells: int = 40
    pos_fraction: float = 0.3
    cell_radius_range: tuple[int, int] = (5, 7)
    min_spacing: int = 24
    noise_sigma: float = 0.0
    pos_color: tuple[int, int, int] = (120, 75, 35)   # DAB-brown
    neg_color: tuple[int, int, int] = (70, 60, 140)   # hematoxylin-blue
    background: tuple[int, int, int] = (245, 242, 240)
    mpp: float = REFERENCE_MPP

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("patch dimensions must be positive")
        if self.n_cells < 0:
            raise ValueError("n_cells must be non-negative")
        if not 0.0 <= self.pos_fraction <= 1.0:
            raise ValueError("pos_fraction must be in [0, 1]")
        r0, r1 = self.cell_radius_range
        if not 1 <= r0 <= r1:
            raise ValueError(f"bad cell radius range {self.cell_radius_range}")
        if self.min_spacing < 1:
            raise ValueError("min_spacing must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class SynthTruth:
    annotations: list[CellAnnotation]
    true_tps: float | None  # None when no cells were planted


def _place_centers(rng: np.random.Generator, spec: SynthSpec) -> list[tuple[int, int]]:
    """Rejection-sampled placement keeping centers min_spacing apart and
    clear of the border by the maximum cell radius."""
    margin = spec.cell_radius_range[1] + 1
    if spec.width <= 2 * margin or spec.height <= 2 * margin:
        raise ValueError(f"patch {spec.width}x{spec.height} too small for cells of "
                         f"radius {spec.cell_radius_range[1]}")
    centers: list[tuple[int, int]] = []
    cx = np.empty(spec.n_cells)
    cy = np.empty(spec.n_cells)
    min_d2 = spec.min_spacing**2
    for i in range(spec.n_cells):
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            x = int(rng.integers(margin, spec.width - margin))
            y = int(rng.integers(margin, spec.height - margin))
            if i == 0 or ((cx[:i] - x) ** 2 + (cy[:i] - y) ** 2).min() >= min_d2:
                cx[i], cy[i] = x, y
                centers.append((x, y))
                break
        else:
            raise ValueError(
                f"could not place cell {i + 1}/{spec.n_cells} after "
                f"{MAX_PLACEMENT_ATTEMPTS} attempts; lower n_cells or min_spacing"
            )
    return centers


def _render_cell(canvas: np.ndarray, x: int, y: int, radius: int, color: tuple[int, int, int]) -> None:
    """Soft-edged disk: solid class color inside radius/2, linear blend to
    the existing canvas out to the full radius."""
    r = radius
    y0, y1 = y - r, y + r + 1
    x0, x1 = x - r, x + r + 1
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    dist = np.sqrt((dy * dy + dx * dx).astype(np.float64))
    core = r / 2.0
    alpha = np.clip((r - dist) / max(r - core, 1.0), 0.0, 1.0)[..., None]
    region = canvas[y0:y1, x0:x1]
    region[...] = alpha * np.asarray(color, dtype=np.float64) + (1.0 - alpha) * region


def generate_patch(spec: SynthSpec) -> tuple[PatchImage, SynthTruth]:
    """Render one patch and its exact cell truth, deterministically."""
    rng = np.random.default_rng(spec.seed)
    canvas = np.empty((spec.height, spec.width, 3), dtype=np.float64)
    canvas[...] = np.asarray(spec.background, dtype=np.float64)
    annotations: list[CellAnnotation] = []
    if spec.n_cells > 0:
        centers = _place_centers(rng, spec)
        n_pos = int(round(spec.pos_fraction * spec.n_cells))
        classes = np.array(
            [CellClass.TC_POS] * n_pos + [CellClass.TC_NEG] * (spec.n_cells - n_pos)
        )
        rng.shuffle(classes)
        radii = rng.integers(spec.cell_radius_range[0], spec.cell_radius_range[1] + 1,
                             size=spec.n_cells)
        for (x, y), cls, r in zip(centers, classes, radii):
            color = spec.pos_color if cls == CellClass.TC_POS else spec.neg_color
            _render_cell(canvas, x, y, int(r), color)
            annotations.append(CellAnnotation(x, y, CellClass(cls)))
    if spec.noise_sigma > 0:
        canvas += rng.normal(0.0, spec.noise_sigma, size=canvas.shape)
    pixels = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
    n_pos_actual = sum(1 for a in annotations if a.cls == CellClass.TC_POS)
    true_tps = 100.0 * n_pos_actual / spec.n_cells if spec.n_cells > 0 else None
    return PatchImage(pixels, ResolutionSpec(spec.mpp)), SynthTruth(annotations, true_tps)


def generate_slide(
    spec: SynthSpec,
    grid_width: int,
    grid_height: int,
    out_dir: str | Path,
    slide_id: str = "synthetic",
    empty_fraction: float = 0.0,
) -> tuple[SlideManifest, SynthTruth]:
    """Write a tiled synthetic slide (PNG tiles plus manifest) to disk.

    Per-tile seeds are spec.seed XOR the row-major tile index; a fraction
    of tiles may be left as pure background.  Truth coordinates are
    global pixels at the generated resolution.
    """
    if spec.width != spec.height:
        raise ValueError("slide tiles must be square")
    if not 0.0 <= empty_fraction <= 1.0:
        raise ValueError("empty_fraction must be in [0, 1]")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ts = spec.width
    master = np.random.default_rng(spec.seed)
    empty_draw = master.random(grid_width * grid_height)
    tiles: list[TileRecord] = []
    annotations: list[CellAnnotation] = []
    n_cells_total = 0
    index = 0
    for gy in range(grid_height):
        for gx in range(grid_width):
            tile_spec = replace(
                spec,
                seed=spec.seed ^ index,
                n_cells=0 if empty_draw[index] < empty_fraction else spec.n_cells,
            )
            patch, truth = generate_patch(tile_spec)
            name = f"tile_{gx}_{gy}.png"
            save_patch(patch, out_dir / name)
            tiles.append(TileRecord(Path(name), gx, gy))
            n_cells_total += len(truth.annotations)
            annotations.extend(
                CellAnnotation(a.x + gx * ts, a.y + gy * ts, a.cls)
                for a in truth.annotations
            )
            index += 1
    manifest = SlideManifest(
        slide_id=slide_id,
        source_mpp=ResolutionSpec(spec.mpp),
        tile_size=ts,
        tiles=tiles,
    )
    write_manifest(manifest, out_dir / "manifest.json")
    # reload-style records with resolved absolute paths
    manifest.tiles = [TileRecord(out_dir / t.path, t.gx, t.gy) for t in tiles]
    n_pos = sum(1 for a in annotations if a.cls == CellClass.TC_POS)
    true_tps = 100.0 * n_pos / n_cells_total if n_cells_total else None
    return manifest, SynthTruth(annotations, true_tps)


def synthesize_pmap(
    truth: SynthTruth,
    width: int,
    height: int,
    sharpness: float = 3.0,
    noise: float = 0.0,
    seed: int = 0,
    mpp: float = REFERENCE_MPP,
) -> ProbabilityMap:
    """Probability map with a Gaussian bump per cell in its class channel.

    `sharpness` is the bump sigma in pixels; background takes the
    residual mass and the map is renormalized.  Optional noise perturbs
    log-probabilities and re-softmaxes, keeping a valid map.
    """
    if sharpness <= 0:
        raise ValueError("sharpness must be positive")
    neg = np.zeros((height, width), dtype=np.float64)
    pos = np.zeros((height, width), dtype=np.float64)
    amplitude = 0.95
    reach = int(np.ceil(4 * sharpness))
    for a in truth.annotations:
        y0, y1 = max(0, a.y - reach), min(height, a.y + reach + 1)
        x0, x1 = max(0, a.x - reach), min(width, a.x + reach + 1)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        bump = amplitude * np.exp(-((yy - a.y) ** 2 + (xx - a.x) ** 2) / (2 * sharpness**2))
        target = pos if a.cls == CellClass.TC_POS else neg
        target[y0:y1, x0:x1] += bump
    fg = neg + pos
    over = fg > 0.98
    if over.any():
        scale = np.where(over, 0.98 / fg, 1.0)
        neg *= scale
        pos *= scale
    bg = 1.0 - neg - pos
    channels = np.stack([bg, neg, pos])
    channels /= channels.sum(axis=0, keepdims=True)
    if noise > 0:
        rng = np.random.default_rng(seed)
        logits = np.log(np.clip(channels, 1e-9, None)) + rng.normal(0.0, noise, channels.shape)
        logits -= logits.max(axis=0, keepdims=True)
        channels = np.exp(logits)
        channels /= channels.sum(axis=0, keepdims=True)
    return ProbabilityMap(channels.astype(np.float32), ResolutionSpec(mpp))
