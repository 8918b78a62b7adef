"""Slide and patch ingestion.

Slides are plain JSON manifests over a non-overlapping grid of 8-bit RGB
PNG tiles.  Everything downstream works at a single reference resolution
(0.19 microns per pixel), so ingestion is responsible for resampling and
for dropping tiles that are white background or explicitly excluded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
from PIL import Image

REFERENCE_MPP = 0.19
DEFAULT_WHITE_THRESHOLD = 235
DEFAULT_MIN_TISSUE_FRACTION = 0.05


@dataclass(frozen=True)
class ResolutionSpec:
    """Physical sampling resolution in microns per pixel."""

    mpp: float

    def __post_init__(self):
        if not self.mpp > 0:
            raise ValueError(f"mpp must be positive, got {self.mpp}")


REFERENCE_RESOLUTION = ResolutionSpec(REFERENCE_MPP)


@dataclass
class PatchImage:
    """8-bit RGB patch with a known physical resolution.

    ``pixels`` is a (height, width, 3) uint8 array in row-major order.
    """

    pixels: np.ndarray
    mpp: ResolutionSpec

    def __post_init__(self):
        if isinstance(self.mpp, (int, float)):
            self.mpp = ResolutionSpec(float(self.mpp))
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8:
            raise ValueError(f"patch pixels must be uint8, got {px.dtype}")
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"patch pixels must be (h, w, 3), got {px.shape}")
        if px.shape[0] == 0 or px.shape[1] == 0:
            raise ValueError("patch has a zero dimension")
        self.pixels = px

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class TissueMask:
    """Boolean tissue/background flags at a stated downsample of the source."""

    tissue: np.ndarray
    downsample: int = 1

    @property
    def width(self) -> int:
        return self.tissue.shape[1]

    @property
    def height(self) -> int:
        return self.tissue.shape[0]

    @property
    def tissue_fraction(self) -> float:
        return float(self.tissue.mean())


@dataclass(frozen=True)
class TileRecord:
    path: Path
    gx: int
    gy: int


@dataclass(frozen=True)
class ExclusionRef:
    """Slide-level exclusion mask: 8-bit grayscale PNG, 0 = excluded."""

    path: Path
    downsample: int


@dataclass
class SlideManifest:
    slide_id: str
    source_mpp: ResolutionSpec
    tile_size: int
    tiles: list[TileRecord] = field(default_factory=list)
    exclusion_mask: ExclusionRef | None = None

    @property
    def grid_width(self) -> int:
        return 1 + max((t.gx for t in self.tiles), default=-1)

    @property
    def grid_height(self) -> int:
        return 1 + max((t.gy for t in self.tiles), default=-1)


class Tile(NamedTuple):
    """One streamed tile: grid indices, global offset at the target
    resolution, and the resampled image."""

    gx: int
    gy: int
    x0: int
    y0: int
    image: PatchImage


def load_patch(path: str | Path, mpp: ResolutionSpec) -> PatchImage:
    """Read an RGB PNG into a PatchImage at the stated resolution."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return PatchImage(arr, mpp)


def save_patch(img: PatchImage, path: str | Path) -> None:
    Image.fromarray(img.pixels, mode="RGB").save(path)


def scaled_dim(dim: int, source_mpp: float, target_mpp: float) -> int:
    """Pixel count after resampling `dim` pixels between resolutions."""
    return int(round(dim * source_mpp / target_mpp))


def resample_to_reference(img: PatchImage, target: ResolutionSpec) -> PatchImage:
    """Bilinear resample so the physical extent is preserved at `target`.

    Output dimensions are round(input * source_mpp / target_mpp).  When
    source and target resolutions are equal the buffer is copied verbatim.
    """
    out_w = scaled_dim(img.width, img.mpp.mpp, target.mpp)
    out_h = scaled_dim(img.height, img.mpp.mpp, target.mpp)
    if out_w <= 0 or out_h <= 0:
        raise ValueError(
            f"resample of {img.width}x{img.height} at {img.mpp.mpp} MPP to "
            f"{target.mpp} MPP collapses to {out_w}x{out_h}"
        )
    if img.mpp.mpp == target.mpp:
        return PatchImage(img.pixels.copy(), target)
    pil = Image.fromarray(img.pixels, mode="RGB")
    out = pil.resize((out_w, out_h), Image.Resampling.BILINEAR)
    return PatchImage(np.asarray(out, dtype=np.uint8), target)


def background_mask(img: PatchImage, white_threshold: int = DEFAULT_WHITE_THRESHOLD) -> TissueMask:
    """Flag near-white pixels as background.

    A pixel is background iff min(R, G, B) >= white_threshold; everything
    else counts as tissue.  Full patch resolution, no morphology.
    """
    darkest = img.pixels.min(axis=2)
    return TissueMask(tissue=darkest < white_threshold, downsample=1)


def load_manifest(path: str | Path) -> SlideManifest:
    """Load and validate a slide manifest, resolving tile paths relative
    to the manifest file."""
    path = Path(path)
    with open(path) as fh:
        data = json.load(fh)
    for key in ("slide_id", "source_mpp", "tile_size", "tiles"):
        if key not in data:
            raise ValueError(f"manifest {path}: missing key {key!r}")
    base = path.parent
    tile_size = int(data["tile_size"])
    if tile_size <= 0:
        raise ValueError(f"manifest {path}: tile_size must be positive")
    tiles = []
    seen = set()
    for i, rec in enumerate(data["tiles"]):
        try:
            tpath = base / rec["path"]
            gx, gy = int(rec["gx"]), int(rec["gy"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"manifest {path}: tile entry {i} malformed: {exc}") from exc
        if gx < 0 or gy < 0:
            raise ValueError(f"manifest {path}: tile entry {i} has negative grid index")
        if (gx, gy) in seen:
            raise ValueError(f"manifest {path}: duplicate tile at grid ({gx}, {gy})")
        seen.add((gx, gy))
        if not tpath.is_file():
            raise ValueError(f"manifest {path}: tile file not found: {tpath}")
        tiles.append(TileRecord(tpath, gx, gy))
    exclusion = None
    if data.get("exclusion_mask"):
        em = data["exclusion_mask"]
        epath = base / em["path"]
        if not epath.is_file():
            raise ValueError(f"manifest {path}: exclusion mask not found: {epath}")
        ds = int(em["downsample"])
        if ds < 1:
            raise ValueError(f"manifest {path}: exclusion downsample must be >= 1")
        exclusion = ExclusionRef(epath, ds)
    return SlideManifest(
        slide_id=str(data["slide_id"]),
        source_mpp=ResolutionSpec(float(data["source_mpp"])),
        tile_size=tile_size,
        tiles=tiles,
        exclusion_mask=exclusion,
    )


def write_manifest(manifest: SlideManifest, path: str | Path) -> None:
    """Write a manifest with tile paths relative to the manifest location."""
    path = Path(path)
    base = path.parent
    data = {
        "slide_id": manifest.slide_id,
        "source_mpp": manifest.source_mpp.mpp,
        "tile_size": manifest.tile_size,
        "tiles": [
            {"path": str(t.path.relative_to(base)) if t.path.is_absolute() else str(t.path),
             "gx": t.gx, "gy": t.gy}
            for t in manifest.tiles
        ],
    }
    if manifest.exclusion_mask is not None:
        em = manifest.exclusion_mask
        data["exclusion_mask"] = {
            "path": str(em.path.relative_to(base)) if em.path.is_absolute() else str(em.path),
            "downsample": em.downsample,
        }
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def _load_exclusion(manifest: SlideManifest) -> tuple[np.ndarray, int] | None:
    if manifest.exclusion_mask is None:
        return None
    ref = manifest.exclusion_mask
    with Image.open(ref.path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    return arr, ref.downsample


def _excluded_block(excl: tuple[np.ndarray, int], gx: int, gy: int, tile_size: int) -> np.ndarray:
    """Per-source-pixel inclusion flags for one tile (nearest-neighbour
    lookup into the downsampled mask)."""
    mask, ds = excl
    rows = (np.arange(tile_size) + gy * tile_size) // ds
    cols = (np.arange(tile_size) + gx * tile_size) // ds
    if rows[-1] >= mask.shape[0] or cols[-1] >= mask.shape[1]:
        raise ValueError(
            f"exclusion mask {mask.shape[1]}x{mask.shape[0]} at downsample {ds} "
            f"does not cover tile ({gx}, {gy})"
        )
    return mask[np.ix_(rows, cols)] > 0


def iter_tiles(
    manifest: SlideManifest,
    target: ResolutionSpec = REFERENCE_RESOLUTION,
    min_tissue_fraction: float = DEFAULT_MIN_TISSUE_FRACTION,
    white_threshold: int = DEFAULT_WHITE_THRESHOLD,
) -> Iterator[Tile]:
    """Stream manifest tiles resampled to the target resolution.

    Tiles whose tissue fraction (background mask intersected with the
    optional exclusion mask) falls below `min_tissue_fraction` are
    skipped.  Iteration is deterministic row-major; global offsets are in
    target-resolution pixels.  An unreadable or mis-sized tile aborts the
    stream with its grid coordinate in the error.
    """
    exclusion = _load_exclusion(manifest)
    ts = manifest.tile_size
    out_size = scaled_dim(ts, manifest.source_mpp.mpp, target.mpp)
    for rec in sorted(manifest.tiles, key=lambda r: (r.gy, r.gx)):
        try:
            img = load_patch(rec.path, manifest.source_mpp)
        except Exception as exc:
            raise RuntimeError(f"tile ({rec.gx}, {rec.gy}) unreadable: {exc}") from exc
        if img.width != ts or img.height != ts:
            raise RuntimeError(
                f"tile ({rec.gx}, {rec.gy}) decodes to {img.width}x{img.height}, expected {ts}x{ts}"
            )
        tissue = background_mask(img, white_threshold).tissue
        if exclusion is not None:
            tissue &= _excluded_block(exclusion, rec.gx, rec.gy, ts)
        if float(tissue.mean()) < min_tissue_fraction:
            continue
        out = resample_to_reference(img, target)
        yield Tile(rec.gx, rec.gy, rec.gx * out_size, rec.gy * out_size, out)
