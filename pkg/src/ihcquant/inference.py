"""Probability maps and inference backends.

The interchange format is a 3-channel per-pixel probability map
(background, TC-, TC+).  A trained segmentation model can plug in by
writing PMAP files per tile; the built-in backend is a stain-intensity
baseline that unmixes hematoxylin and DAB optical densities and turns
brown-stain evidence into positivity.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit

from .slide_io import PatchImage, ResolutionSpec, Tile

# Ruifrok-Johnston H-DAB optical-density basis.
DEFAULT_HEMATOXYLIN_OD = (0.650, 0.704, 0.286)
DEFAULT_DAB_OD = (0.269, 0.568, 0.778)

NORMALIZATION_TOL = 1e-3

CLASS_NAMES = ("BG", "TC_NEG", "TC_POS")
BG_CHANNEL, TC_NEG_CHANNEL, TC_POS_CHANNEL = 0, 1, 2


@dataclass(frozen=True)
class StainParams:
    """Stain basis and the baseline backend's decision knobs (OD units)."""

    hematoxylin: tuple[float, float, float] = DEFAULT_HEMATOXYLIN_OD
    dab: tuple[float, float, float] = DEFAULT_DAB_OD
    dab_threshold: float = 0.30
    nuclear_threshold: float = 0.15
    softness: float = 0.05

    def __post_init__(self):
        if self.softness <= 0:
            raise ValueError("softness must be positive")
        h = np.asarray(self.hematoxylin, dtype=float)
        d = np.asarray(self.dab, dtype=float)
        if np.linalg.norm(h) == 0 or np.linalg.norm(d) == 0:
            raise ValueError("stain vectors must be nonzero")
        if np.linalg.norm(np.cross(h / np.linalg.norm(h), d / np.linalg.norm(d))) < 1e-6:
            raise ValueError("stain vectors are collinear; cannot unmix")

    def basis(self) -> np.ndarray:
        """Unit-norm stain vectors as columns of a 3x2 matrix."""
        h = np.asarray(self.hematoxylin, dtype=float)
        d = np.asarray(self.dab, dtype=float)
        return np.stack([h / np.linalg.norm(h), d / np.linalg.norm(d)], axis=1)


@dataclass
class ProbabilityMap:
    """Planar (3, height, width) float32 probabilities at a known MPP.

    Channel order is (background, TC-, TC+); per-pixel channel sums must
    stay within NORMALIZATION_TOL of 1.
    """

    channels: np.ndarray
    mpp: ResolutionSpec

    def __post_init__(self):
        if isinstance(self.mpp, (int, float)):
            self.mpp = ResolutionSpec(float(self.mpp))
        ch = np.asarray(self.channels, dtype=np.float32)
        if ch.ndim != 3 or ch.shape[0] != 3:
            raise ValueError(f"probability map must be (3, h, w), got {ch.shape}")
        self.channels = ch

    @property
    def width(self) -> int:
        return self.channels.shape[2]

    @property
    def height(self) -> int:
        return self.channels.shape[1]

    def plane(self, index: int) -> np.ndarray:
        return self.channels[index]

    def validate(self, tol: float = NORMALIZATION_TOL) -> None:
        ch = self.channels
        if ch.min() < -1e-6 or ch.max() > 1 + 1e-6:
            flat = np.argmax((ch < -1e-6) | (ch > 1 + 1e-6))
            raise ValueError(f"probability outside [0, 1] at flat channel index {int(flat)}")
        sums = ch.sum(axis=0, dtype=np.float64)
        err = np.abs(sums - 1.0)
        if err.max() > tol:
            idx = int(np.argmax(err))
            y, x = divmod(idx, self.width)
            raise ValueError(
                f"channel sum {sums.flat[idx]:.6f} violates normalization at pixel "
                f"{idx} (x={x}, y={y})"
            )


@dataclass
class ReplicateSet:
    """Repeated stochastic inferences of one patch (same dims and MPP)."""

    replicates: list[ProbabilityMap] = field(default_factory=list)

    def __post_init__(self):
        if not self.replicates:
            raise ValueError("replicate set is empty")
        first = self.replicates[0]
        for i, r in enumerate(self.replicates[1:], start=1):
            if r.channels.shape != first.channels.shape:
                raise ValueError(f"replicate {i} dims {r.channels.shape[1:]} != {first.channels.shape[1:]}")
            if r.mpp.mpp != first.mpp.mpp:
                raise ValueError(f"replicate {i} MPP {r.mpp.mpp} != {first.mpp.mpp}")

    @property
    def count(self) -> int:
        return len(self.replicates)


def optical_density(pixels: np.ndarray) -> np.ndarray:
    """Per-channel optical density: -log10((v + 1) / 256)."""
    return -np.log10((pixels.astype(np.float32) + 1.0) / 256.0)


def unmix_od(od: np.ndarray, params: StainParams = StainParams()) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares projection of (..., 3) OD vectors onto the stain basis.

    Negative concentrations clamp to zero.  Returns (hematoxylin, dab)
    planes with the leading shape of the input.
    """
    od = np.asarray(od)
    pinv = np.linalg.pinv(params.basis()).astype(od.dtype if od.dtype.kind == "f" else np.float64)
    conc = od.reshape(-1, 3) @ pinv.T
    np.maximum(conc, 0.0, out=conc)
    lead = od.shape[:-1]
    return conc[:, 0].reshape(lead), conc[:, 1].reshape(lead)


def deconvolve(img: PatchImage, params: StainParams = StainParams()) -> tuple[np.ndarray, np.ndarray]:
    """Unmix an RGB patch into hematoxylin and DAB concentration planes."""
    return unmix_od(optical_density(img.pixels), params)


def baseline_infer(img: PatchImage, params: StainParams = StainParams()) -> ProbabilityMap:
    """Stain-intensity baseline backend.

    Nuclear evidence is a logistic gate on total stain density; positivity
    is a logistic gate on the DAB (brown) density.  P(TC+) = n*p,
    P(TC-) = n*(1-p), P(background) = 1-n.
    """
    hema, dab = deconvolve(img, params)
    total = hema + dab
    n = expit((total - np.float32(params.nuclear_threshold)) / np.float32(params.softness))
    p = expit((dab - np.float32(params.dab_threshold)) / np.float32(params.softness))
    pos = n * p
    neg = n * (1.0 - p)
    bg = 1.0 - n
    channels = np.stack([bg, neg, pos]).astype(np.float32)
    return ProbabilityMap(channels, img.mpp)


def _bin_path(header_path: Path) -> Path:
    return header_path.with_suffix(".bin")


def write_pmap(pmap: ProbabilityMap, path: str | Path) -> None:
    """Write the PMAP container: JSON header plus sibling `.bin` payload.

    The payload is float32 little-endian, planar in (BG, TC_NEG, TC_POS)
    order, each plane row-major.  Both files are written atomically.
    """
    path = Path(path)
    header = {
        "width": pmap.width,
        "height": pmap.height,
        "channels": 3,
        "mpp": pmap.mpp.mpp,
        "dtype": "f32le",
        "layout": "planar",
        "class_names": list(CLASS_NAMES),
    }
    payload = np.ascontiguousarray(pmap.channels, dtype="<f4").tobytes()
    for target, data in ((path, json.dumps(header, indent=2).encode() + b"\n"), (_bin_path(path), payload)):
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=target.name + ".")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def read_pmap(path: str | Path) -> ProbabilityMap:
    """Read a PMAP container, checking payload size and normalization."""
    path = Path(path)
    with open(path) as fh:
        header = json.load(fh)
    for key in ("width", "height", "channels", "mpp", "dtype", "layout", "class_names"):
        if key not in header:
            raise ValueError(f"{path}: missing header key {key!r}")
    if header["channels"] != 3 or header["dtype"] != "f32le" or header["layout"] != "planar":
        raise ValueError(f"{path}: unsupported PMAP variant {header}")
    if list(header["class_names"]) != list(CLASS_NAMES):
        raise ValueError(f"{path}: unexpected class names {header['class_names']}")
    w, h = int(header["width"]), int(header["height"])
    bin_path = _bin_path(path)
    payload = bin_path.read_bytes()
    expected = w * h * 3 * 4
    if len(payload) != expected:
        raise ValueError(
            f"{bin_path}: payload size mismatch: expected {expected} bytes, got {len(payload)}"
        )
    channels = np.frombuffer(payload, dtype="<f4").reshape(3, h, w).copy()
    pmap = ProbabilityMap(channels, ResolutionSpec(float(header["mpp"])))
    pmap.validate()
    return pmap


def mean_replicate(replicate_set: ReplicateSet) -> ProbabilityMap:
    """Per-pixel arithmetic mean across replicates, renormalized."""
    stack = np.stack([r.channels for r in replicate_set.replicates]).astype(np.float64)
    mean = stack.mean(axis=0)
    mean /= mean.sum(axis=0, keepdims=True)
    return ProbabilityMap(mean.astype(np.float32), replicate_set.replicates[0].mpp)


def baseline_backend(params: StainParams = StainParams()) -> Callable[[Tile], ProbabilityMap]:
    """Backend adapter: run the stain-intensity baseline on each tile."""

    def backend(tile: Tile) -> ProbabilityMap:
        return baseline_infer(tile.image, params)

    return backend


def pmap_directory_backend(directory: str | Path) -> Callable[[Tile], ProbabilityMap]:
    """Backend adapter reading externally produced per-tile PMAP files.

    Files are looked up as `tile_{gx}_{gy}.json` and must match the tile's
    resampled dimensions.
    """
    directory = Path(directory)

    def backend(tile: Tile) -> ProbabilityMap:
        path = directory / f"tile_{tile.gx}_{tile.gy}.json"
        pmap = read_pmap(path)
        if (pmap.width, pmap.height) != (tile.image.width, tile.image.height):
            raise ValueError(
                f"{path}: PMAP is {pmap.width}x{pmap.height} but tile "
                f"({tile.gx}, {tile.gy}) is {tile.image.width}x{tile.image.height}"
            )
        return pmap

    return backend
