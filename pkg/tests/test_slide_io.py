import json

import numpy as np
import pytest

from ihcquant.slide_io import (
    PatchImage,
    ResolutionSpec,
    background_mask,
    iter_tiles,
    load_manifest,
    resample_to_reference,
    save_patch,
    scaled_dim,
)


def make_patch(w, h, color, mpp=0.19):
    px = np.full((h, w, 3), color, dtype=np.uint8)
    return PatchImage(px, ResolutionSpec(mpp))


def write_manifest_dir(tmp_path, tiles, tile_size, source_mpp, exclusion=None):
    """tiles: dict (gx, gy) -> color or pixel array."""
    entries = []
    for (gx, gy), spec in tiles.items():
        name = f"t{gx}_{gy}.png"
        if isinstance(spec, np.ndarray):
            px = spec
        else:
            px = np.full((tile_size, tile_size, 3), spec, dtype=np.uint8)
        save_patch(PatchImage(px, ResolutionSpec(source_mpp)), tmp_path / name)
        entries.append({"path": name, "gx": gx, "gy": gy})
    data = {
        "slide_id": "s1",
        "source_mpp": source_mpp,
        "tile_size": tile_size,
        "tiles": entries,
    }
    if exclusion is not None:
        data["exclusion_mask"] = exclusion
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(data))
    return path


class TestResample:
    def test_factor_two_upscale(self):
        img = make_patch(1024, 1024, (100, 100, 100), mpp=0.38)
        out = resample_to_reference(img, ResolutionSpec(0.19))
        assert (out.width, out.height) == (2048, 2048)
        assert out.mpp.mpp == 0.19

    def test_identity_is_byte_identical(self):
        rng = np.random.default_rng(0)
        px = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
        img = PatchImage(px, ResolutionSpec(0.19))
        out = resample_to_reference(img, ResolutionSpec(0.19))
        assert np.array_equal(out.pixels, px)
        assert out.pixels is not px  # fresh buffer

    def test_fractional_scale_dimensions(self):
        # independent scale computation: round(779 * 0.25 / 0.19) = 1025
        expected = int(round(779 * 0.25 / 0.19))
        assert expected == 1025
        img = make_patch(779, 779, (90, 90, 90), mpp=0.25)
        out = resample_to_reference(img, ResolutionSpec(0.19))
        assert (out.width, out.height) == (1025, 1025)

    @pytest.mark.parametrize("factor", [2, 3, 4])
    def test_integer_factors_give_exact_multiples(self, factor):
        img = make_patch(96, 80, (50, 60, 70), mpp=0.19 * factor)
        out = resample_to_reference(img, ResolutionSpec(0.19))
        assert out.width == 96 * factor
        assert out.height == 80 * factor

    def test_nonpositive_mpp_rejected(self):
        with pytest.raises(ValueError):
            ResolutionSpec(0.0)
        with pytest.raises(ValueError):
            ResolutionSpec(-0.19)

    def test_zero_dimension_rejected(self):
        with pytest.raises(ValueError):
            PatchImage(np.zeros((0, 10, 3), dtype=np.uint8), ResolutionSpec(0.19))

    def test_reference_patch_physical_area(self):
        # 1024 px at 0.19 um/px is a ~0.0379 mm^2 section (reported as 0.04)
        side_mm = 1024 * 0.19 / 1000
        assert side_mm**2 == pytest.approx(0.0379, abs=5e-4)
        assert round(side_mm**2, 2) == 0.04


class TestBackgroundMask:
    def test_all_white_is_all_background(self):
        mask = background_mask(make_patch(32, 32, (255, 255, 255)))
        assert mask.tissue_fraction == 0.0

    def test_all_brown_is_all_tissue(self):
        mask = background_mask(make_patch(32, 32, (120, 80, 40)))
        assert mask.tissue_fraction == 1.0

    def test_half_split_is_exactly_half(self):
        px = np.full((40, 40, 3), 255, dtype=np.uint8)
        px[:, :20] = (120, 80, 40)
        mask = background_mask(PatchImage(px, ResolutionSpec(0.19)))
        assert mask.tissue_fraction == 0.5

    def test_threshold_uses_darkest_channel(self):
        # min(R,G,B) = 200 < 235 -> tissue even though other channels are bright
        mask = background_mask(make_patch(8, 8, (255, 255, 200)))
        assert mask.tissue_fraction == 1.0

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(3)
        px = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
        img = PatchImage(px, ResolutionSpec(0.19))
        fractions = [background_mask(img, t).tissue_fraction for t in range(0, 256, 16)]
        assert all(b >= a for a, b in zip(fractions, fractions[1:]))


class TestIterTiles:
    def test_full_grid_row_major(self, tmp_path):
        tiles = {(gx, gy): (120, 80, 40) for gx in range(2) for gy in range(2)}
        manifest = load_manifest(write_manifest_dir(tmp_path, tiles, 64, 0.19))
        out = list(iter_tiles(manifest))
        assert [(t.gx, t.gy) for t in out] == [(0, 0), (1, 0), (0, 1), (1, 1)]
        offsets = {(t.x0, t.y0) for t in out}
        assert offsets == {(0, 0), (64, 0), (0, 64), (64, 64)}

    def test_white_tile_skipped(self, tmp_path):
        tiles = {(gx, gy): (120, 80, 40) for gx in range(2) for gy in range(2)}
        tiles[(1, 0)] = (255, 255, 255)
        manifest = load_manifest(write_manifest_dir(tmp_path, tiles, 64, 0.19))
        out = list(iter_tiles(manifest))
        assert [(t.gx, t.gy) for t in out] == [(0, 0), (0, 1), (1, 1)]

    def test_resampled_tile_coordinates(self, tmp_path):
        # 512-px tiles at 0.38 MPP come out as 1024-px reference tiles
        tiles = {(gx, 0): (120, 80, 40) for gx in range(2)}
        manifest = load_manifest(write_manifest_dir(tmp_path, tiles, 512, 0.38))
        out = list(iter_tiles(manifest))
        assert scaled_dim(512, 0.38, 0.19) == 1024
        assert all(t.image.width == t.image.height == 1024 for t in out)
        assert [(t.x0, t.y0) for t in out] == [(0, 0), (1024, 0)]

    def test_tiles_cover_grid_without_overlap(self, tmp_path):
        tiles = {(gx, gy): (120, 80, 40) for gx in range(3) for gy in range(2)}
        manifest = load_manifest(write_manifest_dir(tmp_path, tiles, 32, 0.19))
        out = list(iter_tiles(manifest))
        spans = [(t.x0, t.y0, t.x0 + t.image.width, t.y0 + t.image.height) for t in out]
        for i, a in enumerate(spans):
            for b in spans[i + 1 :]:
                disjoint = a[2] <= b[0] or b[2] <= a[0] or a[3] <= b[1] or b[3] <= a[1]
                assert disjoint
        assert {(t.x0, t.y0) for t in out} == {(gx * 32, gy * 32) for gx in range(3) for gy in range(2)}

    def test_exclusion_mask_drops_tile(self, tmp_path):
        from PIL import Image

        tiles = {(gx, 0): (120, 80, 40) for gx in range(2)}
        # mask at downsample 8: tiles are 64 px -> 8 mask px each; zero out tile 1
        mask = np.full((8, 16), 255, dtype=np.uint8)
        mask[:, 8:] = 0
        Image.fromarray(mask, mode="L").save(tmp_path / "excl.png")
        path = write_manifest_dir(
            tmp_path, tiles, 64, 0.19, exclusion={"path": "excl.png", "downsample": 8}
        )
        out = list(iter_tiles(load_manifest(path)))
        assert [(t.gx, t.gy) for t in out] == [(0, 0)]

    def test_min_tissue_fraction_boundary(self, tmp_path):
        px = np.full((64, 64, 3), 255, dtype=np.uint8)
        px[:8, :32] = (120, 80, 40)  # 1/16 tissue
        manifest = load_manifest(write_manifest_dir(tmp_path, {(0, 0): px}, 64, 0.19))
        assert len(list(iter_tiles(manifest, min_tissue_fraction=0.05))) == 1
        assert len(list(iter_tiles(manifest, min_tissue_fraction=0.10))) == 0

    def test_unreadable_tile_aborts_with_coordinate(self, tmp_path):
        path = write_manifest_dir(tmp_path, {(0, 0): (120, 80, 40)}, 64, 0.19)
        (tmp_path / "t0_0.png").write_bytes(b"not a png")
        with pytest.raises(RuntimeError, match=r"\(0, 0\)"):
            list(iter_tiles(load_manifest(path)))

    def test_missing_tile_file_rejected_at_load(self, tmp_path):
        path = write_manifest_dir(tmp_path, {(0, 0): (120, 80, 40)}, 64, 0.19)
        data = json.loads(path.read_text())
        data["tiles"].append({"path": "absent.png", "gx": 1, "gy": 0})
        path.write_text(json.dumps(data))
        with pytest.raises(ValueError, match="absent.png"):
            load_manifest(path)

    def test_duplicate_grid_position_rejected(self, tmp_path):
        path = write_manifest_dir(tmp_path, {(0, 0): (120, 80, 40)}, 64, 0.19)
        data = json.loads(path.read_text())
        data["tiles"].append(dict(data["tiles"][0]))
        path.write_text(json.dumps(data))
        with pytest.raises(ValueError, match="duplicate"):
            load_manifest(path)
