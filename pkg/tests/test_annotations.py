import numpy as np
import pytest

from ihcquant.annotations import (
    CellAnnotation,
    CellClass,
    Her2Score,
    rasterize,
    read_annotations,
    read_labelmap,
    remap_her2,
    write_annotations,
    write_labelmap,
)


def disk_pixel_count(radius):
    """Independent oracle: integer lattice points with dx^2 + dy^2 <= r^2."""
    return sum(
        1
        for dx in range(-radius, radius + 1)
        for dy in range(-radius, radius + 1)
        if dx * dx + dy * dy <= radius * radius
    )


@pytest.mark.parametrize(
    "score,expected",
    [
        (Her2Score.H0, CellClass.TC_NEG),
        (Her2Score.H1, CellClass.TC_POS),
        (Her2Score.H2, CellClass.TC_POS),
        (Her2Score.H3, CellClass.TC_POS),
    ],
)
def test_her2_remap(score, expected):
    assert remap_her2(score) == expected


def test_her2_positive_count_matches_scores_above_h0():
    rng = np.random.default_rng(5)
    scores = [Her2Score(int(v)) for v in rng.integers(0, 4, 200)]
    remapped = [remap_her2(s) for s in scores]
    assert sum(c == CellClass.TC_POS for c in remapped) == sum(s > Her2Score.H0 for s in scores)


class TestRasterize:
    def test_interior_disk_covers_149_pixels(self):
        oracle = disk_pixel_count(7)
        assert oracle == 149
        lm = rasterize([CellAnnotation(100, 100, CellClass.TC_NEG)], 200, 200, radius=7)
        assert int((lm.values == 1).sum()) == oracle
        assert int((lm.values != 0).sum()) == oracle

    def test_empty_list_gives_zero_map(self):
        lm = rasterize([], 64, 64)
        assert not lm.values.any()

    def test_overlap_last_writer_wins(self):
        anns = [
            CellAnnotation(50, 50, CellClass.TC_NEG),
            CellAnnotation(52, 50, CellClass.TC_POS),
        ]
        lm = rasterize(anns, 120, 120, radius=7)
        # brute-force pixel scan of both disks
        union = overlap = 0
        for y in range(120):
            for x in range(120):
                in1 = (x - 50) ** 2 + (y - 50) ** 2 <= 49
                in2 = (x - 52) ** 2 + (y - 50) ** 2 <= 49
                if in1 or in2:
                    union += 1
                    expected = 2 if in2 else 1
                    assert lm.values[y, x] == expected
                if in1 and in2:
                    overlap += 1
        assert overlap > 0
        assert union < 2 * 149
        assert int((lm.values != 0).sum()) == union

    def test_disjoint_disks_scale_linearly(self):
        anns = [
            CellAnnotation(20, 20, CellClass.TC_NEG),
            CellAnnotation(60, 20, CellClass.TC_POS),
            CellAnnotation(20, 60, CellClass.TC_NEG),
            CellAnnotation(60, 60, CellClass.TC_POS),
        ]
        lm = rasterize(anns, 100, 100, radius=7)
        assert int((lm.values != 0).sum()) == 4 * 149

    def test_permutation_invariant_for_disjoint_disks(self):
        rng = np.random.default_rng(11)
        anns = [
            CellAnnotation(20 + 30 * i, 30, CellClass(1 + i % 2)) for i in range(5)
        ]
        lm1 = rasterize(anns, 200, 80)
        shuffled = list(anns)
        rng.shuffle(shuffled)
        lm2 = rasterize(shuffled, 200, 80)
        assert np.array_equal(lm1.values, lm2.values)

    def test_label_at_center_equals_class(self):
        rng = np.random.default_rng(2)
        anns = [
            CellAnnotation(int(x), int(y), CellClass(int(c)))
            for x, y, c in zip(
                rng.integers(0, 128, 30), rng.integers(0, 128, 30), rng.integers(1, 3, 30)
            )
        ]
        lm = rasterize(anns, 128, 128)
        # later disks may overwrite earlier centers; check the final writer
        last = {}
        for a in anns:
            last[(a.x, a.y)] = a
        for (x, y), a in last.items():
            covering = [b for b in anns if (b.x - x) ** 2 + (b.y - y) ** 2 <= 49]
            if covering[-1] == a:
                assert lm.values[y, x] == int(a.cls)

    def test_border_disks_clip_without_error(self):
        lm = rasterize([CellAnnotation(0, 0, CellClass.TC_POS)], 64, 64, radius=7)
        assert 0 < int((lm.values == 2).sum()) < 149

    def test_center_outside_bounds_reports_index(self):
        anns = [
            CellAnnotation(10, 10, CellClass.TC_NEG),
            CellAnnotation(64, 10, CellClass.TC_POS),
        ]
        with pytest.raises(ValueError, match="annotation 1"):
            rasterize(anns, 64, 64)

    def test_radius_below_one_rejected(self):
        with pytest.raises(ValueError):
            rasterize([], 10, 10, radius=0)


class TestAnnotationCsv:
    def test_single_row(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("x,y,class\n10,20,TC_POS\n")
        assert read_annotations(path) == [CellAnnotation(10, 20, CellClass.TC_POS)]

    def test_empty_file_with_header(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("x,y,class\n")
        assert read_annotations(path) == []

    def test_coordinates_floored(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("x,y,class\n10.9,20.2,TC_NEG\n")
        assert read_annotations(path) == [CellAnnotation(10, 20, CellClass.TC_NEG)]

    def test_round_trip_of_1000_random_annotations(self, tmp_path):
        rng = np.random.default_rng(17)
        anns = [
            CellAnnotation(int(x), int(y), CellClass(int(c)))
            for x, y, c in zip(
                rng.integers(0, 4096, 1000),
                rng.integers(0, 4096, 1000),
                rng.integers(1, 3, 1000),
            )
        ]
        path = tmp_path / "a.csv"
        write_annotations(anns, path)
        assert read_annotations(path) == anns

    def test_malformed_row_reports_line_number(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("x,y,class\n1,2,TC_NEG\n3,oops,TC_POS\n")
        with pytest.raises(ValueError, match="line 3"):
            read_annotations(path)

    def test_unknown_class_reports_line_number(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("x,y,class\n1,2,WAT\n")
        with pytest.raises(ValueError, match="line 2"):
            read_annotations(path)

    def test_negative_coordinate_rejected(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("x,y,class\n-1,2,TC_NEG\n")
        with pytest.raises(ValueError, match="line 2"):
            read_annotations(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("a,b,c\n1,2,TC_NEG\n")
        with pytest.raises(ValueError, match="header"):
            read_annotations(path)


def test_labelmap_png_round_trip(tmp_path):
    lm = rasterize(
        [CellAnnotation(10, 12, CellClass.TC_NEG), CellAnnotation(40, 30, CellClass.TC_POS)],
        64,
        48,
    )
    path = tmp_path / "labels.png"
    write_labelmap(lm, path)
    back = read_labelmap(path)
    assert np.array_equal(back.values, lm.values)
