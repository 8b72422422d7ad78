import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sigfuse.errors import ConfigError, InvalidImageError
from sigfuse.featex import (
    FEATURE_NAMES,
    GLOBAL_NAMES,
    LOCAL_NAMES,
    N_FEATURES,
    ProjectionProfile,
    assemble,
    extract_features,
    extract_global,
    extract_local,
    grid_bounds,
    grid_partition,
    projection,
    read_features_csv,
    smooth_profile,
    write_features_csv,
)
from sigfuse.raster import ImageSet, thin


def image_set(binary, gray=None):
    binary = np.asarray(binary, bool)
    if gray is None:
        gray = np.where(binary, 0, 255).astype(np.uint8)
    return ImageSet(gray, binary, thin(binary), np.zeros_like(binary))


@pytest.fixture
def bar():
    img = np.zeros((10, 10), bool)
    img[2:6, 1:6] = True  # rows 2..5, cols 1..5
    return img


class TestProjection:
    def test_empty(self):
        assert not projection(np.zeros((4, 6), bool), "row").counts.any()

    def test_full(self):
        p = projection(np.ones((3, 7), bool), "row")
        assert p.counts.tolist() == [7, 7, 7]

    def test_bar(self, bar):
        rows = projection(bar, "row").counts
        assert rows.tolist() == [0, 0, 5, 5, 5, 5, 0, 0, 0, 0]
        cols = projection(bar, "column").counts
        assert cols.tolist() == [0, 4, 4, 4, 4, 4, 0, 0, 0, 0]

    def test_bad_axis(self):
        with pytest.raises(ValueError):
            projection(np.zeros((2, 2), bool), "diagonal")

    @settings(max_examples=30, deadline=None)
    @given(arrays(bool, st.tuples(st.integers(1, 20), st.integers(1, 20))))
    def test_profiles_sum_to_area(self, img):
        area = int(img.sum())
        assert projection(img, "row").counts.sum() == area
        assert projection(img, "column").counts.sum() == area


class TestSmoothProfile:
    def test_constant(self):
        p = ProjectionProfile(np.full(6, 4), "row")
        assert np.allclose(smooth_profile(p, 5).counts, 4)

    def test_spike(self):
        p = ProjectionProfile(np.array([0, 0, 3, 0, 0]), "row")
        assert np.allclose(smooth_profile(p, 3).counts, [0, 1, 1, 1, 0])

    def test_window_one_identity(self):
        p = ProjectionProfile(np.array([1, 5, 2]), "column")
        assert np.array_equal(smooth_profile(p, 1).counts, [1, 5, 2])

    def test_even_window(self):
        with pytest.raises(ConfigError):
            smooth_profile(ProjectionProfile(np.zeros(3), "row"), 2)

    def test_interior_mass_preserved(self):
        counts = np.zeros(20)
        counts[8:12] = [1, 4, 2, 7]
        out = smooth_profile(ProjectionProfile(counts, "row"), 5).counts
        assert out.sum() == pytest.approx(counts.sum())


class TestGlobal:
    def test_blank(self):
        g = extract_global(image_set(np.zeros((12, 12), bool)))
        assert g.width == g.height == 0
        assert g.area_binary == g.area_thinned == g.area_hpr == 0
        assert g.global_baseline == 0

    def test_bar(self, bar):
        g = extract_global(image_set(bar))
        assert (g.width, g.height) == (5, 4)
        assert g.aspect_ratio == pytest.approx(1.25)
        assert (g.cog_x, g.cog_y) == (3.0, 3.5)
        assert g.area_binary == 20
        assert g.narea_binary == 1.0
        assert g.hproj_sum_binary == g.vproj_sum_binary == 20
        # four equal peak rows 2..5 -> baseline midway between the outermost
        assert g.global_baseline == 3.5
        assert g.vproj_max == g.vproj_min == 4
        assert g.hproj_max == g.hproj_min == 5
        assert g.upper_edge_limit <= g.global_baseline <= g.lower_edge_limit
        assert g.middle_zone == g.lower_edge_limit - g.upper_edge_limit

    def test_thin_line_has_zero_width(self):
        img = np.zeros((8, 16), bool)
        img[4, 3:13] = True
        g = extract_global(image_set(img))
        # every column holds 1 pixel, which is not > 3
        assert g.width == 0
        assert g.height == 1  # the one row holds 10 pixels
        assert g.aspect_ratio == 0
        assert g.narea_binary == 0

    def test_unique_peak_baseline(self):
        img = np.zeros((12, 12), bool)
        img[3:9, 5] = True
        img[6, 2:10] = True
        g = extract_global(image_set(img))
        assert g.global_baseline == 6
        assert g.upper_edge_limit < 6 < g.lower_edge_limit

    def test_smoothed_extremes_bounded_by_raw(self, bar):
        g = extract_global(image_set(bar))
        assert g.vproj_smoothed_max <= g.vproj_max
        assert g.hproj_smoothed_max <= g.hproj_max

    @settings(max_examples=25, deadline=None)
    @given(arrays(bool, (14, 12)), st.integers(-3, 3), st.integers(-3, 3))
    def test_translation(self, blob, dy, dx):
        canvas = np.zeros((40, 40), bool)
        canvas[12:26, 13:25] = blob
        moved = np.roll(canvas, (dy, dx), axis=(0, 1))
        a, b = extract_global(image_set(canvas)), extract_global(image_set(moved))
        for name in ("width", "height", "aspect_ratio", "area_binary", "area_thinned",
                     "area_hpr", "narea_binary", "middle_zone"):
            assert getattr(a, name) == getattr(b, name), name
        if blob.any():
            assert b.cog_x == pytest.approx(a.cog_x + dx, abs=1e-12)
            assert b.cog_y == pytest.approx(a.cog_y + dy, abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(arrays(bool, (20, 20)))
    def test_narea_in_unit_interval(self, img):
        g = extract_global(image_set(img))
        for v in (g.narea_binary, g.narea_thinned, g.narea_hpr):
            assert 0.0 <= v <= 1.0


class TestGrid:
    def test_even_division(self):
        cells = grid_partition(image_set(np.zeros((25, 25), bool)))
        assert len(cells) == 25
        assert all(c.shape == (5, 5) for c in cells)

    def test_floor_boundaries(self):
        assert grid_bounds(26) == [0, 5, 10, 15, 20, 26]
        cells = grid_partition(image_set(np.zeros((26, 26), bool)))
        assert [c.shape[1] for c in cells[:5]] == [5, 5, 5, 5, 6]

    def test_too_small(self):
        with pytest.raises(InvalidImageError):
            grid_partition(image_set(np.zeros((4, 30), bool)))

    @pytest.mark.parametrize("h,w", [(5, 5), (7, 64), (64, 9), (33, 47), (61, 62)])
    def test_tiling(self, h, w):
        idx = np.arange(h * w).reshape(h, w)
        s = ImageSet(np.zeros((h, w), np.uint8), idx % 2 == 0, np.zeros((h, w), bool), np.zeros((h, w), bool))
        ys, xs = grid_bounds(h), grid_bounds(w)
        seen = np.concatenate([idx[ys[r]:ys[r + 1], xs[c]:xs[c + 1]].ravel() for r in range(5) for c in range(5)])
        assert sorted(seen.tolist()) == list(range(h * w))
        cells = grid_partition(s)
        assert sum(c.shape[0] * c.shape[1] for c in cells) == h * w
        assert sum(int(c.binary.sum()) for c in cells) == int(s.binary.sum())


class TestLocalAndAssembly:
    def test_blank_cells_zero(self):
        cells = grid_partition(image_set(np.zeros((30, 30), bool)))
        locs = extract_local(cells)
        assert all(not any(vars(lf).values()) for lf in locs)

    def test_cell_matches_global_rules(self, bar):
        s = image_set(bar)
        loc = extract_local([s] * 25)[0]
        g = extract_global(s)
        for name in ("width", "height", "aspect_ratio", "area_binary", "area_thinned",
                     "area_hpr", "narea_binary", "cog_x", "cog_y"):
            assert getattr(loc, name) == getattr(g, name)
        assert loc.hproj_sum == g.hproj_sum_binary
        assert loc.vproj_sum == g.vproj_sum_binary

    def test_wrong_cell_count(self, bar):
        with pytest.raises(InvalidImageError):
            extract_local([image_set(bar)] * 24)

    def test_layout(self, bar):
        s = image_set(np.pad(bar, ((0, 15), (0, 15))))
        vec = extract_features(s)
        assert vec.shape == (302,) == (N_FEATURES,)
        assert len(GLOBAL_NAMES) == 27 and len(LOCAL_NAMES) == 11
        assert FEATURE_NAMES[0] == "g_width"
        assert FEATURE_NAMES[27] == "c00_width"
        assert FEATURE_NAMES[-1] == "c44_vproj_sum"
        g = extract_global(s)
        assert vec[0] == g.width and vec[13] == g.cog_x

    def test_blank_vector_finite(self):
        vec = extract_features(image_set(np.zeros((5, 5), bool)))
        assert vec.shape == (302,) and np.isfinite(vec).all() and not vec.any()

    def test_deterministic(self, bar):
        s = image_set(np.pad(bar, 10))
        assert np.array_equal(extract_features(s), extract_features(s))

    @settings(max_examples=20, deadline=None)
    @given(arrays(bool, st.tuples(st.integers(5, 40), st.integers(5, 40))))
    def test_random_vectors_finite(self, img):
        vec = extract_features(image_set(img))
        assert vec.shape == (302,) and np.isfinite(vec).all()


def test_csv_round_trip(tmp_path, bar):
    vec = extract_features(image_set(np.pad(bar, 10)))
    write_features_csv(tmp_path / "f.csv", [("s000", "g00", vec), ("s001", "g01", vec * 2)])
    header = (tmp_path / "f.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["subject_id", "sample_id", "g_width"]
    assert len(header) == 304
    rows = read_features_csv(tmp_path / "f.csv")
    assert rows[1][:2] == ("s001", "g01")
    assert np.array_equal(rows[1][2], vec * 2)
