import numpy as np
import pytest

from semloc.features import (DetectedLine, DetectedPoint, ExtractionConfig,
                             SemanticMask, binarize, extract_features,
                             fit_region_line, read_mask_files, region_centroid,
                             region_grow, write_mask_files)
from semloc.mapmodel import SemanticClass

POLE = SemanticClass.POLE_LIKE
SIGN = SemanticClass.TRAFFIC_SIGN


def mask_of(raster, semantic=POLE):
    h, w = raster.shape
    return SemanticMask(w, h, {semantic: raster})


class TestBinarize:
    def test_all_below_threshold(self):
        raster = np.full((20, 30), 0.05)
        assert binarize(mask_of(raster), POLE, 0.1).sum() == 0

    def test_all_above_threshold(self):
        raster = np.full((20, 30), 0.5)
        assert binarize(mask_of(raster), POLE, 0.1).sum() == 20 * 30

    def test_strictly_greater(self):
        raster = np.full((5, 5), 0.1)
        assert binarize(mask_of(raster), POLE, 0.1).sum() == 0

    def test_default_threshold_setting(self):
        assert ExtractionConfig().threshold == 0.1

    def test_missing_class_is_empty(self):
        raster = np.ones((4, 4))
        assert binarize(mask_of(raster, POLE), SIGN).sum() == 0


class TestRegionGrow:
    def test_two_blocks(self):
        binary = np.zeros((50, 80), dtype=np.uint8)
        binary[5:15, 5:15] = 1
        binary[30:40, 50:60] = 1
        regions = region_grow(binary)
        assert len(regions) == 2
        assert {r.shape[0] for r in regions} == {100}
        # ordered by top-left-most pixel
        assert tuple(regions[0][0]) == (5, 5)

    def test_diagonal_chain_is_one_region(self):
        binary = np.zeros((60, 60), dtype=np.uint8)
        for k in range(50):
            binary[k, k] = 1
        regions = region_grow(binary)
        assert len(regions) == 1
        assert regions[0].shape[0] == 50

    def test_noise_floor(self):
        rng = np.random.default_rng(0)
        binary = np.zeros((100, 100), dtype=np.uint8)
        for _ in range(40):  # isolated pixels, each a region of 1 px
            r, c = rng.integers(0, 100, 2)
            binary[r, c] = 1
        assert region_grow(binary, min_region_px=30) == []


class TestFitRegionLine:
    def test_perfect_vertical_strip(self):
        binary = np.zeros((200, 200), dtype=np.uint8)
        binary[50:151, 100] = 1
        region = region_grow(binary)[0]
        line = fit_region_line(region, POLE)
        assert line is not None
        got = sorted([tuple(line.m1), tuple(line.m2)], key=lambda p: p[1])
        assert got[0] == pytest.approx((100, 50), abs=1.0)
        assert got[1] == pytest.approx((100, 150), abs=1.0)
        assert line.support == 101

    def test_noisy_strip_monte_carlo(self):
        errs = []
        for seed in range(100):
            rng = np.random.default_rng(seed)
            pixels = {(y, 100) for y in range(50, 151)}
            for _ in range(10):  # 10% scatter in a 20 px band around the strip
                y = int(rng.integers(50, 151))
                x = int(100 + rng.integers(-10, 11))
                pixels.add((y, x))
            region = np.array(sorted(pixels))
            line = fit_region_line(region, POLE, seed=seed)
            assert line is not None
            got = sorted([line.m1, line.m2], key=lambda p: p[1])
            errs.append(max(np.linalg.norm(got[0] - [100, 50]),
                            np.linalg.norm(got[1] - [100, 150])))
        assert np.percentile(errs, 95) <= 3.0

    def test_filled_square_is_not_a_line(self):
        binary = np.zeros((100, 100), dtype=np.uint8)
        binary[20:70, 20:70] = 1
        region = region_grow(binary)[0]
        assert fit_region_line(region, POLE) is None

    def test_support_consistent_with_reported_line(self):
        rng = np.random.default_rng(3)
        checked = 0
        for seed in range(20):
            n = 80
            xs = rng.uniform(10, 190, n)
            ys = 0.4 * xs + 20 + rng.uniform(-1.5, 1.5, n)
            region = np.unique(np.column_stack([np.rint(ys), np.rint(xs)])
                               .astype(int), axis=0)
            line = fit_region_line(region, POLE, seed=seed)
            if line is None:
                continue
            checked += 1
            d = line.m2 - line.m1
            d = d / np.linalg.norm(d)
            pts = region[:, ::-1].astype(float)
            dist = np.abs((pts[:, 0] - line.m1[0]) * d[1]
                          - (pts[:, 1] - line.m1[1]) * d[0])
            # support counts exactly the pixels within the inlier tolerance
            # of the reported line
            assert line.support == int((dist <= 2.0).sum())
        assert checked >= 15


class TestRegionCentroid:
    def test_block(self):
        pixels = np.array([(r, c) for r in range(10, 13) for c in range(10, 13)])
        pt = region_centroid(pixels, SIGN)
        assert np.allclose(pt.m, [11, 11])
        assert pt.support == 9

    def test_single_pixel(self):
        pt = region_centroid(np.array([[7, 5]]), SIGN)
        assert np.allclose(pt.m, [5, 7])

    def test_l_shape_matches_direct_mean(self):
        pixels = [(r, 4) for r in range(4, 14)] + [(13, c) for c in range(5, 12)]
        pixels = np.array(pixels)
        pt = region_centroid(pixels, SIGN)
        assert pt.m[0] == pytest.approx(pixels[:, 1].mean())
        assert pt.m[1] == pytest.approx(pixels[:, 0].mean())


class TestExtractFeatures:
    def make_mask(self, shift=(0, 0)):
        dy, dx = shift
        pole = np.zeros((240, 320))
        pole[40 + dy:140 + dy, 60 + dx:63 + dx] = 1.0
        sign = np.zeros((240, 320))
        yy, xx = np.mgrid[0:240, 0:320]
        sign[(xx - 200 - dx) ** 2 + (yy - 80 - dy) ** 2 <= 25] = 1.0
        return SemanticMask(320, 240, {POLE: pole, SIGN: sign})

    def test_composition(self):
        lines, points = extract_features(self.make_mask())
        assert len(lines) == 1 and lines[0].semantic is POLE
        assert len(points) == 1 and points[0].semantic is SIGN
        assert points[0].m == pytest.approx([200, 80], abs=0.5)

    def test_translation_equivariance(self):
        base_lines, base_points = extract_features(self.make_mask())
        lines, points = extract_features(self.make_mask(shift=(13, 21)))
        assert np.allclose(lines[0].m1, base_lines[0].m1 + [21, 13])
        assert np.allclose(lines[0].m2, base_lines[0].m2 + [21, 13])
        assert np.allclose(points[0].m, base_points[0].m + [21, 13])

    def test_deterministic(self):
        a_lines, a_points = extract_features(self.make_mask())
        b_lines, b_points = extract_features(self.make_mask())
        assert a_lines[0].m1.tobytes() == b_lines[0].m1.tobytes()
        assert a_lines[0].m2.tobytes() == b_lines[0].m2.tobytes()
        assert a_points[0].m.tobytes() == b_points[0].m.tobytes()


class TestMaskFiles:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        raster = (rng.integers(0, 256, size=(37, 53)) / 255.0)
        mask = SemanticMask(53, 37, {POLE: raster})
        written = write_mask_files(tmp_path, 12, mask)
        assert [p.name for p in written] == ["000012_POLE.pgm"]
        back = read_mask_files(tmp_path, 12)
        assert back.width == 53 and back.height == 37
        assert np.allclose(back.channels[POLE], raster, atol=0.5 / 255)

    def test_missing_frame(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_mask_files(tmp_path, 99)


class TestDetectionTypes:
    def test_line_rejects_coincident_endpoints(self):
        with pytest.raises(ValueError):
            DetectedLine([5, 5], [5, 5], POLE)

    def test_point_rejects_non_finite(self):
        with pytest.raises(ValueError):
            DetectedPoint([np.nan, 0], SIGN)

    def test_mask_shape_validation(self):
        with pytest.raises(ValueError):
            SemanticMask(10, 10, {POLE: np.zeros((5, 5))})
        with pytest.raises(ValueError):
            SemanticMask(5, 5, {POLE: np.full((5, 5), 1.5)})
