import numpy as np
import pytest

from advbiom.fingerprint.minutiae import (
    MinutiaPoint,
    MinutiaeExtractor,
    build_target_map,
    detect_minutiae,
    displace_minutiae,
    interpolate_orientation,
    render_minutiae_map,
)
from advbiom.fingerprint.synth import blank_fingerprint, synth_fingerprint
from oracles import parabola_vertex_oracle


class TestOrientationInterpolation:
    def test_symmetric_neighbors_exact_center(self):
        for c in range(12):
            theta = interpolate_orientation(0.3, 0.9, 0.3, c)
            assert theta == pytest.approx((c % 12) * np.pi / 6, abs=1e-12)

    def test_spec_triple_against_dense_oracle(self):
        theta = interpolate_orientation(0.2, 0.8, 0.4, 3)
        offset = parabola_vertex_oracle(0.2, 0.8, 0.4)
        assert theta == pytest.approx((3 + offset) * np.pi / 6, abs=1e-6)
        assert theta == pytest.approx(3.1 * np.pi / 6, abs=1e-9)

    def test_random_triples_against_oracle(self, rng):
        for _ in range(50):
            f0 = rng.uniform(0.5, 1.0)
            fm, fp = rng.uniform(0.0, f0), rng.uniform(0.0, f0)
            c = int(rng.integers(0, 12))
            theta = interpolate_orientation(fm, f0, fp, c)
            offset = parabola_vertex_oracle(fm, f0, fp)
            expected = (((c + offset) % 12) * np.pi / 6) % (2 * np.pi)
            assert theta == pytest.approx(expected, abs=1e-5)

    def test_flat_triple_center(self):
        assert interpolate_orientation(0.5, 0.5, 0.5, 2) == pytest.approx(2 * np.pi / 6)


class TestRenderDetect:
    def test_round_trip_positions_and_theta(self):
        points = [
            MinutiaPoint(20.0, 30.0, np.pi / 6),
            MinutiaPoint(45.0, 10.0, 3.7),
            MinutiaPoint(12.0, 50.0, 5.9),
        ]
        found = detect_minutiae(render_minutiae_map(points, (64, 64)))
        assert len(found) == len(points)
        for gt in points:
            best = min(found, key=lambda d: abs(d.i - gt.i) + abs(d.j - gt.j))
            assert abs(best.i - gt.i) <= 2 and abs(best.j - gt.j) <= 2
            dtheta = abs((best.theta - gt.theta + np.pi) % (2 * np.pi) - np.pi)
            assert dtheta <= np.pi / 12

    def test_map_non_negative(self, rng):
        points = [MinutiaPoint(float(rng.integers(5, 59)), float(rng.integers(5, 59)), float(rng.uniform(0, 2 * np.pi))) for _ in range(6)]
        m = render_minutiae_map(points, (64, 64))
        assert m.min() >= 0.0
        assert m.shape == (64, 64, 12)

    def test_all_below_threshold_empty(self):
        assert detect_minutiae(np.full((16, 16, 12), 0.2)) == []

    def test_rejects_wrong_channel_count(self):
        with pytest.raises(ValueError):
            detect_minutiae(np.zeros((16, 16, 6)))

    def test_channel_wraparound_peak(self):
        # orientation near 2*pi lands in channel 11 with neighbor channel 0
        points = [MinutiaPoint(20.0, 20.0, 11.6 * np.pi / 6)]
        found = detect_minutiae(render_minutiae_map(points, (40, 40)))
        assert len(found) == 1
        dtheta = abs((found[0].theta - points[0].theta + np.pi) % (2 * np.pi) - np.pi)
        assert dtheta <= np.pi / 12


class TestDisplacement:
    def test_l1_distance_exact(self):
        points = [MinutiaPoint(40.0, 40.0, 1.0), MinutiaPoint(60.0, 30.0, 2.0)]
        moved = displace_minutiae(points, 20, (96, 96), seed=3)
        for a, b in zip(points, moved):
            assert abs(a.i - b.i) + abs(a.j - b.j) == pytest.approx(20.0)
            assert b.theta == a.theta

    def test_zero_distance_identity(self):
        points = [MinutiaPoint(10.0, 12.0, 0.5)]
        moved = displace_minutiae(points, 0, (32, 32), seed=1)
        assert moved[0].i == 10.0 and moved[0].j == 12.0

    def test_deterministic_per_seed(self):
        points = [MinutiaPoint(40.0, 40.0, 1.0)]
        a = displace_minutiae(points, 16, (96, 96), seed=7)
        b = displace_minutiae(points, 16, (96, 96), seed=7)
        assert a == b

    def test_clipped_to_bounds(self):
        points = [MinutiaPoint(1.0, 1.0, 0.0)]
        moved = displace_minutiae(points, 50, (32, 32), seed=2)
        assert 0 <= moved[0].i <= 31 and 0 <= moved[0].j <= 31

    def test_target_map_round_trip(self):
        points = [MinutiaPoint(30.0, 30.0, 2.0)]
        target = build_target_map(points, 20, (96, 96), seed=5)
        found = detect_minutiae(target)
        assert len(found) == 1
        dist = abs(found[0].i - 30.0) + abs(found[0].j - 30.0)
        assert dist == pytest.approx(20.0, abs=2.0)

    def test_zero_distance_target_equals_rendered_probe(self):
        points = [MinutiaPoint(15.0, 18.0, 1.2), MinutiaPoint(40.0, 22.0, 4.0)]
        target = build_target_map(points, 0, (64, 64), seed=9)
        np.testing.assert_array_equal(target, render_minutiae_map(points, (64, 64)))


@pytest.fixture(scope="module")
def small_extractor():
    types = ("left_loop", "right_loop", "whorl", "arch", "tented_arch")
    X, Y = [], []
    for s in range(40):
        img, pts = synth_fingerprint(300 + s, size=64, finger_type=types[s % 5], n_minutiae=8)
        X.append(img)
        Y.append(pts)
    for s in range(4):
        X.append(blank_fingerprint(900 + s, size=64))
        Y.append([])
    return MinutiaeExtractor(steps=250, batch_size=8, seed=1).fit(np.stack(X), Y)


class TestExtractor:
    def test_output_non_negative_50_random(self, small_extractor, rng):
        X = rng.uniform(-1, 1, size=(50, 64, 64, 1)).astype(np.float32)
        maps = small_extractor.transform(X)
        assert maps.min() >= 0.0
        assert maps.shape == (50, 64, 64, 12)

    def test_rejects_multichannel(self, small_extractor, rng):
        with pytest.raises(ValueError):
            small_extractor.extract(rng.uniform(-1, 1, size=(64, 64, 3)).astype(np.float32))

    def test_deterministic_transform(self, small_extractor):
        img, _ = synth_fingerprint(777, size=64)
        np.testing.assert_array_equal(small_extractor.extract(img), small_extractor.extract(img))

    def test_save_load_round_trip(self, small_extractor, tmp_path):
        path = tmp_path / "extractor.ckpt"
        small_extractor.save(path)
        loaded = MinutiaeExtractor.load(path)
        img, _ = synth_fingerprint(778, size=64)
        np.testing.assert_array_equal(loaded.extract(img), small_extractor.extract(img))

    def test_label_count_must_match(self, rng):
        X = rng.uniform(-1, 1, size=(4, 32, 32, 1)).astype(np.float32)
        with pytest.raises(ValueError):
            MinutiaeExtractor(steps=1).fit(X, [[]] * 3)


class TestSynthFingerprint:
    def test_deterministic(self):
        a_img, a_pts = synth_fingerprint(5, size=64, finger_type="whorl")
        b_img, b_pts = synth_fingerprint(5, size=64, finger_type="whorl")
        np.testing.assert_array_equal(a_img, b_img)
        assert a_pts == b_pts

    def test_range_and_shape(self):
        img, pts = synth_fingerprint(6, size=64, finger_type="arch", n_minutiae=10)
        assert img.shape == (64, 64, 1)
        assert img.min() >= -1.0 and img.max() <= 1.0
        assert len(pts) == 10

    def test_five_types_distinct(self):
        imgs = {
            t: synth_fingerprint(3, size=64, finger_type=t)[0]
            for t in ("left_loop", "right_loop", "whorl", "arch", "tented_arch")
        }
        names = list(imgs)
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                assert not np.array_equal(imgs[a], imgs[b])

    def test_unknown_type_rejected(self):
        with pytest.raises(ValueError):
            synth_fingerprint(1, finger_type="spiral")

    def test_offset_shifts_minutiae(self):
        _, base = synth_fingerprint(9, size=64)
        _, moved = synth_fingerprint(9, size=64, offset=(3, -2))
        for a, b in zip(base, moved):
            assert b.i == pytest.approx(a.i + 3) and b.j == pytest.approx(a.j - 2)
            assert b.theta == pytest.approx(a.theta, abs=1e-9)
