import numpy as np
import pytest
import torch

from advbiom.fingerprint.attack import (
    DistortionNet,
    FingerprintAttack,
    SmoothDisplacementField,
    minutiae_map_separation_loss,
    minutiae_map_similarity_loss,
    pixel_consistency_loss,
)
from advbiom.fingerprint.minutiae import MinutiaeExtractor
from advbiom.fingerprint.synth import blank_fingerprint, synth_fingerprint


class TestMapLosses:
    def test_identical_maps_zero_similarity(self, rng):
        m = rng.uniform(0, 1, size=(16, 16, 12))
        assert minutiae_map_similarity_loss(m, m) == 0.0

    def test_four_cells_half(self):
        a = np.zeros((8, 8, 12))
        b = a.copy()
        b[0, 0, 0] = b[1, 1, 1] = b[2, 2, 2] = b[3, 3, 3] = 0.5
        assert minutiae_map_similarity_loss(a, b) == pytest.approx(2.0, abs=1e-9)

    def test_separation_reciprocal(self):
        a = np.zeros((8, 8, 12))
        b = a.copy()
        b[0, 0, 0] = b[1, 1, 1] = b[2, 2, 2] = b[3, 3, 3] = 0.5
        assert minutiae_map_separation_loss(b, a) == pytest.approx(0.5, abs=1e-6)

    def test_separation_guard_on_identical_maps(self, rng):
        m = rng.uniform(0, 1, size=(8, 8, 12))
        val = minutiae_map_separation_loss(m, m)
        assert np.isfinite(val)
        assert val == pytest.approx(1e6, rel=1e-3)

    def test_separation_strictly_decreases_along_path(self, rng):
        base = rng.uniform(0, 1, size=(8, 8, 12))
        direction = rng.uniform(0.1, 1, size=(8, 8, 12))
        values = [
            minutiae_map_separation_loss(base + t * direction, base) for t in (0.1, 0.5, 1.0, 2.0)
        ]
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            minutiae_map_similarity_loss(np.zeros((8, 8, 12)), np.zeros((8, 9, 12)))


class TestPixelLoss:
    def test_all_equal_zero(self, rng):
        x = rng.uniform(-1, 1, size=(16, 16, 1))
        assert pixel_consistency_loss(x, x, x) == 0.0

    def test_constant_offset(self, rng):
        x = rng.uniform(-0.5, 0.5, size=(16, 16, 1))
        assert pixel_consistency_loss(x, x, x + 0.1) == pytest.approx(0.1, abs=1e-9)

    def test_matches_elementwise_oracle(self, rng):
        x = rng.uniform(-1, 1, size=(12, 12, 1))
        xd = rng.uniform(-1, 1, size=(12, 12, 1))
        xa = rng.uniform(-1, 1, size=(12, 12, 1))
        expected = float(np.mean(np.abs(x - xd)) + np.mean(np.abs(x - xa)))
        assert pixel_consistency_loss(x, xd, xa) == pytest.approx(expected, abs=1e-12)


class TestSmoothField:
    def test_deterministic(self):
        f1 = SmoothDisplacementField(seed=4, size=96)
        f2 = SmoothDisplacementField(seed=4, size=96)
        pts = torch.tensor([[10.0, 20.0], [50.0, 60.0]])
        np.testing.assert_array_equal(f1(pts).numpy(), f2(pts).numpy())

    def test_unit_scale_magnitudes(self, rng):
        field = SmoothDisplacementField(seed=1, size=96)
        pts = torch.tensor(rng.uniform(0, 95, size=(500, 2)))
        out = field(pts)
        mags = out.norm(dim=1).numpy()
        assert 0.3 < mags.mean() < 3.0

    def test_differentiable_in_points(self):
        field = SmoothDisplacementField(seed=2, size=64)
        pts = torch.tensor([[20.0, 30.0]], requires_grad=True)
        field(pts).sum().backward()
        assert pts.grad is not None and torch.isfinite(pts.grad).all()


@pytest.fixture(scope="module")
def tiny_fp_setup():
    types = ("left_loop", "right_loop", "whorl", "arch", "tented_arch")
    X, Y = [], []
    for s in range(30):
        img, pts = synth_fingerprint(40 + s, size=64, finger_type=types[s % 5], n_minutiae=8)
        X.append(img)
        Y.append(pts)
    for s in range(3):
        X.append(blank_fingerprint(700 + s, size=64))
        Y.append([])
    extractor = MinutiaeExtractor(steps=200, batch_size=8, seed=3).fit(np.stack(X), Y)
    prints = np.stack(X[:16])
    return extractor, prints


class TestDistortionModule:
    def test_control_point_arity_and_bounds(self, tiny_fp_setup):
        extractor, prints = tiny_fp_setup
        torch.manual_seed(0)
        net = DistortionNet(n_control_points=16, base_channels=8)
        x = torch.from_numpy(prints[:2]).permute(0, 3, 1, 2)
        maps = extractor.extract_tensor(x)
        cps = net(torch.cat([x, maps], dim=1))
        assert cps.shape == (2, 16, 2)
        assert cps.min() >= 0.0
        assert cps[..., 0].max() <= 63.0 and cps[..., 1].max() <= 63.0

    def test_zero_extent_warp_is_identity(self, tiny_fp_setup):
        extractor, prints = tiny_fp_setup
        attack = FingerprintAttack(
            extractor=extractor, steps=2, batch_size=4, distortion_extent=0.0,
            base_channels=8, seed=5,
        ).fit(prints)
        x_disp = attack.displace(prints[:2], seed=11)
        x_adv = attack.transform(prints[:2], seed=11)
        assert np.abs(x_adv - x_disp).max() <= 1e-5


class TestTrainingSmoke:
    def test_short_training_and_transform(self, tiny_fp_setup):
        extractor, prints = tiny_fp_setup
        attack = FingerprintAttack(
            extractor=extractor, steps=6, batch_size=4, base_channels=8, seed=2
        ).fit(prints)
        assert len(attack.loss_log_) == 6
        for row in attack.loss_log_:
            assert all(np.isfinite(v) for k, v in row.items())
        out = attack.transform(prints[:3], seed=4)
        assert out.shape == (3, 64, 64, 1)
        assert out.min() >= -1.0 and out.max() <= 1.0

    def test_transform_deterministic_per_seed(self, tiny_fp_setup):
        extractor, prints = tiny_fp_setup
        attack = FingerprintAttack(
            extractor=extractor, steps=4, batch_size=4, base_channels=8, seed=2
        ).fit(prints)
        a = attack.transform(prints[:2], seed=9)
        b = attack.transform(prints[:2], seed=9)
        np.testing.assert_array_equal(a, b)

    def test_loss_trace_deterministic(self, tiny_fp_setup):
        extractor, prints = tiny_fp_setup
        kwargs = dict(extractor=extractor, steps=5, batch_size=4, base_channels=8, seed=6)
        a = FingerprintAttack(**kwargs).fit(prints)
        b = FingerprintAttack(**kwargs).fit(prints)
        assert a.loss_log_ == b.loss_log_

    def test_save_load_round_trip(self, tiny_fp_setup, tmp_path):
        extractor, prints = tiny_fp_setup
        attack = FingerprintAttack(
            extractor=extractor, steps=4, batch_size=4, base_channels=8, seed=2
        ).fit(prints)
        path = tmp_path / "fp.ckpt"
        attack.save(path)
        loaded = FingerprintAttack.load(path, extractor=extractor)
        np.testing.assert_array_equal(
            loaded.transform(prints[:2], seed=3), attack.transform(prints[:2], seed=3)
        )

    def test_requires_extractor(self, tiny_fp_setup):
        _, prints = tiny_fp_setup
        with pytest.raises(ValueError):
            FingerprintAttack(steps=1).fit(prints)

    def test_requires_single_channel(self, tiny_fp_setup, rng):
        extractor, _ = tiny_fp_setup
        bad = rng.uniform(-1, 1, size=(4, 64, 64, 3)).astype(np.float32)
        with pytest.raises(ValueError):
            FingerprintAttack(extractor=extractor, steps=1).fit(bad)
