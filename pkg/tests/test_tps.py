import numpy as np
import pytest
import torch

from advbiom.fingerprint.tps import (
    bilinear_sample,
    tps_displacement_field,
    tps_fit,
    tps_warp,
    tps_warp_t,
)
from oracles import finite_difference_at, tps_field_oracle


@pytest.fixture()
def image(rng):
    return rng.uniform(-1, 1, size=(40, 40, 1)).astype(np.float64)


@pytest.fixture()
def control_points(rng):
    return rng.uniform(6, 34, size=(8, 2))


class TestWarpBasics:
    def test_zero_displacement_identity(self, image, control_points):
        out = tps_warp(image, control_points, np.zeros_like(control_points))
        assert np.abs(out - image).max() <= 1e-6

    def test_integer_translation_matches_shift_oracle(self, image, control_points):
        t = np.array([3.0, -2.0])
        out = tps_warp(image, control_points, np.tile(t, (len(control_points), 1)))
        shifted = np.zeros_like(image)
        shifted[3:, :-2, :] = image[:-3, 2:, :]  # content moves by (+3, -2)
        interior = np.s_[5:35, 5:35, :]
        assert np.abs(out[interior] - shifted[interior]).max() <= 1e-4

    def test_fractional_translation_matches_bilinear_oracle(self, image, control_points):
        t = np.array([0.5, 0.25])
        out = tps_warp(image, control_points, np.tile(t, (len(control_points), 1)))
        # manual bilinear read of the source at q - t for a probe grid
        for r in range(10, 30, 7):
            for c in range(10, 30, 5):
                sr, sc = r - t[0], c - t[1]
                r0, c0 = int(np.floor(sr)), int(np.floor(sc))
                fr, fc = sr - r0, sc - c0
                expected = (
                    image[r0, c0, 0] * (1 - fr) * (1 - fc)
                    + image[r0, c0 + 1, 0] * (1 - fr) * fc
                    + image[r0 + 1, c0, 0] * fr * (1 - fc)
                    + image[r0 + 1, c0 + 1, 0] * fr * fc
                )
                assert out[r, c, 0] == pytest.approx(expected, abs=1e-6)

    def test_output_shape_and_channels(self, rng, control_points):
        img = rng.uniform(-1, 1, size=(40, 40, 3))
        out = tps_warp(img, control_points, np.zeros_like(control_points))
        assert out.shape == img.shape


class TestFieldAgainstOracle:
    def test_single_point_displacement(self, rng):
        pts = np.array([[10.0, 10.0], [30.0, 12.0], [20.0, 30.0], [8.0, 28.0]])
        disp = np.zeros((4, 2))
        disp[0] = [4.0, -3.0]
        field = tps_displacement_field(torch.tensor(pts), torch.tensor(disp), (40, 40)).numpy()
        coords = rng.integers(0, 40, size=(100, 2)).astype(np.float64)
        oracle = tps_field_oracle(pts, disp, coords)
        impl = field[coords[:, 0].astype(int), coords[:, 1].astype(int)]
        assert np.abs(impl - oracle).max() <= 1e-6

    def test_general_displacements(self, rng):
        pts = rng.uniform(4, 36, size=(10, 2))
        disp = rng.uniform(-3, 3, size=(10, 2))
        field = tps_displacement_field(torch.tensor(pts), torch.tensor(disp), (40, 40)).numpy()
        coords = rng.integers(0, 40, size=(100, 2)).astype(np.float64)
        oracle = tps_field_oracle(pts, disp, coords)
        impl = field[coords[:, 0].astype(int), coords[:, 1].astype(int)]
        assert np.abs(impl - oracle).max() <= 1e-6

    def test_interpolates_control_displacements(self, rng):
        pts = np.array([[8.0, 9.0], [30.0, 11.0], [21.0, 30.0], [12.0, 25.0], [28.0, 28.0]])
        disp = rng.uniform(-2, 2, size=(5, 2))
        field = tps_displacement_field(torch.tensor(pts), torch.tensor(disp), (40, 40)).numpy()
        impl = field[pts[:, 0].astype(int), pts[:, 1].astype(int)]
        assert np.abs(impl - disp).max() <= 1e-8


class TestGradients:
    def test_displacement_gradient_matches_finite_differences(self, rng, image):
        pts = np.array([[10.0, 10.0], [30.0, 12.0], [20.0, 30.0], [8.0, 28.0]])
        disp = rng.uniform(-2, 2, size=(4, 2)) + 0.13  # keep sampling off-grid
        img_t = torch.from_numpy(image).permute(2, 0, 1)
        d_t = torch.tensor(disp, requires_grad=True)
        loss = (tps_warp_t(img_t, torch.tensor(pts), d_t) ** 2).sum()
        loss.backward()
        analytic = d_t.grad.numpy().reshape(-1)

        def scalar(flat):
            return float((tps_warp(image, pts, flat.reshape(4, 2)) ** 2).sum())

        fd = finite_difference_at(scalar, disp.reshape(-1), range(8), h=1e-5)
        for idx, fd_val in fd.items():
            assert abs(analytic[idx] - fd_val) / max(abs(fd_val), 1e-6) < 1e-3

    def test_image_gradient_flows(self, image):
        pts = np.array([[10.0, 10.0], [30.0, 12.0], [20.0, 30.0]])
        img_t = torch.from_numpy(image).permute(2, 0, 1).requires_grad_(True)
        out = tps_warp_t(img_t, torch.tensor(pts), torch.full((3, 2), 0.4, dtype=torch.float64))
        out.sum().backward()
        assert img_t.grad is not None and torch.isfinite(img_t.grad).all()


class TestDegenerateCases:
    def test_collinear_points_warn_and_stay_finite(self, image):
        pts = np.array([[10.0, 10.0], [20.0, 10.0], [30.0, 10.0]])
        disp = np.array([[1.0, 0.5], [0.5, 1.0], [1.0, 1.0]])
        with pytest.warns(UserWarning, match="degenerate"):
            out = tps_warp(image, pts, disp)
        assert np.isfinite(out).all()

    def test_duplicate_points_warn(self, image):
        pts = np.array([[10.0, 10.0], [10.0, 10.0], [30.0, 12.0], [20.0, 25.0]])
        disp = np.ones((4, 2))
        with pytest.warns(UserWarning, match="degenerate"):
            tps_warp(image, pts, disp)

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError):
            tps_fit(torch.zeros(2, 2), torch.zeros(2, 2))

    def test_misaligned_inputs_rejected(self):
        with pytest.raises(ValueError):
            tps_fit(torch.zeros(4, 2), torch.zeros(3, 2))


class TestBilinearSampler:
    def test_exact_at_integer_coords(self, rng):
        img = torch.from_numpy(rng.uniform(-1, 1, size=(1, 10, 10)))
        rr, cc = torch.meshgrid(torch.arange(10.0), torch.arange(10.0), indexing="ij")
        coords = torch.stack([rr, cc], dim=-1).double()
        out = bilinear_sample(img, coords)
        np.testing.assert_allclose(out.numpy(), img.numpy(), atol=1e-12)

    def test_border_clamped(self, rng):
        img = torch.from_numpy(rng.uniform(-1, 1, size=(1, 10, 10)))
        coords = torch.full((3, 3, 2), -5.0, dtype=torch.float64)
        out = bilinear_sample(img, coords)
        np.testing.assert_allclose(out.numpy(), np.full((1, 3, 3), img[0, 0, 0].item()), atol=1e-12)
