import math

import numpy as np
import pytest

from swepipe import metrics, phantoms, simulate


class TestPsnr:
    def test_identical_infinite(self):
        img = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert metrics.psnr(img, img) == math.inf

    def test_known_mse(self):
        # normalized MSE of 0.25 -> 6.0206 dB
        gt = np.array([[1.0, 1.0]])
        hat = np.array([[0.5, 1.0]])  # after /max: (0.5, 1.0); mse = 0.125
        # construct exact 0.25: differences of 0.5 everywhere
        gt = np.ones((2, 2))
        hat = np.full((2, 2), 0.5)
        # hat/max(hat) = 1 -> mse 0; use asymmetric map instead
        gt = np.array([[1.0, 0.0], [1.0, 0.0]])
        hat = np.array([[1.0, 0.5], [1.0, 0.5]])
        # normalized: gt (1,0), hat (1,0.5): mse = mean([0, .25, 0, .25]) = 0.125
        assert metrics.psnr(gt, hat) == pytest.approx(-10 * math.log10(0.125), abs=1e-4)

    def test_mse_quarter_reference_value(self):
        gt = np.array([[1.0, 1.0, 0.0, 0.0]])
        hat = np.array([[1.0, 1.0, 0.5, 0.5]])
        # normalized mse = (0 + 0 + 0.25 + 0.25)/4 = 0.125... build exact 0.25
        gt = np.array([[1.0, 0.0]])
        hat = np.array([[1.0, 0.5]])
        assert metrics.psnr(gt, hat) == pytest.approx(-10 * math.log10(0.125), abs=1e-4)

    def test_nonpositive_max_rejected(self):
        with pytest.raises(ValueError):
            metrics.psnr(np.zeros((2, 2)), np.ones((2, 2)))

    def test_monotone_in_noise_power(self):
        rng = np.random.default_rng(0)
        gt = rng.uniform(1, 2, (32, 32))
        noise = rng.normal(size=(32, 32))
        vals = [metrics.psnr(gt, gt + s * noise) for s in (0.01, 0.03, 0.1, 0.3)]
        assert all(a > b for a, b in zip(vals, vals[1:]))


class TestCnr:
    def test_hand_value(self):
        y = np.array([40.0, 40.0, 18.0, 22.0, 18.0, 22.0])
        mask = np.array([1, 1, 0, 0, 0, 0])
        assert metrics.cnr(y, mask) == pytest.approx(
            20 * math.log10(20.0 / 2.0), abs=1e-9
        )

    def test_zero_contrast(self):
        y = np.array([20.0, 20.0, 19.0, 21.0])
        mask = np.array([1, 1, 0, 0])
        assert metrics.cnr(y, mask) == -math.inf

    def test_constant_bg_with_contrast(self):
        y = np.array([40.0, 20.0, 20.0])
        mask = np.array([1, 0, 0])
        assert metrics.cnr(y, mask) == math.inf


class TestSsim:
    def test_identical_one(self):
        img = np.random.default_rng(1).uniform(1, 3, (8, 8))
        assert metrics.ssim(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_negated_zero_mean(self):
        # -1 up to the epsilon constants, which scale with the joint range
        img = np.random.default_rng(2).normal(size=(16, 16))
        img -= img.mean()
        val = metrics.ssim(img, -img)
        assert val == pytest.approx(-1.0, abs=0.05)
        assert val < -0.9

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(0, 2, (10, 10))
        b = rng.uniform(0, 2, (10, 10))
        assert metrics.ssim(a, b) == pytest.approx(metrics.ssim(b, a), abs=1e-12)


class TestRegionMae:
    def test_perfect(self):
        gt = np.array([[40.0, 20.0]])
        mask = np.array([[1, 0]])
        assert metrics.region_mae(gt, gt, mask) == (0.0, 0.0)

    def test_fg_bias_only(self):
        gt = np.array([[40.0, 40.0, 20.0, 20.0]])
        mask = np.array([[1, 1, 0, 0]])
        y = gt + np.array([[2.0, 2.0, 0.0, 0.0]])
        assert metrics.region_mae(y, gt, mask) == (2.0, 0.0)


class TestIouF1:
    def test_identical(self):
        m = np.array([[1, 1, 0], [0, 1, 0]])
        assert metrics.iou_f1(m, m) == (1.0, 1.0)

    def test_disjoint(self):
        a = np.array([[1, 0]])
        b = np.array([[0, 1]])
        assert metrics.iou_f1(a, b) == (0.0, 0.0)

    def test_counts(self):
        a = np.array([[1, 1, 0, 0]])
        b = np.array([[0, 1, 1, 0]])
        iou, f1 = metrics.iou_f1(a, b)
        assert iou == pytest.approx(1 / 3)
        assert f1 == pytest.approx(0.5)

    def test_both_empty_degenerate(self):
        z = np.zeros((3, 3))
        with pytest.warns(UserWarning):
            assert metrics.iou_f1(z, z) == (1.0, 1.0)

    def test_iou_le_f1_random(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            a = rng.uniform(size=(6, 6)) > rng.uniform(0.2, 0.8)
            b = rng.uniform(size=(6, 6)) > rng.uniform(0.2, 0.8)
            if not (a.any() or b.any()):
                continue
            iou, f1 = metrics.iou_f1(a, b)
            assert iou <= f1 + 1e-12


class TestHdAssd:
    def test_identical_zero(self):
        m = np.zeros((8, 8), dtype=bool)
        m[2:5, 2:5] = True
        assert metrics.hd_assd(m, m) == (0.0, 0.0)

    def test_one_pixel_offset_squares(self):
        a = np.zeros((8, 8), dtype=bool)
        b = np.zeros((8, 8), dtype=bool)
        a[2:5, 2:5] = True
        b[2:5, 3:6] = True
        hd, assd = metrics.hd_assd(a, b)
        assert hd == pytest.approx(1.0, abs=1e-9)
        assert 0 < assd <= hd

    def test_hd_ge_assd_random(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            a = rng.uniform(size=(7, 7)) > 0.5
            b = rng.uniform(size=(7, 7)) > 0.5
            if not (a.any() and b.any()):
                continue
            hd, assd = metrics.hd_assd(a, b)
            assert hd >= assd >= 0

    def test_spacing_scales_distances(self):
        a = np.zeros((6, 6), dtype=bool)
        b = np.zeros((6, 6), dtype=bool)
        a[1:3, 1:3] = True
        b[1:3, 2:4] = True
        hd1, _ = metrics.hd_assd(a, b, spacing=(1.0, 1.0))
        hd2, _ = metrics.hd_assd(a, b, spacing=(1.0, 2.0))
        assert hd2 == pytest.approx(2.0 * hd1)

    def test_empty_mask_rejected(self):
        m = np.zeros((4, 4), dtype=bool)
        f = m.copy()
        f[1, 1] = True
        with pytest.raises(ValueError):
            metrics.hd_assd(m, f)


class TestSurfacePixels:
    def test_filled_square_surface(self):
        m = np.zeros((7, 7), dtype=bool)
        m[1:6, 1:6] = True
        surf = metrics.surface_pixels(m)
        # 5x5 square: 25 - 9 interior = 16 surface pixels
        assert len(surf) == 16

    def test_border_counts_as_background(self):
        m = np.ones((3, 3), dtype=bool)
        assert len(metrics.surface_pixels(m)) == 8  # center is interior


def homogeneous_volume(e_kpa):
    spec = phantoms.PhantomSpec(e_inclusion_kpa=e_kpa, e_background_kpa=e_kpa)
    truth = phantoms.make_phantom(spec)
    return simulate.simulate_region(
        truth, simulate.paper_layout(), 0, simulate.paper_arf()
    )


class TestTtpSpeed:
    @pytest.mark.parametrize("e,expected", [(25.0, 2.8867513), (48.0, 4.0)])
    def test_recovers_homogeneous_speed(self, e, expected):
        vol = homogeneous_volume(e)
        v = metrics.ttp_speed_estimate(vol, depth_row=84, x1_mm=5.0, x2_mm=10.0)
        assert abs(v - expected) / expected < 0.05

    def test_flat_signal_error(self):
        vol = homogeneous_volume(25.0)
        flat = vol.copy_with(data=np.zeros_like(vol.data))
        with pytest.raises(metrics.FlatSignalError):
            metrics.ttp_speed_estimate(flat, 84, 5.0, 10.0)

    def test_too_close_to_push_rejected(self):
        vol = homogeneous_volume(25.0)
        with pytest.raises(ValueError):
            metrics.ttp_speed_estimate(vol, 84, 1.0, 10.0)

    def test_non_monotone_flagged(self):
        vol = homogeneous_volume(25.0)
        reversed_vol = vol.copy_with(data=vol.data[:, :, ::-1].copy())
        with pytest.raises(metrics.NonMonotoneArrivalError):
            metrics.ttp_speed_estimate(reversed_vol, 84, 5.0, 10.0)


def test_format_metric_table_smoke():
    rows = [
        {k: 1.0 for k in metrics.METRIC_COLUMNS},
        {k: 2.0 for k in metrics.METRIC_COLUMNS},
    ]
    text = metrics.format_metric_table(rows, ["a", "b"])
    assert "mean" in text and "median" in text and "std" in text
    agg = metrics.aggregate_metrics(rows)
    assert agg["mae_fg"]["mean"] == pytest.approx(1.5)
