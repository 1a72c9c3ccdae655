import math

import numpy as np
import pytest

from aberkit import metrics, tensor as T
from aberkit.metrics import highband_energy, psnr, ssim
from aberkit.tensor import Tensor


class TestPsnr:
    def test_identity_is_inf(self):
        x = Tensor(np.random.default_rng(0).random((3, 8, 8)))
        assert psnr(x, x) == math.inf

    def test_uniform_error(self):
        a = Tensor(np.zeros((4, 4)))
        b = Tensor(np.full((4, 4), 0.1))
        assert abs(psnr(a, b) - 20.0) < 1e-12

    def test_against_direct_formula(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((3, 6, 6)), rng.random((3, 6, 6))
        want = 10 * math.log10(1.0 / np.mean((a - b) ** 2))
        got = psnr(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64))
        assert abs(got - want) < 1e-9

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a = Tensor(rng.random((8, 8)), dtype=np.float64)
        b = Tensor(rng.random((8, 8)), dtype=np.float64)
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(T.ShapeError):
            psnr(Tensor(np.zeros((4, 4))), Tensor(np.zeros((5, 5))))


class TestSsim:
    def test_identity_is_one(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.random((3, 16, 16)), dtype=np.float64)
        assert ssim(x, x) == 1.0

    def test_inverted_checker_negative(self):
        ii, jj = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
        checker = ((ii + jj) % 2).astype(np.float64)
        s = ssim(Tensor(checker), Tensor(1.0 - checker))
        assert s < 0.0

    def test_constant_offset_matches_luminance_term(self):
        x = np.full((16, 16), 0.25)
        y = x + 0.5
        mu_x, mu_y = 0.25, 0.75
        c1 = 0.01**2
        want = (2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
        got = ssim(Tensor(x, dtype=np.float64), Tensor(y, dtype=np.float64))
        assert abs(got - want) < 1e-6

    def test_bounded(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            a = Tensor(rng.random((12, 12)), dtype=np.float64)
            b = Tensor(rng.random((12, 12)), dtype=np.float64)
            s = ssim(a, b)
            assert -1.0 <= s <= 1.0
            assert s < 1.0 - 1e-9

    def test_small_image_rejected(self):
        with pytest.raises(T.ContractError):
            ssim(Tensor(np.zeros((8, 8))), Tensor(np.zeros((8, 8))))


class TestHighband:
    def test_constant_image_zero(self):
        x = Tensor(np.full((8, 8), 0.7))
        assert highband_energy(x, 0.5) == 0.0

    def test_nyquist_checker_all_high(self):
        ii, jj = np.meshgrid(np.arange(8), np.arange(8), indexing="ij")
        checker = (-1.0) ** (ii + jj)
        x = Tensor(checker)
        total = float((np.abs(np.fft.fft2(checker)) ** 2).sum())
        assert abs(highband_energy(x, 0.9) - total) < 1e-6 * total

    def test_translation_invariance(self):
        rng = np.random.default_rng(5)
        img = rng.random((3, 8, 8))
        a = highband_energy(Tensor(img), 0.5)
        b = highband_energy(Tensor(np.roll(img, (2, 3), axis=(1, 2))), 0.5)
        assert abs(a - b) < 1e-9 * max(a, 1.0)

    def test_cutoff_range_enforced(self):
        with pytest.raises(T.ContractError):
            highband_energy(Tensor(np.zeros((4, 4))), 1.5)


class TestReport:
    def test_aggregate_is_mean(self):
        r = metrics.RestorationReport()
        r.add("a", 30.0, 0.9)
        r.add("b", 40.0, 0.7)
        agg = r.aggregate
        assert agg["psnr_db"] == 35.0
        assert abs(agg["ssim"] - 0.8) < 1e-12

    def test_json_round_trip_with_inf(self):
        import json

        r = metrics.RestorationReport(provenance={"checkpoint": "x"})
        r.add("a", math.inf, 1.0)
        back = json.loads(r.to_json())
        assert back["aggregate"]["psnr_db"] == math.inf
        assert back["provenance"]["checkpoint"] == "x"
