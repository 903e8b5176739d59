import math

import numpy as np
import pytest
from PIL import Image

from src.errors import ImageFormatError, ImageIOError, SizeError
from src.models.features import AffineParams
from src.models.image import GrayImage
from src.services.accel import convolve_direct
from src.services.imagecore import (DERIVATIVE_ORDERS, anisotropic_gaussian_kernel, convolve_array,
                                    downsample2, finite_difference_gradient,
                                    gaussian_derivative_kernel, load_image, sample_bilinear,
                                    save_pgm)


class TestLoading:
    def test_pgm_scaled_to_unit_range(self, tmp_path):
        raw = np.array([[0, 51, 255], [255, 102, 0]], dtype=np.uint8)
        path = tmp_path / "img1.pgm"
        Image.fromarray(raw).save(path, format="PPM")
        img = load_image(path)
        assert img.shape == (2, 3)
        assert np.allclose(img.data, raw / 255.0)

    def test_color_png_uses_luma(self, tmp_path):
        raw = np.zeros((4, 5, 3), dtype=np.uint8)
        raw[..., 0] = 255
        path = tmp_path / "red.png"
        Image.fromarray(raw).save(path)
        assert np.allclose(load_image(path).data, 0.299)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ImageIOError):
            load_image(tmp_path / "nope.ppm")

    def test_not_an_image(self, tmp_path):
        path = tmp_path / "junk.ppm"
        path.write_bytes(b"this is not an image")
        with pytest.raises(ImageFormatError):
            load_image(path)

    def test_unsupported_container(self, tmp_path):
        path = tmp_path / "img.bmp"
        Image.fromarray(np.zeros((4, 4), dtype=np.uint8)).save(path, format="BMP")
        with pytest.raises(ImageFormatError):
            load_image(path)

    def test_sixteen_bit_rejected(self, tmp_path):
        path = tmp_path / "deep.png"
        Image.fromarray(np.full((4, 4), 1000, dtype=np.uint16)).save(path)
        with pytest.raises(ImageFormatError):
            load_image(path)

    def test_save_pgm_maps_to_bytes(self, tmp_path):
        data = np.linspace(-1.0, 3.0, 60).reshape(6, 10)
        path = save_pgm(GrayImage(data), tmp_path / "out" / "dump.pgm")
        back = load_image(path)
        assert np.allclose(back.data, (data + 1.0) / 4.0, atol=1.0 / 255.0)


class TestGrayImage:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            GrayImage(np.array([[0.0, np.nan]]))

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            GrayImage(np.zeros((2, 2, 2)))

    def test_data_is_read_only(self):
        img = GrayImage(np.zeros((3, 3)))
        with pytest.raises(ValueError):
            img.data[0, 0] = 1.0


class TestKernels:
    @pytest.mark.parametrize("tilt,phi,sigma", [(1.0, 0.0, 1.6), (math.sqrt(2), 45.0, 1.2), (2.0, 30.0, 2.0)])
    def test_gaussian_sums_to_one(self, tilt, phi, sigma):
        k = anisotropic_gaussian_kernel(AffineParams.from_tilt(tilt, math.radians(phi), sigma))
        assert abs(k.total() - 1.0) < 1e-12

    def test_second_moment_matches_covariance(self):
        a = AffineParams.from_tilt(2.0, math.radians(30.0), 2.0)
        k = anisotropic_gaussian_kernel(a)
        r = k.radius
        ax = np.arange(-r, r + 1)
        dy, dx = np.meshgrid(ax, ax, indexing='ij')
        w = k.weights
        moment = np.array([
            [np.sum(w * dx * dx), np.sum(w * dx * dy)],
            [np.sum(w * dx * dy), np.sum(w * dy * dy)],
        ])
        cov = a.covariance
        assert np.allclose(moment, cov, rtol=0, atol=0.05 * np.abs(cov).max())

    def test_radius_follows_widest_axis(self):
        k = anisotropic_gaussian_kernel(AffineParams.from_tilt(2.0, 0.0, 1.6))
        assert k.radius == math.ceil(3.0 * 1.6 * 2.0)

    def test_axis_aligned_kernel_is_separable(self):
        assert anisotropic_gaussian_kernel(AffineParams.from_tilt(2.0, 0.0, 1.0)).separable
        assert not anisotropic_gaussian_kernel(AffineParams.from_tilt(2.0, math.radians(45), 1.0)).separable

    @pytest.mark.parametrize("order", DERIVATIVE_ORDERS)
    def test_derivatives_annihilate_constants(self, order):
        k = gaussian_derivative_kernel(AffineParams.from_tilt(math.sqrt(2), math.radians(45), 1.6), order)
        assert abs(k.total()) < 1e-12

    def test_laplacian_is_trace_of_hessian(self):
        a = AffineParams.from_tilt(2.0, math.radians(135), 1.3)
        dxx = gaussian_derivative_kernel(a, 'dxx').weights
        dyy = gaussian_derivative_kernel(a, 'dyy').weights
        log = gaussian_derivative_kernel(a, 'log').weights
        assert np.allclose(dxx + dyy, log, rtol=0, atol=1e-12 * np.abs(log).max())

    def test_unknown_order(self):
        with pytest.raises(ValueError):
            gaussian_derivative_kernel(AffineParams.identity(), 'dxxx')


class TestConvolution:
    @pytest.mark.parametrize("a", [
        AffineParams.identity(1.5),                              # separable path
        AffineParams.from_tilt(math.sqrt(2), math.radians(45)),  # dense path
        AffineParams.from_tilt(2.0, math.radians(30), 2.0),      # FFT path
    ])
    def test_fast_paths_match_direct_sum(self, a, rng):
        data = rng.uniform(0.0, 1.0, (30, 30))
        k = anisotropic_gaussian_kernel(a)
        assert np.allclose(convolve_array(data, k), convolve_direct(data, k.weights), rtol=0, atol=1e-10)

    def test_dx_of_ramp_is_one(self):
        ramp = np.tile(np.arange(40, dtype=np.float64), (40, 1))
        out = convolve_array(ramp, gaussian_derivative_kernel(AffineParams.identity(1.5), 'dx'))
        assert np.allclose(out[10:-10, 10:-10], 1.0, atol=1e-2)

    def test_log_of_paraboloid(self):
        ys, xs = np.mgrid[0:40, 0:40].astype(np.float64)
        bowl = (xs - 20.0) ** 2 + (ys - 20.0) ** 2
        out = convolve_array(bowl, gaussian_derivative_kernel(AffineParams.identity(1.5), 'log'))
        assert np.allclose(out[10:-10, 10:-10], 4.0, rtol=2e-2)

    def test_dx_of_ramp_under_stretched_channel(self):
        # normalised-frame derivative: d/dxi of x(A xi) with A = diag(2, 1)
        ramp = np.tile(np.arange(60, dtype=np.float64), (60, 1))
        a = AffineParams(np.diag([2.0, 1.0]), 1.5)
        out = convolve_array(ramp, gaussian_derivative_kernel(a, 'dx'))
        assert np.allclose(out[15:-15, 15:-15], 2.0, atol=1e-2)
        out = convolve_array(ramp, gaussian_derivative_kernel(a, 'dy'))
        assert np.allclose(out[15:-15, 15:-15], 0.0, atol=1e-2)

    def test_log_of_paraboloid_under_stretched_channel(self):
        ys, xs = np.mgrid[0:60, 0:60].astype(np.float64)
        bowl = (xs - 30.0) ** 2 + (ys - 30.0) ** 2
        a = AffineParams(np.diag([2.0, 1.0]), 1.5)
        out = convolve_array(bowl, gaussian_derivative_kernel(a, 'log'))
        assert np.allclose(out[18:-18, 18:-18], 10.0, rtol=2e-2)

    def test_kernel_larger_than_raster(self):
        with pytest.raises(SizeError):
            convolve_array(np.zeros((10, 10)), anisotropic_gaussian_kernel(AffineParams.identity(4.0)))


class TestResampling:
    def test_downsample_averages_blocks(self):
        img = GrayImage(np.arange(20, dtype=np.float64).reshape(4, 5))
        half = downsample2(img)
        assert half.shape == (2, 2)
        assert half.data[0, 0] == pytest.approx((0 + 1 + 5 + 6) / 4.0)

    def test_bilinear_midpoint(self):
        data = np.arange(12, dtype=np.float64).reshape(3, 4)
        assert sample_bilinear(data, np.array([1.5]), np.array([1.0]))[0] == pytest.approx(5.5)
        assert sample_bilinear(data, np.array([2.0]), np.array([2.0]))[0] == pytest.approx(10.0)

    def test_gradient_of_ramp(self):
        ramp = GrayImage(np.tile(np.arange(8, dtype=np.float64) * 0.5, (6, 1)))
        gx, gy = finite_difference_gradient(ramp)
        assert np.allclose(gx, 0.5)
        assert np.allclose(gy, 0.0)
