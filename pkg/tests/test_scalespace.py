import math

import numpy as np
import pytest

from src.errors import BoundsError, ConfigError, SingularMatrixError, SizeError
from src.models.features import AffineParams
from src.models.image import GrayImage
from src.services.imagecore import anisotropic_gaussian_kernel, convolve_array, gaussian_derivative_kernel
from src.services.scalespace import (SCALES, build_pyramid, coefficients_at, compute_poly_param_matrix,
                                     critical_scales, default_channels, eval_poly_at, fit_poly,
                                     log_and_derivatives, max_octaves, parse_channels,
                                     solve_extremal_scales)
from src.services.synthetic import render_blobs

INTERIOR = (slice(16, -16), slice(16, -16))


class TestChannels:
    def test_default_set(self):
        channels = default_channels()
        assert len(channels) == 9
        assert channels[0].is_identity()
        assert any(c.same_transform(AffineParams.from_tilt(2.0, math.radians(90))) for c in channels)

    def test_parse_list(self):
        channels = parse_channels("1, 2@90")
        assert len(channels) == 2
        assert channels[0].is_identity()
        assert np.allclose(channels[1].A, [[0.0, -1.0], [2.0, 0.0]], atol=1e-12)

    def test_parse_keywords(self):
        assert len(parse_channels("identity")) == 1
        assert len(parse_channels("default")) == 9

    @pytest.mark.parametrize("text", ["two@45", "2@east", "0@0", " , "])
    def test_parse_errors(self, text):
        with pytest.raises(ConfigError):
            parse_channels(text)


class TestPyramid:
    def test_octave_limit(self):
        assert max_octaves((128, 128), AffineParams.identity()) == 4
        assert max_octaves((64, 64), AffineParams.identity()) == 3
        assert max_octaves((128, 128), AffineParams.from_tilt(2.0, 0.0)) == 3

    def test_too_many_octaves(self, blob_image):
        with pytest.raises(SizeError):
            build_pyramid(blob_image, AffineParams.identity(), 5)

    def test_octave_shapes(self, blob_image):
        pyr = build_pyramid(blob_image, AffineParams.identity(), 3)
        assert [o.shape for o in pyr.octaves] == [(96, 96), (48, 48), (24, 24)]
        assert all(len(o.gauss) == 4 for o in pyr.octaves)
        assert pyr.octaves[0].scales == SCALES

    def test_incremental_blur_equals_direct_blur(self, blob_image):
        pyr = build_pyramid(blob_image, AffineParams.identity(), 1)
        for s, raster in zip(SCALES, pyr.octaves[0].gauss):
            direct = convolve_array(blob_image.data,
                                    anisotropic_gaussian_kernel(AffineParams.identity(s), truncation=6.0))
            assert np.max(np.abs(raster - direct)[INTERIOR]) < 1e-4

    def test_stretched_blob_matches_round_blob(self):
        # J(x, y) = I(x / 2, y): under A = diag(2, 1) its stacks equal the identity stacks of I
        ys, xs = np.mgrid[0:48, 0:96].astype(np.float64)
        stretched = np.exp(-((xs / 2.0 - 20.0) ** 2 + (ys - 24.0) ** 2) / 18.0)
        round_blob = render_blobs((48, 48), [(20.0, 24.0, 3.0, 1.0)])
        a = AffineParams(np.diag([2.0, 1.0]))
        ident = AffineParams.identity()
        oct_j = log_and_derivatives(build_pyramid(GrayImage(stretched), a, 1).octaves[0], a)
        oct_i = log_and_derivatives(build_pyramid(round_blob, ident, 1).octaves[0], ident)
        for name in ('log', 'log_dxx'):
            for rj, ri in zip(getattr(oct_j, name), getattr(oct_i, name)):
                assert rj[24, 40] == pytest.approx(ri[24, 20], rel=2e-2)
        for rj in oct_j.log:
            assert np.unravel_index(np.argmax(np.abs(rj)), rj.shape) == (24, 40)

    def test_log_stack_equals_direct_log(self, blob_image):
        a = AffineParams.identity()
        octave = log_and_derivatives(build_pyramid(blob_image, a, 1).octaves[0], a)
        for s, raster in zip(SCALES, octave.log):
            direct = convolve_array(blob_image.data, gaussian_derivative_kernel(a.with_sigma(s), 'log')) * s * s
            assert np.max(np.abs(raster - direct)[INTERIOR]) < 1e-3


class TestCubicFit:
    def test_matrix_inverts_vandermonde(self):
        m = compute_poly_param_matrix(SCALES)
        assert np.allclose(m.M @ np.vander(SCALES, 4), np.eye(4), atol=1e-9)

    def test_duplicate_scales(self):
        with pytest.raises(SingularMatrixError):
            compute_poly_param_matrix([1.6, 1.6, 3.2, 4.0])

    def test_fit_reproduces_samples(self, blob_image):
        pyr = build_pyramid(blob_image, AffineParams.identity(), 2)
        for octave in pyr.octaves:
            pf = fit_poly(octave.gauss)
            ys, xs = np.mgrid[0:octave.shape[0], 0:octave.shape[1]].astype(np.float64)
            for s, raster in zip(SCALES, octave.gauss):
                fitted = eval_poly_at(pf, xs, ys, np.full(xs.shape, s))
                assert np.max(np.abs(fitted - raster)) <= 1e-6 * max(np.max(np.abs(raster)), 1e-12)

    def test_fit_needs_four_rasters(self):
        with pytest.raises(SizeError):
            fit_poly([np.zeros((4, 4))] * 3)

    def test_out_of_bounds_position(self, blob_image):
        pf = fit_poly(build_pyramid(blob_image, AffineParams.identity(), 1).octaves[0].gauss)
        with pytest.raises(BoundsError):
            coefficients_at(pf, np.array([95.5]), np.array([10.0]))


class TestCriticalScales:
    def test_maximum_and_minimum(self):
        # f'(s) = -(s - 2)(s - 3): minimum at 2, maximum at 3
        smax, smin = critical_scales(-1.0 / 3.0, 2.5, -6.0)
        assert float(smax) == pytest.approx(3.0)
        assert float(smin) == pytest.approx(2.0)

    def test_no_root_in_range(self):
        smax, smin = critical_scales(0.0, 0.0, 1.0)
        assert np.isnan(smax) and np.isnan(smin)

    def test_linear_derivative(self):
        smax, smin = critical_scales(0.0, -1.0, 6.0)
        assert float(smax) == pytest.approx(3.0)
        assert np.isnan(smin)

    def test_roots_outside_ladder_ignored(self):
        # roots at 1 and 10
        smax, smin = critical_scales(1.0 / 3.0, -5.5, 10.0)
        assert np.isnan(smax) and np.isnan(smin)

    def test_blob_scale(self):
        from src.services.synthetic import render_blobs
        img = render_blobs((64, 64), [(32.0, 32.0, 2.5, 1.0)])
        a = AffineParams.identity()
        octave = log_and_derivatives(build_pyramid(img, a, 1).octaves[0], a)
        scales = solve_extremal_scales(fit_poly(octave.log), 32.0, 32.0)
        assert scales['sigma_min'] == pytest.approx(2.5, rel=0.1)
