import numpy as np
import pytest
from scipy import ndimage

from src.config import DescriptorConfig, RunConfig
from src.errors import DescriptorRejected, PatchRejected, SizeError
from src.models.features import AffineParams, ExtremumKind, Feature, GradientPatch, rotation
from src.models.image import GrayImage
from src.models.scale_space import GradientField
from src.services.descriptor import (GradientCache, assign_orientations, build_descriptor,
                                     normalize_descriptor, orientation_histogram, peak_orientations,
                                     relocate_patch)
from src.services.pipeline import AffinaPipeline
from src.services.scalespace import build_pyramid
from src.services.synthetic import (affine_homography, random_blobs, render_blobs,
                                    rotation_homography, warp_image)


def _field(gx, gy, shape=(64, 64)):
    return GradientField.from_rasters(np.full(shape, gx), np.full(shape, gy))


def _feature(x=32.0, y=32.0, sigma=1.6, channel=None):
    return Feature(x, y, sigma, ExtremumKind.MAX, 0, 1.0, channel or AffineParams.identity())


class TestOrientation:
    def test_single_peak(self):
        hist = np.zeros(36)
        hist[8:11] = [0.5, 1.0, 0.5]
        (theta,) = peak_orientations(hist)
        assert theta == pytest.approx(np.pi / 2)

    def test_secondary_peak_above_ratio(self):
        hist = np.zeros(36)
        hist[3], hist[20] = 1.0, 0.85
        assert len(peak_orientations(hist, 0.8)) == 2
        hist[20] = 0.7
        assert len(peak_orientations(hist, 0.8)) == 1

    def test_parabolic_offset(self):
        hist = np.zeros(36)
        hist[4:7] = [0.5, 1.0, 0.75]
        (theta,) = peak_orientations(hist)
        assert 5 * np.pi / 18 < theta < 5.5 * np.pi / 18

    def test_flat_histogram(self):
        assert peak_orientations(np.zeros(36)) == []

    def test_constant_field(self):
        assert assign_orientations(_field(0.0, 1.0), _feature()) == pytest.approx([np.pi / 2])

    def test_steered_frame(self):
        # normalised-frame gradients are binned as they are, whatever the channel
        f = _feature(channel=AffineParams(np.diag([2.0, 1.0])))
        (theta,) = assign_orientations(_field(1.0, 0.0), f)
        assert min(theta, 2 * np.pi - theta) == pytest.approx(0.0, abs=1e-9)


    def test_region_side_is_three_sigma(self):
        # half-side 1.5 sigma = 2.4 px: a column 2.5 sigma away is outside the region
        f = _feature(sigma=1.6)
        gy = np.zeros((64, 64))
        gy[:, 36] = 1.0
        far = GradientField.from_rasters(np.zeros((64, 64)), gy)
        assert orientation_histogram(far, f, DescriptorConfig()).sum() == 0.0
        assert assign_orientations(far, f) == []
        gy = np.zeros((64, 64))
        gy[:, 34] = 1.0
        near = GradientField.from_rasters(np.zeros((64, 64)), gy)
        assert orientation_histogram(near, f, DescriptorConfig()).sum() > 0.0

    def test_orientation_follows_rotation(self, rng):
        shape = (128, 128)
        texture = GrayImage(ndimage.gaussian_filter(rng.normal(size=shape), 4.0))
        theta = np.pi / 6
        H = rotation_homography(theta, shape)
        rotated = warp_image(texture, H, fill=float(texture.data.mean()))
        ident = AffineParams.identity()
        field_i = GradientCache(build_pyramid(texture, ident, 1)).field(0, 3.2)
        field_j = GradientCache(build_pyramid(rotated, ident, 1)).field(0, 3.2)
        cfg = DescriptorConfig()
        hits = total = 0
        for y in range(40, 89, 8):
            for x in range(40, 89, 8):
                dominant = peak_orientations(orientation_histogram(field_i, _feature(x, y, 3.2), cfg), 1.0)
                if not dominant:
                    continue
                px, py, _ = H @ np.array([x, y, 1.0])
                peaks = assign_orientations(field_j, _feature(px, py, 3.2), cfg)
                total += 1
                if peaks:
                    shift = np.angle(np.exp(1j * (np.array(peaks) - dominant[0] - theta)))
                    hits += np.min(np.abs(shift)) <= np.radians(10.0)
        assert total >= 30
        assert hits >= 0.8 * total


class TestRelocation:
    def test_image_frame_field_steered_by_a_prime(self):
        patch = relocate_patch(_field(1.0, 0.0), _feature(), np.diag([2.0, 1.0]))
        assert patch.gx.shape == (16, 16)
        assert np.allclose(patch.gx, 2.0)
        assert np.allclose(patch.gy, 0.0)

    def test_stretched_field_matches_identity_field(self):
        # J(x, y) = I(x / 2, y) described under A = diag(2, 1) gives the identity patch of I
        shape = (96, 96)
        img = render_blobs(shape, random_blobs(shape, 14, seed=5, std_range=(2.5, 4.0), margin=16.0))
        W = np.diag([2.0, 1.0])
        stretched = warp_image(img, affine_homography(W, (0.0, 0.0), (0.0, 0.0)), (96, 192))
        a = AffineParams(W)
        field_i = GradientCache(build_pyramid(img, AffineParams.identity(), 1)).field(0, 2.0)
        field_j = GradientCache(build_pyramid(stretched, a, 1)).field(0, 2.0)
        assert field_j.channel is a

        R = rotation(0.4)
        p_i = relocate_patch(field_i, _feature(48.0, 48.0, 2.0), R)
        p_j = relocate_patch(field_j, _feature(96.0, 48.0, 2.0, a), W @ R)
        ref = np.concatenate([p_i.gx.ravel(), p_i.gy.ravel()])
        got = np.concatenate([p_j.gx.ravel(), p_j.gy.ravel()])
        assert np.sqrt(np.mean((got - ref) ** 2)) <= 0.05 * np.sqrt(np.mean(ref ** 2))

    def test_patch_leaving_image(self):
        with pytest.raises(PatchRejected):
            relocate_patch(_field(1.0, 0.0), _feature(3.0, 3.0), np.eye(2))


class TestDescriptorVector:
    def test_zero_norm_rejected(self):
        with pytest.raises(DescriptorRejected):
            normalize_descriptor(np.zeros(128))

    def test_one_hot(self):
        vec = np.zeros(128)
        vec[5] = 3.0
        unit, values = normalize_descriptor(vec)
        assert np.linalg.norm(unit) == pytest.approx(1.0)
        assert values[5] == 255
        assert values.sum() == 255

    def test_clamped_entries(self, rng):
        unit, values = normalize_descriptor(rng.exponential(1.0, 128))
        assert np.linalg.norm(unit) == pytest.approx(1.0)
        assert values.dtype == np.uint8

    @pytest.mark.parametrize("gx,gy,bin_", [(1.0, 0.0, 0), (0.0, 1.0, 2)])
    def test_uniform_gradient_fills_one_orientation(self, gx, gy, bin_):
        patch = GradientPatch(16, np.full((16, 16), gx), np.full((16, 16), gy))
        values = build_descriptor(patch).values.reshape(16, 8)
        assert np.all(values[:, bin_] > 0)
        assert np.all(np.delete(values, bin_, axis=1) == 0)

    def test_contrast_invariance(self, rng):
        gx, gy = rng.normal(size=(16, 16)), rng.normal(size=(16, 16))
        a = build_descriptor(GradientPatch(16, gx, gy)).values.astype(int)
        b = build_descriptor(GradientPatch(16, 0.5 * gx, 0.5 * gy)).values.astype(int)
        assert np.max(np.abs(a - b)) <= 1


class TestDescribe:
    def test_blob_image(self, blob_image, identity_config):
        result = AffinaPipeline(identity_config).extract(blob_image)
        assert result.descriptors
        for d in result.descriptors:
            assert d.values.shape == (128,)
            assert d.feature in result.features
            assert d.orientation in d.feature.orientations

    def test_thread_count_does_not_change_output(self, blob_image, identity_config):
        identity_config.threads = 1
        one = AffinaPipeline(identity_config).extract(blob_image)
        identity_config.threads = 4
        many = AffinaPipeline(identity_config).extract(blob_image)
        assert [d.values.tolist() for d in one.descriptors] == [d.values.tolist() for d in many.descriptors]

    def test_quarter_turn(self, blob_image, identity_config):
        pipeline = AffinaPipeline(identity_config)
        a = pipeline.extract(blob_image)
        b = pipeline.extract(GrayImage(np.rot90(blob_image.data)))
        w = blob_image.width
        found = 0
        for d in a.descriptors:
            x, y = d.feature.y, w - 1 - d.feature.x
            found += any(
                abs(e.feature.x - x) < 0.01 and abs(e.feature.y - y) < 0.01
                and np.max(np.abs(e.values.astype(int) - d.values.astype(int))) <= 3
                for e in b.descriptors
            )
        assert found >= 0.8 * len(a.descriptors)

    def test_affine_illumination_change(self, blob_image, identity_config):
        pipeline = AffinaPipeline(identity_config)
        a = pipeline.extract(blob_image)
        b = pipeline.extract(GrayImage(0.5 * blob_image.data + 0.2))
        strong = [d for d in a.descriptors if abs(d.feature.response) > 0.05]
        assert strong
        for d in strong:
            twins = [
                e for e in b.descriptors
                if abs(e.feature.x - d.feature.x) < 1e-3 and abs(e.feature.y - d.feature.y) < 1e-3
                and abs(np.angle(np.exp(1j * (e.orientation - d.orientation)))) < 1e-3
            ]
            assert twins
            assert np.max(np.abs(twins[0].values.astype(int) - d.values.astype(int))) <= 2

    def test_channels_too_large_are_skipped(self):
        pipeline = AffinaPipeline(RunConfig(threads=1))
        img = GrayImage(np.full((24, 24), 0.5))
        # identity and the four sqrt2 tilts fit, the tilt-2 channels do not
        assert len(pipeline.build_pyramids(img)) == 5
        f = _feature(12.0, 12.0, 1.6, AffineParams.from_tilt(2.0, 0.0))
        descriptors, dropped = pipeline.describe(img, [f])
        assert descriptors == []
        assert [d.reason for d in dropped] == ["size"]
        with pytest.raises(SizeError):
            pipeline.build_pyramids(GrayImage(np.full((12, 12), 0.5)))

    def test_config_geometry(self):
        cfg = DescriptorConfig()
        assert (cfg.side, cfg.half_extent, cfg.orientation_bins) == (16, 6.0, 36)
        assert (cfg.orientation_region, cfg.orientation_window) == (3.0, 1.5)
