import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from octens import imagepipe as ip
from oracles import flood_fill_background

images = arrays(
    np.uint8,
    st.tuples(st.integers(1, 12), st.integers(1, 12)),
    elements=st.integers(0, 255),
)


def pixel(value):
    return np.array([[value]], dtype=np.uint8)


class TestLinearTransform:
    @pytest.mark.parametrize(
        "value, alpha, beta, expected",
        [(100, 1.0, 0.0, 100), (100, 1.2, -10.0, 110), (250, 1.5, -20.0, 255), (10, 1.0, -50.0, 0)],
    )
    def test_examples(self, value, alpha, beta, expected):
        out = ip.linear_transform(pixel(value), ip.LinearTransformParams(alpha, beta))
        assert out[0, 0] == expected

    def test_identity_is_bit_exact(self):
        img = np.arange(256, dtype=np.uint8).reshape(16, 16)
        out = ip.linear_transform(img, ip.LinearTransformParams(1.0, 0.0))
        assert out.dtype == np.uint8
        np.testing.assert_array_equal(out, img)

    def test_rounds_half_away_from_zero(self):
        img = np.array([[1, 3, 5]], dtype=np.uint8)
        out = ip.linear_transform(img, ip.LinearTransformParams(0.5, 0.0))
        np.testing.assert_array_equal(out, [[1, 2, 3]])

    @pytest.mark.parametrize("alpha", [0.0, -1.0, float("nan")])
    def test_rejects_non_positive_alpha(self, alpha):
        with pytest.raises(ip.ParameterError):
            ip.LinearTransformParams(alpha, 0.0)

    @given(images, st.floats(0.01, 4.0), st.floats(-300, 300))
    def test_monotone_and_in_range(self, img, alpha, beta):
        out = ip.linear_transform(img, ip.LinearTransformParams(alpha, beta))
        assert out.shape == img.shape
        order = np.argsort(img, axis=None, kind="stable")
        assert np.all(np.diff(out.ravel()[order].astype(int)) >= 0)

    def test_default_parameters_darken_and_stretch(self):
        p = ip.LinearTransformParams()
        assert p.alpha > 1 and p.beta < 0


class TestBlackenBackground:
    def test_all_black_unchanged(self):
        img = np.zeros((6, 7), dtype=np.uint8)
        np.testing.assert_array_equal(ip.blacken_background(img, 240), img)

    def test_all_white_becomes_black(self):
        img = np.full((6, 7), 255, dtype=np.uint8)
        np.testing.assert_array_equal(ip.blacken_background(img, 240), np.zeros_like(img))

    def test_ring_with_isolated_center(self):
        img = np.array(
            [
                [255, 255, 255, 255, 255],
                [255, 200, 10, 200, 255],
                [255, 10, 255, 10, 255],
                [255, 200, 10, 200, 255],
                [255, 255, 255, 255, 255],
            ],
            dtype=np.uint8,
        )
        expected = flood_fill_background(img, 240)
        # oracle sanity: ring cleared, interior including the bright center kept
        assert expected[2, 2] == 255 and expected[0].sum() == 0 and expected[1, 1] == 200
        np.testing.assert_array_equal(ip.blacken_background(img, 240), expected)

    def test_diagonal_contact_does_not_connect(self):
        img = np.zeros((3, 3), dtype=np.uint8)
        img[0, 0] = img[1, 1] = 250
        out = ip.blacken_background(img, 240)
        assert out[0, 0] == 0 and out[1, 1] == 250

    @settings(max_examples=200)
    @given(images, st.integers(0, 255))
    def test_matches_bfs_oracle(self, img, threshold):
        np.testing.assert_array_equal(
            ip.blacken_background(img, threshold), flood_fill_background(img, threshold)
        )

    @given(images, st.integers(0, 255))
    def test_idempotent_and_never_brightens(self, img, threshold):
        once = ip.blacken_background(img, threshold)
        np.testing.assert_array_equal(ip.blacken_background(once, threshold), once)
        assert np.all(once <= img)

    def test_rejects_bad_threshold(self):
        with pytest.raises(ip.ParameterError):
            ip.blacken_background(np.zeros((2, 2), np.uint8), 256)


class TestGaussianBlur:
    def test_zero_sigma_is_identity(self):
        img = np.random.default_rng(0).integers(0, 256, (9, 11), dtype=np.uint8)
        np.testing.assert_array_equal(ip.gaussian_blur(img, 0), img)

    @pytest.mark.parametrize("sigma", [0.5, 1.0, 2.5, 7.0])
    def test_constant_image_preserved(self, sigma):
        img = np.full((10, 13), 137, dtype=np.uint8)
        np.testing.assert_array_equal(ip.gaussian_blur(img, sigma), img)

    def test_impulse_response(self):
        img = np.zeros((15, 15), dtype=np.uint8)
        img[7, 7] = 255
        taps = [math.exp(-(i * i) / 2.0) for i in range(-3, 4)]
        total = sum(taps)
        taps = [t / total for t in taps]
        expected = np.zeros((15, 15))
        for dy in range(-3, 4):
            for dx in range(-3, 4):
                expected[7 + dy, 7 + dx] = 255 * taps[dy + 3] * taps[dx + 3]
        out = ip.gaussian_blur(img, 1.0).astype(float)
        assert np.max(np.abs(out - expected)) <= 1.0
        assert out[7, 7] == 41  # 255 * 0.39905^2 = 40.61

    def test_kernel_radius(self):
        assert ip.gaussian_kernel(1.0).size == 7
        assert ip.gaussian_kernel(0.4).size == 5  # ceil(1.2) = 2
        assert math.isclose(ip.gaussian_kernel(2.3).sum(), 1.0)

    def test_border_mirrors_edge_pixels(self):
        # a left-right step: mirroring keeps the edge columns close to their own value
        img = np.zeros((5, 8), dtype=np.uint8)
        img[:, 4:] = 200
        out = ip.gaussian_blur(img, 1.0)
        assert out[0, 0] == 0 and out[0, 7] == 200
        np.testing.assert_array_equal(out[0], out[4])

    def test_interior_mean_of_constant_image(self):
        img = np.full((20, 20), 90, dtype=np.uint8)
        out = ip.gaussian_blur(img, 1.5)
        assert out[5:15, 5:15].mean() == 90

    def test_negative_sigma(self):
        with pytest.raises(ip.ParameterError):
            ip.gaussian_blur(np.zeros((3, 3), np.uint8), -0.1)


class TestGeometry:
    def test_flip_example(self):
        np.testing.assert_array_equal(
            ip.horizontal_flip(np.array([[10, 20]], np.uint8)), [[20, 10]]
        )

    def test_flip_symmetric_image(self):
        img = np.array([[1, 2, 1], [5, 9, 5]], np.uint8)
        np.testing.assert_array_equal(ip.horizontal_flip(img), img)

    @given(images)
    def test_flip_involution(self, img):
        np.testing.assert_array_equal(ip.horizontal_flip(ip.horizontal_flip(img)), img)

    def test_crop_full_size_is_identity(self):
        img = np.random.default_rng(1).integers(0, 256, (7, 9), dtype=np.uint8)
        for seed in range(5):
            out = ip.random_crop(img, 1.0, np.random.default_rng(seed))
            np.testing.assert_array_equal(out, img)

    def test_crop_matches_source_window(self):
        img = np.arange(100, dtype=np.uint8).reshape(10, 10)
        out = ip.random_crop(img, 0.5, np.random.default_rng(3))
        assert out.shape == (5, 5)
        top, left = divmod(int(out[0, 0]), 10)
        np.testing.assert_array_equal(out, img[top:top + 5, left:left + 5])
        rng = np.random.default_rng(3)
        assert (left, top) == (rng.integers(0, 6), rng.integers(0, 6))

    def test_crop_deterministic_and_covers_all_offsets(self):
        img = np.arange(100, dtype=np.uint8).reshape(10, 10)
        a = ip.random_crop(img, 0.5, np.random.default_rng(11))
        b = ip.random_crop(img, 0.5, np.random.default_rng(11))
        np.testing.assert_array_equal(a, b)
        rng = np.random.default_rng(0)
        corners = {int(ip.random_crop(img, 0.5, rng)[0, 0]) for _ in range(1500)}
        assert len(corners) == 36

    def test_crop_never_empty(self):
        out = ip.random_crop(np.zeros((3, 3), np.uint8), 0.1, np.random.default_rng(0))
        assert out.shape == (1, 1)

    def test_rotation_by_90_degrees(self):
        img = np.array([[1, 2, 3], [4, 5, 6], [7, 8, 9]], np.uint8)
        # out(x, y) = img(x' = y, y' = 2 - x) from inverting dst = R(src - c) + c
        expected = np.array([[7, 4, 1], [8, 5, 2], [9, 6, 3]], np.uint8)
        np.testing.assert_array_equal(ip.affine_warp(img, angle=90), expected)

    def test_translation_fills_black(self):
        img = np.full((4, 4), 100, np.uint8)
        out = ip.affine_warp(img, translate=(1.0, 0.0))
        assert np.all(out[:, 0] == 0) and np.all(out[:, 1:] == 100)

    def test_half_pixel_shift_interpolates(self):
        img = np.array([[0, 100, 200]], np.uint8).repeat(2, axis=0)
        out = ip.affine_warp(img, translate=(0.5, 0.0))
        np.testing.assert_array_equal(out[0], [0, 50, 150])

    def test_perspective_pure_translation(self):
        img = np.arange(1, 26, dtype=np.uint8).reshape(5, 5)
        src = np.array([[0, 0], [4, 0], [4, 4], [0, 4]], float)
        out = ip.perspective_warp(img, src, src + [1, 0])
        np.testing.assert_array_equal(out[:, 1:], img[:, :4])
        assert np.all(out[:, 0] == 0)

    def test_null_warps_are_identity(self):
        img = np.random.default_rng(2).integers(0, 256, (12, 9), dtype=np.uint8)
        np.testing.assert_array_equal(ip.random_perspective(img, 0.0, np.random.default_rng(0)), img)
        np.testing.assert_array_equal(
            ip.random_affine(img, ip.AugmentSpec(), np.random.default_rng(0)), img
        )

    def test_warps_deterministic(self):
        img = np.random.default_rng(2).integers(0, 256, (12, 9), dtype=np.uint8)
        spec = ip.AugmentSpec(affine_max_rotation=30, affine_max_translate_fraction=0.2,
                              affine_scale_range=(0.8, 1.2))
        for op in (
            lambda r: ip.random_perspective(img, 0.3, r),
            lambda r: ip.random_affine(img, spec, r),
        ):
            a, b = op(np.random.default_rng(9)), op(np.random.default_rng(9))
            np.testing.assert_array_equal(a, b)
            assert a.shape == img.shape and a.dtype == np.uint8

    def test_perspective_range_check(self):
        with pytest.raises(ip.ParameterError):
            ip.random_perspective(np.zeros((4, 4), np.uint8), 0.6, np.random.default_rng(0))

    def test_one_pixel_wide_image_survives_warps(self):
        img = np.array([[5], [6], [7]], np.uint8)
        out = ip.random_perspective(img, 0.2, np.random.default_rng(0))
        np.testing.assert_array_equal(out, img)


class TestAugmentSpec:
    def test_parse(self):
        spec = ip.AugmentSpec.from_text(
            """
            # knobs
            crop_fraction = 0.9
            hflip_probability = 0.5
            blur_sigma_range = 0.0, 1.5
            affine_scale_range = 0.9,1.1
            background_threshold = 230
            seed = 42
            """
        )
        assert spec.crop_fraction == 0.9
        assert spec.blur_sigma_range == (0.0, 1.5)
        assert spec.affine_scale_range == (0.9, 1.1)
        assert spec.background_threshold == 230 and spec.seed == 42

    @pytest.mark.parametrize(
        "text",
        [
            "bogus = 1",
            "crop_fraction 0.5",
            "crop_fraction = 0",
            "blur_sigma_range = 2, 1",
            "blur_sigma_range = 1",
            "perspective_distortion = 0.7",
            "affine_max_rotation = 50",
            "affine_max_translate_fraction = 0.31",
            "affine_scale_range = 0, 1",
            "seed = -1",
            "crop_fraction = 0.5\ncrop_fraction = 0.6",
        ],
    )
    def test_rejects(self, text):
        with pytest.raises(ip.ParameterError):
            ip.AugmentSpec.from_text(text)


class TestAugment:
    def test_default_spec_only_removes_background(self):
        img = np.random.default_rng(5).integers(0, 256, (10, 10), dtype=np.uint8)
        out = ip.augment(img, ip.AugmentSpec(), np.random.default_rng(0))
        np.testing.assert_array_equal(out, ip.blacken_background(img, 240))

    @settings(max_examples=30, deadline=None)
    @given(images, st.integers(0, 2**64 - 1))
    def test_pure_function_of_seed(self, img, seed):
        spec = ip.AugmentSpec(crop_fraction=0.8, hflip_probability=0.5, blur_sigma_range=(0, 1),
                              perspective_distortion=0.1, affine_max_rotation=10)
        a = ip.augment(img, spec, np.random.default_rng(seed))
        b = ip.augment(img.copy(), spec, np.random.default_rng(seed))
        np.testing.assert_array_equal(a, b)
        assert a.dtype == np.uint8


def test_png_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (6, 8), dtype=np.uint8)
    ip.write_png(tmp_path / "a.png", img)
    np.testing.assert_array_equal(ip.read_png(tmp_path / "a.png"), img)


def test_png_rejects_color(tmp_path):
    from PIL import Image

    Image.new("RGB", (3, 3)).save(tmp_path / "c.png")
    with pytest.raises(ip.ParameterError):
        ip.read_png(tmp_path / "c.png")
