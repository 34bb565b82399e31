import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from posealign.errors import EmptyIntersection
from posealign.geometry import BoundingBox
from posealign.image import GrayImage, bilinear_sample, crop_resize


def checkerboard(n=16):
    idx = np.indices((n, n)).sum(axis=0) % 2
    return GrayImage(idx.astype(float))


class TestGrayImage:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            GrayImage(np.full((4, 4), 1.5))
        with pytest.raises(ValueError):
            GrayImage(np.full((4, 4), -0.1))

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            GrayImage(np.zeros((4, 4, 3)))

    def test_dimensions(self):
        img = GrayImage(np.zeros((7, 9)))
        assert img.height == 7 and img.width == 9


class TestBilinearSample:
    def test_integer_coordinates_return_pixels(self, rng):
        px = rng.uniform(size=(8, 10))
        ys, xs = np.indices(px.shape)
        pts = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(float)
        assert np.array_equal(bilinear_sample(px, pts), px.ravel())

    def test_midpoint_averages_neighbours(self):
        px = np.array([[0.0, 1.0], [0.0, 1.0]])
        assert bilinear_sample(px, np.array([[0.5, 0.5]]))[0] == pytest.approx(0.5)

    def test_clamp_mode_extends_border(self):
        px = np.array([[0.2, 0.8], [0.2, 0.8]])
        assert bilinear_sample(px, np.array([[-5.0, 0.0]]))[0] == pytest.approx(0.2)
        assert bilinear_sample(px, np.array([[6.0, 1.0]]))[0] == pytest.approx(0.8)

    def test_fill_mode_blends_to_fill(self):
        px = np.ones((3, 3))
        far = bilinear_sample(px, np.array([[-10.0, -10.0]]), mode="fill", fill=0.5)
        assert far[0] == pytest.approx(0.5)
        # half a pixel outside: halfway between border value and fill
        edge = bilinear_sample(px, np.array([[-0.5, 0.0]]), mode="fill", fill=0.5)
        assert edge[0] == pytest.approx(0.75)

    @given(st.floats(0.0, 7.0), st.floats(0.0, 7.0))
    def test_values_within_image_range(self, x, y):
        px = checkerboard(8).pixels
        v = bilinear_sample(px, np.array([[x, y]]))[0]
        assert 0.0 <= v <= 1.0

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            bilinear_sample(np.zeros((2, 2)), np.zeros((1, 2)), mode="wrap")


class TestCropResize:
    def test_constant_image_stays_constant(self):
        img = GrayImage(np.full((32, 32), 0.5))
        out = crop_resize(img, BoundingBox(-10, 5, 60, 20))
        assert out.pixels.shape == (96, 96)
        assert np.allclose(out.pixels, 0.5, atol=1e-12)

    def test_identity_resize(self, rng):
        img = GrayImage(rng.uniform(size=(96, 96)))
        out = crop_resize(img, BoundingBox(0, 0, 96, 96))
        assert np.allclose(out.pixels, img.pixels, atol=1e-12)

    def test_downsample_matches_block_means(self, rng):
        img = GrayImage(rng.uniform(size=(192, 192)))
        out = crop_resize(img, BoundingBox(0, 0, 192, 192))
        blocks = img.pixels.reshape(96, 2, 96, 2).mean(axis=(1, 3))
        assert np.abs(out.pixels - blocks).max() < 1e-6

    def test_non_overlapping_box_rejected(self):
        img = GrayImage(np.zeros((10, 10)))
        with pytest.raises(EmptyIntersection):
            crop_resize(img, BoundingBox(100, 0, 5, 5))
        with pytest.raises(EmptyIntersection):
            crop_resize(img, BoundingBox(0, -20, 5, 5))

    def test_outside_area_padded_mid_gray(self):
        img = GrayImage(np.ones((10, 10)))
        out = crop_resize(img, BoundingBox(-90, -90, 100, 100))
        # the face box is mostly off-image: top-left of the crop is padding
        assert out.pixels[0, 0] == pytest.approx(0.5)
        assert out.pixels[-1, -1] == pytest.approx(1.0)

    def test_custom_size(self):
        img = GrayImage(np.zeros((20, 20)))
        assert crop_resize(img, BoundingBox(0, 0, 20, 20), size=32).pixels.shape == (32, 32)
