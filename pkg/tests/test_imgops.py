import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obfair.imgops import (
    FaceBox,
    ImageBuffer,
    blur_roi,
    decode_image,
    encode_png,
    gaussian_kernel,
    pixelate_roi,
)

from .conftest import random_image
from .oracles import bilinear_up, block_average, brute_force_blur


class TestImageBuffer:
    def test_length_invariant(self):
        with pytest.raises(ValueError):
            ImageBuffer(2, 2, 3, bytes(11))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            ImageBuffer(0, 2, 1, b"")

    def test_png_roundtrip(self, rng):
        for channels in (1, 3):
            img = random_image(rng, 7, 5, channels)
            assert decode_image(encode_png(img)) == img

    def test_jpeg_decodes(self, rng):
        import io

        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(random_image(rng, 8, 8).to_array()).save(buf, format="JPEG")
        img = decode_image(buf.getvalue())
        assert (img.width, img.height, img.channels) == (8, 8, 3)

    def test_other_formats_rejected(self, rng):
        import io

        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(random_image(rng, 4, 4).to_array()).save(buf, format="BMP")
        with pytest.raises(ValueError):
            decode_image(buf.getvalue())


class TestGaussianKernel:
    @pytest.mark.parametrize("k", [2, 1, 0, -3, 4])
    def test_rejects_bad_sizes(self, k):
        with pytest.raises(ValueError):
            gaussian_kernel(k)

    def test_k3_sums_to_one(self):
        g = gaussian_kernel(3)
        assert g.shape == (3,)
        assert abs(g.sum() - 1.0) <= 1e-12
        assert g[0] == g[2]

    def test_k5_symmetric_peak(self):
        g = gaussian_kernel(5)
        assert g[0] == pytest.approx(g[4], abs=0) and g[1] == pytest.approx(g[3], abs=0)
        assert g.argmax() == 2

    def test_k7_matches_arbitrary_precision(self):
        mpmath.mp.dps = 40
        sigma = mpmath.mpf("0.3") * (mpmath.mpf(3) - 1) + mpmath.mpf("0.8")
        raw = [mpmath.exp(-mpmath.mpf(i - 3) ** 2 / (2 * sigma**2)) for i in range(7)]
        total = mpmath.fsum(raw)
        expected = [float(x / total) for x in raw]
        np.testing.assert_allclose(gaussian_kernel(7), expected, rtol=0, atol=1e-15)


class TestBlur:
    def test_constant_roi_unchanged(self):
        img = ImageBuffer.from_array(np.full((20, 30, 3), 117, np.uint8))
        for k in (3, 9, 41):
            assert blur_roi(img, FaceBox(2, 3, 20, 15), k) == img

    def test_single_white_pixel_spreads_by_kernel_weights(self):
        a = np.zeros((5, 5), np.uint8)
        a[2, 2] = 255
        out = blur_roi(ImageBuffer.from_array(a), FaceBox(0, 0, 5, 5), 3).to_array()[:, :, 0]
        # 255 * outer(g, g) with g = [0.23899, 0.52201, 0.23899] (sigma 0.8), rounded half up
        expected = np.zeros((5, 5), np.uint8)
        expected[1:4, 1:4] = [[15, 32, 15], [32, 69, 32], [15, 32, 15]]
        np.testing.assert_array_equal(out, expected)

    @pytest.mark.parametrize("k", [3, 9])
    def test_matches_brute_force(self, rng, k):
        for _ in range(5):
            img = random_image(rng, 40, 32)
            box = FaceBox(4, 3, 29, 25)
            got = blur_roi(img, box, k).to_array()[3:28, 4:33].astype(int)
            want = brute_force_blur(img.to_array()[3:28, 4:33], k)
            assert np.abs(got - want).max() <= 1

    def test_outside_box_untouched(self, rng):
        img = random_image(rng, 40, 30)
        box = FaceBox(5, 6, 20, 15)
        out = blur_roi(img, box, 11).to_array()
        mask = np.ones((30, 40), bool)
        mask[6:21, 5:25] = False
        np.testing.assert_array_equal(out[mask], img.to_array()[mask])

    def test_kernel_larger_than_roi(self, rng):
        img = random_image(rng, 10, 10)
        box = FaceBox(0, 0, 10, 10)
        got = blur_roi(img, box, 41).to_array().astype(int)
        assert np.abs(got - brute_force_blur(img.to_array(), 41)).max() <= 1

    def test_invalid_box(self, rng):
        with pytest.raises(ValueError):
            blur_roi(random_image(rng, 10, 10), FaceBox(5, 5, 6, 2), 3)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([3, 5, 9, 15]))
    def test_mean_approximately_preserved(self, seed, k):
        r = np.random.default_rng(seed)
        img = random_image(r, 24, 20)
        box = FaceBox(2, 2, 18, 16)
        before = img.to_array()[2:18, 2:20].reshape(-1, 3).mean(axis=0)
        after = blur_roi(img, box, k).to_array()[2:18, 2:20].reshape(-1, 3).mean(axis=0)
        assert np.abs(before - after).max() <= 0.5


class TestPixelate:
    def test_full_size_is_identity(self, rng):
        img = random_image(rng, 30, 25)
        box = FaceBox(3, 2, 21, 17)
        assert pixelate_roi(img, box, box.roi_size) == img

    def test_size_one_gives_channel_means(self, rng):
        img = random_image(rng, 16, 12)
        box = FaceBox(1, 1, 13, 9)
        roi = img.to_array()[1:10, 1:14].reshape(-1, 3)
        means = np.floor(roi.mean(axis=0) + 0.5)
        out = pixelate_roi(img, box, 1).to_array()[1:10, 1:14].reshape(-1, 3).astype(int)
        assert np.abs(out - means).max() <= 1

    def test_checkerboard_to_mid_gray(self):
        board = ((np.indices((8, 8)).sum(axis=0) % 2) * 255).astype(np.uint8)
        img = ImageBuffer.from_array(board)
        small = block_average(img.to_array().astype(float), 2, 2)
        assert np.all(small == 127.5)
        out = pixelate_roi(img, FaceBox(0, 0, 8, 8), 4).to_array()
        assert np.all(out == 128)

    def test_random_roi_matches_block_then_bilinear_oracle(self, rng):
        img = random_image(rng, 12, 12)
        for s, block in ((6, 2), (4, 3), (3, 4)):
            want = np.floor(bilinear_up(block_average(img.to_array().astype(float), block, block), 12, 12) + 0.5)
            got = pixelate_roi(img, FaceBox(0, 0, 12, 12), s).to_array().astype(int)
            assert np.abs(got - want).max() <= 1

    def test_aspect_ratio_preserved(self, rng):
        # 20x10 box at s=10 -> 10x5 grid of 2x2 blocks
        img = random_image(rng, 20, 10)
        want = np.floor(bilinear_up(block_average(img.to_array().astype(float), 2, 2), 10, 20) + 0.5)
        got = pixelate_roi(img, FaceBox(0, 0, 20, 10), 10).to_array().astype(int)
        assert np.abs(got - want).max() <= 1

    @pytest.mark.parametrize("s", [0, 22])
    def test_out_of_range(self, rng, s):
        with pytest.raises(ValueError):
            pixelate_roi(random_image(rng, 30, 30), FaceBox(0, 0, 21, 10), s)

    def test_outside_box_untouched(self, rng):
        img = random_image(rng, 30, 30)
        out = pixelate_roi(img, FaceBox(10, 10, 12, 15), 3).to_array()
        mask = np.ones((30, 30), bool)
        mask[10:25, 10:22] = False
        np.testing.assert_array_equal(out[mask], img.to_array()[mask])
