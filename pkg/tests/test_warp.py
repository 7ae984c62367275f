import numpy as np
import pytest

from flowdepth.errors import InvalidInputError
from flowdepth.warp import sample_bilinear, warp_gradient, warp_image

from conftest import assert_grad_close, fd_gradient


class TestSampleBilinear:
    def test_integer_coordinates_exact(self, rng):
        img = rng.uniform(0, 1, (10, 12))
        val, valid = sample_bilinear(img, (3.0, 7.0))
        assert valid
        assert val == img[7, 3]

    def test_constant_image(self, rng):
        img = np.full((6, 6), 0.37)
        qs = rng.uniform(0, 5, (20, 2))
        vals, valid = sample_bilinear(img, qs)
        assert valid.all()
        assert np.allclose(vals, 0.37)

    def test_linear_interpolation_two_pixels(self):
        img = np.array([[0.0, 1.0]])
        val, valid = sample_bilinear(img, (0.25, 0.0))
        assert valid
        assert np.isclose(val, 0.25)

    def test_out_of_bounds_flagged(self):
        img = np.ones((4, 4))
        _, valid = sample_bilinear(img, (-0.1, 2.0))
        assert not valid
        _, valid = sample_bilinear(img, (3.0001, 2.0))
        assert not valid

    def test_locality(self, rng):
        # the sample depends only on its 4 surrounding pixels
        img = rng.uniform(0, 1, (8, 8))
        q = (2.3, 4.6)
        ref, _ = sample_bilinear(img, q)
        tampered = img.copy()
        mask = np.ones((8, 8), dtype=bool)
        mask[4:6, 2:4] = False
        tampered[mask] += 10.0
        val, _ = sample_bilinear(tampered, q)
        assert np.isclose(val, ref)

    def test_multichannel(self, rng):
        img = rng.uniform(0, 1, (5, 5, 3))
        vals, valid = sample_bilinear(img, (1.5, 2.5))
        assert valid
        for c in range(3):
            ref, _ = sample_bilinear(img[..., c], (1.5, 2.5))
            assert np.isclose(vals[c], ref)


class TestWarpImage:
    def test_zero_flow_is_identity(self, rng):
        img = rng.uniform(0, 1, (7, 9))
        out, mask = warp_image(img, np.zeros((7, 9, 2)))
        assert mask.all()
        assert np.array_equal(out, img)

    def test_constant_row_image_translates(self):
        img = np.tile(np.linspace(0, 1, 6)[:, None], (1, 8))  # constant along x
        flow = np.zeros((6, 8, 2))
        flow[..., 0] = 1.0
        out, mask = warp_image(img, flow)
        assert np.allclose(out[mask], img[mask])
        assert not mask[:, -1].any()  # last column samples out of bounds

    def test_half_pixel_shift_of_ramp(self):
        h, w = 5, 9
        img = np.tile(np.arange(w, dtype=float) / (w - 1), (h, 1))
        flow = np.zeros((h, w, 2))
        flow[..., 0] = 0.5
        out, mask = warp_image(img, flow)
        expect = (np.arange(w) + 0.5) / (w - 1)
        assert np.allclose(out[:, :-1], np.tile(expect[:-1], (h, 1)))
        assert mask[:, :-1].all() and not mask[:, -1].any()

    def test_dim_mismatch_rejected(self):
        with pytest.raises(InvalidInputError):
            warp_image(np.zeros((4, 4)), np.zeros((4, 5, 2)))

    def test_mask_soundness(self, rng):
        img = rng.uniform(0, 1, (10, 10))
        flow = rng.uniform(-3, 3, (10, 10, 2))
        out, mask = warp_image(img, flow)
        gx, gy = np.meshgrid(np.arange(10.0), np.arange(10.0))
        qx = gx + flow[..., 0]
        qy = gy + flow[..., 1]
        inside = (qx >= 0) & (qx <= 9) & (qy >= 0) & (qy <= 9)
        assert np.array_equal(mask, inside)
        assert np.all(out[~mask] == 0.0)


class TestWarpGradient:
    def test_constant_image_zero_gradient(self, rng):
        img = np.full((6, 6), 0.5)
        flow = rng.uniform(-1, 1, (6, 6, 2))
        g = warp_gradient(img, flow, np.ones((6, 6)))
        assert np.allclose(g, 0.0)

    def test_ramp_gradient_value(self):
        h, w = 6, 9
        img = np.tile(np.arange(w, dtype=float) / (w - 1), (h, 1))
        flow = np.zeros((h, w, 2))
        g = warp_gradient(img, flow, np.ones((h, w)))
        # du-gradient equals the ramp slope wherever the right neighbor exists
        assert np.allclose(g[:, :-1, 0], 1.0 / (w - 1))
        assert np.allclose(g[..., 1], 0.0)

    def test_matches_finite_differences(self, rng):
        for _ in range(10):
            img = rng.uniform(0, 1, (8, 8))
            flow = rng.uniform(-0.8, 0.8, (8, 8, 2)) + 0.1
            upstream = rng.standard_normal((8, 8))

            def objective(f):
                out, mask = warp_image(img, f)
                return float(np.sum(out * upstream * mask))

            g = warp_gradient(img, flow, upstream * warp_image(img, flow)[1])
            assert_grad_close(g, fd_gradient(objective, flow))

    def test_multichannel_matches_finite_differences(self, rng):
        img = rng.uniform(0, 1, (6, 6, 3))
        flow = rng.uniform(-0.5, 0.5, (6, 6, 2)) + 0.07
        upstream = rng.standard_normal((6, 6, 3))

        def objective(f):
            out, mask = warp_image(img, f)
            return float(np.sum(out * upstream * mask[..., None]))

        g = warp_gradient(img, flow, upstream * warp_image(img, flow)[1][..., None])
        assert_grad_close(g, fd_gradient(objective, flow))
