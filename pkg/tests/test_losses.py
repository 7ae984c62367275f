import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowdepth.errors import InvalidInputError
from flowdepth.geometry import Intrinsics, camera_rays
from flowdepth.losses import (
    LossResult,
    LossWeights,
    berhu,
    berhu_threshold,
    combine_losses,
    depth_smoothness,
    edge_aware_smoothness,
    normal_smoothness,
    photometric_cost_map,
    photometric_loss,
    rigid_flow_loss,
    ssim,
    surface_normals,
    total_depth_loss,
    total_sfnet_loss,
)

from conftest import assert_grad_close, fd_gradient

C1 = 0.01**2
K_SMALL = Intrinsics(fx=30.0, fy=32.0, cx=4.5, cy=3.5)


class TestSsim:
    def test_identical_images(self, rng):
        img = rng.uniform(0, 1, (8, 10))
        assert np.allclose(ssim(img, img), 1.0)

    def test_constant_zero_vs_one(self):
        a = np.zeros((6, 6))
        b = np.ones((6, 6))
        expect = C1 / (1.0 + C1)  # about 9.999e-5, direct evaluation for constants
        assert np.allclose(ssim(a, b), expect, rtol=1e-9)

    def test_tiny_noise_stays_close_to_one(self, rng):
        a = rng.uniform(0.2, 0.8, (10, 10))
        b = a + rng.normal(0, 1e-6, a.shape)
        assert ssim(a, b).min() > 0.9999

    def test_symmetry(self, rng):
        a = rng.uniform(0, 1, (9, 9))
        b = rng.uniform(0, 1, (9, 9))
        assert np.abs(ssim(a, b) - ssim(b, a)).max() < 1e-12

    def test_dim_mismatch(self):
        with pytest.raises(InvalidInputError):
            ssim(np.zeros((4, 4)), np.zeros((4, 5)))

    def test_values_in_range(self, rng):
        a = rng.uniform(0, 1, (12, 12))
        b = rng.uniform(0, 1, (12, 12))
        s = ssim(a, b)
        assert s.max() <= 1.0 + 1e-12 and s.min() >= -1.0 - 1e-12


class TestPhotometricLoss:
    def test_perfect_synthesis_zero(self, rng):
        img = rng.uniform(0, 1, (8, 8))
        mask = np.ones((8, 8), dtype=bool)
        res = photometric_loss(img, [(img.copy(), mask)], LossWeights())
        assert res.value == pytest.approx(0.0, abs=1e-12)

    def test_min_trick_picks_perfect_source(self, rng):
        img = rng.uniform(0, 1, (8, 8))
        mask = np.ones((8, 8), dtype=bool)
        garbage = rng.uniform(0, 1, (8, 8))
        res = photometric_loss(img, [(img.copy(), mask), (garbage, mask)], LossWeights())
        assert res.value == pytest.approx(0.0, abs=1e-12)

    def test_pure_l1_constant_offset(self):
        img = np.full((8, 8), 0.4)
        synth = img + 0.1
        mask = np.ones((8, 8), dtype=bool)
        res = photometric_loss(img, [(synth, mask)], LossWeights(ssim_mix=0.0))
        assert res.value == pytest.approx(0.1, abs=1e-12)

    def test_empty_source_list_rejected(self):
        with pytest.raises(InvalidInputError):
            photometric_loss(np.zeros((6, 6)), [], LossWeights())

    def test_min_trick_dominance_pixelwise(self, rng):
        img = rng.uniform(0, 1, (10, 10))
        mask = np.ones((10, 10), dtype=bool)
        srcs = [(rng.uniform(0, 1, (10, 10)), mask) for _ in range(2)]
        extra = (rng.uniform(0, 1, (10, 10)), mask)
        w = LossWeights()
        cost_small, inc_small, _ = photometric_cost_map(img, srcs, w)
        cost_big, inc_big, _ = photometric_cost_map(img, srcs + [extra], w)
        assert np.array_equal(inc_small, inc_big)
        assert np.all(cost_big <= cost_small + 1e-15)

    def test_invalid_everywhere_pixels_excluded(self, rng):
        img = rng.uniform(0, 1, (8, 8))
        synth = img + 0.2
        mask = np.ones((8, 8), dtype=bool)
        mask[:, 4:] = False  # right half invalid
        res_half = photometric_loss(img, [(synth, mask)], LossWeights(ssim_mix=0.0))
        res_full = photometric_loss(img, [(synth, np.ones_like(mask))], LossWeights(ssim_mix=0.0))
        assert res_half.value == pytest.approx(res_full.value, abs=1e-12)

    def test_gradient_single_source(self, rng):
        img = rng.uniform(0, 1, (7, 7))
        synth = np.clip(img + 0.1 + 0.2 * rng.uniform(0, 1, img.shape), 0, 1.5)
        mask = np.ones(img.shape, dtype=bool)
        w = LossWeights()
        res = photometric_loss(img, [(synth, mask)], w)

        def objective(s):
            return photometric_loss(img, [(s, mask)], w).value

        assert_grad_close(res.gradients["synthesized_0"], fd_gradient(objective, synth))

    def test_gradient_two_sources_routes_through_argmin(self, rng):
        img = rng.uniform(0, 1, (7, 7))
        near = img + 0.05 + 0.05 * rng.uniform(0, 1, img.shape)
        far = img + 0.5 + 0.1 * rng.uniform(0, 1, img.shape)
        mask = np.ones(img.shape, dtype=bool)
        w = LossWeights()
        res = photometric_loss(img, [(near, mask), (far, mask)], w)
        assert np.allclose(res.gradients["synthesized_1"], 0.0)

        def objective(s):
            return photometric_loss(img, [(s, mask), (far, mask)], w).value

        assert_grad_close(res.gradients["synthesized_0"], fd_gradient(objective, near))

    def test_gradient_multichannel(self, rng):
        img = rng.uniform(0, 1, (6, 6, 3))
        synth = np.clip(img + 0.1 + 0.1 * rng.uniform(0, 1, img.shape), 0, 1.5)
        mask = np.ones((6, 6), dtype=bool)
        w = LossWeights()
        res = photometric_loss(img, [(synth, mask)], w)

        def objective(s):
            return photometric_loss(img, [(s, mask)], w).value

        assert_grad_close(res.gradients["synthesized_0"], fd_gradient(objective, synth))


class TestEdgeAwareSmoothness:
    def test_constant_field_zero(self):
        res = edge_aware_smoothness(np.full((6, 8), 3.0), np.zeros((6, 8)))
        assert res.value == 0.0

    def test_ramp_with_constant_guide(self):
        h, w = 6, 9
        slope = 0.37
        field = np.tile(slope * np.arange(w), (h, 1))
        res = edge_aware_smoothness(field, np.full((h, w), 0.5))
        assert res.value == pytest.approx(slope, abs=1e-12)

    def test_edge_downweights_matching_discontinuity(self):
        h, w = 5, 8
        step_col = 4
        field = np.zeros((h, w))
        field[:, step_col:] = 1.0  # single discontinuity
        guide = np.zeros((h, w))
        guide[:, step_col:] = 10.0  # |grad guide| = 10 at the same place
        res = edge_aware_smoothness(field, guide)
        nx = h * (w - 1)
        assert res.value == pytest.approx(h * 1.0 * np.exp(-10.0) / nx, rel=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(InvalidInputError):
            edge_aware_smoothness(np.zeros((4, 4)), np.zeros((5, 4)))

    def test_gradient_scalar_field(self, rng):
        field = rng.uniform(0, 1, (7, 7))
        guide = rng.uniform(0, 1, (7, 7))
        res = edge_aware_smoothness(field, guide)
        fd = fd_gradient(lambda f: edge_aware_smoothness(f, guide).value, field)
        assert_grad_close(res.gradients["field"], fd)

    def test_gradient_flow_field(self, rng):
        field = rng.uniform(-2, 2, (6, 6, 2))
        guide = rng.uniform(0, 1, (6, 6))
        res = edge_aware_smoothness(field, guide)
        fd = fd_gradient(lambda f: edge_aware_smoothness(f, guide).value, field)
        assert_grad_close(res.gradients["field"], fd)

    def test_masked_terms_dropped(self, rng):
        field = rng.uniform(0, 1, (6, 6))
        guide = rng.uniform(0, 1, (6, 6))
        mask = np.ones((6, 6), dtype=bool)
        mask[2, 3] = False
        res = edge_aware_smoothness(field, guide, mask=mask)
        assert np.isfinite(res.value)
        assert np.allclose(res.gradients["field"][2, 3], 0.0)


class TestBerhu:
    def test_l1_branch(self):
        c = 0.8
        res = berhu(np.array([c / 2]), c)
        assert res.value == pytest.approx(c / 2)

    def test_branch_continuity_at_threshold(self):
        c = 0.8
        assert berhu(np.array([c]), c).value == pytest.approx(c)

    def test_quadratic_branch(self):
        c = 0.8
        res = berhu(np.array([2 * c]), c)
        assert res.value == pytest.approx(2.5 * c)

    def test_threshold_must_be_positive(self):
        with pytest.raises(InvalidInputError):
            berhu(np.ones(3), 0.0)

    @given(st.floats(0.05, 5.0), st.floats(1e-6, 1e-3))
    @settings(max_examples=50, deadline=None)
    def test_continuity_and_matched_one_sided_slopes(self, c, eps):
        lo = berhu(np.array([c - eps]), c).value
        hi = berhu(np.array([c + eps]), c).value
        assert abs(hi - lo) < 3 * eps
        # analytic one-sided derivatives approach 1 from both branches
        g_lo = berhu(np.array([c - eps]), c).gradients["residual"][0]
        g_hi = berhu(np.array([c + eps]), c).gradients["residual"][0]
        assert g_lo == pytest.approx(1.0, abs=1e-12)
        assert g_hi == pytest.approx(1.0, abs=2 * eps / c + 1e-12)

    def test_gradient(self, rng):
        c = 0.5
        x = rng.uniform(-2, 2, (5, 5, 2))
        x = np.where(np.abs(np.abs(x) - c) < 0.05, x + 0.1, x)  # keep away from the kink
        res = berhu(x, c)
        assert_grad_close(res.gradients["residual"], fd_gradient(lambda v: berhu(v, c).value, x))

    def test_adaptive_threshold(self, rng):
        x = rng.uniform(-3, 3, (6, 6))
        assert berhu_threshold(x) == pytest.approx(0.2 * np.abs(x).max())
        assert berhu_threshold(np.zeros(4)) == 1e-6


class TestRigidFlowLoss:
    def test_exact_supervision_zero(self, rng):
        flow = rng.uniform(-2, 2, (6, 6, 2))
        mask = np.ones((6, 6), dtype=bool)
        res = rigid_flow_loss(flow, flow.copy(), mask, c=0.5)
        assert res.value == 0.0

    def test_constant_offset_component_mean(self):
        c = 0.6
        pred = np.zeros((5, 5, 2))
        pred[..., 0] = c / 2
        sup = np.zeros((5, 5, 2))
        mask = np.ones((5, 5), dtype=bool)
        res = rigid_flow_loss(pred, sup, mask, c=c)
        assert res.value == pytest.approx(c / 4)

    def test_gradient(self, rng):
        c = 0.5
        pred = rng.uniform(-1, 1, (6, 6, 2))
        sup = rng.uniform(-1, 1, (6, 6, 2))
        resid = np.abs(np.abs(pred - sup) - c)
        pred = np.where(resid < 0.02, pred + 0.05, pred)
        mask = rng.uniform(0, 1, (6, 6)) > 0.2
        res = rigid_flow_loss(pred, sup, mask, c)
        fd = fd_gradient(lambda p: rigid_flow_loss(p, sup, mask, c).value, pred)
        assert_grad_close(res.gradients["predicted"], fd)


class TestNormals:
    def test_fronto_parallel_plane(self):
        depth = np.full((8, 10), 2.5)
        normals, valid = surface_normals(depth, K_SMALL)
        assert valid.all()
        assert np.allclose(normals, np.array([0.0, 0.0, -1.0]), atol=1e-12)
        res = normal_smoothness(depth, K_SMALL, np.full((8, 10), 0.3))
        assert res.value == pytest.approx(0.0, abs=1e-12)

    def test_slanted_plane_constant_normals(self):
        # true 3D plane: depth = rho / (n . ray)
        h, w = 8, 10
        n = np.array([0.3, 0.1, -1.0])
        n /= np.linalg.norm(n)
        rays = camera_rays(h, w, K_SMALL)
        depth = -2.0 / (rays @ n)
        assert np.all(depth > 0)
        normals, valid = surface_normals(depth, K_SMALL)
        assert valid.all()
        spread = normals.reshape(-1, 3).std(axis=0)
        assert spread.max() < 1e-9
        res = normal_smoothness(depth, K_SMALL, np.full((h, w), 0.5))
        assert res.value == pytest.approx(0.0, abs=1e-9)

    def test_crease_concentrates_loss(self):
        h, w = 8, 12
        rays = camera_rays(h, w, K_SMALL)
        depth = np.full((h, w), 3.0)
        nrm = np.array([0.5, 0.0, -1.0])
        slant = -2.0 / (rays @ (nrm / np.linalg.norm(nrm)))
        depth[:, 6:] = slant[:, 6:]
        res = normal_smoothness(depth, K_SMALL, np.full((h, w), 0.5))
        assert res.value > 0
        normals, _ = surface_normals(depth, K_SMALL)
        dx = np.abs(normals[:, 1:] - normals[:, :-1]).sum(axis=-1)
        nonzero_cols = np.where(dx.max(axis=0) > 1e-9)[0]
        assert set(nonzero_cols) <= {4, 5, 6}  # only around the crease

    def test_normal_smoothness_gradient(self, rng):
        depth = 2.0 + 0.3 * rng.uniform(0, 1, (6, 7))
        guide = rng.uniform(0, 1, (6, 7))
        res = normal_smoothness(depth, K_SMALL, guide)
        fd = fd_gradient(lambda d: normal_smoothness(d, K_SMALL, guide).value, depth, h=1e-6)
        assert_grad_close(res.gradients["depth"], fd, rtol=5e-4)

    def test_depth_smoothness_gradient(self, rng):
        depth = 1.5 + rng.uniform(0, 1, (6, 6))
        guide = rng.uniform(0, 1, (6, 6))
        res = depth_smoothness(depth, guide)
        fd = fd_gradient(lambda d: depth_smoothness(d, guide).value, depth)
        assert_grad_close(res.gradients["depth"], fd)

    def test_depth_smoothness_scale_invariant(self, rng):
        depth = 1.5 + rng.uniform(0, 1, (6, 6))
        guide = rng.uniform(0, 1, (6, 6))
        a = depth_smoothness(depth, guide).value
        b = depth_smoothness(10.0 * depth, guide).value
        assert a == pytest.approx(b, rel=1e-12)


class TestTotals:
    @staticmethod
    def _fake(value, key, shape, rng):
        return LossResult(value=value, gradients={key: rng.standard_normal(shape)})

    def test_zero_weights(self, rng):
        a = self._fake(1.3, "depth", (4, 4), rng)
        b = self._fake(0.7, "depth", (4, 4), rng)
        res = total_depth_loss(a, b, None, None, LossWeights(flow=0.0, photometric=0.0))
        assert res.value == 0.0

    def test_single_weight_passthrough(self, rng):
        a = self._fake(1.3, "depth", (4, 4), rng)
        res = total_depth_loss(
            a, None, None, None, LossWeights(flow=1.0, photometric=0.0, depth_smooth=0.0, normal_smooth=0.0)
        )
        assert res.value == a.value
        assert np.array_equal(res.gradients["depth"], a.gradients["depth"])

    def test_weighted_sum_linearity(self, rng):
        vals = [1.1, -0.2, 0.5, 0.05]
        weights = LossWeights(flow=1.0, photometric=0.1, depth_smooth=0.5, normal_smooth=0.05)
        terms = [self._fake(v, "depth", (3, 3), rng) for v in vals]
        res = total_depth_loss(*terms, weights)
        expect = vals[0] * 1.0 + vals[1] * 0.1 + vals[2] * 0.5 + vals[3] * 0.05
        assert res.value == pytest.approx(expect, abs=1e-12)
        g = (
            terms[0].gradients["depth"] * 1.0
            + terms[1].gradients["depth"] * 0.1
            + terms[2].gradients["depth"] * 0.5
            + terms[3].gradients["depth"] * 0.05
        )
        assert np.allclose(res.gradients["depth"], g, atol=1e-15)

    def test_sfnet_total(self, rng):
        a = self._fake(0.8, "field", (4, 4), rng)
        b = self._fake(0.2, "field", (4, 4), rng)
        res = total_sfnet_loss(a, b, photo_weight=1.0, smooth_weight=0.1)
        assert res.value == pytest.approx(0.8 + 0.02)

    def test_nonnegative_weights_enforced(self):
        with pytest.raises(InvalidInputError):
            LossWeights(flow=-0.1)
        with pytest.raises(InvalidInputError):
            LossWeights(ssim_mix=1.5)


class TestNonnegativity:
    def test_losses_nonnegative_on_random_inputs(self, rng):
        for _ in range(10):
            img = rng.uniform(0, 1, (7, 7))
            synth = rng.uniform(0, 1, (7, 7))
            mask = np.ones((7, 7), dtype=bool)
            assert photometric_loss(img, [(synth, mask)], LossWeights()).value >= 0
            assert edge_aware_smoothness(rng.uniform(-1, 1, (7, 7)), img).value >= 0
            assert berhu(rng.uniform(-2, 2, (5, 5)), 0.4).value >= 0
