import numpy as np
import pytest

from flowdepth.errors import DegenerateGeometryError, InsufficientDataError, UndefinedMetricError
from flowdepth.geometry import (
    Intrinsics,
    PoseSE3,
    axis_angle_from_rotation,
    compose_pose,
    invert_pose,
    project,
    rigid_flow,
    rotation_from_axis_angle,
)
from flowdepth.matching import SeedSet, inject_outliers
from flowdepth.pnp import epnp_ransac, epnp_solve, flow_epe, gt_rigid_flow

K = Intrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0)


def rotation_error(a: PoseSE3, b: PoseSE3) -> float:
    rel = compose_pose(invert_pose(a), b)
    return float(np.linalg.norm(axis_angle_from_rotation(rel.rotation)))


def random_scene(rng, n=20, planar=False):
    pts = np.stack(
        [rng.uniform(-1.0, 1.0, n), rng.uniform(-0.8, 0.8, n), rng.uniform(3.0, 6.0, n)],
        axis=-1,
    )
    if planar:
        normal = rng.standard_normal(3)
        normal /= np.linalg.norm(normal)
        offset = pts.mean(axis=0)
        pts -= np.outer((pts - offset) @ normal, normal)
    w = rng.uniform(-1, 1, 3)
    w *= rng.uniform(0.05, 0.4) / np.linalg.norm(w)
    pose = PoseSE3(rotation_from_axis_angle(w), rng.uniform(-0.3, 0.3, 3))
    pix = project(pose.apply(pts), K)
    return pts, pix, pose


class TestEpnpSolve:
    def test_identity_pose_recovered(self, rng):
        pts = np.stack(
            [rng.uniform(-1, 1, 15), rng.uniform(-1, 1, 15), rng.uniform(3, 5, 15)], axis=-1
        )
        pix = project(pts, K)
        pose = epnp_solve(pts, pix, K)
        assert rotation_error(pose, PoseSE3.identity()) < 1e-8
        assert np.linalg.norm(pose.translation) < 1e-8

    def test_exact_recovery_known_pose(self, rng):
        true = PoseSE3(
            rotation_from_axis_angle(np.array([0.0, 0.3, 0.0])),
            np.array([0.1, -0.05, 0.2]),
        )
        pts = np.stack(
            [rng.uniform(-1, 1, 20), rng.uniform(-0.8, 0.8, 20), rng.uniform(3, 6, 20)], axis=-1
        )
        pix = project(true.apply(pts), K)
        pose = epnp_solve(pts, pix, K)
        assert rotation_error(pose, true) < 1e-6
        assert np.linalg.norm(pose.translation - true.translation) < 1e-6

    def test_exact_recovery_many_random_instances(self, rng):
        for _ in range(200):
            pts, pix, true = random_scene(rng)
            pose = epnp_solve(pts, pix, K)
            assert rotation_error(pose, true) < 1e-6
            assert np.linalg.norm(pose.translation - true.translation) < 1e-6

    def test_noise_robustness_median(self, rng):
        errors = []
        for _ in range(100):
            pts, pix, true = random_scene(rng)
            noisy = pix + rng.normal(0, 0.5, pix.shape)
            pose = epnp_solve(pts, noisy, K)
            errors.append(rotation_error(pose, true))
        assert np.median(errors) < 0.01

    def test_planar_configuration(self, rng):
        for _ in range(20):
            pts, pix, true = random_scene(rng, planar=True)
            pose = epnp_solve(pts, pix, K)
            assert rotation_error(pose, true) < 1e-5

    def test_rotation_is_orthonormal(self, rng):
        pts, pix, _ = random_scene(rng)
        pose = epnp_solve(pts, pix, K)
        assert np.abs(pose.rotation.T @ pose.rotation - np.eye(3)).max() < 1e-9

    def test_collinear_points_rejected(self, rng):
        pts = np.outer(np.linspace(0, 1, 8), np.array([0.1, 0.2, 0.3])) + np.array([0, 0, 4.0])
        pix = project(pts, K)
        with pytest.raises(DegenerateGeometryError):
            epnp_solve(pts, pix, K)

    def test_too_few_points(self, rng):
        with pytest.raises(InsufficientDataError):
            epnp_solve(np.zeros((3, 3)), np.zeros((3, 2)), K)


class TestEpnpRansac:
    def test_outliers_rejected(self, rng):
        pts, pix, true = random_scene(rng, n=40)
        corrupted = pix.copy()
        bad = rng.choice(40, size=6, replace=False)
        corrupted[bad] += rng.uniform(20, 60, (6, 2)) * rng.choice([-1, 1], (6, 2))
        pose, inliers = epnp_ransac(pts, corrupted, K, rng_seed=3)
        assert rotation_error(pose, true) < 1e-6
        assert not inliers[bad].any()
        assert inliers.sum() >= 30


class TestGtRigidFlow:
    @staticmethod
    def _scene(rng, pure_rotation=False, outlier_fraction=0.0):
        k = Intrinsics(fx=70.0, fy=70.0, cx=39.5, cy=31.5)
        h, w = 48, 64
        depth = np.full((h, w), 3.0)
        depth[:, 32:] = 4.2
        if pure_rotation:
            t = np.zeros(3)
        else:
            t = np.array([0.12, -0.06, 0.1])
        pose = PoseSE3(rotation_from_axis_angle(np.array([0.01, -0.02, 0.005])), t)
        flow, valid = rigid_flow(depth, pose, k)
        xs = rng.integers(2, w - 2, 60)
        ys = rng.integers(2, h - 2, 60)
        pos = np.unique(np.stack([xs, ys], axis=-1), axis=0)
        seeds = SeedSet(pos, flow[pos[:, 1], pos[:, 0]])
        if outlier_fraction:
            seeds = inject_outliers(seeds, outlier_fraction, 10.0, rng_seed=9)
        return k, depth, pose, flow, valid, seeds

    def test_recovers_analytic_flow(self, rng):
        k, depth, pose, flow, valid, seeds = self._scene(rng)
        result = gt_rigid_flow(depth, seeds, k)
        assert flow_epe(result.flow, flow, valid & result.valid) < 1e-6

    def test_identity_motion_zero_flow(self, rng):
        k = Intrinsics(fx=70.0, fy=70.0, cx=39.5, cy=31.5)
        depth = np.full((32, 40), 2.5)
        pos = np.stack([rng.permutation(38)[:12] + 1, rng.permutation(30)[:12] + 1], axis=-1)
        seeds = SeedSet(pos, np.zeros((12, 2)))
        result = gt_rigid_flow(depth, seeds, k)
        assert np.abs(result.flow).max() < 1e-9

    def test_outlier_seeds_handled(self, rng):
        k, depth, pose, flow, valid, seeds = self._scene(rng, outlier_fraction=0.1)
        result = gt_rigid_flow(depth, seeds, k)
        assert flow_epe(result.flow, flow, valid & result.valid) < 0.1

    def test_self_consistency_of_solved_pose(self, rng):
        k, depth, pose, flow, valid, seeds = self._scene(rng)
        result = gt_rigid_flow(depth, seeds, k)
        refit, _ = rigid_flow(depth, result.pose, k)
        pos = seeds.positions
        assert np.abs(refit[pos[:, 1], pos[:, 0]] - seeds.flows).max() < 1e-6

    def test_seeds_on_invalid_depth_dropped(self, rng):
        k = Intrinsics(fx=70.0, fy=70.0, cx=19.5, cy=15.5)
        depth = np.full((32, 40), 3.0)
        pos = np.array([[1, 1], [2, 2], [3, 3], [4, 4]])
        seeds = SeedSet(pos, np.zeros((4, 2)))
        depth[1, 1] = np.nan
        with pytest.raises(InsufficientDataError):
            gt_rigid_flow(depth, seeds, k)


class TestFlowEpe:
    def test_identical_flows(self, rng):
        f = rng.standard_normal((6, 6, 2))
        assert flow_epe(f, f.copy(), np.ones((6, 6), dtype=bool)) == 0.0

    def test_three_four_five(self):
        pred = np.zeros((4, 4, 2))
        pred[..., 0] = 3.0
        pred[..., 1] = 4.0
        assert flow_epe(pred, np.zeros((4, 4, 2)), np.ones((4, 4), dtype=bool)) == pytest.approx(5.0)

    def test_mean_semantics(self):
        pred = np.zeros((2, 4, 2))
        pred[0, :, 0] = 1.0  # offset (1, 0) on half the pixels
        mask = np.ones((2, 4), dtype=bool)
        assert flow_epe(pred, np.zeros_like(pred), mask) == pytest.approx(0.5)

    def test_empty_mask_error(self):
        with pytest.raises(UndefinedMetricError):
            flow_epe(np.zeros((3, 3, 2)), np.zeros((3, 3, 2)), np.zeros((3, 3), dtype=bool))
