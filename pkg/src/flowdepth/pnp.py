"""EPnP pose solver and the ground-truth rigid-flow oracle.

Given sparse 2D-3D correspondences (seed pixels lifted through an annotated
depth map), the camera pose is solved with EPnP and the dense rigid flow is
composed from that pose and the depth map, manufacturing flow labels for
evaluation. A RANSAC wrapper makes the oracle robust to the mismatches that
feature-matched seeds inevitably contain.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import (
    BehindCameraError,
    DegenerateGeometryError,
    InsufficientDataError,
    InvalidInputError,
    UndefinedMetricError,
)
from .geometry import (
    Intrinsics,
    PoseSE3,
    backproject,
    project_to_rotation,
    rigid_flow,
    rotation_from_axis_angle,
    skew,
)
from .matching import SeedSet

PLANARITY_TOL = 1e-6
GN_ITERATIONS = 10
GN_DAMPING = 1e-8


def _control_points(points: np.ndarray) -> np.ndarray:
    """Centroid plus principal axes scaled by the data spread.

    Four control points for general clouds, three for planar ones (detected
    by covariance rank); raises for degenerate (collinear or coincident)
    configurations.
    """
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered / len(points)
    evals, evecs = np.linalg.eigh(cov)  # ascending
    evals = np.clip(evals, 0.0, None)
    if evals[2] <= 0 or evals[1] / evals[2] < PLANARITY_TOL:
        raise DegenerateGeometryError("3D points are (nearly) collinear or coincident")
    axes = [np.sqrt(evals[i]) * evecs[:, i] for i in (2, 1, 0)]
    planar = evals[0] / evals[2] < PLANARITY_TOL
    if planar:
        return np.stack([centroid, centroid + axes[0], centroid + axes[1]])
    return np.stack([centroid, centroid + axes[0], centroid + axes[1], centroid + axes[2]])


def _barycentric(points: np.ndarray, ctrl: np.ndarray) -> np.ndarray:
    """Coordinates of each point in the control-point frame (rows sum to 1)."""
    m = len(ctrl)
    a = np.vstack([ctrl.T, np.ones((1, m))])  # 4 x m
    b = np.vstack([points.T, np.ones((1, len(points)))])  # 4 x N
    if m == 4:
        alphas = np.linalg.solve(a, b)
    else:
        alphas, *_ = np.linalg.lstsq(a, b, rcond=None)
    return alphas.T


def _assemble_m(alphas: np.ndarray, pixels: np.ndarray, k: Intrinsics) -> np.ndarray:
    n, m = alphas.shape
    rows = np.zeros((2 * n, 3 * m))
    u = pixels[:, 0]
    v = pixels[:, 1]
    for j in range(m):
        a = alphas[:, j]
        rows[0::2, 3 * j] = a * k.fx
        rows[0::2, 3 * j + 2] = a * (k.cx - u)
        rows[1::2, 3 * j + 1] = a * k.fy
        rows[1::2, 3 * j + 2] = a * (k.cy - v)
    return rows


def _beta_candidates(null_vecs: np.ndarray, ctrl: np.ndarray) -> list[np.ndarray]:
    """Camera-frame control-point candidates from 1-3 nullspace vectors.

    The inter-control-point distances constrain the mixing coefficients; each
    case is solved in the standard lifted (products of betas) linearization.
    """
    m = len(ctrl)
    pairs = list(combinations(range(m), 2))
    d2 = np.array([np.sum((ctrl[i] - ctrl[j]) ** 2) for i, j in pairs])
    vs = [null_vecs[i].reshape(m, 3) for i in range(null_vecs.shape[0])]
    diffs = [np.stack([v[i] - v[j] for i, j in pairs]) for v in vs]
    candidates = []

    # one vector: a single scale
    dot11 = np.sum(diffs[0] * diffs[0], axis=1)
    denom = float(dot11 @ dot11)
    if denom > 0:
        beta = float(dot11 @ d2) / denom
        if beta > 0:
            candidates.append(np.sqrt(beta) * vs[0])

    # two vectors: lifted unknowns (b11, b12, b22)
    if len(vs) >= 2:
        l = np.stack(
            [
                np.sum(diffs[0] * diffs[0], axis=1),
                2.0 * np.sum(diffs[0] * diffs[1], axis=1),
                np.sum(diffs[1] * diffs[1], axis=1),
            ],
            axis=1,
        )
        sol, *_ = np.linalg.lstsq(l, d2, rcond=None)
        b11, b12, b22 = sol
        if b11 > 0:
            beta1 = np.sqrt(b11)
            beta2 = np.sign(b12) * np.sqrt(abs(b22))
            candidates.append(beta1 * vs[0] + beta2 * vs[1])

    # three vectors: six lifted unknowns, exactly determined for 4 controls
    if len(vs) >= 3 and len(d2) >= 6:
        l = np.stack(
            [
                np.sum(diffs[0] * diffs[0], axis=1),
                2.0 * np.sum(diffs[0] * diffs[1], axis=1),
                np.sum(diffs[1] * diffs[1], axis=1),
                2.0 * np.sum(diffs[0] * diffs[2], axis=1),
                2.0 * np.sum(diffs[1] * diffs[2], axis=1),
                np.sum(diffs[2] * diffs[2], axis=1),
            ],
            axis=1,
        )
        sol, *_ = np.linalg.lstsq(l, d2, rcond=None)
        b11, b12, b22, b13, b23, b33 = sol
        if b11 > 0:
            beta1 = np.sqrt(b11)
            candidates.append(
                beta1 * vs[0]
                + (b12 / beta1) * vs[1]
                + (b13 / beta1) * vs[2]
            )
    return candidates


def _pose_from_control_points(ctrl_world, ctrl_cam, alphas):
    """Absolute orientation between world points and their camera lifts."""
    pts_cam = alphas @ ctrl_cam
    if pts_cam[:, 2].mean() < 0:  # the nullspace sign is arbitrary
        pts_cam = -pts_cam
    pts_world = alphas @ ctrl_world
    cw = pts_world.mean(axis=0)
    cc = pts_cam.mean(axis=0)
    h = (pts_world - cw).T @ (pts_cam - cc)
    u, _, vt = np.linalg.svd(h)
    r = vt.T @ u.T
    if np.linalg.det(r) < 0:
        vt[-1] *= -1.0
        r = vt.T @ u.T
    t = cc - r @ cw
    return r, t


def _reprojection_residuals(points, pixels, k, r, t):
    cam = points @ r.T + t
    z = cam[:, 2]
    ok = z > 1e-9
    safe = np.where(ok, z, 1.0)
    u = k.fx * cam[:, 0] / safe + k.cx
    v = k.fy * cam[:, 1] / safe + k.cy
    res = np.stack([u - pixels[:, 0], v - pixels[:, 1]], axis=-1)
    res[~ok] = 1e6  # heavily penalize behind-camera points
    return res, cam, ok


def _gauss_newton_pose(points, pixels, k, r, t, iterations=GN_ITERATIONS):
    """Damped Gauss-Newton on reprojection error with on-manifold updates."""
    for _ in range(iterations):
        res, cam, ok = _reprojection_residuals(points, pixels, k, r, t)
        z = np.where(ok, cam[:, 2], 1.0)
        n = len(points)
        jac = np.zeros((2 * n, 6))
        d_u = np.zeros((n, 3))
        d_u[:, 0] = k.fx / z
        d_u[:, 2] = -k.fx * cam[:, 0] / z**2
        d_v = np.zeros((n, 3))
        d_v[:, 1] = k.fy / z
        d_v[:, 2] = -k.fy * cam[:, 1] / z**2
        # left perturbation: dY/d(dw) = -[Y]x, dY/d(dt) = I
        for i in range(n):
            if not ok[i]:
                continue
            dy = np.hstack([-skew(cam[i]), np.eye(3)])
            jac[2 * i] = d_u[i] @ dy
            jac[2 * i + 1] = d_v[i] @ dy
        rhs = -jac.T @ res.reshape(-1)
        normal = jac.T @ jac + GN_DAMPING * np.eye(6)
        try:
            delta = np.linalg.solve(normal, rhs)
        except np.linalg.LinAlgError:
            break
        dr = rotation_from_axis_angle(delta[:3])
        r = dr @ r
        t = dr @ t + delta[3:]
        if np.linalg.norm(delta) < 1e-14:
            break
    return project_to_rotation(r), t


def epnp_solve(points3d: np.ndarray, pixels: np.ndarray, k: Intrinsics) -> PoseSE3:
    """Camera pose from >= 4 2D-3D correspondences.

    Closed-form EPnP (4 control points, 3 for planar clouds) over up to three
    nullspace mixing cases, followed by a short damped Gauss-Newton
    refinement of the reprojection error; the returned rotation is projected
    back onto SO(3).

    Raises:
        DegenerateGeometryError: collinear/coincident points.
        BehindCameraError: every candidate places the points behind the
            camera (cheirality failure).
    """
    points3d = np.asarray(points3d, dtype=float).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if len(points3d) < 4 or len(points3d) != len(pixels):
        raise InsufficientDataError("need >= 4 matched 2D-3D correspondences")
    if not (np.all(np.isfinite(points3d)) and np.all(np.isfinite(pixels))):
        raise InvalidInputError("correspondences must be finite")

    ctrl = _control_points(points3d)
    alphas = _barycentric(points3d, ctrl)
    m = _assemble_m(alphas, pixels, k)
    _, _, vt = np.linalg.svd(m, full_matrices=True)
    null_vecs = vt[-3:][::-1]  # last three right singular vectors, best first

    best = None
    best_err = np.inf
    for ctrl_cam in _beta_candidates(null_vecs, ctrl):
        r, t = _pose_from_control_points(ctrl, ctrl_cam, alphas)
        res, _, ok = _reprojection_residuals(points3d, pixels, k, r, t)
        if not ok.any():
            continue
        err = float(np.mean(np.sum(res**2, axis=1)))
        if err < best_err:
            best_err = err
            best = (r, t)
    if best is None:
        raise BehindCameraError("all EPnP candidates fail the cheirality check")
    r, t = _gauss_newton_pose(points3d, pixels, k, *best)
    _, _, ok = _reprojection_residuals(points3d, pixels, k, r, t)
    if not ok.any():
        raise BehindCameraError("refined pose places all points behind the camera")
    return PoseSE3(r, t)


def epnp_ransac(
    points3d: np.ndarray,
    pixels: np.ndarray,
    k: Intrinsics,
    iterations: int = 200,
    inlier_px: float = 2.0,
    rng_seed: int = 0,
) -> tuple[PoseSE3, np.ndarray]:
    """RANSAC-wrapped EPnP: 4-point hypotheses, consensus refit.

    Returns the pose solved on the best inlier set and the inlier mask.
    """
    points3d = np.asarray(points3d, dtype=float).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    n = len(points3d)
    if n < 4:
        raise InsufficientDataError("need >= 4 correspondences")
    rng = np.random.default_rng(rng_seed)
    best_mask = None
    best_count = -1
    for _ in range(iterations):
        idx = rng.choice(n, size=4, replace=False)
        try:
            pose = epnp_solve(points3d[idx], pixels[idx], k)
        except (DegenerateGeometryError, BehindCameraError, np.linalg.LinAlgError):
            continue
        res, _, ok = _reprojection_residuals(points3d, pixels, k, pose.rotation, pose.translation)
        inliers = ok & (np.linalg.norm(res, axis=1) < inlier_px)
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_mask = inliers
    if best_mask is None or best_count < 4:
        raise DegenerateGeometryError("RANSAC found no usable pose hypothesis")
    pose = epnp_solve(points3d[best_mask], pixels[best_mask], k)
    return pose, best_mask


@dataclass
class GtFlowResult:
    """Dense oracle flow plus the pose and seed inliers that produced it."""

    flow: np.ndarray
    valid: np.ndarray
    pose: PoseSE3
    seed_inliers: np.ndarray


def gt_rigid_flow(
    depth_t: np.ndarray,
    seeds: SeedSet,
    k: Intrinsics,
    ransac_iterations: int = 200,
    inlier_px: float = 2.0,
    rng_seed: int = 0,
) -> GtFlowResult:
    """Compose ground-truth rigid flow from annotated depth and sparse seeds.

    Seed pixels are lifted through the depth map to 3D, the pose to the
    second view is solved by RANSAC-EPnP against the seeds' matched pixels,
    and the dense flow follows from depth and pose. Seeds falling on invalid
    depth are dropped (an error if fewer than 4 remain).
    """
    depth_t = np.asarray(depth_t, dtype=float)
    h, w = depth_t.shape
    pos = seeds.positions
    inb = (pos[:, 0] >= 0) & (pos[:, 0] < w) & (pos[:, 1] >= 0) & (pos[:, 1] < h)
    d = np.where(inb, depth_t[np.clip(pos[:, 1], 0, h - 1), np.clip(pos[:, 0], 0, w - 1)], np.nan)
    usable = inb & np.isfinite(d) & (d > 0)
    if usable.sum() < 4:
        raise InsufficientDataError("fewer than 4 seeds fall on valid depth")
    pts3d = backproject(pos[usable].astype(float), d[usable], k)
    observed = pos[usable].astype(float) + seeds.flows[usable]
    pose, inliers = epnp_ransac(
        pts3d, observed, k, iterations=ransac_iterations, inlier_px=inlier_px, rng_seed=rng_seed
    )
    flow, valid = rigid_flow(depth_t, pose, k)
    full_inliers = np.zeros(len(seeds), dtype=bool)
    full_inliers[np.nonzero(usable)[0]] = inliers
    return GtFlowResult(flow=flow, valid=valid, pose=pose, seed_inliers=full_inliers)


def flow_epe(predicted: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    """Average endpoint error over masked pixels."""
    predicted = np.asarray(predicted, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if predicted.shape != gt.shape:
        raise InvalidInputError("flow shapes differ")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != predicted.shape[:2]:
        raise InvalidInputError("mask dims do not match the flows")
    if not mask.any():
        raise UndefinedMetricError("EPE over an empty mask")
    err = np.linalg.norm(predicted - gt, axis=-1)
    return float(err[mask].mean())
