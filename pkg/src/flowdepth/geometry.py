"""Pinhole camera model, SE(3) poses, rigid flow, and rotation homographies.

Conventions used throughout the package:

* pixel coordinates are ``(x, y) = (column, row)`` with the origin at the
  top-left pixel center;
* images/depth maps are ``(H, W)`` (or ``(H, W, C)``) numpy arrays indexed
  ``[row, col]``;
* flow fields are ``(H, W, 2)`` with the last axis holding ``(u, v)``
  displacements in pixels along ``(x, y)``;
* a pose maps points from its own frame into another:
  ``X_dst = R @ X_src + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, InvalidInputError

# Transformed points with camera-frame z at or below this are masked invalid
# instead of producing infinities during perspective division.
Z_EPS = 1e-6

ROTATION_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera matrix parameters, all in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transformation: ``X_dst = rotation @ X_src + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if r.shape != (3, 3):
            raise InvalidInputError(f"rotation must be 3x3, got {r.shape}")
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err >= ROTATION_ORTHO_TOL:
            raise InvalidInputError(f"rotation is not orthonormal (max deviation {err:.3e})")
        if np.linalg.det(r) <= 0:
            raise InvalidInputError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_params(cls, omega, translation) -> "PoseSE3":
        """Build a pose from an axis-angle rotation vector and a translation."""
        return cls(rotation_from_axis_angle(omega), np.asarray(translation, dtype=float))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape ``(..., 3)``."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation


def compose_pose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """Composition ``a * b``: apply ``b`` first, then ``a``."""
    return PoseSE3(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert_pose(a: PoseSE3) -> PoseSE3:
    return PoseSE3(a.rotation.T, -a.rotation.T @ a.translation)


def relative_pose(pose_src: PoseSE3, pose_dst: PoseSE3) -> PoseSE3:
    """Pose mapping src-camera coordinates to dst-camera coordinates.

    Both arguments are world-to-camera poses of the respective views.
    """
    return compose_pose(pose_dst, invert_pose(pose_src))


# ---------------------------------------------------------------------------
# SO(3) calculus


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_from_axis_angle(omega) -> np.ndarray:
    """Rodrigues' formula; safe for the zero vector."""
    w = np.asarray(omega, dtype=float).reshape(3)
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3) + skew(w)
    k = skew(w / theta)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def axis_angle_from_rotation(r: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rotation_from_axis_angle` for angles in [0, pi)."""
    r = np.asarray(r, dtype=float)
    cos_theta = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-9:
        return np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / 2.0
    if np.pi - theta < 1e-6:
        # near pi the antisymmetric part degenerates; recover the axis from
        # the symmetric part R + I = 2(aa^T) ... choose the largest diagonal
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(m), 0.0, None))
        k = int(np.argmax(axis))
        if axis[k] > 0:
            axis = m[:, k] / axis[k]
            n = np.linalg.norm(axis)
            if n > 0:
                return theta * axis / n
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return theta * axis / (2.0 * np.sin(theta))


def rotation_jacobian_axis_angle(omega) -> np.ndarray:
    """Derivatives of the rotation matrix with respect to its axis-angle vector.

    Returns a ``(3, 3, 3)`` array ``J`` with ``J[i] = dR/d omega_i`` evaluated
    at ``omega`` (closed form; reduces to the generator matrices at zero).
    """
    w = np.asarray(omega, dtype=float).reshape(3)
    theta2 = float(w @ w)
    r = rotation_from_axis_angle(w)
    jac = np.empty((3, 3, 3))
    if theta2 < 1e-16:
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1.0
            jac[i] = skew(e)
        return jac
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        term = w[i] * skew(w) + skew(np.cross(w, (np.eye(3) - r) @ e))
        jac[i] = (term / theta2) @ r
    return jac


def project_to_rotation(m: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar decomposition)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1.0
        r = u @ vt
    return r


# ---------------------------------------------------------------------------
# Projection


def pixel_grid(height: int, width: int) -> np.ndarray:
    """``(H, W, 2)`` array of pixel-center coordinates ``(x, y)``."""
    xs = np.arange(width, dtype=float)
    ys = np.arange(height, dtype=float)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def backproject(p, d, k: Intrinsics) -> np.ndarray:
    """Lift pixel coordinates to 3D camera-frame points at the given depth.

    ``p`` has shape ``(..., 2)``; ``d`` broadcasts against ``p[..., 0]``.
    """
    p = np.asarray(p, dtype=float)
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise InvalidInputError("depth must be positive")
    x = (p[..., 0] - k.cx) / k.fx
    y = (p[..., 1] - k.cy) / k.fy
    return np.stack([d * x, d * y, d * np.ones_like(x)], axis=-1)


def project(x, k: Intrinsics) -> np.ndarray:
    """Perspective projection of camera-frame points ``(..., 3)`` to pixels."""
    x = np.asarray(x, dtype=float)
    z = x[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("cannot project points with non-positive z")
    return np.stack([k.fx * x[..., 0] / z + k.cx, k.fy * x[..., 1] / z + k.cy], axis=-1)


def camera_rays(height: int, width: int, k: Intrinsics) -> np.ndarray:
    """Unnormalised rays ``K^-1 [x, y, 1]`` for every pixel, ``(H, W, 3)``."""
    grid = pixel_grid(height, width)
    rx = (grid[..., 0] - k.cx) / k.fx
    ry = (grid[..., 1] - k.cy) / k.fy
    return np.stack([rx, ry, np.ones_like(rx)], axis=-1)


def rigid_flow(depth: np.ndarray, pose: PoseSE3, k: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Dense 2D displacement induced by camera motion over a static scene.

    Each pixel is lifted to 3D with its depth, transformed by ``pose`` and
    reprojected; the flow is the pixel displacement. Pixels whose transformed
    depth is at or below ``Z_EPS`` are flagged invalid (flow set to zero)
    rather than producing infinities.

    Args:
        depth: ``(H, W)`` positive depth map of the source view of ``pose``.
        pose: transformation from the depth map's camera to the other view.
        k: shared camera intrinsics.

    Returns:
        ``(flow, valid)`` with shapes ``(H, W, 2)`` and ``(H, W)``.
    """
    depth = np.asarray(depth, dtype=float)
    if depth.ndim != 2:
        raise InvalidInputError(f"depth must be 2-D, got shape {depth.shape}")
    if not np.all(np.isfinite(depth)) or np.any(depth <= 0):
        raise InvalidInputError("depth values must be finite and positive")
    h, w = depth.shape
    rays = camera_rays(h, w, k)
    pts = depth[..., None] * rays
    # delta formulation: exact zeros for the identity pose and no
    # catastrophic cancellation for small motions
    delta = pts @ (pose.rotation - np.eye(3)).T + pose.translation
    z = depth + delta[..., 2]
    valid = z > Z_EPS
    z_safe = np.where(valid, z, 1.0)
    u = k.fx * (delta[..., 0] - rays[..., 0] * delta[..., 2]) / z_safe
    v = k.fy * (delta[..., 1] - rays[..., 1] * delta[..., 2]) / z_safe
    flow = np.stack([u, v], axis=-1)
    flow[~valid] = 0.0
    return flow, valid


def rigid_flow_from_params(depth, omega, translation, k: Intrinsics):
    """:func:`rigid_flow` with the pose given as axis-angle + translation."""
    return rigid_flow(depth, PoseSE3.from_params(omega, translation), k)


def rigid_flow_vjp(depth, omega, translation, k: Intrinsics, upstream):
    """Backpropagate a flow adjoint onto depth and pose parameters.

    Args:
        depth: ``(H, W)`` depth map (same as in the forward call).
        omega, translation: axis-angle/translation pose parameters.
        k: intrinsics.
        upstream: ``(H, W, 2)`` adjoint of the flow returned by
            :func:`rigid_flow_from_params`.

    Returns:
        ``(g_depth, g_omega, g_translation)``; contributions from pixels that
        the forward pass masked invalid are zero.
    """
    depth = np.asarray(depth, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    h, w = depth.shape
    rot = rotation_from_axis_angle(omega)
    t = np.asarray(translation, dtype=float).reshape(3)
    rays = camera_rays(h, w, k)
    pts = depth[..., None] * rays
    moved = pts @ rot.T + t
    z = moved[..., 2]
    valid = z > Z_EPS
    z_safe = np.where(valid, z, 1.0)

    gu = np.where(valid, upstream[..., 0], 0.0)
    gv = np.where(valid, upstream[..., 1], 0.0)
    # adjoint of the transformed point Y through u = fx*Yx/Yz + cx, etc.
    g_moved = np.empty((h, w, 3))
    g_moved[..., 0] = gu * k.fx / z_safe
    g_moved[..., 1] = gv * k.fy / z_safe
    g_moved[..., 2] = -(gu * k.fx * moved[..., 0] + gv * k.fy * moved[..., 1]) / z_safe**2
    g_moved[~valid] = 0.0

    rot_rays = rays @ rot.T  # dY/d depth per pixel
    g_depth = np.einsum("hwc,hwc->hw", g_moved, rot_rays)
    g_t = g_moved.reshape(-1, 3).sum(axis=0)
    jac = rotation_jacobian_axis_angle(omega)
    g_omega = np.array(
        [np.einsum("hwc,hwc->", g_moved, pts @ jac[i].T) for i in range(3)]
    )
    return g_depth, g_omega, g_t


def homography_from_rotation(r: np.ndarray, k: Intrinsics) -> np.ndarray:
    """Homography ``K R K^-1`` induced by a pure rotation, scaled to H[2,2]=1."""
    r = np.asarray(r, dtype=float)
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err >= 1e-8:
        raise InvalidInputError(f"rotation is not orthonormal (max deviation {err:.3e})")
    h = k.matrix @ r @ k.inverse_matrix
    if abs(h[2, 2]) > 1e-12:
        h = h / h[2, 2]
    return h


def apply_homography(h: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Apply a homography to pixels of shape ``(..., 2)``."""
    p = np.asarray(p, dtype=float)
    ones = np.ones(p.shape[:-1] + (1,))
    q = np.concatenate([p, ones], axis=-1) @ np.asarray(h, dtype=float).T
    return q[..., :2] / q[..., 2:3]
