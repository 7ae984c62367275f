"""Synthetic indoor-scene generator with exact ground truth.

Scenes are collections of textured rectangles (walls, panels, box faces)
rendered by per-pixel ray casting under two camera poses. Because the
textures are continuous functions of the surface and the shading is
Lambertian with no lighting variation, brightness constancy holds exactly
and every label (depth, relative pose, dense flow, occlusion and
blank-texture masks) is computed analytically rather than estimated.

Presets cover the problem taxonomy the pipeline targets: texture-rich
multi-depth scenes, scenes with 40%/70% blank coverage, pure-rotation
pairs, and a mixed set for end-to-end filtering runs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .geometry import Intrinsics, PoseSE3, camera_rays, relative_pose, rotation_from_axis_angle
from . import fileio

PRESETS = ("texture-rich", "low-texture-40", "low-texture-70", "pure-rotation", "mixed")

DEFAULT_WIDTH = 80
DEFAULT_HEIGHT = 64
DEFAULT_INTRINSICS = Intrinsics(fx=70.0, fy=70.0, cx=(DEFAULT_WIDTH - 1) / 2, cy=(DEFAULT_HEIGHT - 1) / 2)

OCCLUSION_TOL = 1e-4


@dataclass(frozen=True)
class Texture:
    kind: str  # "checker" | "noise" | "blank"
    grid: np.ndarray  # (Th, Tw) albedo values in [0, 1]


def checker_texture(cells: int = 8, resolution: int = 8, albedo=(0.2, 0.85)) -> Texture:
    """Checkerboard materialized on a grid (bilinear lookup softens edges)."""
    n = cells * resolution
    ys, xs = np.mgrid[0:n, 0:n]
    grid = np.where(((ys // resolution) + (xs // resolution)) % 2 == 0, albedo[0], albedo[1])
    return Texture("checker", grid.astype(float))


def noise_texture(rng: np.random.Generator, resolution: int = 24, lo: float = 0.1, hi: float = 0.9) -> Texture:
    return Texture("noise", rng.uniform(lo, hi, (resolution, resolution)))


def blank_texture(albedo: float = 0.5) -> Texture:
    return Texture("blank", np.full((1, 1), float(albedo)))


@dataclass(frozen=True)
class Rect:
    """Textured parallelogram: origin corner plus two edge vectors."""

    origin: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    texture: Texture

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.edge_u, self.edge_v)
        return n / np.linalg.norm(n)


@dataclass
class SceneSpec:
    """Geometry, textures and the camera pair of one synthetic sample."""

    rects: list[Rect]
    intrinsics: Intrinsics = DEFAULT_INTRINSICS
    pose_a: PoseSE3 = None  # world -> target camera
    pose_b: PoseSE3 = None  # world -> source camera
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT

    def __post_init__(self):
        if self.pose_a is None:
            self.pose_a = PoseSE3.identity()
        if self.pose_b is None:
            self.pose_b = PoseSE3.identity()
        if not self.rects:
            raise InvalidInputError("scene needs at least one surface")


@dataclass
class RenderResult:
    image_a: np.ndarray
    image_b: np.ndarray
    depth_a: np.ndarray
    depth_b: np.ndarray
    pose_rel: PoseSE3  # target (a) to source (b)
    flow: np.ndarray  # ground-truth flow a -> b
    flow_valid: np.ndarray
    occlusion: np.ndarray  # a-pixels whose surface point is hidden in b
    blank_mask: np.ndarray  # a-pixels on blank-textured surfaces


def _sample_texture(tex: Texture, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    grid = tex.grid
    th, tw = grid.shape
    if th == 1 and tw == 1:
        return np.full(s.shape, grid[0, 0])
    x = np.clip(s, 0.0, 1.0) * (tw - 1)
    y = np.clip(t, 0.0, 1.0) * (th - 1)
    x0 = np.clip(np.floor(x).astype(int), 0, tw - 2)
    y0 = np.clip(np.floor(y).astype(int), 0, th - 2)
    wx = x - x0
    wy = y - y0
    top = grid[y0, x0] * (1 - wx) + grid[y0, x0 + 1] * wx
    bot = grid[y0 + 1, x0] * (1 - wx) + grid[y0 + 1, x0 + 1] * wx
    return top * (1 - wy) + bot * wy


def _raycast(origin: np.ndarray, dirs: np.ndarray, rects: list[Rect]):
    """Nearest-surface intersection for a bundle of world-frame rays.

    Returns ``(t, rect_index, s, u)`` where ``t`` is the ray parameter
    (``inf`` for misses) and ``(s, u)`` the in-rectangle coordinates.
    """
    shape = dirs.shape[:-1]
    best_t = np.full(shape, np.inf)
    best_idx = np.full(shape, -1, dtype=int)
    best_s = np.zeros(shape)
    best_u = np.zeros(shape)
    for i, rect in enumerate(rects):
        n = np.cross(rect.edge_u, rect.edge_v)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((rect.origin - origin) @ n) / denom
        hit = origin + t[..., None] * dirs - rect.origin
        uu = float(rect.edge_u @ rect.edge_u)
        vv = float(rect.edge_v @ rect.edge_v)
        uv = float(rect.edge_u @ rect.edge_v)
        hu = hit @ rect.edge_u
        hv = hit @ rect.edge_v
        det = uu * vv - uv * uv
        s = (hu * vv - hv * uv) / det
        u = (hv * uu - hu * uv) / det
        ok = (
            np.isfinite(t)
            & (np.abs(denom) > 1e-12)
            & (t > 1e-6)
            & (s >= -1e-9)
            & (s <= 1 + 1e-9)
            & (u >= -1e-9)
            & (u <= 1 + 1e-9)
            & (t < best_t)
        )
        best_t = np.where(ok, t, best_t)
        best_idx = np.where(ok, i, best_idx)
        best_s = np.where(ok, s, best_s)
        best_u = np.where(ok, u, best_u)
    return best_t, best_idx, best_s, best_u


def _render_view(spec: SceneSpec, pose: PoseSE3):
    """Image, depth and per-pixel rect index for one camera."""
    dirs_cam = camera_rays(spec.height, spec.width, spec.intrinsics)
    center = -pose.rotation.T @ pose.translation
    dirs_world = dirs_cam @ pose.rotation  # R^T applied to each ray
    t, idx, s, u = _raycast(center, dirs_world, spec.rects)
    if np.any(~np.isfinite(t)):
        raise InvalidInputError("scene does not cover the full image plane")
    image = np.zeros((spec.height, spec.width))
    for i, rect in enumerate(spec.rects):
        sel = idx == i
        if sel.any():
            image[sel] = _sample_texture(rect.texture, s[sel], u[sel])
    return image, t, idx  # camera depth equals the ray parameter (unit-z rays)


def render(spec: SceneSpec) -> RenderResult:
    """Render the camera pair of a scene with exact labels.

    Ground-truth flow projects every target-view surface point into the
    source view; occlusion is decided by re-casting the source-view ray at
    the projected (continuous) pixel and comparing hit depths.
    """
    k = spec.intrinsics
    image_a, depth_a, idx_a = _render_view(spec, spec.pose_a)
    image_b, depth_b, _ = _render_view(spec, spec.pose_b)
    pose_rel = relative_pose(spec.pose_a, spec.pose_b)

    dirs_cam = camera_rays(spec.height, spec.width, k)
    pts_a = depth_a[..., None] * dirs_cam
    pts_b = pts_a @ pose_rel.rotation.T + pose_rel.translation
    z_b = pts_b[..., 2]
    flow_valid = z_b > 1e-6
    z_safe = np.where(flow_valid, z_b, 1.0)
    proj = np.stack(
        [k.fx * pts_b[..., 0] / z_safe + k.cx, k.fy * pts_b[..., 1] / z_safe + k.cy],
        axis=-1,
    )
    # subtract the reprojection of the target-view point (not the raw grid)
    # so the identity pose yields exact zeros
    reproj_a = np.stack(
        [
            k.fx * pts_a[..., 0] / depth_a + k.cx,
            k.fy * pts_a[..., 1] / depth_a + k.cy,
        ],
        axis=-1,
    )
    flow = np.where(flow_valid[..., None], proj - reproj_a, 0.0)

    # occlusion: cast the source-view ray through each projected pixel
    center_b = -spec.pose_b.rotation.T @ spec.pose_b.translation
    dirs_b_cam = np.concatenate(
        [
            (proj[..., 0:1] - k.cx) / k.fx,
            (proj[..., 1:2] - k.cy) / k.fy,
            np.ones(proj.shape[:-1] + (1,)),
        ],
        axis=-1,
    )
    dirs_b_world = dirs_b_cam @ spec.pose_b.rotation
    t_hit, _, _, _ = _raycast(center_b, dirs_b_world, spec.rects)
    occlusion = flow_valid & np.isfinite(t_hit) & (t_hit < z_b - OCCLUSION_TOL)

    blank = np.zeros(idx_a.shape, dtype=bool)
    for i, rect in enumerate(spec.rects):
        if rect.texture.kind == "blank":
            blank |= idx_a == i
    return RenderResult(
        image_a=image_a,
        image_b=image_b,
        depth_a=depth_a,
        depth_b=depth_b,
        pose_rel=pose_rel,
        flow=flow,
        flow_valid=flow_valid,
        occlusion=occlusion,
        blank_mask=blank,
    )


# ---------------------------------------------------------------------------
# scene recipes


def _fronto_rect(z: float, half_w: float, half_h: float, texture: Texture, cx: float = 0.0, cy: float = 0.0) -> Rect:
    return Rect(
        origin=np.array([cx - half_w, cy - half_h, z]),
        edge_u=np.array([2 * half_w, 0.0, 0.0]),
        edge_v=np.array([0.0, 2 * half_h, 0.0]),
        texture=texture,
    )


def _sample_motion(rng: np.random.Generator, family: str) -> PoseSE3:
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    if family == "rotation":
        angle = rng.uniform(0.017, 0.044)  # 1 to 2.5 degrees
        return PoseSE3(rotation_from_axis_angle(angle * axis), np.zeros(3))
    if family != "translation":
        raise InvalidInputError(f"unknown motion family {family!r}")
    angle = rng.uniform(0.0, 0.017)
    direction = rng.standard_normal(3) * np.array([1.0, 0.8, 0.7])
    direction /= np.linalg.norm(direction)
    magnitude = rng.uniform(0.18, 0.28)  # >= 6% of the <= 3 unit mean depth
    return PoseSE3(rotation_from_axis_angle(angle * axis), magnitude * direction)


def _wall(rng: np.random.Generator, z: float = 3.4) -> Rect:
    # 6 cells across 5.6 units project to ~19 px, keeping the checker's
    # diagonal period outside the seed matcher's search radius
    tex = checker_texture(cells=6, resolution=10) if rng.uniform() < 0.5 else noise_texture(rng, resolution=40)
    return _fronto_rect(z, 2.8, 2.3, tex)


def _texture_rich_scene(rng: np.random.Generator, motion: str) -> SceneSpec:
    # near panels at three distinct depths: under any real baseline their
    # flows disagree with the wall (and each other) by well over the
    # homography inlier threshold, so only genuine rotations filter out
    rects = [_wall(rng)]
    k = DEFAULT_INTRINSICS
    placements = [
        (rng.uniform(1.40, 1.60), -rng.uniform(16, 22), rng.uniform(-8, 8)),
        (rng.uniform(1.65, 1.85), rng.uniform(16, 22), rng.uniform(-8, 8)),
        (rng.uniform(1.50, 1.90), rng.uniform(-10, 10), rng.uniform(12, 17) * rng.choice([-1, 1])),
    ]
    for z, px_off, py_off in placements:
        half = rng.uniform(0.30, 0.38)
        tex = noise_texture(rng, resolution=16)
        rects.append(
            _fronto_rect(z, half, half, tex, cx=px_off * z / k.fx, cy=py_off * z / k.fy)
        )
    return SceneSpec(rects=rects, pose_b=_sample_motion(rng, motion))


def _low_texture_scene(rng: np.random.Generator, coverage: float, motion: str = "translation") -> SceneSpec:
    z = 3.4
    wall = _wall(rng, z)
    frac = np.sqrt(coverage)
    half_w = frac * DEFAULT_WIDTH / 2 * z / DEFAULT_INTRINSICS.fx
    half_h = frac * DEFAULT_HEIGHT / 2 * z / DEFAULT_INTRINSICS.fy
    panel = _fronto_rect(z - 1e-3, half_w, half_h, blank_texture(rng.uniform(0.35, 0.65)))
    return SceneSpec(rects=[wall, panel], pose_b=_sample_motion(rng, motion))


def two_plane_scene(rng: np.random.Generator, z_near: float = 2.2, z_far: float = 3.2) -> SceneSpec:
    """Two textured fronto-parallel half-planes; the depth-recovery oracle scene."""
    split = rng.uniform(-0.15, 0.15)
    near = Rect(
        origin=np.array([-2.2, -1.8, z_near]),
        edge_u=np.array([2.2 + split * z_near / 3.0, 0.0, 0.0]),
        edge_v=np.array([0.0, 3.6, 0.0]),
        texture=noise_texture(rng, resolution=28),
    )
    far = _fronto_rect(z_far, 2.8, 2.3, checker_texture(cells=10, resolution=6))
    return SceneSpec(rects=[far, near], pose_b=_sample_motion(rng, "translation"))


def build_scene(preset: str, rng: np.random.Generator) -> tuple[SceneSpec, str]:
    """Scene plus its motion-family label for one corpus sample."""
    if preset == "texture-rich":
        return _texture_rich_scene(rng, "translation"), "translation"
    if preset == "low-texture-40":
        return _low_texture_scene(rng, 0.40), "translation"
    if preset == "low-texture-70":
        return _low_texture_scene(rng, 0.70), "translation"
    if preset == "pure-rotation":
        return _texture_rich_scene(rng, "rotation"), "rotation"
    if preset == "mixed":
        family = "rotation" if rng.uniform() < 0.3 else "translation"
        return _texture_rich_scene(rng, family), family
    raise InvalidInputError(f"unknown preset {preset!r}; choose from {PRESETS}")


def corpus(preset: str, n: int, out_dir, rng_seed: int = 0) -> Path:
    """Generate ``n`` labeled samples on disk and return the manifest path.

    Layout: one directory per sample holding 8-bit PGM images, PFM depths,
    the ground-truth ``.flo`` flow, the relative pose, intrinsics, and the
    blank/occlusion masks; plus a ``manifest.csv`` indexing the samples.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(n):
        rng = np.random.default_rng([rng_seed, i])
        spec, family = build_scene(preset, rng)
        result = render(spec)
        sample = out_dir / f"pair_{i:04d}"
        sample.mkdir(exist_ok=True)
        fileio.write_pgm(sample / "img_a.pgm", fileio.image_to_u8(result.image_a))
        fileio.write_pgm(sample / "img_b.pgm", fileio.image_to_u8(result.image_b))
        fileio.write_pfm(sample / "depth_a.pfm", result.depth_a.astype(np.float32))
        fileio.write_pfm(sample / "depth_b.pfm", result.depth_b.astype(np.float32))
        fileio.write_flo(sample / "flow.flo", result.flow)
        fileio.write_poses(sample / "pose.txt", [result.pose_rel])
        fileio.write_intrinsics(sample / "intrinsics.txt", spec.intrinsics)
        fileio.write_pgm(sample / "blank_mask.pgm", result.blank_mask.astype(np.uint8) * 255)
        fileio.write_pgm(sample / "occlusion.pgm", result.occlusion.astype(np.uint8) * 255)
        blank_fraction = float(result.blank_mask.mean())
        rows.append((f"pair_{i:04d}", sample.name, family, f"{blank_fraction:.6f}"))
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["pair_id", "dir", "motion", "blank_fraction"])
        writer.writerows(rows)
    return manifest


def read_manifest(path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
