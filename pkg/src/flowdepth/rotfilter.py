"""Pure-rotation detection: a camera motion with zero baseline induces a flow
that a single homography explains everywhere, so image pairs whose dense
flow is fitted by RANSAC with a low outlier ratio carry no depth signal and
are discarded from training sets.

Static (near-zero-flow) pairs are homography-consistent as well and are
discarded alongside pure rotations.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateGeometryError, InsufficientDataError, InvalidInputError
from . import fileio

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 500
    inlier_px: float = 3.0
    min_outlier_ratio: float = 0.20
    rng_seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidInputError("iterations must be >= 1")
        if not self.inlier_px > 0:
            raise InvalidInputError("inlier_px must be positive")
        if not 0.0 < self.min_outlier_ratio < 1.0:
            raise InvalidInputError("min_outlier_ratio must lie in (0, 1)")


@dataclass(frozen=True)
class RotationVerdict:
    is_pure_rotation: bool
    outlier_ratio: float
    best_h: np.ndarray


def _normalization(points: np.ndarray) -> np.ndarray:
    """Hartley similarity: centroid to origin, mean distance sqrt(2)."""
    centroid = points.mean(axis=0)
    dist = np.linalg.norm(points - centroid, axis=1).mean()
    s = np.sqrt(2.0) / max(dist, 1e-12)
    return np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )


def _to_h(points: np.ndarray) -> np.ndarray:
    return np.hstack([points, np.ones((len(points), 1))])


def dlt_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Normalized direct linear transform from >= 4 point pairs.

    Both point sets are Hartley-normalized, the homography is the null vector
    of the stacked 2N x 9 system, and the result is denormalized and scaled
    to unit bottom-right entry.

    Raises:
        DegenerateGeometryError: the configuration does not determine a
            homography (e.g. collinear points).
    """
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if len(src) < 4 or len(src) != len(dst):
        raise InvalidInputError("need >= 4 matching point pairs")
    t_src = _normalization(src)
    t_dst = _normalization(dst)
    sn = (_to_h(src) @ t_src.T)[:, :2]
    dn = (_to_h(dst) @ t_dst.T)[:, :2]
    n = len(sn)
    a = np.zeros((2 * n, 9))
    x, y = sn[:, 0], sn[:, 1]
    u, v = dn[:, 0], dn[:, 1]
    a[0::2, 0] = x
    a[0::2, 1] = y
    a[0::2, 2] = 1.0
    a[0::2, 6] = -u * x
    a[0::2, 7] = -u * y
    a[0::2, 8] = -u
    a[1::2, 3] = x
    a[1::2, 4] = y
    a[1::2, 5] = 1.0
    a[1::2, 6] = -v * x
    a[1::2, 7] = -v * y
    a[1::2, 8] = -v
    _, sv, vt = np.linalg.svd(a)
    if sv[7] < 1e-10 * max(sv[0], 1e-300):
        raise DegenerateGeometryError("point configuration is rank-deficient")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ hn @ t_src
    if abs(h[2, 2]) < 1e-12:
        raise DegenerateGeometryError("homography normalization failed")
    return h / h[2, 2]


def symmetric_transfer_error(h: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Forward plus backward reprojection distance per correspondence.

    A (near-)singular homography yields infinite errors instead of raising,
    so degenerate RANSAC hypotheses simply score zero inliers.
    """
    if abs(np.linalg.det(h)) < 1e-12:
        return np.full(len(src), np.inf)
    h_inv = np.linalg.inv(h)
    fwd = _to_h(src) @ h.T
    bwd = _to_h(dst) @ h_inv.T
    with np.errstate(divide="ignore", invalid="ignore"):
        fwd = fwd[:, :2] / fwd[:, 2:3]
        bwd = bwd[:, :2] / bwd[:, 2:3]
    err = np.linalg.norm(fwd - dst, axis=1) + np.linalg.norm(bwd - src, axis=1)
    return np.where(np.isfinite(err), err, np.inf)


def flow_correspondences(flow: np.ndarray, sample_stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Grid-sampled (p, p + flow(p)) pairs used for homography fitting."""
    flow = np.asarray(flow, dtype=float)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise InvalidInputError("flow must be (H, W, 2)")
    h, w = flow.shape[:2]
    ys = np.arange(0, h, sample_stride)
    xs = np.arange(0, w, sample_stride)
    gx, gy = np.meshgrid(xs.astype(float), ys.astype(float))
    src = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    disp = flow[ys][:, xs].reshape(-1, 2)
    return src, src + disp


def ransac_homography(flow: np.ndarray, sample_stride: int = 8, cfg: RansacConfig = RansacConfig()) -> RotationVerdict:
    """Classify a flow field as pure rotation via RANSAC homography fitting.

    Correspondences are taken on a stride grid; the model with the most
    inliers (symmetric transfer error below ``cfg.inlier_px``) wins and the
    pair is declared pure rotation when the resulting outlier ratio is below
    ``cfg.min_outlier_ratio``. Deterministic for a fixed ``rng_seed``; the
    iteration count is fixed (no adaptive early exit) so the inlier set can
    only grow with the threshold.
    """
    src, dst = flow_correspondences(flow, sample_stride)
    n = len(src)
    if n < 4:
        raise InsufficientDataError(f"only {n} grid correspondences; need >= 4")
    rng = np.random.default_rng(cfg.rng_seed)
    best_count = -1
    best_h = np.eye(3)
    for _ in range(cfg.iterations):
        idx = rng.choice(n, size=4, replace=False)
        try:
            h = dlt_homography(src[idx], dst[idx])
        except DegenerateGeometryError:
            continue
        count = int(np.count_nonzero(symmetric_transfer_error(h, src, dst) < cfg.inlier_px))
        if count > best_count:
            best_count = count
            best_h = h
    if best_count < 0:
        raise DegenerateGeometryError("no valid homography hypothesis found")
    outlier_ratio = 1.0 - best_count / n
    return RotationVerdict(
        is_pure_rotation=outlier_ratio < cfg.min_outlier_ratio,
        outlier_ratio=outlier_ratio,
        best_h=best_h,
    )


# ---------------------------------------------------------------------------
# manifest filtering


@dataclass
class PairVerdict:
    pair_id: str
    flow_path: str
    outlier_ratio: float | None
    verdict: str  # "keep", "discard" or "error"
    error: str | None = None


@dataclass
class FilterReport:
    entries: list[PairVerdict]
    discard_fraction: float | None  # None when no pair could be judged


def filter_sequence(
    pair_manifest: list[tuple[str, str]],
    cfg: RansacConfig = RansacConfig(),
    sample_stride: int = 8,
) -> FilterReport:
    """Run the pure-rotation verdict over a list of (pair_id, flow_path).

    Unreadable or malformed flow files are recorded as per-entry errors and
    processing continues; the discard fraction is over judged pairs only.
    """
    entries = []
    judged = 0
    discarded = 0
    for pair_id, flow_path in pair_manifest:
        try:
            flow = fileio.read_flo(flow_path)
            verdict = ransac_homography(flow, sample_stride, cfg)
        except Exception as exc:  # per-entry isolation
            logger.warning("pair %s failed: %s", pair_id, exc)
            entries.append(PairVerdict(pair_id, str(flow_path), None, "error", str(exc)))
            continue
        judged += 1
        discarded += int(verdict.is_pure_rotation)
        entries.append(
            PairVerdict(
                pair_id,
                str(flow_path),
                verdict.outlier_ratio,
                "discard" if verdict.is_pure_rotation else "keep",
            )
        )
    fraction = discarded / judged if judged else None
    return FilterReport(entries=entries, discard_fraction=fraction)


def write_verdicts(path, report: FilterReport) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["pair_id", "flow_path", "outlier_ratio", "verdict"])
        for e in report.entries:
            ratio = "" if e.outlier_ratio is None else f"{e.outlier_ratio:.6f}"
            writer.writerow([e.pair_id, e.flow_path, ratio, e.verdict])


def read_verdicts(path) -> FilterReport:
    entries = []
    judged = 0
    discarded = 0
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            ratio = float(row["outlier_ratio"]) if row["outlier_ratio"] else None
            entries.append(PairVerdict(row["pair_id"], row["flow_path"], ratio, row["verdict"]))
            if row["verdict"] in ("keep", "discard"):
                judged += 1
                discarded += int(row["verdict"] == "discard")
    return FilterReport(entries=entries, discard_fraction=discarded / judged if judged else None)
