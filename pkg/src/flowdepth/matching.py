"""Sparse correspondence generation: Harris corners matched by zero-mean
normalized cross-correlation over an integer displacement search, producing
the initial flow seeds for sparse-to-dense propagation.

Integer-displacement ZNCC is sufficient for small-baseline pairs and keeps
the module dependency-free; seeds can also be imported from text files for
externally matched data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .errors import InvalidInputError

HARRIS_K = 0.04
NMS_RADIUS = 5

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 8.0
SOBEL_Y = SOBEL_X.T


@dataclass(frozen=True)
class SeedSet:
    """Sparse pixel correspondences: integer positions plus flow vectors.

    ``positions`` is ``(N, 2)`` integer ``(x, y)``; ``flows`` is ``(N, 2)``
    float ``(u, v)``. Positions are unique.
    """

    positions: np.ndarray
    flows: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=int).reshape(-1, 2)
        flo = np.asarray(self.flows, dtype=float).reshape(-1, 2)
        if pos.shape != flo.shape:
            raise InvalidInputError("positions and flows must have matching shapes")
        if len(pos) != len(np.unique(pos, axis=0)):
            raise InvalidInputError("seed positions must be unique")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "flows", flo)

    def __len__(self) -> int:
        return len(self.positions)

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        """Boolean (H, W) indicator of seeded pixels."""
        m = np.zeros(shape, dtype=bool)
        if len(self):
            m[self.positions[:, 1], self.positions[:, 0]] = True
        return m

    def flow_map(self, shape: tuple[int, int]) -> np.ndarray:
        """(H, W, 2) sparse flow with zeros at unseeded pixels."""
        f = np.zeros(shape + (2,))
        if len(self):
            f[self.positions[:, 1], self.positions[:, 0]] = self.flows
        return f

    def in_bounds(self, shape: tuple[int, int]) -> bool:
        if not len(self):
            return True
        h, w = shape
        p = self.positions
        q = p + self.flows
        return bool(
            np.all((p[:, 0] >= 0) & (p[:, 0] < w) & (p[:, 1] >= 0) & (p[:, 1] < h))
            and np.all((q[:, 0] >= 0) & (q[:, 0] <= w - 1) & (q[:, 1] >= 0) & (q[:, 1] <= h - 1))
        )


def detect_corners(img: np.ndarray, max_count: int = 200, quality: float = 0.01) -> np.ndarray:
    """Harris corners with non-maximum suppression.

    Gradients come from 3x3 Sobel kernels, the structure tensor is averaged
    over a 3x3 window, and peaks within ``NMS_RADIUS`` of a stronger response
    are suppressed. Corners weaker than ``quality`` times the strongest
    response are dropped; at most ``max_count`` corners are returned,
    strongest first, as an ``(N, 2)`` integer ``(x, y)`` array.
    """
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise InvalidInputError("corner detection expects a grayscale image")
    ix = ndimage.convolve(img, SOBEL_X, mode="nearest")
    iy = ndimage.convolve(img, SOBEL_Y, mode="nearest")
    sxx = ndimage.uniform_filter(ix * ix, size=3, mode="nearest")
    syy = ndimage.uniform_filter(iy * iy, size=3, mode="nearest")
    sxy = ndimage.uniform_filter(ix * iy, size=3, mode="nearest")
    response = sxx * syy - sxy**2 - HARRIS_K * (sxx + syy) ** 2

    peak = response.max()
    if peak <= 0:
        return np.zeros((0, 2), dtype=int)
    local_max = response >= ndimage.maximum_filter(response, size=2 * NMS_RADIUS + 1, mode="nearest")
    candidates = local_max & (response >= quality * peak) & (response > 0)
    ys, xs = np.nonzero(candidates)
    order = np.lexsort((xs, ys, -response[ys, xs]))
    xs, ys = xs[order][:max_count], ys[order][:max_count]
    return np.stack([xs, ys], axis=-1).astype(int)


def _zncc_scores(patch_a: np.ndarray, windows_b: np.ndarray) -> np.ndarray:
    """ZNCC of one patch against a (D, D, p, p) stack of candidate windows."""
    a = patch_a - patch_a.mean()
    na = np.sqrt(np.sum(a * a))
    b = windows_b - windows_b.mean(axis=(-2, -1), keepdims=True)
    nb = np.sqrt(np.sum(b * b, axis=(-2, -1)))
    denom = na * nb
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = np.sum(b * a, axis=(-2, -1)) / denom
    scores[~np.isfinite(scores)] = -np.inf
    return scores


def match_seeds(
    a: np.ndarray,
    b: np.ndarray,
    corners: np.ndarray,
    patch: int = 7,
    search_radius: int = 16,
    min_score: float = 0.8,
    min_margin: float = 0.05,
) -> SeedSet:
    """Match corners from image ``a`` into image ``b`` by integer-step ZNCC.

    For each corner the ZNCC score is evaluated over all integer
    displacements within ``search_radius``; the best displacement is kept
    when its score reaches ``min_score`` and exceeds the runner-up (outside
    the immediate 3x3 neighborhood of the peak, which would otherwise always
    be close) by ``min_margin``. Unmatched and ambiguous corners are dropped.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2:
        raise InvalidInputError("images must be grayscale with identical shapes")
    if patch < 5 or patch % 2 == 0:
        raise InvalidInputError("patch must be an odd integer >= 5")
    h, w = a.shape
    half = patch // 2
    reach = half + search_radius
    positions = []
    flows = []
    for x, y in np.asarray(corners, dtype=int):
        if x - half < 0 or x + half >= w or y - half < 0 or y + half >= h:
            continue
        patch_a = a[y - half : y + half + 1, x - half : x + half + 1]
        if patch_a.std() < 1e-12:
            continue
        y0, y1 = y - reach, y + reach + 1
        x0, x1 = x - reach, x + reach + 1
        if y0 < 0 or x0 < 0 or y1 > h or x1 > w:
            # shrink the search to stay inside image b
            lo_dy = max(y0, 0) - y0
            lo_dx = max(x0, 0) - x0
            region = b[max(y0, 0) : min(y1, h), max(x0, 0) : min(x1, w)]
            if region.shape[0] < patch or region.shape[1] < patch:
                continue
            windows = sliding_window_view(region, (patch, patch))
            off_y, off_x = lo_dy - search_radius, lo_dx - search_radius
        else:
            windows = sliding_window_view(b[y0:y1, x0:x1], (patch, patch))
            off_y = off_x = -search_radius
        scores = _zncc_scores(patch_a, windows)
        best_flat = int(np.argmax(scores))
        best = scores.reshape(-1)[best_flat]
        if not np.isfinite(best) or best < min_score:
            continue
        by, bx = np.unravel_index(best_flat, scores.shape)
        masked = scores.copy()
        masked[max(by - 1, 0) : by + 2, max(bx - 1, 0) : bx + 2] = -np.inf
        second = masked.max()
        if np.isfinite(second) and best - second < min_margin:
            continue
        positions.append((x, y))
        flows.append((bx + off_x, by + off_y))
    return SeedSet(
        np.array(positions, dtype=int).reshape(-1, 2),
        np.array(flows, dtype=float).reshape(-1, 2),
    )


def inject_outliers(seeds: SeedSet, fraction: float, magnitude: float, rng_seed: int) -> SeedSet:
    """Deterministically corrupt a fraction of the seeds with uniform offsets.

    A test fixture for the mismatch-suppression behaviour of the propagation
    solver; ``ceil(fraction * N)`` seeds receive offsets drawn uniformly from
    ``[-magnitude, magnitude]^2``.
    """
    if not 0.0 <= fraction <= 0.5:
        raise InvalidInputError("outlier fraction must lie in [0, 0.5]")
    n = len(seeds)
    count = int(np.ceil(fraction * n))
    if count == 0:
        return SeedSet(seeds.positions.copy(), seeds.flows.copy())
    rng = np.random.default_rng(rng_seed)
    idx = rng.choice(n, size=count, replace=False)
    flows = seeds.flows.copy()
    flows[idx] += rng.uniform(-magnitude, magnitude, size=(count, 2))
    return SeedSet(seeds.positions.copy(), flows)
