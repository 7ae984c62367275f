"""Differentiable loss functions: photometric (SSIM + L1 with per-source
minimum), edge-aware smoothness, berHu flow supervision, depth/normal
smoothness, and their weighted totals.

Every loss returns a :class:`LossResult` carrying the scalar value and
analytic gradients with respect to its differentiable inputs; all gradients
are validated against central finite differences in the test suite.

Reductions are means over valid pixels/components so values are
resolution-independent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInputError, UndefinedMetricError
from .geometry import Intrinsics, camera_rays

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
SSIM_WINDOW = 3


@dataclass(frozen=True)
class LossWeights:
    """Weights of the depth-pipeline objective and the SSIM/L1 mix."""

    flow: float = 1.0
    photometric: float = 1.0
    depth_smooth: float = 0.1
    normal_smooth: float = 0.05
    ssim_mix: float = 0.5

    def __post_init__(self):
        for name in ("flow", "photometric", "depth_smooth", "normal_smooth"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"loss weight {name} must be nonnegative")
        if not 0.0 <= self.ssim_mix <= 1.0:
            raise InvalidInputError("ssim_mix must lie in [0, 1]")


@dataclass
class LossResult:
    """Scalar loss value plus gradients keyed by input name."""

    value: float
    gradients: dict[str, np.ndarray]


def combine_losses(terms: Sequence[tuple[LossResult, float]]) -> LossResult:
    """Weighted sum of loss results; gradients with equal keys are added."""
    value = 0.0
    grads: dict[str, np.ndarray] = {}
    for result, weight in terms:
        value += weight * result.value
        for key, g in result.gradients.items():
            if key in grads:
                grads[key] = grads[key] + weight * g
            else:
                grads[key] = weight * g
    return LossResult(value=float(value), gradients=grads)


# ---------------------------------------------------------------------------
# windowed statistics (valid-region convolution)


def _box_mean(x: np.ndarray, w: int) -> np.ndarray:
    """Mean over every fully-contained w x w window; output loses w-1 per axis."""
    h, ww = x.shape
    c = np.zeros((h + 1, ww + 1))
    c[1:, 1:] = x.cumsum(axis=0).cumsum(axis=1)
    s = c[w:, w:] - c[:-w, w:] - c[w:, :-w] + c[:-w, :-w]
    return s / (w * w)


def _box_mean_adjoint(g: np.ndarray, w: int) -> np.ndarray:
    """Transpose of :func:`_box_mean`: spread each window mean back uniformly."""
    pad = np.zeros((g.shape[0] + 2 * (w - 1), g.shape[1] + 2 * (w - 1)))
    pad[w - 1 : w - 1 + g.shape[0], w - 1 : w - 1 + g.shape[1]] = g
    return _box_mean(pad, w)


def _channels_last(img: np.ndarray) -> np.ndarray:
    """View any image as (H, W, C)."""
    return img[..., None] if img.ndim == 2 else img


def _ssim_channel(a: np.ndarray, b: np.ndarray, w: int):
    """SSIM map of one channel plus the intermediates needed for its VJP."""
    mu_a = _box_mean(a, w)
    mu_b = _box_mean(b, w)
    m_aa = _box_mean(a * a, w)
    m_bb = _box_mean(b * b, w)
    m_ab = _box_mean(a * b, w)
    s_aa = m_aa - mu_a**2
    s_bb = m_bb - mu_b**2
    s_ab = m_ab - mu_a * mu_b
    n1 = 2.0 * mu_a * mu_b + SSIM_C1
    d1 = mu_a**2 + mu_b**2 + SSIM_C1
    n2 = 2.0 * s_ab + SSIM_C2
    d2 = s_aa + s_bb + SSIM_C2
    s = (n1 * n2) / (d1 * d2)
    return s, (mu_a, mu_b, n1, d1, n2, d2)


def _ssim_channel_vjp(a, b, w, inter, g_map):
    """Gradient of sum(g_map * SSIM(a, b)) with respect to ``b``."""
    mu_a, mu_b, n1, d1, n2, d2 = inter
    s = (n1 * n2) / (d1 * d2)
    d_mu_b = 2.0 * mu_a * (n2 - n1) / (d1 * d2) - 2.0 * mu_b * s / d1 + 2.0 * mu_b * s / d2
    d_m_ab = 2.0 * n1 / (d1 * d2)
    d_m_bb = -s / d2
    g_b = _box_mean_adjoint(g_map * d_mu_b, w)
    g_b += _box_mean_adjoint(g_map * d_m_ab, w) * a
    g_b += _box_mean_adjoint(g_map * d_m_bb, w) * 2.0 * b
    return g_b


def ssim(a: np.ndarray, b: np.ndarray, window: int = SSIM_WINDOW) -> np.ndarray:
    """Structural-similarity map over fully-contained uniform windows.

    The output drops ``window - 1`` pixels per axis (valid-region
    convolution); multi-channel input yields a per-channel map.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidInputError(f"image shapes differ: {a.shape} vs {b.shape}")
    if window < 3 or window % 2 == 0:
        raise InvalidInputError("window must be an odd integer >= 3")
    if window > min(a.shape[0], a.shape[1]):
        raise InvalidInputError("window larger than image")
    ac = _channels_last(a)
    bc = _channels_last(b)
    maps = [_ssim_channel(ac[..., c], bc[..., c], window)[0] for c in range(ac.shape[-1])]
    out = np.stack(maps, axis=-1)
    return out[..., 0] if a.ndim == 2 else out


# ---------------------------------------------------------------------------
# photometric loss (per-pixel minimum over source views)


def photometric_cost_map(
    target: np.ndarray,
    synthesized: Sequence[tuple[np.ndarray, np.ndarray]],
    weights: LossWeights,
    window: int = SSIM_WINDOW,
):
    """Per-pixel minimum photometric cost across synthesized source views.

    Returns ``(cost, included, source_index)`` on the window-interior grid;
    ``included`` marks pixels whose full SSIM window is valid in at least one
    source, ``source_index`` the per-pixel argmin source. Used internally by
    :func:`photometric_loss` and directly by tests of the minimum-trick
    semantics.
    """
    target = np.asarray(target, dtype=float)
    if not synthesized:
        raise InvalidInputError("need at least one synthesized source view")
    if window % 2 == 0 or window < 3 or window > min(target.shape[0], target.shape[1]):
        raise InvalidInputError("window must be odd, >= 3 and fit in the image")
    alpha = weights.ssim_mix
    margin = window // 2
    tc = _channels_last(target)
    nchan = tc.shape[-1]
    costs = []
    for img, mask in synthesized:
        img = np.asarray(img, dtype=float)
        mask = np.asarray(mask, dtype=bool)
        if img.shape != target.shape or mask.shape != target.shape[:2]:
            raise InvalidInputError("synthesized view dims do not match target")
        ok = _box_mean(mask.astype(float), window) > 1.0 - 1e-9  # full window valid
        sc = _channels_last(img)
        l1 = np.mean(np.abs(tc - sc), axis=-1)
        l1 = l1[margin:-margin, margin:-margin] if margin else l1
        cost = (1.0 - alpha) * l1
        if alpha != 0.0:
            smap = np.zeros_like(cost)
            for c in range(nchan):
                smap += _ssim_channel(tc[..., c], sc[..., c], window)[0]
            smap /= nchan
            cost = cost + alpha * 0.5 * (1.0 - smap)
        costs.append(np.where(ok, cost, np.inf))
    stack = np.stack(costs, axis=0)
    src_idx = np.argmin(stack, axis=0)
    min_cost = np.min(stack, axis=0)
    included = np.isfinite(min_cost)
    return min_cost, included, src_idx


def photometric_loss(
    target: np.ndarray,
    synthesized: Sequence[tuple[np.ndarray, np.ndarray]],
    weights: LossWeights,
    window: int = SSIM_WINDOW,
) -> LossResult:
    """Appearance mismatch between a target view and synthesized views.

    Per pixel the cost is ``alpha * (1 - SSIM)/2 + (1 - alpha) * L1`` and the
    minimum over the source views is taken, so each pixel is charged against
    the source that explains it best (occlusion tolerance). Pixels are only
    scored where the full SSIM window is valid in at least one source; the
    loss is the mean over scored pixels.

    Gradients flow to each synthesized image only through the pixels where it
    is the per-pixel argmin, under keys ``"synthesized_<i>"``.
    """
    target = np.asarray(target, dtype=float)
    alpha = weights.ssim_mix
    margin = window // 2
    min_cost, included, src_idx = photometric_cost_map(target, synthesized, weights, window)
    n_inc = int(np.count_nonzero(included))
    if n_inc == 0:
        raise UndefinedMetricError("no pixel is valid in any source view")
    value = float(min_cost[included].mean())

    tc = _channels_last(target)
    nchan = tc.shape[-1]
    grads: dict[str, np.ndarray] = {}
    inner = (slice(margin, -margin), slice(margin, -margin)) if margin else (slice(None), slice(None))
    for s, (img, _mask) in enumerate(synthesized):
        img = np.asarray(img, dtype=float)
        sc = _channels_last(img)
        sel = (src_idx == s) & included
        up = np.where(sel, 1.0 / n_inc, 0.0)
        g = np.zeros_like(sc)
        # L1 branch: d|t - s|/ds = -sign(t - s), averaged over channels
        sgn = np.sign(sc - tc) / nchan
        for c in range(nchan):
            g[inner[0], inner[1], c] += (1.0 - alpha) * up * sgn[inner[0], inner[1], c]
        if alpha != 0.0:
            for c in range(nchan):
                smap, inter = _ssim_channel(tc[..., c], sc[..., c], window)
                g[..., c] += _ssim_channel_vjp(
                    tc[..., c], sc[..., c], window, inter, -alpha * 0.5 * up / nchan
                )
        grads[f"synthesized_{s}"] = g[..., 0] if target.ndim == 2 else g
    return LossResult(value=value, gradients=grads)


# ---------------------------------------------------------------------------
# smoothness


def edge_aware_smoothness(
    field: np.ndarray,
    guide: np.ndarray,
    mask: Optional[np.ndarray] = None,
) -> LossResult:
    """Forward-difference smoothness of a field, downweighted at guide edges.

    Per direction the penalty is ``|d field| * exp(-|d guide|)`` (guide
    gradients averaged over its channels); the loss is the per-direction mean
    over counted terms, summed over directions and field channels. A term is
    counted only when both pixels it touches are in ``mask``.

    The gradient with respect to the field is returned under key ``"field"``.
    """
    field = np.asarray(field, dtype=float)
    guide = np.asarray(guide, dtype=float)
    if field.shape[:2] != guide.shape[:2]:
        raise InvalidInputError(f"field {field.shape} and guide {guide.shape} dims differ")
    gc = _channels_last(guide)
    wx = np.exp(-np.mean(np.abs(gc[:, 1:] - gc[:, :-1]), axis=-1))
    wy = np.exp(-np.mean(np.abs(gc[1:, :] - gc[:-1, :]), axis=-1))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        mx = mask[:, 1:] & mask[:, :-1]
        my = mask[1:, :] & mask[:-1, :]
    else:
        mx = np.ones(wx.shape, dtype=bool)
        my = np.ones(wy.shape, dtype=bool)
    nx = int(np.count_nonzero(mx))
    ny = int(np.count_nonzero(my))

    fc = _channels_last(field)
    value = 0.0
    grad = np.zeros_like(fc)
    for c in range(fc.shape[-1]):
        dx = fc[:, 1:, c] - fc[:, :-1, c]
        dy = fc[1:, :, c] - fc[:-1, :, c]
        if nx:
            value += float(np.sum(np.abs(dx) * wx * mx) / nx)
            ux = np.sign(dx) * wx * mx / nx
            grad[:, 1:, c] += ux
            grad[:, :-1, c] -= ux
        if ny:
            value += float(np.sum(np.abs(dy) * wy * my) / ny)
            uy = np.sign(dy) * wy * my / ny
            grad[1:, :, c] += uy
            grad[:-1, :, c] -= uy
    return LossResult(value=value, gradients={"field": grad[..., 0] if field.ndim == 2 else grad})


# ---------------------------------------------------------------------------
# berHu (reversed Huber) flow supervision


def berhu_threshold(residual: np.ndarray, mask=None, fraction: float = 0.2, floor: float = 1e-6) -> float:
    """Adaptive berHu threshold: a fraction of the largest residual magnitude."""
    residual = np.asarray(residual, dtype=float)
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), residual.shape)
        residual = residual[m]
    peak = float(np.max(np.abs(residual))) if residual.size else 0.0
    return max(fraction * peak, floor)


def berhu(residual: np.ndarray, c: float, mask=None) -> LossResult:
    """Reversed Huber penalty: L1 up to ``c``, scaled quadratic beyond.

    Value and one-sided derivatives agree at ``|x| = c``; the loss is the
    mean over valid components and the gradient (key ``"residual"``) is with
    respect to the residual array.
    """
    if not c > 0:
        raise InvalidInputError("berhu threshold must be positive")
    residual = np.asarray(residual, dtype=float)
    if mask is not None:
        valid = np.broadcast_to(np.asarray(mask, dtype=bool), residual.shape)
    else:
        valid = np.ones(residual.shape, dtype=bool)
    n = int(np.count_nonzero(valid))
    if n == 0:
        raise UndefinedMetricError("berhu over an empty mask")
    a = np.abs(residual)
    small = a <= c
    vals = np.where(small, a, (residual**2 + c**2) / (2.0 * c))
    value = float(np.sum(vals[valid]) / n)
    grad = np.where(small, np.sign(residual), residual / c) * valid / n
    return LossResult(value=value, gradients={"residual": grad})


def rigid_flow_loss(
    predicted: np.ndarray,
    supervision: np.ndarray,
    mask: np.ndarray,
    c: float,
) -> LossResult:
    """berHu deviation between a composed rigid flow and its supervision flow.

    ``mask`` is per pixel; both flow components of a masked pixel count.
    Gradient key: ``"predicted"``.
    """
    predicted = np.asarray(predicted, dtype=float)
    supervision = np.asarray(supervision, dtype=float)
    if predicted.shape != supervision.shape:
        raise InvalidInputError("flow shapes differ")
    mask2 = np.asarray(mask, dtype=bool)[..., None]
    res = berhu(predicted - supervision, c, mask=mask2)
    return LossResult(value=res.value, gradients={"predicted": res.gradients["residual"]})


# ---------------------------------------------------------------------------
# depth and normal smoothness


def surface_normals(depth: np.ndarray, k: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals from backprojected forward-difference tangents.

    Returns ``(normals, valid)`` of shapes ``(H-1, W-1, 3)`` and
    ``(H-1, W-1)``; a fronto-parallel surface yields ``(0, 0, -1)``.
    Degenerate (near zero cross product) normals are flagged invalid.
    """
    depth = np.asarray(depth, dtype=float)
    h, w = depth.shape
    pts = depth[..., None] * camera_rays(h, w, k)
    tx = (pts[:, 1:, :] - pts[:, :-1, :])[:-1]
    ty = (pts[1:, :, :] - pts[:-1, :, :])[:, :-1]
    raw = np.cross(ty, tx)
    norm = np.linalg.norm(raw, axis=-1)
    valid = norm > 1e-12
    normals = np.where(valid[..., None], raw / np.where(valid, norm, 1.0)[..., None], 0.0)
    return normals, valid


def normal_smoothness(depth: np.ndarray, k: Intrinsics, guide: np.ndarray) -> LossResult:
    """Edge-aware smoothness of the surface-normal field of a depth map.

    The chain (depth -> 3D points -> tangents -> cross product ->
    normalization -> smoothness) is differentiated analytically; the gradient
    with respect to the depth map is returned under key ``"depth"``.
    """
    depth = np.asarray(depth, dtype=float)
    guide = np.asarray(guide, dtype=float)
    h, w = depth.shape
    rays = camera_rays(h, w, k)
    pts = depth[..., None] * rays
    tx_full = pts[:, 1:, :] - pts[:, :-1, :]
    ty_full = pts[1:, :, :] - pts[:-1, :, :]
    tx = tx_full[:-1]
    ty = ty_full[:, :-1]
    raw = np.cross(ty, tx)
    norm = np.linalg.norm(raw, axis=-1)
    valid = norm > 1e-12
    safe = np.where(valid, norm, 1.0)
    normals = np.where(valid[..., None], raw / safe[..., None], 0.0)

    sm = edge_aware_smoothness(normals, guide[: h - 1, : w - 1], mask=valid)
    g_n = sm.gradients["field"]

    # normalization: dn/draw = (I - n n^T)/|raw|
    dot = np.sum(g_n * normals, axis=-1, keepdims=True)
    g_raw = np.where(valid[..., None], (g_n - normals * dot) / safe[..., None], 0.0)
    # cross product: raw = ty x tx
    g_ty = np.cross(tx, g_raw)
    g_tx = np.cross(g_raw, ty)

    g_pts = np.zeros_like(pts)
    g_tx_full = np.zeros_like(tx_full)
    g_tx_full[:-1] = g_tx
    g_ty_full = np.zeros_like(ty_full)
    g_ty_full[:, :-1] = g_ty
    g_pts[:, 1:, :] += g_tx_full
    g_pts[:, :-1, :] -= g_tx_full
    g_pts[1:, :, :] += g_ty_full
    g_pts[:-1, :, :] -= g_ty_full
    g_depth = np.sum(g_pts * rays, axis=-1)
    return LossResult(value=sm.value, gradients={"depth": g_depth})


def depth_smoothness(depth: np.ndarray, guide: np.ndarray) -> LossResult:
    """Edge-aware smoothness of mean-normalized inverse depth.

    Normalizing by the spatial mean decouples the penalty from the depth
    scale (monocular depth is a gauge quantity). Gradient key: ``"depth"``.
    """
    depth = np.asarray(depth, dtype=float)
    inv = 1.0 / depth
    m = float(inv.mean())
    u = inv / m
    sm = edge_aware_smoothness(u, guide)
    g_u = sm.gradients["field"]
    n = inv.size
    g_inv = g_u / m - np.sum(g_u * inv) / (m * m * n)
    g_depth = -g_inv / depth**2
    return LossResult(value=sm.value, gradients={"depth": g_depth})


# ---------------------------------------------------------------------------
# totals


def total_sfnet_loss(
    photometric: LossResult,
    smoothness: LossResult,
    photo_weight: float = 1.0,
    smooth_weight: float = 0.1,
) -> LossResult:
    """Weighted objective of the sparse-to-dense flow solver."""
    return combine_losses([(photometric, photo_weight), (smoothness, smooth_weight)])


def total_depth_loss(
    flow_term: Optional[LossResult],
    photometric_term: Optional[LossResult],
    depth_smooth_term: Optional[LossResult],
    normal_smooth_term: Optional[LossResult],
    weights: LossWeights,
) -> LossResult:
    """Weighted objective of the depth/pose solver; ``None`` terms are skipped."""
    pairs = [
        (flow_term, weights.flow),
        (photometric_term, weights.photometric),
        (depth_smooth_term, weights.depth_smooth),
        (normal_smooth_term, weights.normal_smooth),
    ]
    return combine_losses([(term, wgt) for term, wgt in pairs if term is not None])
