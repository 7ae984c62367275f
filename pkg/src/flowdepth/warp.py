"""Differentiable bilinear inverse warping.

Synthesizes a target-view image by sampling a source image at
``pixel + flow(pixel)`` with bilinear interpolation. Samples that fall
outside ``[0, W-1] x [0, H-1]`` are masked invalid and read as zero; no
border clamping is applied (clamping would bias photometric losses at the
image edges).
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError


def _bilinear_setup(img: np.ndarray, q: np.ndarray):
    """Shared corner indices/weights for sampling and its gradient.

    At integer coordinates the interpolation weight is taken from the cell to
    the right/below (right-sided subgradient), except on the far border where
    only the left cell exists.
    """
    h, w = img.shape[:2]
    qx = q[..., 0]
    qy = q[..., 1]
    valid = (qx >= 0) & (qx <= w - 1) & (qy >= 0) & (qy <= h - 1)
    x0 = np.clip(np.floor(qx), 0, w - 2).astype(int) if w > 1 else np.zeros_like(qx, dtype=int)
    y0 = np.clip(np.floor(qy), 0, h - 2).astype(int) if h > 1 else np.zeros_like(qy, dtype=int)
    x0 = np.where(valid, x0, 0)
    y0 = np.where(valid, y0, 0)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = np.where(valid, qx - x0, 0.0)
    wy = np.where(valid, qy - y0, 0.0)
    return x0, y0, x1, y1, wx, wy, valid


def sample_bilinear(img: np.ndarray, q) -> tuple[np.ndarray, np.ndarray]:
    """Bilinearly sample an image at continuous coordinates.

    Args:
        img: ``(H, W)`` or ``(H, W, C)`` array.
        q: coordinates ``(..., 2)`` as ``(x, y)``.

    Returns:
        ``(values, valid)`` where ``values`` has shape ``q.shape[:-1]`` (plus
        a channel axis for multi-channel input) and ``valid`` flags in-bounds
        samples. Out-of-bounds samples are zero.
    """
    img = np.asarray(img, dtype=float)
    q = np.asarray(q, dtype=float)
    x0, y0, x1, y1, wx, wy, valid = _bilinear_setup(img, q)
    if img.ndim == 3:
        wx = wx[..., None]
        wy = wy[..., None]
        vmask = valid[..., None]
    else:
        vmask = valid
    i00 = img[y0, x0]
    i01 = img[y0, x1]
    i10 = img[y1, x0]
    i11 = img[y1, x1]
    top = i00 + wx * (i01 - i00)
    bot = i10 + wx * (i11 - i10)
    out = top + wy * (bot - top)
    return np.where(vmask, out, 0.0), valid


def warp_image(src: np.ndarray, flow: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-warp a source image by a dense flow field.

    ``out(p) = src(p + flow(p))`` bilinearly; the returned mask records which
    output pixels sampled fully in-bounds.
    """
    src = np.asarray(src, dtype=float)
    flow = np.asarray(flow, dtype=float)
    if flow.ndim != 3 or flow.shape[2] != 2 or flow.shape[:2] != src.shape[:2]:
        raise InvalidInputError(
            f"flow shape {flow.shape} does not match image shape {src.shape}"
        )
    h, w = src.shape[:2]
    gx, gy = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    q = np.stack([gx + flow[..., 0], gy + flow[..., 1]], axis=-1)
    return sample_bilinear(src, q)


def warp_gradient(src: np.ndarray, flow: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`warp_image` with respect to the flow.

    Args:
        src: source image, ``(H, W)`` or ``(H, W, C)``.
        flow: ``(H, W, 2)`` flow used in the forward warp.
        upstream: per-pixel adjoint of the warped output (same shape as the
            warp output).

    Returns:
        ``(H, W, 2)`` gradient with respect to ``(u, v)``; zero at pixels the
        forward pass masked invalid.
    """
    src = np.asarray(src, dtype=float)
    flow = np.asarray(flow, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    if flow.ndim != 3 or flow.shape[2] != 2 or flow.shape[:2] != src.shape[:2]:
        raise InvalidInputError(
            f"flow shape {flow.shape} does not match image shape {src.shape}"
        )
    h, w = src.shape[:2]
    gx, gy = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    q = np.stack([gx + flow[..., 0], gy + flow[..., 1]], axis=-1)
    x0, y0, x1, y1, wx, wy, valid = _bilinear_setup(src, q)
    i00 = src[y0, x0]
    i01 = src[y0, x1]
    i10 = src[y1, x0]
    i11 = src[y1, x1]
    if src.ndim == 3:
        wxc = wx[..., None]
        wyc = wy[..., None]
        du = (1.0 - wyc) * (i01 - i00) + wyc * (i11 - i10)
        dv = (1.0 - wxc) * (i10 - i00) + wxc * (i11 - i01)
        gu = np.sum(upstream * du, axis=-1)
        gv = np.sum(upstream * dv, axis=-1)
    else:
        gu = upstream * ((1.0 - wy) * (i01 - i00) + wy * (i11 - i10))
        gv = upstream * ((1.0 - wx) * (i10 - i00) + wx * (i11 - i01))
    grad = np.stack([gu, gv], axis=-1)
    grad[~valid] = 0.0
    return grad
