"""Direct depth-and-pose recovery for an image pair or triplet.

The objective mirrors the flow-supervised training signal: a berHu penalty
between the rigid flow composed from (depth, pose) and a supervision flow,
plus photometric reconstruction, edge-aware inverse-depth smoothness and
surface-normal smoothness. Depth is parameterized through a softplus
reciprocal so positivity is unconditional, poses as axis-angle plus
translation, and the whole thing is minimized by Adam with analytic
gradients.

Monocular depth is only recoverable up to scale, so every iteration
renormalizes the depth map to unit spatial mean (rescaling translations
consistently); the objective is exactly invariant under this gauge motion.
A solution whose depth variance vanishes is flagged ``collapsed`` rather
than returned silently.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DegenerateGeometryError,
    DegenerateMotionWarning,
    InvalidInputError,
    NumericalFailureError,
    UndefinedMetricError,
)
from .geometry import (
    Intrinsics,
    PoseSE3,
    axis_angle_from_rotation,
    camera_rays,
    rigid_flow,
    rigid_flow_from_params,
    rigid_flow_vjp,
    rotation_from_axis_angle,
    project_to_rotation,
)
from .losses import (
    LossResult,
    LossWeights,
    berhu_threshold,
    depth_smoothness,
    normal_smoothness,
    photometric_loss,
    rigid_flow_loss,
    total_depth_loss,
)
from .optim import Adam
from .warp import warp_gradient, warp_image


@dataclass(frozen=True)
class ReconConfig:
    iterations: int = 800
    step_size: float = 1e-2
    min_improvement: float = 1e-7
    # berHu/L1 objectives plateau for long stretches under Adam before
    # improving again; with patience == iterations the stall heuristic is off
    patience: int = 800
    berhu_c: Optional[float] = None  # None: 0.2 * max residual each pass
    collapse_rel_variance: float = 1e-6
    rng_seed: int = 0


@dataclass
class ReconProblem:
    """Target view, source views, per-source supervision flows and weights."""

    target: np.ndarray
    sources: list[np.ndarray]
    supervision_flows: list[np.ndarray]
    intrinsics: Intrinsics
    weights: LossWeights = LossWeights()
    supervision_masks: Optional[list[np.ndarray]] = None
    config: ReconConfig = ReconConfig()

    def __post_init__(self):
        if not self.sources:
            raise InvalidInputError("need at least one source view")
        if len(self.sources) != len(self.supervision_flows):
            raise InvalidInputError("one supervision flow per source required")
        shape = np.asarray(self.target).shape[:2]
        for img, flow in zip(self.sources, self.supervision_flows):
            if np.asarray(img).shape[:2] != shape or np.asarray(flow).shape != shape + (2,):
                raise InvalidInputError("inconsistent problem dimensions")
        if self.supervision_masks is None:
            self.supervision_masks = [np.ones(shape, dtype=bool) for _ in self.sources]


@dataclass
class ReconSolution:
    depth: np.ndarray
    poses: list[PoseSE3]
    loss_trace: np.ndarray
    collapsed: bool


def _softplus(z):
    return np.logaddexp(0.0, z)


def _softplus_inverse(y):
    # log(expm1(y)), stable for moderate y
    return y + np.log1p(-np.exp(-y))


def _depth_from_param(z):
    sp = _softplus(z)
    depth = 1.0 / sp
    ddepth_dz = -(1.0 / (1.0 + np.exp(-z))) / sp**2
    return depth, ddepth_dz


def objective_and_gradients(problem: ReconProblem, z: np.ndarray, omegas, translations):
    """Full objective value and analytic gradients w.r.t. (z, poses).

    The berHu threshold, when adaptive, is treated as a constant inside the
    gradient (standard stop-gradient handling of a data-dependent scale).
    """
    k = problem.intrinsics
    weights = problem.weights
    cfg = problem.config
    depth, ddepth_dz = _depth_from_param(z)
    n_src = len(problem.sources)

    flow_value = 0.0
    g_flow_per_source = []
    flows = []
    valids = []
    for s in range(n_src):
        flow_s, valid_s = rigid_flow_from_params(depth, omegas[s], translations[s], k)
        flows.append(flow_s)
        valids.append(valid_s)
        g_flow_per_source.append(np.zeros_like(flow_s))
        if weights.flow > 0:
            m = problem.supervision_masks[s] & valid_s
            residual = flow_s - problem.supervision_flows[s]
            c = cfg.berhu_c or berhu_threshold(residual, mask=m[..., None])
            term = rigid_flow_loss(flow_s, problem.supervision_flows[s], m, c)
            flow_value += term.value / n_src
            g_flow_per_source[s] += (weights.flow / n_src) * term.gradients["predicted"]
    flow_term = LossResult(value=flow_value, gradients={}) if weights.flow > 0 else None

    photo_term = None
    if weights.photometric > 0:
        entries = []
        for s in range(n_src):
            warped, wmask = warp_image(problem.sources[s], flows[s])
            entries.append((warped, wmask & valids[s]))
        photo = photometric_loss(problem.target, entries, weights)
        photo_term = LossResult(value=photo.value, gradients={})
        for s in range(n_src):
            g_w = photo.gradients[f"synthesized_{s}"]
            g_flow_per_source[s] += weights.photometric * warp_gradient(
                problem.sources[s], flows[s], g_w
            )

    g_depth = np.zeros_like(depth)
    depth_term = None
    if weights.depth_smooth > 0:
        term = depth_smoothness(depth, problem.target)
        depth_term = LossResult(value=term.value, gradients={})
        g_depth += weights.depth_smooth * term.gradients["depth"]
    normal_term = None
    if weights.normal_smooth > 0:
        term = normal_smoothness(depth, k, problem.target)
        normal_term = LossResult(value=term.value, gradients={})
        g_depth += weights.normal_smooth * term.gradients["depth"]

    g_omegas = []
    g_translations = []
    for s in range(n_src):
        g_d, g_w, g_t = rigid_flow_vjp(depth, omegas[s], translations[s], k, g_flow_per_source[s])
        g_depth += g_d
        g_omegas.append(g_w)
        g_translations.append(g_t)

    total = total_depth_loss(flow_term, photo_term, depth_term, normal_term, weights)
    g_z = g_depth * ddepth_dz
    return total.value, g_z, g_omegas, g_translations


def solve(problem: ReconProblem) -> ReconSolution:
    """Optimize inverse depth and per-source poses against the full objective.

    Depth starts at a constant 1 scene unit; poses are initialized by
    :func:`pose_from_flow` against the supervision flows at that depth. The
    best-loss iterate is returned, scale-normalized to unit mean depth.

    Raises:
        NumericalFailureError: the loss became non-finite (last finite
            iterate attached).
    """
    cfg = problem.config
    shape = np.asarray(problem.target).shape[:2]
    z = np.full(shape, _softplus_inverse(1.0))
    omegas = []
    translations = []
    init_depth = np.ones(shape)
    for flow in problem.supervision_flows:
        try:
            pose = pose_from_flow(flow, init_depth, problem.intrinsics)
        except DegenerateGeometryError:
            pose = PoseSE3.identity()
        omegas.append(axis_angle_from_rotation(pose.rotation))
        translations.append(pose.translation.copy())

    params = {"z": z}
    for s in range(len(problem.sources)):
        params[f"omega_{s}"] = omegas[s]
        params[f"t_{s}"] = translations[s]
    opt = Adam(step_size=cfg.step_size)

    trace = []
    best = None
    best_loss = np.inf
    last_improvement = 0
    for it in range(cfg.iterations):
        # gauge fix: unit mean depth, translations rescaled consistently
        depth, _ = _depth_from_param(params["z"])
        m = float(depth.mean())
        params["z"] = _softplus_inverse(_softplus(params["z"]) * m)
        for s in range(len(problem.sources)):
            params[f"t_{s}"] = params[f"t_{s}"] / m

        oms = [params[f"omega_{s}"] for s in range(len(problem.sources))]
        ts = [params[f"t_{s}"] for s in range(len(problem.sources))]
        value, g_z, g_oms, g_ts = objective_and_gradients(problem, params["z"], oms, ts)
        if not np.isfinite(value):
            raise NumericalFailureError(
                f"reconstruction diverged at iteration {it}",
                last_iterate=best[0] if best else None,
            )
        trace.append(value)
        if value < best_loss - cfg.min_improvement:
            last_improvement = it
        if value < best_loss:
            best_loss = value
            best = (
                _depth_from_param(params["z"])[0],
                [
                    PoseSE3(rotation_from_axis_angle(om), t.copy())
                    for om, t in zip(oms, ts)
                ],
            )
        if it - last_improvement >= cfg.patience:
            break
        grads = {"z": g_z}
        for s in range(len(problem.sources)):
            grads[f"omega_{s}"] = g_oms[s]
            grads[f"t_{s}"] = g_ts[s]
        opt.step(params, grads)

    depth_best, poses_best = best
    rel_var = float(depth_best.var() / depth_best.mean() ** 2)
    return ReconSolution(
        depth=depth_best,
        poses=poses_best,
        loss_trace=np.asarray(trace),
        collapsed=rel_var < cfg.collapse_rel_variance,
    )


# ---------------------------------------------------------------------------
# pose from flow (initialization / flow-conditioned pose fitting)


def pose_from_flow(
    flow: np.ndarray,
    depth: np.ndarray,
    k: Intrinsics,
    iterations: int = 20,
) -> PoseSE3:
    """Least-squares 6-DoF pose whose rigid flow matches a given flow field.

    Gauss-Newton with berHu-derived IRLS weights at fixed depth. Emits a
    :class:`DegenerateMotionWarning` when the fitted motion has a clearly
    nonzero rotation but near-zero translation (pure-rotation flow carries
    no baseline information).

    Raises:
        DegenerateGeometryError: rank-deficient normal equations or no
            usable pixels.
    """
    flow = np.asarray(flow, dtype=float)
    depth = np.asarray(depth, dtype=float)
    if flow.shape[:2] != depth.shape:
        raise InvalidInputError("flow and depth dims differ")
    h, w = depth.shape
    rays = camera_rays(h, w, k)
    pts = (depth[..., None] * rays).reshape(-1, 3)
    target = flow.reshape(-1, 2)
    rot = np.eye(3)
    t = np.zeros(3)
    for _ in range(iterations):
        pose = PoseSE3(project_to_rotation(rot), t)
        pred, valid = rigid_flow(depth, pose, k)
        ok = valid.reshape(-1)
        if ok.sum() < 6:
            raise DegenerateGeometryError("too few valid pixels for pose fitting")
        res = (pred.reshape(-1, 2) - target)[ok]
        cam = pts[ok] @ pose.rotation.T + pose.translation
        zc = cam[:, 2]
        n = len(cam)
        dfdy = np.zeros((n, 2, 3))
        dfdy[:, 0, 0] = k.fx / zc
        dfdy[:, 0, 2] = -k.fx * cam[:, 0] / zc**2
        dfdy[:, 1, 1] = k.fy / zc
        dfdy[:, 1, 2] = -k.fy * cam[:, 1] / zc**2
        # dY/d(dw)[:, :, i] = e_i x Y
        cross = np.zeros((n, 3, 3))
        cross[:, 1, 0] = -cam[:, 2]
        cross[:, 2, 0] = cam[:, 1]
        cross[:, 0, 1] = cam[:, 2]
        cross[:, 2, 1] = -cam[:, 0]
        cross[:, 0, 2] = -cam[:, 1]
        cross[:, 1, 2] = cam[:, 0]
        jac = np.concatenate([np.einsum("nij,njk->nik", dfdy, cross), dfdy], axis=2)
        jac = jac.reshape(-1, 6)
        r = res.reshape(-1)
        c = berhu_threshold(r)
        wts = np.where(np.abs(r) <= c, 1.0 / np.maximum(np.abs(r), 1e-3 * c), 1.0 / c)
        normal = (jac * wts[:, None]).T @ jac + 1e-9 * np.eye(6)
        rhs = -(jac * wts[:, None]).T @ r
        cond = np.linalg.cond(normal)
        if not np.isfinite(cond) or cond > 1e14:
            raise DegenerateGeometryError("pose normal equations are rank-deficient")
        delta = np.linalg.solve(normal, rhs)
        dr = rotation_from_axis_angle(delta[:3])
        rot = dr @ pose.rotation
        t = dr @ pose.translation + delta[3:]
        if np.linalg.norm(delta) < 1e-14:
            break
    rot = project_to_rotation(rot)
    angle = float(np.linalg.norm(axis_angle_from_rotation(rot)))
    if angle > 1e-4 and np.linalg.norm(t) < 1e-3 * float(depth.mean()):
        warnings.warn(
            "fitted motion is (near) pure rotation; translation is unobservable",
            DegenerateMotionWarning,
        )
    return PoseSE3(rot, t)


# ---------------------------------------------------------------------------
# depth metrics


@dataclass(frozen=True)
class DepthMetrics:
    """Standard monocular depth metrics (thresholds are strict)."""

    d1: float
    d2: float
    d3: float
    rel: float
    log10: float
    rms: float
    sq_rel: float

    CSV_HEADER = "d1,d2,d3,rel,log10,rms"

    def csv_row(self) -> str:
        return ",".join(
            f"{v:.6f}" for v in (self.d1, self.d2, self.d3, self.rel, self.log10, self.rms)
        )


def depth_metrics(
    predicted: np.ndarray,
    gt: np.ndarray,
    median_scale: bool = True,
    mask: Optional[np.ndarray] = None,
) -> DepthMetrics:
    """Accuracy (delta < 1.25^k) and error (rel, log10, rms, sq rel) metrics.

    With ``median_scale`` the prediction is rescaled by the ratio of medians
    first (the monocular gauge convention).
    """
    predicted = np.asarray(predicted, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if predicted.shape != gt.shape:
        raise InvalidInputError("depth shapes differ")
    if mask is None:
        mask = np.ones(gt.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool) & (gt > 0) & np.isfinite(gt) & (predicted > 0)
    if not mask.any():
        raise UndefinedMetricError("depth metrics over an empty mask")
    p = predicted[mask]
    g = gt[mask]
    if median_scale:
        p = p * (np.median(g) / np.median(p))
    ratio = np.maximum(p / g, g / p)
    diff = p - g
    return DepthMetrics(
        d1=float(np.mean(ratio < 1.25)),
        d2=float(np.mean(ratio < 1.25**2)),
        d3=float(np.mean(ratio < 1.25**3)),
        rel=float(np.mean(np.abs(diff) / g)),
        log10=float(np.mean(np.abs(np.log10(p) - np.log10(g)))),
        rms=float(np.sqrt(np.mean(diff**2))),
        sq_rel=float(np.mean(diff**2 / g)),
    )
