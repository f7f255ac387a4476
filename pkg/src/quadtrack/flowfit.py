"""Robust homography fit from weighted dense flow correspondences.

Dense flow between the template view and a pre-warped frame gives one
correspondence per pixel plus a reliability weight in [0, 1].  A fixed
budget of RANSAC iterations draws minimal sets with weight-proportional
probability, the best candidate is refit by weighted DLT on its inliers,
and the surviving inlier fraction doubles as the failure signal for the
tracking controller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import imgio
from .geometry import GeometryError, Homography, SingularMatrix, estimate_homography


class FlowFitError(Exception):
    pass


class InsufficientSamples(FlowFitError):
    """Fewer than four positively weighted samples inside the quad."""


class DegenerateFit(FlowFitError):
    """No usable model came out of the RANSAC budget."""


@dataclass
class FlowField:
    """Dense displacement field with per-pixel reliability weights."""

    flow: np.ndarray  # (h, w, 2) displacement in pixels
    weight: np.ndarray  # (h, w) in [0, 1]

    def __post_init__(self) -> None:
        self.flow = np.asarray(self.flow, dtype=np.float64)
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.flow.ndim != 3 or self.flow.shape[2] != 2:
            raise ValueError("flow must be (h, w, 2)")
        if self.weight.shape != self.flow.shape[:2]:
            raise ValueError("weight shape must match flow")
        if np.any(self.weight < 0) or np.any(self.weight > 1):
            raise ValueError("weights must lie in [0, 1]")


@dataclass(frozen=True)
class FlowFitConfig:
    sample_stride: int = 4
    inlier_px: float = 3.0
    ransac_iters: int = 500
    seed: int = 0
    reliable_weight: float = 0.5  # samples at or above this define the inlier fraction


@dataclass
class FlowFitResult:
    h_resid: Homography
    inlier_fraction: float
    support_count: int


def load_flow_field(flo_path, weights_path: Optional[str] = None) -> FlowField:
    """Assemble a FlowField from a .flo file and an optional weight PGM."""
    flow = imgio.read_flo(flo_path)
    if weights_path is None:
        weight = np.ones(flow.shape[:2])
    else:
        weight = imgio.read_weights_pgm(weights_path)
        if weight.shape != flow.shape[:2]:
            raise ValueError("weight image dimensions do not match the flow")
    return FlowField(flow=flow, weight=weight)


def sample_grid_in_quad(quad: np.ndarray, shape: tuple, stride: int) -> np.ndarray:
    """Integer pixel positions on a stride grid inside a convex quad."""
    q = np.asarray(quad, dtype=np.float64).reshape(4, 2)
    h, w = shape[:2]
    x0 = max(int(math.floor(q[:, 0].min())), 0)
    x1 = min(int(math.ceil(q[:, 0].max())), w - 1)
    y0 = max(int(math.floor(q[:, 1].min())), 0)
    y1 = min(int(math.ceil(q[:, 1].max())), h - 1)
    if x1 < x0 or y1 < y0:
        return np.zeros((0, 2), dtype=int)
    xs = np.arange(x0, x1 + 1, stride)
    ys = np.arange(y0, y1 + 1, stride)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float64)
    inside = np.ones(pts.shape[0], dtype=bool)
    orient = 0.0
    for i in range(4):
        a, b = q[i], q[(i + 1) % 4]
        cross = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])
        if orient == 0.0:
            orient = 1.0 if float(np.sum(cross)) >= 0 else -1.0
        inside &= cross * orient >= 0
    return pts[inside].astype(int)


def _minimal_dlt_batch(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Solve the exact 4-point DLT for a stack of minimal sets.

    src, dst: (k, 4, 2).  Returns (k, 3, 3) candidate matrices; sets whose
    system is rank deficient come back as NaN matrices.
    """
    k = src.shape[0]
    a = np.zeros((k, 8, 9))
    x, y = src[:, :, 0], src[:, :, 1]
    u, v = dst[:, :, 0], dst[:, :, 1]
    a[:, 0::2, 0] = -x
    a[:, 0::2, 1] = -y
    a[:, 0::2, 2] = -1.0
    a[:, 0::2, 6] = u * x
    a[:, 0::2, 7] = u * y
    a[:, 0::2, 8] = u
    a[:, 1::2, 3] = -x
    a[:, 1::2, 4] = -y
    a[:, 1::2, 5] = -1.0
    a[:, 1::2, 6] = v * x
    a[:, 1::2, 7] = v * y
    a[:, 1::2, 8] = v
    _, s, vt = np.linalg.svd(a)
    cand = vt[:, -1, :].reshape(k, 3, 3)
    bad = s[:, -2] <= 1e-9 * np.maximum(s[:, 0], 1e-300)
    cand[bad] = np.nan
    return cand


def fit_flow_homography(
    field: FlowField, template_quad: np.ndarray, cfg: FlowFitConfig = FlowFitConfig()
) -> FlowFitResult:
    """Weighted-RANSAC homography between template pixels and flow targets.

    The fixed iteration budget and seeded generator make results
    bit-reproducible for identical inputs.  The returned inlier fraction
    counts only samples whose weight reaches ``cfg.reliable_weight``; the
    winning candidate is refit by weighted DLT on all its inliers.
    """
    pts = sample_grid_in_quad(template_quad, field.flow.shape[:2], cfg.sample_stride)
    if pts.shape[0] == 0:
        raise InsufficientSamples("no grid samples inside the template quad")
    w = field.weight[pts[:, 1], pts[:, 0]]
    disp = field.flow[pts[:, 1], pts[:, 0]]
    usable = (w > 0) & np.all(np.isfinite(disp), axis=1)
    pts, w, disp = pts[usable].astype(np.float64), w[usable], disp[usable]
    n = pts.shape[0]
    if n < 4:
        raise InsufficientSamples(f"{n} positively weighted samples, need 4")
    dst = pts + disp

    rng = np.random.default_rng(cfg.seed)
    prob = w / w.sum()
    draws = np.stack(
        [rng.choice(n, size=4, replace=False, p=prob) for _ in range(cfg.ransac_iters)]
    )
    candidates = _minimal_dlt_batch(pts[draws], dst[draws])

    hom = np.concatenate([pts, np.ones((n, 1))], axis=1).T  # (3, n)
    reliable = w >= cfg.reliable_weight
    n_reliable = int(reliable.sum())
    best_count = -1
    best_idx = -1
    chunk = 64
    with np.errstate(invalid="ignore", divide="ignore"):
        for lo in range(0, cfg.ransac_iters, chunk):
            block = candidates[lo : lo + chunk]  # (k, 3, 3)
            proj = block @ hom  # (k, 3, n)
            denom = proj[:, 2, :]
            err = np.hypot(
                proj[:, 0, :] / denom - dst[:, 0], proj[:, 1, :] / denom - dst[:, 1]
            )
            inl = (err < cfg.inlier_px) & reliable
            counts = inl.sum(axis=1)
            k_best = int(np.argmax(counts))
            if counts[k_best] > best_count:
                best_count = int(counts[k_best])
                best_idx = lo + k_best

    if best_idx < 0 or not np.all(np.isfinite(candidates[best_idx])):
        raise DegenerateFit("every minimal sample was degenerate")
    support_count = max(best_count, 0)
    inlier_fraction = support_count / n_reliable if n_reliable > 0 else 0.0

    best = candidates[best_idx]
    with np.errstate(invalid="ignore", divide="ignore"):
        proj = best @ hom
        err = np.hypot(
            proj[0] / proj[2] - dst[:, 0], proj[1] / proj[2] - dst[:, 1]
        )
    inliers = np.nan_to_num(err, nan=np.inf) < cfg.inlier_px
    try:
        h_resid = estimate_homography(pts[inliers], dst[inliers], weights=w[inliers])
    except GeometryError:
        try:
            h_resid = Homography(best)
        except SingularMatrix as exc:
            raise DegenerateFit("winning candidate is singular") from exc
    return FlowFitResult(
        h_resid=h_resid,
        inlier_fraction=float(inlier_fraction),
        support_count=support_count,
    )


def failure_check(result: FlowFitResult, threshold: float = 0.2) -> bool:
    """True when the fit must be treated as failed (strict comparison)."""
    return result.inlier_fraction < threshold
