"""Frame-to-frame pose tracking from segmentation masks alone.

Each frame's mask is reduced to quad corners, corners are matched to the
pose predicted from the previous frame, and the pose update uses as many
degrees of freedom as the surviving matches allow: a full homography for
four corners, a similarity for two or three, a translation for one, and a
hold when nothing matches.  After a hold the tracker is lost; it resumes
only when the appearance-based cyclic shift agrees for ``theta_r``
consecutive full detections, at which point the template freezes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .disambiguation import (
    FeatureProvider,
    RedetectConfig,
    ShiftDecision,
    TemplateStore,
    appearance_shift,
    confirm_redetection,
    cyclic_shift,
    freeze_template,
    make_template,
    motion_shift,
    update_template,
)
from .geometry import (
    GeometryError,
    Homography,
    Quad,
    estimate_homography,
    estimate_similarity,
    estimate_translation,
    compose,
    quad_area,
    quad_is_degenerate,
    quad_perimeter,
    signed_quad_area,
    warp_points,
)
from .maskgeom import HoughConfig, MaskQuadResult, fit_mask_quad


@dataclass(frozen=True)
class MaskTrackerConfig:
    hough: HoughConfig = HoughConfig()
    redetect: RedetectConfig = RedetectConfig()
    # partial matches must land within this fraction of the mean side length
    match_gate_frac: float = 0.25
    # corners closer than this to the image border are treated as clipped
    visibility_margin: float = 2.0


@dataclass
class MaskTrackOutput:
    h: Homography
    quad: Quad  # template corners under h, with per-corner visibility
    corners_found: int  # raw detections out of the mask
    dof_used: str  # "8" | "4" | "2" | "hold"
    lost: bool
    redetected: bool = False
    detection: Optional[MaskQuadResult] = None


def orient_like(reference_quad: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Reverse candidate winding if it disagrees with the reference quad.

    Reversal keeps index 0 in place so the cyclic structure survives and a
    subsequent shift search still covers all four alignments.
    """
    ref = np.asarray(reference_quad, dtype=np.float64).reshape(4, 2)
    cand = np.asarray(candidates, dtype=np.float64).reshape(4, 2)
    if signed_quad_area(ref) * signed_quad_area(cand) < 0:
        cand = cand[[0, 3, 2, 1]]
    return cand


def _inside_margin(points: np.ndarray, shape: tuple, margin: float) -> np.ndarray:
    h, w = shape[:2]
    x, y = points[:, 0], points[:, 1]
    return (x >= margin) & (x <= w - 1 - margin) & (y >= margin) & (y <= h - 1 - margin)


def greedy_corner_match(
    predicted: np.ndarray, detected: np.ndarray, gate: float
) -> List[tuple]:
    """Mutually-nearest assignment under a distance gate.

    Returns ``(template_index, detected_point)`` pairs, taking the globally
    closest pair first so one stray detection cannot claim two corners.
    """
    if len(detected) == 0:
        return []
    dist = np.linalg.norm(predicted[:, None, :] - detected[None, :, :], axis=2)
    pairs = []
    dist = dist.copy()
    while np.isfinite(dist).any():
        i, j = np.unravel_index(np.argmin(dist), dist.shape)
        if dist[i, j] > gate:
            break
        pairs.append((int(i), detected[j]))
        dist[i, :] = np.inf
        dist[:, j] = np.inf
    return pairs


class MaskTracker:
    """Pose tracker over a mask stream, initialized from a known quad.

    ``template_quad`` lives in the coordinates of ``template_frame`` and
    every reported homography maps those template coordinates into the
    current frame, so the initial pose is the identity.
    """

    def __init__(
        self,
        template_frame: np.ndarray,
        template_quad: np.ndarray,
        feature_provider: FeatureProvider,
        cfg: MaskTrackerConfig = MaskTrackerConfig(),
    ) -> None:
        self.cfg = cfg
        self.template_quad = np.asarray(template_quad, dtype=np.float64).reshape(4, 2)
        if quad_is_degenerate(self.template_quad):
            raise ValueError("template quad is degenerate")
        self.provider = feature_provider
        self.template = make_template(
            np.asarray(template_frame, dtype=np.float64),
            self.template_quad,
            feature_provider,
            cfg.redetect,
        )
        self.h = Homography.identity()
        self.lost = False
        self.shift_history: List[Optional[int]] = []

    @classmethod
    def from_mask(
        cls,
        template_frame: np.ndarray,
        template_mask: np.ndarray,
        feature_provider: FeatureProvider,
        cfg: MaskTrackerConfig = MaskTrackerConfig(),
    ) -> "MaskTracker":
        """Bootstrap the template quad from the first frame's mask."""
        det = fit_mask_quad(np.asarray(template_mask), cfg.hough)
        if len(det.corners) != 4:
            raise ValueError(
                f"initial mask yields {len(det.corners)} corners, need 4"
            )
        quad = np.array([c.point for c in det.corners], dtype=np.float64)
        return cls(template_frame, quad, feature_provider, cfg)

    def predicted_quad(self) -> np.ndarray:
        return warp_points(self.h, self.template_quad)

    def _fit_full(self, matched: np.ndarray, visible: np.ndarray, x_prev: np.ndarray):
        """Largest-DoF update the visible matches support, with fallbacks."""
        vis_idx = np.flatnonzero(visible)
        if len(vis_idx) == 4 and not quad_is_degenerate(matched):
            try:
                return estimate_homography(self.template_quad, matched), "8"
            except GeometryError:
                pass
        if len(vis_idx) >= 2:
            try:
                delta = estimate_similarity(x_prev[vis_idx], matched[vis_idx])
                return compose(delta, self.h), "4"
            except GeometryError:
                pass
        if len(vis_idx) >= 1:
            delta = estimate_translation(x_prev[vis_idx], matched[vis_idx])
            return compose(delta, self.h), "2"
        return None, "hold"

    def _step_tracking(
        self, frame: np.ndarray, detection: MaskQuadResult
    ) -> MaskTrackOutput:
        cfg = self.cfg
        x_prev = self.predicted_quad()
        points = [c.point for c in detection.corners]
        n_found = len(points)

        matched = np.full((4, 2), np.nan)
        have = np.zeros(4, dtype=bool)
        if n_found == 4:
            cand = orient_like(self.template_quad, np.asarray(points))
            decision = motion_shift(x_prev, cand)
            matched = cyclic_shift(cand, decision.shift)
            have[:] = True
        elif n_found > 0:
            gate = cfg.match_gate_frac * quad_perimeter(x_prev) / 4.0
            for idx, pt in greedy_corner_match(x_prev, np.asarray(points), gate):
                matched[idx] = pt
                have[idx] = True

        visible = have.copy()
        if have.any():
            visible[have] &= _inside_margin(
                matched[have], frame.shape, cfg.visibility_margin
            )

        h_new, dof = self._fit_full(matched, visible, x_prev)
        if h_new is None:
            self.lost = True
            self.shift_history = []
            return MaskTrackOutput(
                h=self.h,
                quad=Quad(self.predicted_quad(), np.zeros(4, dtype=bool)),
                corners_found=n_found,
                dof_used="hold",
                lost=True,
                detection=detection,
            )

        self.h = h_new
        if int(visible.sum()) < 4:
            self.template = freeze_template(self.template)
        elif dof == "8":
            self.template = update_template(
                self.template,
                frame,
                matched,
                quad_area(matched),
                self.provider,
                cfg.redetect,
            )
        quad_pts = self.predicted_quad()
        return MaskTrackOutput(
            h=self.h,
            quad=Quad(quad_pts, visible),
            corners_found=n_found,
            dof_used=dof,
            lost=False,
            detection=detection,
        )

    def _step_lost(self, frame: np.ndarray, detection: MaskQuadResult) -> MaskTrackOutput:
        cfg = self.cfg
        decision: Optional[ShiftDecision] = None
        cand = None
        if len(detection.corners) == 4:
            cand = orient_like(
                self.template_quad,
                np.asarray([c.point for c in detection.corners]),
            )
            decision = appearance_shift(
                self.template, frame, cand, self.provider, cfg.redetect
            )
        self.shift_history.append(decision.shift if decision is not None else None)

        agreed = confirm_redetection(self.shift_history, cfg.redetect.theta_r)
        if agreed is not None and cand is not None:
            matched = cyclic_shift(cand, agreed)
            if not quad_is_degenerate(matched):
                try:
                    h_new = estimate_homography(self.template_quad, matched)
                except GeometryError:
                    h_new = None
                if h_new is not None:
                    self.h = h_new
                    self.lost = False
                    self.shift_history = []
                    self.template = freeze_template(self.template)
                    visible = _inside_margin(
                        matched, frame.shape, cfg.visibility_margin
                    )
                    return MaskTrackOutput(
                        h=self.h,
                        quad=Quad(self.predicted_quad(), visible),
                        corners_found=4,
                        dof_used="8",
                        lost=False,
                        redetected=True,
                        detection=detection,
                    )
        return MaskTrackOutput(
            h=self.h,
            quad=Quad(self.predicted_quad(), np.zeros(4, dtype=bool)),
            corners_found=len(detection.corners),
            dof_used="hold",
            lost=True,
            detection=detection,
        )

    def step(
        self,
        frame: np.ndarray,
        mask: Optional[np.ndarray] = None,
        detection: Optional[MaskQuadResult] = None,
    ) -> MaskTrackOutput:
        """Advance one frame.

        ``mask`` is segmentation output for ``frame``; callers that already
        ran ``fit_mask_quad`` can hand over the detection instead.
        """
        frame = np.asarray(frame, dtype=np.float64)
        if detection is None:
            if mask is None:
                raise ValueError("step needs a mask or a precomputed detection")
            detection = fit_mask_quad(np.asarray(mask), self.cfg.hough)
        if self.lost:
            return self._step_lost(frame, detection)
        return self._step_tracking(frame, detection)
