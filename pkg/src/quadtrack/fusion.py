"""Two-attempt fusion of flow-based and mask-based pose tracking.

Every frame the mask pipeline produces a pose candidate.  Attempt 1
estimates a residual homography from dense flow against the previous
pose's pre-warp; if its inlier fraction clears the threshold the mask
candidate is ignored.  Otherwise attempt 2 re-runs the flow fit against
the mask candidate's pre-warp, and if that fails too the mask candidate
is the output.  The mask tracker state advances every frame regardless
of which path wins, so redetection streaks and template bookkeeping
never stall.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Protocol

import numpy as np

from .disambiguation import FeatureProvider
from .flowfit import (
    FlowField,
    FlowFitConfig,
    FlowFitError,
    failure_check,
    fit_flow_homography,
)
from .geometry import GeometryError, Homography, compose
from .imgio import FormatError
from .interp import bilinear_sample
from .masktracker import MaskTracker, MaskTrackerConfig, MaskTrackOutput

PATHS = ("init", "attempt1", "attempt2", "fallback")


class SegmentationProvider(Protocol):
    def start(self, frame=None, mask=None) -> None: ...

    def mask_for(self, index: int, frame=None) -> np.ndarray: ...


class FlowProvider(Protocol):
    needs_images: bool

    def flow(
        self,
        template_image: Optional[np.ndarray],
        prewarped_frame: Optional[np.ndarray],
        frame_index: int,
        h_pre: Homography,
    ) -> FlowField: ...


@dataclass(frozen=True)
class FusionConfig:
    inlier_threshold: float = 0.20
    flowfit: FlowFitConfig = FlowFitConfig()
    mask: MaskTrackerConfig = MaskTrackerConfig()

    def __post_init__(self) -> None:
        if not 0.0 < self.inlier_threshold < 1.0:
            raise ValueError("inlier_threshold must lie in (0, 1)")


@dataclass
class FrameResult:
    frame_index: int
    h: Homography
    path_taken: str  # init | attempt1 | attempt2 | fallback
    # the mask pipeline's candidate; None for rows read back from poses.csv,
    # which does not store it
    h_mask: Optional[Homography] = None
    fraction_attempt1: float = math.nan  # nan when the attempt never ran
    fraction_attempt2: float = math.nan
    mask_output: Optional[MaskTrackOutput] = None


def prewarp(frame: np.ndarray, h: Homography, template_shape: tuple):
    """Resample the frame into template coordinates under pose ``h``.

    Output pixel q is the frame bilinearly sampled at W(h, q); samples
    falling outside the frame are zero-filled and reported in the
    validity mask so downstream flow weights can ignore them.
    """
    th, tw = template_shape[:2]
    gx, gy = np.meshgrid(np.arange(tw, dtype=np.float64), np.arange(th, dtype=np.float64))
    m = h.m
    denom = m[2, 0] * gx + m[2, 1] * gy + m[2, 2]
    with np.errstate(invalid="ignore", divide="ignore"):
        px = (m[0, 0] * gx + m[0, 1] * gy + m[0, 2]) / denom
        py = (m[1, 0] * gx + m[1, 1] * gy + m[1, 2]) / denom
    degenerate = np.abs(denom) <= 1e-12
    px = np.where(degenerate, -1e9, px)
    py = np.where(degenerate, -1e9, py)
    values, valid = bilinear_sample(np.asarray(frame, dtype=np.float64), px, py)
    return values, valid


class FusionTracker:
    """Per-sequence controller state; step once per frame after the first."""

    def __init__(
        self,
        template_frame: np.ndarray,
        template_quad: np.ndarray,
        mask_provider: SegmentationProvider,
        flow_provider: FlowProvider,
        feature_provider: FeatureProvider,
        cfg: FusionConfig = FusionConfig(),
    ) -> None:
        self.cfg = cfg
        self.template_frame = np.asarray(template_frame, dtype=np.float64)
        self.template_quad = np.asarray(template_quad, dtype=np.float64).reshape(4, 2)
        self.mask_provider = mask_provider
        self.flow_provider = flow_provider
        self.mask_tracker = MaskTracker(
            self.template_frame, self.template_quad, feature_provider, cfg.mask
        )
        self.h_prev = Homography.identity()
        self.frame_index = 0
        mask_provider.start(frame=self.template_frame, mask=None)

    def init_result(self) -> FrameResult:
        return FrameResult(
            frame_index=0,
            h=Homography.identity(),
            path_taken="init",
            h_mask=Homography.identity(),
        )

    def _attempt(self, frame: np.ndarray, t: int, h_pre: Homography):
        """One flow fit against a pre-warp; None signals a failed attempt."""
        try:
            if getattr(self.flow_provider, "needs_images", True):
                pre, valid = prewarp(frame, h_pre, self.template_frame.shape)
                field = self.flow_provider.flow(self.template_frame, pre, t, h_pre)
                field.weight = field.weight * valid
            else:
                field = self.flow_provider.flow(None, None, t, h_pre)
            return fit_flow_homography(field, self.template_quad, self.cfg.flowfit)
        except (FlowFitError, GeometryError, FormatError, OSError, ValueError):
            return None

    def step(self, frame: np.ndarray, frame_index: Optional[int] = None) -> FrameResult:
        t = self.frame_index + 1 if frame_index is None else frame_index
        self.frame_index = t
        frame = np.asarray(frame, dtype=np.float64)

        mask = self.mask_provider.mask_for(t, frame)
        mask_out = self.mask_tracker.step(frame, mask=mask)
        h_mask = mask_out.h

        frac1 = math.nan
        frac2 = math.nan
        res1 = self._attempt(frame, t, self.h_prev)
        if res1 is not None:
            frac1 = res1.inlier_fraction
        if res1 is not None and not failure_check(res1, self.cfg.inlier_threshold):
            h = compose(self.h_prev, res1.h_resid)
            path = "attempt1"
        else:
            res2 = self._attempt(frame, t, h_mask)
            if res2 is not None:
                frac2 = res2.inlier_fraction
            if res2 is not None and not failure_check(res2, self.cfg.inlier_threshold):
                h = compose(h_mask, res2.h_resid)
                path = "attempt2"
            else:
                h = h_mask
                path = "fallback"

        self.h_prev = h
        return FrameResult(
            frame_index=t,
            h=h,
            path_taken=path,
            h_mask=h_mask,
            fraction_attempt1=frac1,
            fraction_attempt2=frac2,
            mask_output=mask_out,
        )


def track_sequence(
    frames: Iterable[np.ndarray],
    template_quad: np.ndarray,
    mask_provider: SegmentationProvider,
    flow_provider: FlowProvider,
    feature_provider: FeatureProvider,
    cfg: FusionConfig = FusionConfig(),
) -> List[FrameResult]:
    """Track a whole clip; ``frames`` must start with the template frame."""
    it = iter(frames)
    try:
        first = next(it)
    except StopIteration:
        raise ValueError("sequence has no frames") from None
    tracker = FusionTracker(
        first, template_quad, mask_provider, flow_provider, feature_provider, cfg
    )
    results = [tracker.init_result()]
    for frame in it:
        results.append(tracker.step(frame))
    return results


POSES_FIELDS = (
    ["frame"]
    + [f"h{i}{j}" for i in range(3) for j in range(3)]
    + ["path", "frac1", "frac2"]
)


def write_poses_csv(path, results: List[FrameResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(POSES_FIELDS)
        for r in results:
            writer.writerow(
                [r.frame_index]
                + [repr(float(v)) for v in r.h.m.ravel()]
                + [r.path_taken, repr(r.fraction_attempt1), repr(r.fraction_attempt2)]
            )


def read_poses_csv(path) -> List[FrameResult]:
    results = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            m = np.array(
                [float(row[f"h{i}{j}"]) for i in range(3) for j in range(3)]
            ).reshape(3, 3)
            if row["path"] not in PATHS:
                raise ValueError(f"unknown path tag {row['path']!r}")
            results.append(
                FrameResult(
                    frame_index=int(row["frame"]),
                    h=Homography(m),
                    path_taken=row["path"],
                    fraction_attempt1=float(row["frac1"]),
                    fraction_attempt2=float(row["frac2"]),
                )
            )
    return results
