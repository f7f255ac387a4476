"""Cyclic corner-label disambiguation and the tracking template policy.

Mask corner detections carry no labels, so a detected quad matches the
template only up to a cyclic shift.  While tracking, the shift with the
smallest corner motion since the previous frame wins.  After the target
was lost, labels are recovered by appearance instead: the template is
warped into each candidate labeling and compared in feature space, and a
re-detection is accepted only after the same shift wins several frames
in a row.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Protocol, Sequence

import numpy as np

from . import imgio
from .geometry import (
    DegenerateConfiguration,
    Homography,
    estimate_homography,
    invert,
    quad_area,
)
from .interp import bilinear_sample


@dataclass(frozen=True)
class ShiftDecision:
    shift: int  # matched[i] = candidates[(i + shift) % 4]
    score: float
    regime: str  # "motion" | "appearance"


@dataclass
class FeatureMap:
    """Grid of per-cell descriptors; all-zero cells are masked."""

    grid: np.ndarray  # (hf, wf, c) float

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 3:
            raise ValueError("feature grid must be (hf, wf, c)")

    def cell_mask(self) -> np.ndarray:
        return np.any(self.grid != 0.0, axis=2)


class FeatureProvider(Protocol):
    def extract(self, crop: np.ndarray) -> FeatureMap: ...


@dataclass(frozen=True)
class RedetectConfig:
    theta_r: int = 5
    template_policy: str = "biggest-so-far"  # or "init-only"
    crop_size: int = 224
    bbox_margin: float = 0.10


@dataclass
class TemplateStore:
    """Appearance template: a source frame, the quad within it, features."""

    image: np.ndarray
    quad: np.ndarray  # (4, 2)
    area: float
    features: FeatureMap
    frozen: bool = False


def load_feature_map(path) -> FeatureMap:
    """Read a precomputed feature map from its binary container."""
    return FeatureMap(imgio.read_feature_file(path))


def cyclic_shift(candidates: np.ndarray, shift: int) -> np.ndarray:
    """Relabel candidates so entry i corresponds to template corner i."""
    cand = np.asarray(candidates, dtype=np.float64).reshape(4, 2)
    idx = (np.arange(4) + shift) % 4
    return cand[idx]


def motion_shift(prev_points: np.ndarray, candidates: np.ndarray) -> ShiftDecision:
    """Shift minimizing total squared corner motion; ties go to the smallest."""
    prev = np.asarray(prev_points, dtype=np.float64).reshape(4, 2)
    cand = np.asarray(candidates, dtype=np.float64).reshape(4, 2)
    best_k, best_cost = 0, np.inf
    for k in range(4):
        cost = float(np.sum((prev - cyclic_shift(cand, k)) ** 2))
        if cost < best_cost:
            best_cost, best_k = cost, k
    return ShiftDecision(shift=best_k, score=best_cost, regime="motion")


def crop_window(quad: np.ndarray, frame_shape: tuple, margin: float = 0.10) -> tuple:
    """Axis-aligned bbox grown by ``margin`` about its center, clamped."""
    q = np.asarray(quad, dtype=np.float64).reshape(4, 2)
    h, w = frame_shape[:2]
    x0, y0 = q.min(axis=0)
    x1, y1 = q.max(axis=0)
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    hw = (x1 - x0) / 2 * (1 + margin)
    hh = (y1 - y0) / 2 * (1 + margin)
    return (
        max(cx - hw, 0.0),
        max(cy - hh, 0.0),
        min(cx + hw, w - 1.0),
        min(cy + hh, h - 1.0),
    )


def _window_grid(window: tuple, size: int) -> tuple:
    x0, y0, x1, y1 = window
    xs = np.linspace(x0, x1, size)
    ys = np.linspace(y0, y1, size)
    return np.meshgrid(xs, ys)


def extract_crop(frame: np.ndarray, window: tuple, size: int = 224) -> np.ndarray:
    """Resample a clamped window to ``size`` x ``size``."""
    gx, gy = _window_grid(window, size)
    values, _ = bilinear_sample(frame, gx, gy)
    return values


def render_template_view(
    template: TemplateStore, h_template_to_frame: Homography, window: tuple, size: int = 224
) -> np.ndarray:
    """Render how the template would look inside a frame crop window.

    Pixels that fall outside the template's source image come out zero,
    which downstream feature cells treat as masked.
    """
    gx, gy = _window_grid(window, size)
    m = invert(h_template_to_frame).m
    denom = m[2, 0] * gx + m[2, 1] * gy + m[2, 2]
    denom = np.where(np.abs(denom) <= 1e-12, np.nan, denom)
    bx = (m[0, 0] * gx + m[0, 1] * gy + m[0, 2]) / denom
    by = (m[1, 0] * gx + m[1, 1] * gy + m[1, 2]) / denom
    values, _ = bilinear_sample(template.image, bx, by)
    return values


def feature_similarity(a: FeatureMap, b: FeatureMap) -> float:
    """Mean per-cell dot product over cells present in both maps."""
    if a.grid.shape != b.grid.shape:
        raise ValueError("feature maps differ in shape")
    both = a.cell_mask() & b.cell_mask()
    if not both.any():
        return -np.inf
    dots = np.sum(a.grid * b.grid, axis=2)
    return float(dots[both].mean())


def appearance_shift(
    template: TemplateStore,
    frame: np.ndarray,
    candidates: np.ndarray,
    provider: FeatureProvider,
    cfg: RedetectConfig = RedetectConfig(),
) -> ShiftDecision:
    """Shift whose warped template view best matches the current crop."""
    cand = np.asarray(candidates, dtype=np.float64).reshape(4, 2)
    window = crop_window(cand, frame.shape, cfg.bbox_margin)
    current = provider.extract(extract_crop(frame, window, cfg.crop_size))
    best_k, best_score = 0, -np.inf
    for k in range(4):
        try:
            h_k = estimate_homography(template.quad, cyclic_shift(cand, k))
        except DegenerateConfiguration:
            continue
        view = render_template_view(template, h_k, window, cfg.crop_size)
        score = feature_similarity(provider.extract(view), current)
        if score > best_score:
            best_score, best_k = score, k
    return ShiftDecision(shift=best_k, score=best_score, regime="appearance")


def confirm_redetection(
    history: Sequence[Optional[int]], theta_r: int = 5
) -> Optional[int]:
    """The agreed shift once the last ``theta_r`` decisions exist and match."""
    if len(history) < theta_r:
        return None
    tail = list(history)[-theta_r:]
    if tail[0] is None or any(s != tail[0] for s in tail):
        return None
    return tail[0]


def make_template(
    frame: np.ndarray,
    quad: np.ndarray,
    provider: FeatureProvider,
    cfg: RedetectConfig = RedetectConfig(),
) -> TemplateStore:
    quad = np.asarray(quad, dtype=np.float64).reshape(4, 2)
    window = crop_window(quad, frame.shape, cfg.bbox_margin)
    features = provider.extract(extract_crop(frame, window, cfg.crop_size))
    return TemplateStore(
        image=np.asarray(frame, dtype=np.float64),
        quad=quad.copy(),
        area=quad_area(quad),
        features=features,
    )


def update_template(
    store: TemplateStore,
    frame: np.ndarray,
    quad: np.ndarray,
    area: float,
    provider: FeatureProvider,
    cfg: RedetectConfig = RedetectConfig(),
) -> TemplateStore:
    """Keep the larger of the stored and offered templates.

    Under the ``init-only`` policy, or once frozen, the store never
    changes.  Area is the quad's shoelace area, computed by the caller so
    the policy decision stays visible at the call site.
    """
    if store.frozen or cfg.template_policy == "init-only":
        return store
    if area > store.area:
        new = make_template(frame, quad, provider, cfg)
        new.frozen = store.frozen
        return new
    return store


def freeze_template(store: TemplateStore) -> TemplateStore:
    return replace(store, frozen=True)
