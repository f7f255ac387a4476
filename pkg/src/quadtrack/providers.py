"""Concrete cue providers: directory replay and the built-in feature grid.

Heavyweight segmentation, optical flow, and deep feature models stay
outside this package; anything matching the small protocols in
`masktracker`, `flowfit`, and `disambiguation` can be plugged in.  The
implementations here replay precomputed outputs from disk or compute
cheap deterministic stand-ins good enough for tests and demos.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np

from . import imgio
from .disambiguation import FeatureMap
from .flowfit import FlowField
from .geometry import Homography

FRAME_PATTERN = "frame_%06d"


def find_frame_files(directory) -> list:
    """Consecutive frame_%06d.pgm paths under dir/frames or dir itself."""
    directory = Path(directory)
    for base in (directory / "frames", directory):
        if not base.is_dir():
            continue
        frames = []
        t = 0
        while True:
            path = base / ((FRAME_PATTERN % t) + ".pgm")
            if not path.exists():
                break
            frames.append(path)
            t += 1
        if frames:
            return frames
    return []


def find_annotation_file(directory) -> Optional[Path]:
    """Ground-truth quad file: annotation.txt wins over a synth quads.txt."""
    directory = Path(directory)
    for name in ("annotation.txt", "quads.txt"):
        path = directory / name
        if path.exists():
            return path
    return None


class PatchFeatureProvider:
    """Mean intensity and gradient per cell, L2-normalized.

    A 224 crop becomes a 16 x 16 grid of 3-vectors.  All-zero patches
    (rendered out-of-frame regions) stay zero and read as masked.
    """

    def __init__(self, grid: int = 16):
        self.grid = grid

    def extract(self, crop: np.ndarray) -> FeatureMap:
        crop = np.asarray(crop, dtype=np.float64)
        g = self.grid
        if crop.shape[0] % g or crop.shape[1] % g:
            raise ValueError(f"crop shape {crop.shape} not divisible into {g}x{g} cells")
        ch, cw = crop.shape[0] // g, crop.shape[1] // g
        gy, gx = np.gradient(crop)
        cells = np.stack(
            [
                crop.reshape(g, ch, g, cw).mean(axis=(1, 3)),
                gx.reshape(g, ch, g, cw).mean(axis=(1, 3)),
                gy.reshape(g, ch, g, cw).mean(axis=(1, 3)),
            ],
            axis=2,
        )
        norms = np.linalg.norm(cells, axis=2, keepdims=True)
        safe = np.where(norms > 1e-12, norms, 1.0)
        return FeatureMap(cells / safe * (norms > 1e-12))


class DirectoryMaskProvider:
    """Per-frame masks replayed from ``<dir>/frame_%06d.pgm`` files."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def start(self, frame=None, mask=None) -> None:
        pass  # replay ignores the prompt

    def mask_for(self, index: int, frame: Optional[np.ndarray] = None) -> np.ndarray:
        return imgio.read_mask(self.directory / (FRAME_PATTERN % index + ".pgm"))


class DirectoryFlowProvider:
    """Per-frame flow replayed from ``.flo`` files plus weight PGMs.

    The stored flow is whatever pre-warp it was dumped with; replay is
    only faithful when the consumer uses the same pre-warp policy.
    Missing weight files mean uniform weight 1.
    """

    needs_images = False

    def __init__(self, directory):
        self.directory = Path(directory)

    def flow(
        self,
        template_image: Optional[np.ndarray],
        prewarped_frame: Optional[np.ndarray],
        frame_index: int,
        h_pre: Homography,
    ) -> FlowField:
        stem = FRAME_PATTERN % frame_index
        flow = imgio.read_flo(self.directory / (stem + ".flo"))
        weight_path = self.directory / (stem + "_weight.pgm")
        if weight_path.exists():
            weight = imgio.read_weights_pgm(weight_path)
        else:
            weight = np.ones(flow.shape[:2])
        return FlowField(flow=flow, weight=weight)


class FaultInjectionFlowProvider:
    """Wrap a flow provider and replace chosen frames with uniform noise.

    Inside the fault window the output is confidently wrong: random flow
    with full weight, the worst case for a downstream fitter.  Used to
    exercise controller recovery paths.
    """

    def __init__(self, base, fault_frames, magnitude: float = 30.0, seed: int = 0):
        self.base = base
        self.fault_frames = frozenset(int(t) for t in fault_frames)
        self.magnitude = float(magnitude)
        self.seed = int(seed)

    @property
    def needs_images(self) -> bool:
        return getattr(self.base, "needs_images", True)

    def flow(
        self,
        template_image: Optional[np.ndarray],
        prewarped_frame: Optional[np.ndarray],
        frame_index: int,
        h_pre: Homography,
    ) -> FlowField:
        field = self.base.flow(template_image, prewarped_frame, frame_index, h_pre)
        if frame_index not in self.fault_frames:
            return field
        rng = np.random.default_rng([self.seed, 29, frame_index])
        shape = field.flow.shape
        noise = rng.uniform(-self.magnitude, self.magnitude, size=shape)
        return FlowField(flow=noise, weight=np.ones(shape[:2]))
