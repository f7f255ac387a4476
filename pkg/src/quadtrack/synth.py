"""Synthetic planar-scene generator with exact ground truth.

A single textured plane moves under a composed homography trajectory.
Frames are rendered by procedural texture lookup at inverse-warped
coordinates, so there is no source-image resolution limit; masks are
exact pixel-center rasterizations of the ground-truth quad minus any
active occluder rectangles; flow is analytic.  Everything is a pure
function of the spec, so two generations with the same spec are
bit-identical and sequences can be streamed frame by frame without
holding the whole clip in memory.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy import ndimage

from . import imgio
from .flowfit import FlowField
from .geometry import (
    Homography,
    compose,
    invert,
    quad_centroid,
    quad_is_degenerate,
    warp_points,
)

SEGMENT_KINDS = ("rotate", "scale", "translate", "perspective", "hold")
TEXTURES = ("checkerboard", "noise", "flat")

# seed-stream salts so mask noise, flow noise, and texture draws never collide
_STREAM_MASK = 7
_STREAM_FLOW = 11
_STREAM_TEXTURE = 13


class SpecInvalid(Exception):
    pass


@dataclass(frozen=True)
class SegmentSpec:
    """One timed trajectory piece applied as a per-frame delta.

    rate: degrees/frame for rotate, scale factor/frame for scale.
    vector: (vx, vy) px/frame for translate, per-frame (px, py)
    perspective-row increments for perspective.
    """

    kind: str
    frames: int
    rate: float = 0.0
    vector: Tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class OccluderSpec:
    """Axis-aligned rectangle blocking the view for frames enter..exit."""

    rect: Tuple[float, float, float, float]  # x0, y0, x1, y1
    enter: int
    exit: int


@dataclass(frozen=True)
class SceneSpec:
    width: int = 480
    height: int = 480
    texture: str = "checkerboard"
    texture_seed: int = 0
    texture_cell: int = 32
    quad: Tuple[float, ...] = (140.0, 140.0, 340.0, 140.0, 340.0, 340.0, 140.0, 340.0)
    segments: Tuple[SegmentSpec, ...] = (SegmentSpec("hold", 10),)
    occluders: Tuple[OccluderSpec, ...] = ()
    blur_frames: Tuple[int, ...] = ()  # informational tags, never rendered
    mask_noise_sigma: float = 0.0
    flow_noise_sigma: float = 0.0
    noise_seed: int = 0

    def validate(self) -> None:
        if self.width < 16 or self.height < 16:
            raise SpecInvalid("frame dimensions must be at least 16 px")
        if self.texture not in TEXTURES:
            raise SpecInvalid(f"unknown texture {self.texture!r}")
        if self.texture_cell < 2:
            raise SpecInvalid("texture_cell must be >= 2 px")
        if len(self.quad) != 8:
            raise SpecInvalid("quad needs 8 coordinates")
        q = np.asarray(self.quad, dtype=np.float64).reshape(4, 2)
        if not np.all(np.isfinite(q)) or quad_is_degenerate(q):
            raise SpecInvalid("initial quad is degenerate")
        if not self.segments:
            raise SpecInvalid("trajectory needs at least one segment")
        for seg in self.segments:
            if seg.kind not in SEGMENT_KINDS:
                raise SpecInvalid(f"unknown segment kind {seg.kind!r}")
            if seg.frames < 1:
                raise SpecInvalid("segment frames must be >= 1")
            if not (
                math.isfinite(seg.rate)
                and all(math.isfinite(v) for v in seg.vector)
            ):
                raise SpecInvalid("segment rates must be finite")
            if seg.kind == "scale" and seg.rate <= 0:
                raise SpecInvalid("scale rate must be positive")
        for occ in self.occluders:
            x0, y0, x1, y1 = occ.rect
            if not (x0 < x1 and y0 < y1):
                raise SpecInvalid("occluder rect must be ordered (x0<x1, y0<y1)")
            if occ.enter > occ.exit:
                raise SpecInvalid("occluder enter frame exceeds exit frame")
        if self.mask_noise_sigma < 0 or self.flow_noise_sigma < 0:
            raise SpecInvalid("noise sigmas must be >= 0")

    @property
    def n_frames(self) -> int:
        return 1 + sum(seg.frames for seg in self.segments)

    def template_quad(self) -> np.ndarray:
        return np.asarray(self.quad, dtype=np.float64).reshape(4, 2)


def _segment_from_dict(d: dict) -> SegmentSpec:
    vector = d.get("vector", (0.0, 0.0))
    return SegmentSpec(
        kind=str(d.get("kind", "")),
        frames=int(d.get("frames", 0)),
        rate=float(d.get("rate", 0.0)),
        vector=(float(vector[0]), float(vector[1])),
    )


def _occluder_from_dict(d: dict) -> OccluderSpec:
    rect = d.get("rect", ())
    if len(rect) != 4:
        raise SpecInvalid("occluder rect needs 4 numbers")
    return OccluderSpec(
        rect=tuple(float(v) for v in rect),
        enter=int(d.get("enter", 0)),
        exit=int(d.get("exit", 0)),
    )


def spec_from_dict(d: dict) -> SceneSpec:
    try:
        spec = SceneSpec(
            width=int(d.get("width", 480)),
            height=int(d.get("height", 480)),
            texture=str(d.get("texture", "checkerboard")),
            texture_seed=int(d.get("texture_seed", 0)),
            texture_cell=int(d.get("texture_cell", 32)),
            quad=tuple(float(v) for v in d.get("quad", SceneSpec.quad)),
            segments=tuple(_segment_from_dict(s) for s in d.get("segments", [])),
            occluders=tuple(_occluder_from_dict(o) for o in d.get("occluders", [])),
            blur_frames=tuple(int(t) for t in d.get("blur_frames", [])),
            mask_noise_sigma=float(d.get("mask_noise_sigma", 0.0)),
            flow_noise_sigma=float(d.get("flow_noise_sigma", 0.0)),
            noise_seed=int(d.get("noise_seed", 0)),
        )
    except (TypeError, ValueError, IndexError) as exc:
        raise SpecInvalid(f"malformed scene spec: {exc}") from exc
    spec.validate()
    return spec


def spec_to_dict(spec: SceneSpec) -> dict:
    return dataclasses.asdict(spec)


def load_scene_spec(path) -> SceneSpec:
    path = Path(path)
    data = path.read_bytes()
    if path.suffix.lower() == ".json":
        return spec_from_dict(json.loads(data.decode("utf-8")))
    import tomli

    return spec_from_dict(tomli.loads(data.decode("utf-8")))


def _make_texture(spec: SceneSpec) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Procedural grayscale texture defined on the whole template plane."""
    if spec.texture == "flat":
        return lambda x, y: np.full_like(np.asarray(x, dtype=np.float64), 128.0)
    if spec.texture == "checkerboard":
        cell = float(spec.texture_cell)

        def checker(x, y):
            parity = (np.floor(x / cell) + np.floor(y / cell)) % 2
            return np.where(parity > 0.5, 200.0, 70.0)

        return checker
    # band-limited noise: a fixed bank of long-wavelength sinusoids, smooth
    # and evaluable at arbitrary real coordinates
    rng = np.random.default_rng([spec.texture_seed, _STREAM_TEXTURE])
    k = 24
    wavelengths = rng.uniform(24.0, 96.0, size=k)
    angles = rng.uniform(0.0, 2.0 * np.pi, size=k)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=k)
    amps = rng.uniform(0.5, 1.0, size=k)
    freq = 2.0 * np.pi / wavelengths
    kx = freq * np.cos(angles)
    ky = freq * np.sin(angles)
    scale = 100.0 / amps.sum()

    def bandnoise(x, y):
        x = np.asarray(x, dtype=np.float64)[..., None]
        y = np.asarray(y, dtype=np.float64)[..., None]
        s = np.sum(amps * np.sin(kx * x + ky * y + phases), axis=-1)
        return 128.0 + scale * s

    return bandnoise


def _delta_for(seg: SegmentSpec, center: np.ndarray) -> Homography:
    cx, cy = float(center[0]), float(center[1])
    if seg.kind == "rotate":
        return Homography.rotation(math.radians(seg.rate), center=(cx, cy))
    if seg.kind == "scale":
        return Homography.scaling(seg.rate, center=(cx, cy))
    if seg.kind == "translate":
        return Homography.translation(*seg.vector)
    if seg.kind == "perspective":
        p = np.eye(3)
        p[2, 0], p[2, 1] = seg.vector
        t_fwd = Homography.translation(cx, cy).m
        t_back = Homography.translation(-cx, -cy).m
        return Homography(t_fwd @ p @ t_back)
    return Homography.identity()


def _rasterize(quad: np.ndarray, width: int, height: int) -> np.ndarray:
    """Exact pixel-center point-in-quad test, winding-agnostic."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    inside = np.ones((height, width), dtype=bool)
    q = np.asarray(quad, dtype=np.float64)
    area2 = 0.0
    for i in range(4):
        a, b = q[i], q[(i + 1) % 4]
        area2 += a[0] * b[1] - b[0] * a[1]
    orient = 1.0 if area2 >= 0 else -1.0
    for i in range(4):
        a, b = q[i], q[(i + 1) % 4]
        cross = (b[0] - a[0]) * (yy - a[1]) - (b[1] - a[1]) * (xx - a[0])
        inside &= cross * orient >= 0
    return inside


class GroundTruth:
    """Deterministic per-frame scene state computed straight from a spec.

    Frames, masks, and flows are recomputed on demand so long sequences
    never need to be resident; identical calls return identical arrays.
    """

    def __init__(self, spec: SceneSpec):
        spec.validate()
        self.spec = spec
        self.template_quad = spec.template_quad()
        self._texture = _make_texture(spec)

        hs: List[Homography] = [Homography.identity()]
        tags: List[List[str]] = [[]]
        quad = self.template_quad.copy()
        for seg in spec.segments:
            tag = {
                "rotate": "rotation",
                "scale": "scale-change",
                "translate": "motion",
                "perspective": "perspective",
                "hold": None,
            }[seg.kind]
            for _ in range(seg.frames):
                delta = _delta_for(seg, quad_centroid(quad))
                h = compose(delta, hs[-1])
                hs.append(h)
                quad = warp_points(h, self.template_quad)
                tags.append([tag] if tag else [])
        self.hs = hs
        self.quads = np.stack([warp_points(h, self.template_quad) for h in hs])
        self.n_frames = spec.n_frames

        for t in range(self.n_frames):
            if self._occluders_at(t):
                tags[t].append("occlusion")
            if self._out_of_view(t):
                tags[t].append("out-of-view")
            if t in spec.blur_frames:
                tags[t].append("blur")
        self.attributes = tags

    def _occluders_at(self, t: int) -> List[OccluderSpec]:
        return [o for o in self.spec.occluders if o.enter <= t <= o.exit]

    def _out_of_view(self, t: int) -> bool:
        q = self.quads[t]
        w, h = self.spec.width, self.spec.height
        return bool(
            np.any(q[:, 0] < 0)
            or np.any(q[:, 0] > w - 1)
            or np.any(q[:, 1] < 0)
            or np.any(q[:, 1] > h - 1)
        )

    def frame(self, t: int) -> np.ndarray:
        """Render frame t by texture lookup at inverse-warped coordinates."""
        spec = self.spec
        yy, xx = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
        m = invert(self.hs[t]).m
        denom = m[2, 0] * xx + m[2, 1] * yy + m[2, 2]
        with np.errstate(invalid="ignore", divide="ignore"):
            tx = (m[0, 0] * xx + m[0, 1] * yy + m[0, 2]) / denom
            ty = (m[1, 0] * xx + m[1, 1] * yy + m[1, 2]) / denom
        bad = ~np.isfinite(tx) | ~np.isfinite(ty)
        img = self._texture(np.where(bad, 0.0, tx), np.where(bad, 0.0, ty))
        img[bad] = 0.0
        for occ in self._occluders_at(t):
            x0, y0, x1, y1 = occ.rect
            img[(xx >= x0) & (xx <= x1) & (yy >= y0) & (yy <= y1)] = 90.0
        return np.clip(img, 0.0, 255.0)

    def exact_mask(self, t: int) -> np.ndarray:
        spec = self.spec
        mask = _rasterize(self.quads[t], spec.width, spec.height)
        if self._occluders_at(t):
            yy, xx = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
            for occ in self._occluders_at(t):
                x0, y0, x1, y1 = occ.rect
                mask &= ~((xx >= x0) & (xx <= x1) & (yy >= y0) & (yy <= y1))
        return mask

    def noisy_mask(self, t: int) -> np.ndarray:
        """Boundary perturbed by a smooth field of amplitude sigma px.

        Implemented by thresholding the signed distance against a
        low-pass-filtered Gaussian field, which locally dilates or erodes
        the boundary by roughly N(0, sigma) pixels.
        """
        mask = self.exact_mask(t)
        sigma = self.spec.mask_noise_sigma
        if sigma == 0.0 or not mask.any() or mask.all():
            return mask
        sd = ndimage.distance_transform_edt(mask) - ndimage.distance_transform_edt(
            ~mask
        )
        rng = np.random.default_rng([self.spec.noise_seed, _STREAM_MASK, t])
        rough = rng.standard_normal(mask.shape)
        smooth = ndimage.gaussian_filter(rough, 6.0)
        std = smooth.std()
        if std <= 0:
            return mask
        return sd > smooth * (sigma / std)

    def analytic_flow(self, t: int, h_pre: Homography) -> FlowField:
        """Exact residual flow between the template and a pre-warped frame.

        For template pixel p the pre-warped view of frame t shows the
        point W(h_pre^-1 . H*_t, p); the flow is that displacement.
        Weights are all one: the oracle is always confident.
        """
        spec = self.spec
        resid = compose(invert(h_pre), self.hs[t])
        yy, xx = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
        m = resid.m
        denom = m[2, 0] * xx + m[2, 1] * yy + m[2, 2]
        with np.errstate(invalid="ignore", divide="ignore"):
            fx = (m[0, 0] * xx + m[0, 1] * yy + m[0, 2]) / denom - xx
            fy = (m[1, 0] * xx + m[1, 1] * yy + m[1, 2]) / denom - yy
        flow = np.stack([fx, fy], axis=2)
        weight = np.ones(flow.shape[:2])
        invalid = ~np.isfinite(flow).all(axis=2)
        flow[invalid] = 0.0
        weight[invalid] = 0.0
        return FlowField(flow=flow, weight=weight)


def generate(spec: SceneSpec) -> GroundTruth:
    """Validate the spec and build its ground truth."""
    return GroundTruth(spec)


class OracleMaskProvider:
    """SegmentationProvider replaying ground-truth masks (noisy per spec)."""

    def __init__(self, gt: GroundTruth, exact: bool = False):
        self.gt = gt
        self.exact = exact

    def start(self, frame=None, mask=None) -> None:
        pass

    def mask_for(self, index: int, frame=None) -> np.ndarray:
        if self.exact:
            return self.gt.exact_mask(index)
        return self.gt.noisy_mask(index)


class OracleFlowProvider:
    """FlowProvider computing analytic residual flow from ground truth.

    needs_images is False: the controller can skip rendering the
    pre-warped image entirely when this provider is active.
    """

    needs_images = False

    def __init__(self, gt: GroundTruth, noise_sigma: Optional[float] = None, seed: int = 0):
        self.gt = gt
        self.noise_sigma = (
            gt.spec.flow_noise_sigma if noise_sigma is None else noise_sigma
        )
        self.seed = seed

    def flow(
        self,
        template_image: Optional[np.ndarray],
        prewarped_frame: Optional[np.ndarray],
        frame_index: int,
        h_pre: Homography,
    ) -> FlowField:
        field = self.gt.analytic_flow(frame_index, h_pre)
        if self.noise_sigma > 0:
            rng = np.random.default_rng([self.seed, _STREAM_FLOW, frame_index])
            field.flow = field.flow + rng.normal(
                0.0, self.noise_sigma, size=field.flow.shape
            )
        return field


def oracle_providers(gt: GroundTruth, exact_masks: bool = False):
    """(segmentation, flow, feature) providers replaying the ground truth."""
    from .providers import PatchFeatureProvider

    return (
        OracleMaskProvider(gt, exact=exact_masks),
        OracleFlowProvider(gt),
        PatchFeatureProvider(),
    )


GT_CSV_FIELDS = (
    ["frame"]
    + [f"h{i}{j}" for i in range(3) for j in range(3)]
    + [f"{axis}{i}" for i in range(4) for axis in ("x", "y")]
    + ["attrs"]
)


def save_sequence(
    gt: GroundTruth,
    outdir,
    write_frames: bool = True,
    write_flows: bool = True,
) -> None:
    """Materialize a generated sequence as a directory tree.

    Layout: frames/frame_%06d.pgm, masks/frame_%06d.pgm,
    flows/frame_%06d.flo (residual flow against the previous ground-truth
    pose, i.e. what a perfect tracker's attempt 1 would see), gt.csv,
    quads.txt (8 reals per line), spec.json echo.
    """
    out = Path(outdir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    if write_frames:
        (out / "frames").mkdir(exist_ok=True)
    if write_flows:
        (out / "flows").mkdir(exist_ok=True)

    rows = []
    quad_lines = []
    for t in range(gt.n_frames):
        imgio.write_mask(out / "masks" / f"frame_{t:06d}.pgm", gt.noisy_mask(t))
        if write_frames:
            frame = np.round(gt.frame(t)).astype(np.uint8)
            imgio.write_pgm(out / "frames" / f"frame_{t:06d}.pgm", frame)
        if write_flows and t > 0:
            field = gt.analytic_flow(t, gt.hs[t - 1])
            if gt.spec.flow_noise_sigma > 0:
                rng = np.random.default_rng([gt.spec.noise_seed, _STREAM_FLOW, t])
                field.flow += rng.normal(0.0, gt.spec.flow_noise_sigma, field.flow.shape)
            imgio.write_flo(out / "flows" / f"frame_{t:06d}.flo", field.flow)
        h = gt.hs[t].m
        quad = gt.quads[t]
        rows.append(
            [t]
            + [repr(float(v)) for v in h.ravel()]
            + [repr(float(v)) for v in quad.ravel()]
            + [";".join(gt.attributes[t])]
        )
        quad_lines.append(" ".join(repr(float(v)) for v in quad.ravel()))

    with open(out / "gt.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GT_CSV_FIELDS)
        writer.writerows(rows)
    (out / "quads.txt").write_text("\n".join(quad_lines) + "\n")
    (out / "spec.json").write_text(json.dumps(spec_to_dict(gt.spec), indent=2))


def load_gt_csv(path):
    """Read gt.csv back as (homographies, quads, per-frame attribute lists)."""
    hs: List[Homography] = []
    quads: List[np.ndarray] = []
    attrs: List[List[str]] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            m = np.array(
                [float(row[f"h{i}{j}"]) for i in range(3) for j in range(3)]
            ).reshape(3, 3)
            hs.append(Homography(m))
            quads.append(
                np.array(
                    [
                        [float(row[f"x{i}"]), float(row[f"y{i}"])]
                        for i in range(4)
                    ]
                )
            )
            attrs.append([a for a in row["attrs"].split(";") if a])
    return hs, np.stack(quads), attrs
