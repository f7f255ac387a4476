"""Mask geometry: contour tracing, weighted Hough line voting, quad corners.

The pipeline turns a binary segmentation mask into up to four boundary
lines and their intersections:

1. trace the outer boundary of every 8-connected foreground component,
2. shift contours to zero mean and vote for lines in a (normal angle,
   distance) accumulator, each point voting for a fan of directions
   around its local contour direction,
3. smooth the accumulator (tiled threefold along the angle axis so the
   smoothing wraps), pick peak cells greedily, keep the strongest K,
4. refit every line by total least squares on its supporting contour
   points and intersect the refined lines into corner candidates.

Distances use the canonical line form ``x*cos(theta) + y*sin(theta) = d``
with ``d >= 0`` and ``theta`` in ``[0, 2*pi)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .geometry import DegenerateConfiguration


class MaskGeomError(Exception):
    pass


class ContourTooShort(MaskGeomError):
    """Contour has too few points for a direction estimate."""


class OutOfRange(MaskGeomError):
    """Vote offset outside the supported fan."""


class NoIntersections(MaskGeomError):
    """Fewer than two lines, nothing to intersect."""


@dataclass(frozen=True)
class HoughConfig:
    min_contour_len: int = 20
    angle_bins: int = 359
    dist_bins: int = 100
    direction_offset: int = 4
    vote_offsets_deg: tuple = (-10, -8, -6, -4, -2, 0, 2, 4, 6, 8, 10)
    smooth_sigma: float = 4.0
    peak_min_distance: int = 10
    max_lines: int = 4
    refine_dist_tol: float = 15.0
    refine_angle_tol_deg: float = 15.0
    corner_parallel_sin: float = 0.02
    corner_mask_dist_tol: float = 15.0

    @property
    def max_vote_offset(self) -> float:
        return max(abs(o) for o in self.vote_offsets_deg)


@dataclass(frozen=True)
class LineParams:
    """Line ``x*cos(theta) + y*sin(theta) = d`` with d >= 0."""

    theta: float
    d: float
    votes: float = 0.0
    support: int = 0

    def normal(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    def direction_mod_pi(self) -> float:
        return (self.theta + 0.5 * math.pi) % math.pi

    def point_distances(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return np.abs(pts @ self.normal() - self.d)


@dataclass
class Contour:
    """Closed boundary walk, one row per pixel in visit order."""

    points: np.ndarray  # (n, 2) float64, (x, y)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class HoughAccumulator:
    grid: np.ndarray  # (angle_bins, dist_bins)
    max_dist: float
    center: np.ndarray  # subtracted from contours before voting


@dataclass
class CornerDetection:
    point: np.ndarray  # (2,)
    lines: tuple  # indices into the theta-sorted line list


@dataclass
class DiscardedCorner:
    point: Optional[np.ndarray]
    lines: tuple
    reason: str  # "parallel" | "far_from_mask" | "surplus"


# Moore neighborhood in clockwise order starting at West, as (dx, dy).
_MOORE = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))
_MOORE_INDEX = {off: i for i, off in enumerate(_MOORE)}


def _trace_outer_boundary(mask: np.ndarray, start: tuple) -> list:
    """Moore-neighbor walk from a topmost-leftmost component pixel."""
    h, w = mask.shape
    sx, sy = start

    def is_fg(x: int, y: int) -> bool:
        return 0 <= x < w and 0 <= y < h and mask[y, x]

    walk = [(sx, sy)]
    cur = (sx, sy)
    back = (sx - 1, sy)  # west neighbor is background for a raster-order start
    first_move = None
    while True:
        bi = _MOORE_INDEX[(back[0] - cur[0], back[1] - cur[1])]
        nxt = None
        for step in range(1, 9):
            k = (bi + step) % 8
            cand = (cur[0] + _MOORE[k][0], cur[1] + _MOORE[k][1])
            if is_fg(*cand):
                nxt = cand
                kprev = (k - 1) % 8
                back = (cur[0] + _MOORE[kprev][0], cur[1] + _MOORE[kprev][1])
                break
        if nxt is None:
            break  # isolated pixel
        move = (cur, nxt)
        if first_move is None:
            first_move = move
        elif move == first_move:
            break
        walk.append(nxt)
        cur = nxt
    if len(walk) > 1 and walk[-1] == walk[0]:
        walk.pop()
    return walk


def extract_contours(mask: np.ndarray, min_contour_len: int = 20) -> list:
    """Outer boundaries of all 8-connected components, short ones dropped."""
    mask = np.asarray(mask).astype(bool)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    if not mask.any():
        return []
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    contours = []
    slices = ndimage.find_objects(labels)
    for k in range(1, count + 1):
        sl = slices[k - 1]
        local = labels[sl] == k
        flat = int(np.argmax(local))
        ly, lx = divmod(flat, local.shape[1])
        start = (sl[1].start + lx, sl[0].start + ly)
        walk = _trace_outer_boundary(mask, start)
        if len(walk) >= min_contour_len:
            contours.append(Contour(np.array(walk, dtype=np.float64)))
    return contours


def contour_directions(contour: Contour, offset: int = 4) -> np.ndarray:
    """Local direction at each point: chord angle between the points
    ``offset`` steps behind and ahead (cyclic), folded into [0, pi)."""
    pts = contour.points
    if len(pts) < 2 * offset + 1:
        raise ContourTooShort(
            f"need at least {2 * offset + 1} points, got {len(pts)}"
        )
    ahead = np.roll(pts, -offset, axis=0)
    behind = np.roll(pts, offset, axis=0)
    chord = ahead - behind
    return np.mod(np.arctan2(chord[:, 1], chord[:, 0]), math.pi)


def vote_weight(delta_alpha_deg: float, max_offset_deg: float = 10.0) -> float:
    """Triangular vote weight: 1 at the central direction, 0.5 at the edges."""
    if abs(delta_alpha_deg) > max_offset_deg:
        raise OutOfRange(f"|{delta_alpha_deg}| exceeds {max_offset_deg} degrees")
    return 1.0 - abs(delta_alpha_deg) / (2.0 * max_offset_deg)


def hough_vote(
    contours: Sequence[Contour],
    cfg: HoughConfig = HoughConfig(),
    center: Sequence[float] = (0.0, 0.0),
) -> HoughAccumulator:
    """Accumulate weighted line votes from zero-mean contours.

    Every contour point casts one vote per configured direction offset;
    the line through the point perpendicular to the offset direction gets
    weight ``vote_weight(offset)``.  ``center`` is carried through so
    peak lines can be mapped back to image coordinates.
    """
    all_pts = [c.points for c in contours]
    if all_pts:
        max_dist = float(max(np.max(np.linalg.norm(p, axis=1)) for p in all_pts))
    else:
        max_dist = 0.0
    scale = max_dist if max_dist > 0 else 1.0
    grid = np.zeros((cfg.angle_bins, cfg.dist_bins), dtype=np.float64)
    bins_per_deg = cfg.angle_bins / 360.0
    for contour in contours:
        pts = contour.points
        if len(pts) < 2 * cfg.direction_offset + 1:
            continue
        alphas_deg = np.degrees(contour_directions(contour, cfg.direction_offset))
        x, y = pts[:, 0], pts[:, 1]
        for off in cfg.vote_offsets_deg:
            w = vote_weight(off, cfg.max_vote_offset)
            theta_deg = alphas_deg + 90.0 + off
            theta = np.radians(theta_deg)
            d = x * np.cos(theta) + y * np.sin(theta)
            neg = d < 0
            theta_deg = np.where(neg, theta_deg + 180.0, theta_deg)
            d = np.abs(d)
            a_idx = np.round(np.mod(theta_deg, 360.0) * bins_per_deg).astype(int)
            a_idx %= cfg.angle_bins
            d_idx = np.clip(
                np.round(d / scale * (cfg.dist_bins - 1)).astype(int),
                0,
                cfg.dist_bins - 1,
            )
            np.add.at(grid, (a_idx, d_idx), w)
    return HoughAccumulator(grid=grid, max_dist=max_dist, center=np.asarray(center, dtype=np.float64))


def find_peak_lines(acc: HoughAccumulator, cfg: HoughConfig = HoughConfig()) -> list:
    """Strongest smoothed accumulator peaks as lines in image coordinates.

    The accumulator is tiled three times along the angle axis before
    smoothing so peaks near the angular wrap survive; only peaks from the
    middle tile are kept.  Peaks are local maxima taken greedily by value
    with a Chebyshev exclusion radius, then the top K sorted by angle.
    """
    n_ang = acc.grid.shape[0]
    tiled = np.concatenate([acc.grid, acc.grid, acc.grid], axis=0)
    smoothed = ndimage.gaussian_filter(tiled, sigma=cfg.smooth_sigma)
    localmax = smoothed >= ndimage.maximum_filter(smoothed, size=3, mode="nearest")
    cand = np.argwhere(localmax & (smoothed > 0.0))
    if cand.size == 0:
        return []
    values = smoothed[cand[:, 0], cand[:, 1]]
    order = np.argsort(values)[::-1]
    selected: list = []
    middle: list = []
    radius = cfg.peak_min_distance
    for idx in order:
        a, d = int(cand[idx, 0]), int(cand[idx, 1])
        if any(max(abs(a - pa), abs(d - pd)) < radius for pa, pd in selected):
            continue
        selected.append((a, d))
        if n_ang <= a < 2 * n_ang:
            middle.append((a, d, float(values[idx])))
            if len(middle) >= cfg.max_lines:
                break

    scale = acc.max_dist if acc.max_dist > 0 else 1.0
    lines = []
    for a, d_idx, val in middle[: cfg.max_lines]:
        theta = math.radians((a - n_ang) * 360.0 / n_ang)
        d = d_idx * scale / (cfg.dist_bins - 1)
        # undo the zero-mean shift applied before voting
        d_img = d + acc.center[0] * math.cos(theta) + acc.center[1] * math.sin(theta)
        if d_img < 0:
            theta = (theta + math.pi) % (2 * math.pi)
            d_img = -d_img
        lines.append(LineParams(theta=theta % (2 * math.pi), d=d_img, votes=val))
    lines.sort(key=lambda ln: ln.theta)
    return lines


def _angle_gap_mod_pi(a: np.ndarray, b: float) -> np.ndarray:
    diff = np.mod(a - b, math.pi)
    return np.minimum(diff, math.pi - diff)


def refine_lines(
    lines: Sequence[LineParams],
    contours: Sequence[Contour],
    cfg: HoughConfig = HoughConfig(),
) -> list:
    """Total-least-squares refit of each line on its supporting points.

    A contour point supports its nearest line when it lies within the
    distance tolerance and its local direction agrees within the angle
    tolerance.  Lines with fewer than two supporters are dropped.
    """
    if not lines:
        return []
    usable = [c for c in contours if len(c) >= 2 * cfg.direction_offset + 1]
    if not usable:
        return []
    pts = np.vstack([c.points for c in usable])
    alphas = np.concatenate(
        [contour_directions(c, cfg.direction_offset) for c in usable]
    )
    normals = np.array([ln.normal() for ln in lines])  # (L, 2)
    ds = np.array([ln.d for ln in lines])
    dists = np.abs(pts @ normals.T - ds)  # (n, L)
    nearest = np.argmin(dists, axis=1)
    nearest_dist = dists[np.arange(len(pts)), nearest]
    angle_tol = math.radians(cfg.refine_angle_tol_deg)

    refined = []
    for j, line in enumerate(lines):
        sel = (nearest == j) & (nearest_dist <= cfg.refine_dist_tol)
        gaps = _angle_gap_mod_pi(alphas[sel], line.direction_mod_pi())
        support_pts = pts[sel][gaps <= angle_tol]
        if support_pts.shape[0] < 2:
            continue
        centroid = support_pts.mean(axis=0)
        u, s, vt = np.linalg.svd(support_pts - centroid, full_matrices=False)
        if s[0] <= 1e-12:
            continue
        direction = vt[0]
        normal = np.array([-direction[1], direction[0]])
        d = float(normal @ centroid)
        if d < 0:
            normal, d = -normal, -d
        theta = math.atan2(normal[1], normal[0]) % (2 * math.pi)
        refined.append(
            LineParams(theta=theta, d=d, votes=line.votes, support=int(support_pts.shape[0]))
        )
    refined.sort(key=lambda ln: ln.theta)
    return refined


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew monotone chain; returns hull vertices in CCW order."""
    pts = sorted(map(tuple, points))
    if len(pts) <= 2:
        return np.array(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def _polygon_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * abs(float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)))


def _distance_to_foreground(point: np.ndarray, mask: np.ndarray, dist_map: np.ndarray) -> float:
    h, w = mask.shape
    xi, yi = int(round(point[0])), int(round(point[1]))
    if 0 <= xi < w and 0 <= yi < h:
        return float(dist_map[yi, xi])
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        return math.inf
    return float(np.min(np.hypot(xs - point[0], ys - point[1])))


def quad_corners(
    lines: Sequence[LineParams],
    mask: np.ndarray,
    cfg: HoughConfig = HoughConfig(),
) -> tuple:
    """Pairwise line intersections filtered down to quad corner candidates.

    Returns ``(corners, discarded)``.  Near-parallel pairs and
    intersections far from the mask foreground are logged rather than
    returned; when more than four candidates survive, the four forming
    the largest-area convex quadrilateral win.  Corners come out ordered
    counter-clockwise starting at the one formed by the two lowest-angle
    lines.
    """
    if len(lines) < 2:
        raise NoIntersections(f"got {len(lines)} lines, need at least 2")
    mask = np.asarray(mask).astype(bool)
    lines = sorted(lines, key=lambda ln: ln.theta)
    dist_map = ndimage.distance_transform_edt(~mask)

    candidates: list = []
    discarded: list = []
    for i, j in itertools.combinations(range(len(lines)), 2):
        li, lj = lines[i], lines[j]
        sin_gap = math.sin(lj.theta - li.theta)
        if abs(sin_gap) < cfg.corner_parallel_sin:
            discarded.append(DiscardedCorner(None, (i, j), "parallel"))
            continue
        a = np.array([[math.cos(li.theta), math.sin(li.theta)],
                      [math.cos(lj.theta), math.sin(lj.theta)]])
        p = np.linalg.solve(a, np.array([li.d, lj.d]))
        if _distance_to_foreground(p, mask, dist_map) > cfg.corner_mask_dist_tol:
            discarded.append(DiscardedCorner(p, (i, j), "far_from_mask"))
            continue
        candidates.append(CornerDetection(point=p, lines=(i, j)))

    if len(candidates) > 4:
        best = None
        best_key = (-1, -1.0)
        for combo in itertools.combinations(range(len(candidates)), 4):
            pts = np.array([candidates[k].point for k in combo])
            hull = _convex_hull(pts)
            key = (1 if hull.shape[0] == 4 else 0, _polygon_area(hull))
            if key > best_key:
                best_key, best = key, combo
        keep = set(best)
        for k in range(len(candidates)):
            if k not in keep:
                discarded.append(
                    DiscardedCorner(candidates[k].point, candidates[k].lines, "surplus")
                )
        candidates = [candidates[k] for k in sorted(keep)]

    if len(candidates) >= 3:
        center = np.mean([c.point for c in candidates], axis=0)
        candidates.sort(
            key=lambda c: math.atan2(c.point[1] - center[1], c.point[0] - center[0])
        )
    if candidates:
        start = min(range(len(candidates)), key=lambda k: tuple(sorted(candidates[k].lines)))
        candidates = candidates[start:] + candidates[:start]
    return candidates, discarded


@dataclass
class MaskQuadResult:
    corners: list
    lines: list
    contours: list
    discarded: list


def fit_mask_quad(mask: np.ndarray, cfg: HoughConfig = HoughConfig()) -> MaskQuadResult:
    """Full mask-to-corners pipeline; empty masks give an empty result."""
    mask = np.asarray(mask).astype(bool)
    contours = extract_contours(mask, cfg.min_contour_len)
    if not contours:
        return MaskQuadResult([], [], [], [])
    center = np.vstack([c.points for c in contours]).mean(axis=0)
    shifted = [Contour(c.points - center) for c in contours]
    acc = hough_vote(shifted, cfg, center=center)
    peaks = find_peak_lines(acc, cfg)
    lines = refine_lines(peaks, contours, cfg)
    if len(lines) < 2:
        return MaskQuadResult([], lines, contours, [])
    corners, discarded = quad_corners(lines, mask, cfg)
    return MaskQuadResult(corners, lines, contours, discarded)
