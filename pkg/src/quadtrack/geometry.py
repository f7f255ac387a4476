"""Projective geometry core: homographies, quads, and least-squares fits.

Conventions used across the package:

* points are ``(x, y)`` pairs, arrays of points have shape ``(n, 2)``,
* a homography maps template coordinates to frame coordinates,
* ``compose(a, b)`` applies ``b`` first, then ``a``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

_EPS = 1e-12


class GeometryError(Exception):
    """Base class for geometry failures."""


class DegenerateWarp(GeometryError):
    """A warped point fell on (or numerically at) the line at infinity."""


class DegenerateConfiguration(GeometryError):
    """The input points do not determine the requested transform."""


class InsufficientPoints(GeometryError):
    """Fewer points than the minimum the estimator needs."""


class SingularMatrix(GeometryError):
    """A matrix that must be invertible is not."""


def _canonical_matrix(m: np.ndarray) -> np.ndarray:
    """Scale a 3x3 matrix to the canonical form used everywhere else.

    The last entry is forced to 1 when it is not (numerically) zero,
    otherwise the matrix is scaled to unit Frobenius norm.
    """
    m = np.array(m, dtype=np.float64, copy=True)
    if m.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise SingularMatrix("matrix has non-finite entries")
    if abs(m[2, 2]) > _EPS:
        m /= m[2, 2]
    else:
        norm = np.linalg.norm(m)
        if norm <= _EPS:
            raise SingularMatrix("zero matrix")
        m /= norm
    if abs(np.linalg.det(m)) <= _EPS:
        raise SingularMatrix("matrix is singular after canonicalization")
    return m


@dataclass(frozen=True)
class Homography:
    """A 3x3 projective transform stored in canonical scale.

    The matrix is copied and canonicalized on construction; treat ``m``
    as read-only.
    """

    m: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "m", _canonical_matrix(self.m))

    @staticmethod
    def identity() -> "Homography":
        return Homography(np.eye(3))

    @staticmethod
    def translation(tx: float, ty: float) -> "Homography":
        m = np.eye(3)
        m[0, 2] = tx
        m[1, 2] = ty
        return Homography(m)

    @staticmethod
    def rotation(angle_rad: float, center: Sequence[float] = (0.0, 0.0)) -> "Homography":
        c, s = np.cos(angle_rad), np.sin(angle_rad)
        cx, cy = float(center[0]), float(center[1])
        m = np.array(
            [
                [c, -s, cx - c * cx + s * cy],
                [s, c, cy - s * cx - c * cy],
                [0.0, 0.0, 1.0],
            ]
        )
        return Homography(m)

    @staticmethod
    def scaling(s: float, center: Sequence[float] = (0.0, 0.0)) -> "Homography":
        cx, cy = float(center[0]), float(center[1])
        m = np.array(
            [
                [s, 0.0, cx * (1.0 - s)],
                [0.0, s, cy * (1.0 - s)],
                [0.0, 0.0, 1.0],
            ]
        )
        return Homography(m)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Homography):
            return NotImplemented
        return bool(np.array_equal(self.m, other.m))


def compose(a: Homography, b: Homography) -> Homography:
    """Transform applying ``b`` first, then ``a``."""
    return Homography(a.m @ b.m)


def invert(h: Homography) -> Homography:
    return Homography(np.linalg.inv(h.m))


def warp_point(h: Homography, p: Sequence[float]) -> np.ndarray:
    """Apply ``h`` to a single point, raising on a vanishing denominator."""
    x, y = float(p[0]), float(p[1])
    q = h.m @ np.array([x, y, 1.0])
    if abs(q[2]) <= _EPS:
        raise DegenerateWarp(f"point {(x, y)} maps to infinity")
    return q[:2] / q[2]


def warp_points(h: Homography, pts: np.ndarray) -> np.ndarray:
    """Vectorized ``warp_point`` over an ``(n, 2)`` array."""
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected (n, 2) points, got shape {pts.shape}")
    ones = np.ones((pts.shape[0], 1))
    q = np.hstack([pts, ones]) @ h.m.T
    w = q[:, 2]
    if np.any(np.abs(w) <= _EPS):
        raise DegenerateWarp("some points map to infinity")
    return q[:, :2] / w[:, None]


def alignment_error(
    h: Homography, h_star: Homography, points: np.ndarray
) -> float:
    """RMSE between the two warps of a set of control points.

    With the four template corners as control points this is the
    per-frame alignment error used throughout the evaluation harness.
    """
    points = np.asarray(points, dtype=np.float64)
    a = warp_points(h, points)
    b = warp_points(h_star, points)
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))


@dataclass
class PointPair:
    """A source/destination correspondence with a non-negative weight."""

    src: np.ndarray
    dst: np.ndarray
    weight: float = 1.0

    def __post_init__(self) -> None:
        self.src = np.asarray(self.src, dtype=np.float64).reshape(2)
        self.dst = np.asarray(self.dst, dtype=np.float64).reshape(2)
        if not (np.all(np.isfinite(self.src)) and np.all(np.isfinite(self.dst))):
            raise ValueError("non-finite correspondence")
        if not (self.weight >= 0.0 and np.isfinite(self.weight)):
            raise ValueError("weight must be finite and >= 0")


def stack_pairs(pairs: Sequence[PointPair]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    src = np.array([p.src for p in pairs], dtype=np.float64).reshape(-1, 2)
    dst = np.array([p.dst for p in pairs], dtype=np.float64).reshape(-1, 2)
    w = np.array([p.weight for p in pairs], dtype=np.float64)
    return src, dst, w


def _check_inputs(
    src: np.ndarray, dst: np.ndarray, weights: Optional[np.ndarray], min_points: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise ValueError("src and dst must have matching shapes")
    if weights is None:
        w = np.ones(src.shape[0])
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != src.shape[0]:
            raise ValueError("weights length mismatch")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and >= 0")
    keep = w > 0
    src, dst, w = src[keep], dst[keep], w[keep]
    if src.shape[0] < min_points:
        raise InsufficientPoints(
            f"need at least {min_points} positively weighted pairs, got {src.shape[0]}"
        )
    return src, dst, w


def _hartley_normalization(pts: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to the origin and the mean distance to sqrt(2)."""
    centroid = pts.mean(axis=0)
    dists = np.sqrt(np.sum((pts - centroid) ** 2, axis=1))
    mean_dist = dists.mean()
    if mean_dist <= _EPS:
        raise DegenerateConfiguration("all points coincide")
    s = np.sqrt(2.0) / mean_dist
    t = np.array(
        [
            [s, 0.0, -s * centroid[0]],
            [0.0, s, -s * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )
    return t


def _apply_3x3(t: np.ndarray, pts: np.ndarray) -> np.ndarray:
    q = np.hstack([pts, np.ones((pts.shape[0], 1))]) @ t.T
    return q[:, :2] / q[:, 2:3]


def estimate_homography(
    src: np.ndarray,
    dst: np.ndarray,
    weights: Optional[np.ndarray] = None,
    refine: bool = False,
) -> Homography:
    """Weighted DLT homography fit with Hartley normalization.

    Parameters
    ----------
    src, dst : (n, 2) arrays, n >= 4 after dropping zero-weight pairs.
    weights : optional non-negative per-pair weights.
    refine : run a Levenberg-Marquardt reprojection refinement after the
        linear solve.  Exact-fit inputs are already reproduced by the DLT,
        so this matters only for noisy overdetermined fits.
    """
    src, dst, w = _check_inputs(src, dst, weights, min_points=4)
    t_src = _hartley_normalization(src)
    t_dst = _hartley_normalization(dst)
    sn = _apply_3x3(t_src, src)
    dn = _apply_3x3(t_dst, dst)

    n = sn.shape[0]
    a = np.zeros((2 * n, 9))
    x, y = sn[:, 0], sn[:, 1]
    u, v = dn[:, 0], dn[:, 1]
    a[0::2, 0] = -x
    a[0::2, 1] = -y
    a[0::2, 2] = -1.0
    a[0::2, 6] = u * x
    a[0::2, 7] = u * y
    a[0::2, 8] = u
    a[1::2, 3] = -x
    a[1::2, 4] = -y
    a[1::2, 5] = -1.0
    a[1::2, 6] = v * x
    a[1::2, 7] = v * y
    a[1::2, 8] = v
    a *= np.repeat(np.sqrt(w), 2)[:, None]

    _, s, vt = np.linalg.svd(a)
    # Two vanishing singular values mean the solution is not unique
    # (three collinear source points, repeated correspondences, ...).
    if s[-2] <= 1e-9 * max(s[0], _EPS):
        raise DegenerateConfiguration("correspondences do not determine a homography")
    hn = vt[-1].reshape(3, 3)
    try:
        h = Homography(np.linalg.inv(t_dst) @ hn @ t_src)
    except SingularMatrix as exc:
        raise DegenerateConfiguration("fitted homography is singular") from exc
    if refine:
        h = _refine_reprojection(h, src, dst, w)
    return h


def _refine_reprojection(
    h: Homography, src: np.ndarray, dst: np.ndarray, w: np.ndarray
) -> Homography:
    from scipy.optimize import least_squares

    if abs(h.m[2, 2] - 1.0) > 1e-9:
        return h  # canonical scale is not m22=1, skip rather than reparametrize
    sw = np.sqrt(w)

    def residuals(params: np.ndarray) -> np.ndarray:
        m = np.append(params, 1.0).reshape(3, 3)
        q = np.hstack([src, np.ones((src.shape[0], 1))]) @ m.T
        denom = q[:, 2]
        bad = np.abs(denom) <= _EPS
        denom = np.where(bad, 1.0, denom)
        proj = q[:, :2] / denom[:, None]
        r = (proj - dst) * sw[:, None]
        r[bad] = 1e6
        return r.ravel()

    fit = least_squares(residuals, h.m.ravel()[:8], method="lm", max_nfev=200)
    try:
        return Homography(np.append(fit.x, 1.0).reshape(3, 3))
    except SingularMatrix:
        return h


def estimate_similarity(
    src: np.ndarray, dst: np.ndarray, weights: Optional[np.ndarray] = None
) -> Homography:
    """Least-squares 4-DoF fit (uniform scale, rotation, translation)."""
    src, dst, w = _check_inputs(src, dst, weights, min_points=2)
    if np.max(np.abs(src - src[0])) <= _EPS:
        raise DegenerateConfiguration("source points coincide")
    n = src.shape[0]
    a = np.zeros((2 * n, 4))
    x, y = src[:, 0], src[:, 1]
    a[0::2, 0] = x
    a[0::2, 1] = -y
    a[0::2, 2] = 1.0
    a[1::2, 0] = y
    a[1::2, 1] = x
    a[1::2, 3] = 1.0
    b = dst.reshape(-1)
    sw = np.repeat(np.sqrt(w), 2)
    sol, _, rank, _ = np.linalg.lstsq(a * sw[:, None], b * sw, rcond=None)
    if rank < 4:
        raise DegenerateConfiguration("similarity system is rank deficient")
    pa, pb, tx, ty = sol
    if np.hypot(pa, pb) <= _EPS:
        raise DegenerateConfiguration("fitted similarity collapses to a point")
    m = np.array([[pa, -pb, tx], [pb, pa, ty], [0.0, 0.0, 1.0]])
    return Homography(m)


def estimate_translation(
    src: np.ndarray, dst: np.ndarray, weights: Optional[np.ndarray] = None
) -> Homography:
    """Weighted mean displacement as a 2-DoF transform."""
    src, dst, w = _check_inputs(src, dst, weights, min_points=1)
    delta = np.average(dst - src, axis=0, weights=w)
    return Homography.translation(delta[0], delta[1])


def quad_area(points: np.ndarray) -> float:
    """Absolute shoelace area of a 4-point polygon in storage order."""
    p = np.asarray(points, dtype=np.float64).reshape(4, 2)
    return abs(signed_quad_area(p))


def signed_quad_area(points: np.ndarray) -> float:
    p = np.asarray(points, dtype=np.float64).reshape(4, 2)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def quad_perimeter(points: np.ndarray) -> float:
    p = np.asarray(points, dtype=np.float64).reshape(4, 2)
    return float(np.sum(np.sqrt(np.sum((np.roll(p, -1, axis=0) - p) ** 2, axis=1))))


def quad_centroid(points: np.ndarray) -> np.ndarray:
    return np.asarray(points, dtype=np.float64).reshape(4, 2).mean(axis=0)


def quad_is_degenerate(points: np.ndarray, tol: float = 1e-6) -> bool:
    """True when two corners coincide or any three corners are collinear."""
    p = np.asarray(points, dtype=np.float64).reshape(4, 2)
    if not np.all(np.isfinite(p)):
        return True
    for i in range(4):
        for j in range(i + 1, 4):
            if np.linalg.norm(p[i] - p[j]) <= tol:
                return True
    for i in range(4):
        for j in range(i + 1, 4):
            for k in range(j + 1, 4):
                cross = (p[j] - p[i])[0] * (p[k] - p[i])[1] - (p[j] - p[i])[1] * (
                    p[k] - p[i]
                )[0]
                if abs(cross) <= tol * max(
                    1.0, np.linalg.norm(p[j] - p[i]) * np.linalg.norm(p[k] - p[i])
                ):
                    return True
    return False


@dataclass
class Quad:
    """Four labeled corners with per-corner visibility flags.

    Corner order is the storage order of the initial annotation; all
    pose estimates keep this labeling.
    """

    points: np.ndarray
    visible: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64).reshape(4, 2)
        if self.visible is None:
            self.visible = np.ones(4, dtype=bool)
        else:
            self.visible = np.asarray(self.visible, dtype=bool).reshape(4)

    def validate(self, tol: float = 1e-6) -> None:
        """Raise if all four corners are visible but geometrically degenerate."""
        if bool(np.all(self.visible)) and quad_is_degenerate(self.points, tol):
            raise DegenerateConfiguration("degenerate quad")

    def area(self) -> float:
        return quad_area(self.points)

    def perimeter(self) -> float:
        return quad_perimeter(self.points)

    def centroid(self) -> np.ndarray:
        return quad_centroid(self.points)

    def copy(self) -> "Quad":
        return Quad(self.points.copy(), self.visible.copy())
