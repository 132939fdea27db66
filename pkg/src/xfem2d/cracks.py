"""Crack geometry: directed polylines, signed distances, and tip frames.

A crack is an ordered polyline with two endpoint flags marking which ends
are live (growing) tips.  The signed distance to the polyline is positive
on the left of the walking direction; the sign only matters up to a global
flip because the discontinuous enrichment is shifted per node.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "CrackPath",
    "TipFrame",
    "CrackGeometryError",
    "heaviside",
    "signed_distance",
    "signed_distance_batch",
    "distance_batch",
    "nearest_point",
    "tip_frame",
    "tip_local_coords",
    "extend_crack",
    "segments_intersect",
]


class CrackGeometryError(ValueError):
    """Raised for invalid crack polylines or refused extensions."""


_MIN_SEGMENT = 1e-12


@dataclass(frozen=True)
class CrackPath:
    """Directed crack polyline.

    Attributes
    ----------
    vertices : ndarray, shape (k, 2)
        Ordered polyline vertices in meters.
    tip_start, tip_end : bool
        Whether the first/last vertex is a live crack tip (an endpoint on
        the domain boundary, e.g. a crack mouth, is not a tip).
    id : int
        Stable crack identifier used in outputs.
    """

    vertices: np.ndarray
    tip_start: bool = True
    tip_end: bool = True
    id: int = 0

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        object.__setattr__(self, "vertices", v)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 2:
            raise CrackGeometryError(f"crack {self.id}: need at least 2 vertices of dimension 2")
        if not np.all(np.isfinite(v)):
            raise CrackGeometryError(f"crack {self.id}: non-finite vertex")
        seg = np.diff(v, axis=0)
        if np.any(np.linalg.norm(seg, axis=1) <= _MIN_SEGMENT):
            raise CrackGeometryError(f"crack {self.id}: zero-length segment")
        if _polyline_self_intersects(v):
            raise CrackGeometryError(f"crack {self.id}: polyline self-intersects")
        v.setflags(write=False)

    @property
    def n_segments(self) -> int:
        return self.vertices.shape[0] - 1

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.vertices, axis=0), axis=1).sum())

    def active_tips(self) -> list[int]:
        """Live tip ids: 0 = start vertex, 1 = end vertex."""
        tips = []
        if self.tip_start:
            tips.append(0)
        if self.tip_end:
            tips.append(1)
        return tips

    def tip_coord(self, tip_id: int) -> np.ndarray:
        return self.vertices[0] if tip_id == 0 else self.vertices[-1]

    def point_at_arclength(self, s: float) -> np.ndarray:
        """Point on the polyline at arc length ``s`` from the start vertex."""
        seg = np.diff(self.vertices, axis=0)
        lens = np.linalg.norm(seg, axis=1)
        cum = np.concatenate([[0.0], np.cumsum(lens)])
        s = float(np.clip(s, 0.0, cum[-1]))
        j = min(int(np.searchsorted(cum, s, side="right")) - 1, len(lens) - 1)
        t = (s - cum[j]) / lens[j]
        return self.vertices[j] + t * seg[j]


@dataclass(frozen=True)
class TipFrame:
    """Local coordinate frame at a crack tip.

    ``tangent`` points out of the crack body (the direction of growth);
    ``normal`` is the tangent rotated by +90 degrees.
    """

    origin: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        for name in ("origin", "tangent", "normal"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if abs(np.linalg.norm(self.tangent) - 1.0) > 1e-12:
            raise CrackGeometryError("tip tangent must be a unit vector")
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-12:
            raise CrackGeometryError("tip normal must be a unit vector")
        if abs(float(self.tangent @ self.normal)) > 1e-12:
            raise CrackGeometryError("tip frame must be orthogonal")


def heaviside(phi):
    """Generalized Heaviside of the signed distance: +1 for phi >= 0, else -1."""
    return np.where(np.asarray(phi) >= 0.0, 1.0, -1.0)[()]


def _closest_on_segments(vertices: np.ndarray, xs: np.ndarray):
    """Squared distance and side data from points to every polyline segment.

    Returns (d2, t, cross) each of shape (n_points, n_segments): squared
    distance, clamped segment parameter, and the cross product of the
    segment direction with the point offset (positive = left side).
    """
    a = vertices[:-1]  # (k, 2)
    seg = np.diff(vertices, axis=0)
    seg_len2 = np.einsum("ka,ka->k", seg, seg)
    rel = xs[:, None, :] - a[None, :, :]  # (n, k, 2)
    t = np.clip(np.einsum("nka,ka->nk", rel, seg) / seg_len2, 0.0, 1.0)
    foot = a[None] + t[..., None] * seg[None]
    diff = xs[:, None, :] - foot
    d2 = np.einsum("nka,nka->nk", diff, diff)
    # cross = seg_x * rel_y - seg_y * rel_x, positive on the left of the segment
    cross = seg[None, :, 0] * rel[..., 1] - seg[None, :, 1] * rel[..., 0]
    return d2, t, cross


def signed_distance_batch(crack: CrackPath, xs: np.ndarray) -> np.ndarray:
    """Signed distance from each point to the crack polyline.

    Positive on the left of the directed polyline.  Near a shared vertex of
    two segments the side is decided against the averaged tangent, which
    keeps the sign field consistent around kinks.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    v = crack.vertices
    d2, t, cross = _closest_on_segments(v, xs)
    j = np.argmin(d2, axis=1)  # nearest segment per point
    n = xs.shape[0]
    idx = np.arange(n)
    dist = np.sqrt(d2[idx, j])
    tj = t[idx, j]
    sign = np.where(cross[idx, j] >= 0.0, 1.0, -1.0)
    # Vertex regions: the nearest feature is a polyline vertex shared by two
    # segments; decide the side against the average of the two tangents.
    seg = np.diff(v, axis=0)
    unit = seg / np.linalg.norm(seg, axis=1, keepdims=True)
    interior_vertex = ((tj <= 0.0) & (j > 0)) | ((tj >= 1.0) & (j < crack.n_segments - 1))
    for i in np.nonzero(interior_vertex)[0]:
        jv = j[i] if t[i, j[i]] <= 0.0 else j[i] + 1  # vertex index
        bisect = unit[jv - 1] + unit[jv]
        rel = xs[i] - v[jv]
        c = bisect[0] * rel[1] - bisect[1] * rel[0]
        sign[i] = 1.0 if c >= 0.0 else -1.0
    return sign * dist


def signed_distance(crack: CrackPath, x) -> float:
    """Scalar version of :func:`signed_distance_batch`."""
    return float(signed_distance_batch(crack, np.asarray(x, dtype=float)[None, :])[0])


def distance_batch(crack: CrackPath, xs: np.ndarray) -> np.ndarray:
    """Unsigned distance from each point to the crack polyline."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    d2, _, _ = _closest_on_segments(crack.vertices, xs)
    return np.sqrt(d2.min(axis=1))


def nearest_point(crack: CrackPath, x):
    """Closest point on the polyline and the unit normal of its segment.

    Returns ``(point, normal, segment_index)``; the normal is the segment
    tangent rotated by +90 degrees (the positive-phi side).
    """
    xs = np.asarray(x, dtype=float)[None, :]
    d2, t, _ = _closest_on_segments(crack.vertices, xs)
    j = int(np.argmin(d2[0]))
    seg = crack.vertices[j + 1] - crack.vertices[j]
    tangent = seg / np.linalg.norm(seg)
    foot = crack.vertices[j] + t[0, j] * seg
    return foot, np.array([-tangent[1], tangent[0]]), j


def tip_frame(crack: CrackPath, tip_id: int) -> TipFrame:
    """Local frame of tip 0 (start vertex) or 1 (end vertex)."""
    if tip_id == 0:
        origin = crack.vertices[0]
        tangent = crack.vertices[0] - crack.vertices[1]
    elif tip_id == 1:
        origin = crack.vertices[-1]
        tangent = crack.vertices[-1] - crack.vertices[-2]
    else:
        raise CrackGeometryError(f"tip id must be 0 or 1, got {tip_id}")
    tangent = tangent / np.linalg.norm(tangent)
    normal = np.array([-tangent[1], tangent[0]])
    return TipFrame(origin=origin.copy(), tangent=tangent, normal=normal)


def tip_local_coords(frame: TipFrame, x):
    """Polar coordinates (r, theta) of ``x`` in the tip frame.

    theta is measured from the tangent, positive toward the normal, in
    (-pi, pi]; r = 0 maps to theta = 0.
    """
    rel = np.asarray(x, dtype=float) - frame.origin
    xp = rel @ frame.tangent
    yp = rel @ frame.normal
    r = np.hypot(xp, yp)
    theta = np.where(r == 0.0, 0.0, np.arctan2(yp, xp))
    # atan2 returns -pi for points exactly on the negative axis; fold to +pi.
    theta = np.where(theta == -np.pi, np.pi, theta)
    if np.ndim(r) == 0:
        return float(r), float(theta)
    return r, theta


def extend_crack(crack: CrackPath, tip_id: int, theta_c: float, delta_a: float) -> CrackPath:
    """Grow one live tip by ``delta_a`` at kink angle ``theta_c``.

    The kink angle is measured in the tip frame (positive toward the
    normal).  Raises when the tip is inactive or the grown polyline would
    self-intersect.
    """
    if delta_a <= 0.0:
        raise CrackGeometryError("delta_a must be positive")
    if tip_id == 0 and not crack.tip_start:
        raise CrackGeometryError(f"crack {crack.id}: start tip is not active")
    if tip_id == 1 and not crack.tip_end:
        raise CrackGeometryError(f"crack {crack.id}: end tip is not active")
    frame = tip_frame(crack, tip_id)
    direction = np.cos(theta_c) * frame.tangent + np.sin(theta_c) * frame.normal
    new_vertex = frame.origin + delta_a * direction
    if tip_id == 0:
        vertices = np.vstack([new_vertex, crack.vertices])
    else:
        vertices = np.vstack([crack.vertices, new_vertex])
    try:
        return replace(crack, vertices=vertices)
    except CrackGeometryError as exc:
        raise CrackGeometryError(
            f"crack {crack.id}: extension at tip {tip_id} refused ({exc})"
        ) from None


def segments_intersect(p0, p1, q0, q1, tol: float = 0.0) -> bool:
    """Whether closed segments [p0,p1] and [q0,q1] intersect.

    Uses orientation tests; collinear overlaps count as intersections.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(v) <= tol:
            return 0
        return 1 if v > 0 else -1

    o1 = orient(p0, p1, q0)
    o2 = orient(p0, p1, q1)
    o3 = orient(q0, q1, p0)
    o4 = orient(q0, q1, p1)
    if o1 != o2 and o3 != o4:
        return True

    def on_segment(a, b, c):
        return (min(a[0], b[0]) - tol <= c[0] <= max(a[0], b[0]) + tol
                and min(a[1], b[1]) - tol <= c[1] <= max(a[1], b[1]) + tol)

    if o1 == 0 and on_segment(p0, p1, q0):
        return True
    if o2 == 0 and on_segment(p0, p1, q1):
        return True
    if o3 == 0 and on_segment(q0, q1, p0):
        return True
    if o4 == 0 and on_segment(q0, q1, p1):
        return True
    return False


def _polyline_self_intersects(vertices: np.ndarray) -> bool:
    """Pairwise segment check; adjacent segments only touch at the shared vertex."""
    k = vertices.shape[0] - 1
    for i in range(k):
        for j in range(i + 1, k):
            if segments_intersect(vertices[i], vertices[i + 1], vertices[j], vertices[j + 1]):
                if j == i + 1:
                    # Sharing exactly the common vertex is fine; a fold-back
                    # (next segment re-entering the previous one) is not.
                    a, b = vertices[i], vertices[i + 1]
                    c = vertices[j + 1]
                    ab = b - a
                    t = np.dot(c - a, ab) / np.dot(ab, ab)
                    cross = ab[0] * (c[1] - a[1]) - ab[1] * (c[0] - a[0])
                    if abs(cross) < 1e-14 * np.linalg.norm(ab) and t < 1.0:
                        return True
                    continue
                return True
    return False
