"""Synthetic map construction and polyline utilities.

Four parametric layouts: a one-way multi-lane straight, a bidirectional
two-lane road, a four-arm cross intersection with turn connectors, and a
highway merge ramp. Road edges are oriented so the drivable region lies on
the LEFT of the travel direction of each edge polyline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LANE_POINT_SPACING = 2.5


class MapError(ValueError):
    pass


@dataclass
class Lane:
    points: np.ndarray  # (P, 2) ordered along travel direction
    width: float
    successors: list = field(default_factory=list)
    neighbors: list = field(default_factory=list)  # adjacent same-direction lanes
    kind: str = "drive"  # drive | connector | ramp

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[0] < 2 or self.points.shape[1] != 2:
            raise MapError("lane polyline needs >= 2 2-D points")
        if np.any(np.all(np.diff(self.points, axis=0) == 0.0, axis=1)):
            raise MapError("consecutive lane points must be distinct")
        if self.width <= 0:
            raise MapError("lane width must be positive")


@dataclass
class MapGraph:
    lanes: list
    road_edges: list  # list of (P, 2) oriented polylines
    conflict_zone: tuple | None = None  # (cx, cy, half) intersection box

    def __post_init__(self):
        self.road_edges = [np.asarray(e, dtype=float) for e in self.road_edges]
        for e in self.road_edges:
            if e.shape[0] < 2:
                raise MapError("edge polyline needs >= 2 points")

    def all_lane_points(self) -> np.ndarray:
        return np.concatenate([l.points for l in self.lanes], axis=0)


# ---------------------------------------------------------------------------
# polyline helpers

def _resample(points: np.ndarray, spacing: float = LANE_POINT_SPACING) -> np.ndarray:
    """Resample a polyline at roughly uniform arclength spacing (endpoints kept)."""
    pts = np.asarray(points, dtype=float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    n = max(2, int(np.ceil(total / spacing)) + 1)
    si = np.linspace(0.0, total, n)
    x = np.interp(si, s, pts[:, 0])
    y = np.interp(si, s, pts[:, 1])
    return np.column_stack([x, y])


def arclengths(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def project_to_polyline(points: np.ndarray, p) -> tuple:
    """Project p onto a polyline; returns (arclength, distance, side).

    side is +1 if p lies left of the nearest segment's direction, -1 right.
    """
    pts = np.asarray(points, dtype=float)
    p = np.asarray(p, dtype=float)
    a, b = pts[:-1], pts[1:]
    ab = b - a
    ab_len2 = (ab ** 2).sum(axis=1)
    t = np.clip(((p - a) * ab).sum(axis=1) / np.maximum(ab_len2, 1e-12), 0.0, 1.0)
    proj = a + t[:, None] * ab
    d2 = ((p - proj) ** 2).sum(axis=1)
    i = int(np.argmin(d2))
    s = arclengths(pts)
    cross = ab[i, 0] * (p[1] - a[i, 1]) - ab[i, 1] * (p[0] - a[i, 0])
    side = 1.0 if cross >= 0.0 else -1.0
    return float(s[i] + t[i] * np.sqrt(ab_len2[i])), float(np.sqrt(d2[i])), side


def point_at_arclength(points: np.ndarray, s: float) -> tuple:
    """Point and tangent heading at arclength s (clamped to the polyline range)."""
    pts = np.asarray(points, dtype=float)
    cs = arclengths(pts)
    s = float(np.clip(s, 0.0, cs[-1]))
    i = int(np.searchsorted(cs, s, side="right") - 1)
    i = min(max(i, 0), len(pts) - 2)
    seg = pts[i + 1] - pts[i]
    seg_len = np.linalg.norm(seg)
    t = (s - cs[i]) / max(seg_len, 1e-12)
    p = pts[i] + t * seg
    return p, float(np.arctan2(seg[1], seg[0]))


def edge_signed_distance(edges: list, p) -> float:
    """Distance to the nearest road edge; positive on the drivable (left) side."""
    best_d, best_side = np.inf, 1.0
    for e in edges:
        _, d, side = project_to_polyline(e, p)
        if d < best_d:
            best_d, best_side = d, side
    return float(best_side * best_d)


# ---------------------------------------------------------------------------
# layouts

def _straight(length: float = 200.0, lanes: int = 2, lane_width: float = 3.5) -> MapGraph:
    if length <= 0 or lanes < 1 or lane_width <= 0:
        raise MapError("invalid straight-layout params")
    lane_list = []
    for i in range(lanes):
        pts = _resample([[0.0, i * lane_width], [length, i * lane_width]])
        nbrs = [j for j in (i - 1, i + 1) if 0 <= j < lanes]
        lane_list.append(Lane(pts, lane_width, neighbors=nbrs))
    lo, hi = -lane_width / 2.0, (lanes - 1) * lane_width + lane_width / 2.0
    edges = [
        _resample([[0.0, lo], [length, lo]]),
        _resample([[length, hi], [0.0, hi]]),
    ]
    return MapGraph(lane_list, edges)


def _two_lane(length: float = 200.0, lane_width: float = 3.5) -> MapGraph:
    if length <= 0 or lane_width <= 0:
        raise MapError("invalid two-lane params")
    half = lane_width / 2.0
    east = Lane(_resample([[0.0, -half], [length, -half]]), lane_width)
    west = Lane(_resample([[length, half], [0.0, half]]), lane_width)
    edges = [
        _resample([[0.0, -lane_width], [length, -lane_width]]),
        _resample([[length, lane_width], [0.0, lane_width]]),
    ]
    return MapGraph([east, west], edges)


def _rot90(points: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Exact rotation by multiples of 90 degrees about the origin."""
    rots = {
        0: np.array([[1.0, 0.0], [0.0, 1.0]]),
        1: np.array([[0.0, -1.0], [1.0, 0.0]]),
        2: np.array([[-1.0, 0.0], [0.0, -1.0]]),
        3: np.array([[0.0, 1.0], [-1.0, 0.0]]),
    }
    return np.asarray(points, dtype=float) @ rots[quarter_turns % 4].T


def _arc(center, radius, theta0, theta1, n=14) -> np.ndarray:
    th = np.linspace(theta0, theta1, n)
    return np.column_stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)])


def _cross_intersection(arm: float = 80.0, lane_width: float = 3.5) -> MapGraph:
    if arm <= 0 or lane_width <= 0:
        raise MapError("invalid cross-intersection params")
    w = lane_width
    b = w  # half-size of the conflict box (two-way road half width)
    half = w / 2.0
    lanes: list[Lane] = []
    edges = []
    # base arm: approach from the west heading east; rotated 4 ways
    for q in range(4):
        base = len(lanes)
        approach = _resample([[-b - arm, -half], [-b, -half]])
        through = _resample([[-b, -half], [b, -half]], spacing=1.5)
        right = _arc((-b, -b), b - half, np.pi / 2, 0.0)
        left = _arc((-b, b), b + half, -np.pi / 2, 0.0)
        depart_out = _resample([[-b, half], [-b - arm, half]])
        lanes.append(Lane(_rot90(approach, q), w, successors=[base + 2, base + 3, base + 4]))
        lanes.append(Lane(_rot90(depart_out, q), w))
        lanes.append(Lane(_rot90(through, q), w, kind="connector"))
        lanes.append(Lane(_rot90(right, q), w, kind="connector"))
        lanes.append(Lane(_rot90(left, q), w, kind="connector"))
        edges.append(_rot90(_resample([[-b - arm, -w], [-b, -w]]), q))
        edges.append(_rot90(_resample([[-b, w], [-b - arm, w]]), q))
    # connector successors: through -> east departure, right -> south, left -> north
    # departure lane of arm q sits at index 5*q + 1
    for q in range(4):
        base = 5 * q
        lanes[base + 2].successors = [5 * ((q + 2) % 4) + 1]
        lanes[base + 3].successors = [5 * ((q + 1) % 4) + 1]
        lanes[base + 4].successors = [5 * ((q + 3) % 4) + 1]
    return MapGraph(lanes, edges, conflict_zone=(0.0, 0.0, b))


def _merge_ramp(main_length: float = 260.0, lane_width: float = 3.5,
                ramp_start: float = 30.0, merge_point: float = 140.0,
                ramp_offset: float = -12.0) -> MapGraph:
    if main_length <= 0 or lane_width <= 0 or not 0 < ramp_start < merge_point < main_length:
        raise MapError("invalid merge-ramp params")
    half = lane_width / 2.0
    main_a = Lane(_resample([[0.0, 0.0], [merge_point, 0.0]]), lane_width, successors=[1])
    main_b = Lane(_resample([[merge_point, 0.0], [main_length, 0.0]]), lane_width)
    xs = np.linspace(ramp_start, merge_point, 40)
    u = (xs - ramp_start) / (merge_point - ramp_start)
    blend = u * u * (3.0 - 2.0 * u)  # smoothstep
    ys = ramp_offset * (1.0 - blend)
    ramp = Lane(np.column_stack([xs, ys]), lane_width, successors=[1], kind="ramp")
    edges = [
        _resample([[0.0, -half], [ramp_start, -half]]),
        np.column_stack([xs, ys - half]).tolist() + [[main_length, -half]],
        _resample([[main_length, half], [0.0, half]]),
    ]
    edges[1] = np.asarray(edges[1])
    return MapGraph([main_a, main_b, ramp], edges)


_LAYOUTS = {
    "straight": _straight,
    "two_lane": _two_lane,
    "cross_intersection": _cross_intersection,
    "merge_ramp": _merge_ramp,
}


def build_map(layout: str, **params) -> MapGraph:
    """Deterministically build one of the named layouts."""
    if layout not in _LAYOUTS:
        raise MapError(f"unknown layout {layout!r}; options: {sorted(_LAYOUTS)}")
    return _LAYOUTS[layout](**params)
