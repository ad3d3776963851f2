"""Heuristic behavior tags and rule-based agent-agent interaction labels.

Single-agent tags come from documented kinematic thresholds; interaction
labels come from geometric predicates (lane assignments, conflict-zone
precedence, ahead-transitions, merge topology). The scripted generator is
the ground truth these rules are validated against.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import wrap_angle
from .mapgen import MapGraph, edge_signed_distance, project_to_polyline

# documented thresholds for the heuristic tags
STATIC_SPEED = 0.1  # m/s, every step
SLOW_MEAN_SPEED = 2.0  # m/s
SPEED_DELTA = 2.0  # m/s net change for speeding_up / slowing_down
CONSTANT_DELTA = 1.0  # m/s
TURN_ANGLE = np.pi / 6  # rad net heading change
APPROACH_DIST = 30.0  # m to the conflict zone


class InteractionKind(Enum):
    LANE_CHANGE = "lane_change"
    FOLLOWING_STOPPING = "following_stopping"
    YIELDING = "yielding"
    PASSING = "passing"
    OVERTAKING = "overtaking"
    MERGING = "merging"


SUBTYPES = {
    InteractionKind.LANE_CHANGE: (
        "changing lane for turn or exit",
        "changing lane for overtaking",
        "lane change for avoiding obstacles or slower traffic",
        "lane change for merging",
        "changing lane with lead or trail",
    ),
    InteractionKind.FOLLOWING_STOPPING: (
        "following with a lead vehicle",
        "following a slow moving lead",
        "tailgating",
        "stopping behind a lead vehicle",
        "stopping behind an intersection",
    ),
    InteractionKind.YIELDING: (
        "intersection yielding",
        "yielding before merging or lane change",
        "yielding to merging or lane change cars",
        "roundabout yielding",
    ),
    InteractionKind.PASSING: (
        "passing through an intersection with yielding vehicles",
        "passing through a roundabout",
        "maintaining speed while driving",
        "passing as a leading vehicle",
    ),
    InteractionKind.OVERTAKING: (
        "car avoidance",
        "standard overtaking",
        "high speed overtaking",
    ),
    InteractionKind.MERGING: (
        "standard merge",
        "lane reduction merge",
        "zipper merge",
        "highway on ramp accelerating merge",
        "late merge",
    ),
}


@dataclass(frozen=True)
class InteractionLabel:
    actor: int
    other: int
    kind: InteractionKind
    subtype: str

    def __post_init__(self):
        if self.actor == self.other:
            raise ValueError("actor and other must differ")
        if self.subtype not in SUBTYPES[self.kind]:
            raise ValueError(f"subtype {self.subtype!r} not valid for {self.kind}")


LANE_POSITION_NAMES = ("rightmost", "middle", "leftmost")


def _lane_position_name(index: int, count: int) -> str:
    if index == 0:
        return "rightmost"
    if index == count - 1:
        return "leftmost"
    return "middle"


def _aligned_drive_lanes(map_graph: MapGraph, heading: float) -> list:
    """Drive-kind lanes whose direction matches `heading`, ordered right to left."""
    out = []
    for i, lane in enumerate(map_graph.lanes):
        if lane.kind != "drive":
            continue
        seg = lane.points[-1] - lane.points[0]
        lane_h = np.arctan2(seg[1], seg[0])
        if np.cos(lane_h - heading) > 0.7:
            out.append(i)
    right = np.array([np.sin(heading), -np.cos(heading)])
    out.sort(key=lambda i: -float(map_graph.lanes[i].points[0] @ right))
    return out


def _lane_rank_map(map_graph: MapGraph, heading: float) -> tuple:
    """Rank aligned drive lanes right-to-left, merging collinear continuations.

    Returns (lane ids, {lane id: rank}); collinear lanes (lateral offset below
    half a width) share a rank, so approach/departure continuations never
    read as a lane change.
    """
    group = _aligned_drive_lanes(map_graph, heading)
    if not group:
        return group, {}
    right = np.array([np.sin(heading), -np.cos(heading)])
    offsets = [float(map_graph.lanes[i].points[0] @ right) for i in group]
    width = map_graph.lanes[group[0]].width
    ranks: dict = {}
    cluster_offsets: list = []
    for lane_id, off in zip(group, offsets):
        for r, c in enumerate(cluster_offsets):
            if abs(off - c) < 0.5 * width:
                ranks[lane_id] = r
                break
        else:
            cluster_offsets.append(off)
            ranks[lane_id] = len(cluster_offsets) - 1
    return group, ranks


def _assign_lane(map_graph: MapGraph, pos, heading: float, kinds=("drive", "ramp", "connector")):
    """Nearest lane id aligned with heading and laterally close, else -1."""
    best, best_d = -1, np.inf
    for i, lane in enumerate(map_graph.lanes):
        if lane.kind not in kinds:
            continue
        s, d, _ = project_to_polyline(lane.points, pos)
        if d > 1.2 * lane.width or d >= best_d:
            continue
        _, lane_heading = _point_heading(lane.points, s)
        if np.cos(lane_heading - heading) > 0.5:
            best, best_d = i, d
    return best


def _point_heading(points, s):
    from .mapgen import point_at_arclength

    return point_at_arclength(points, s)


def heuristic_label(states, valid, map_graph: MapGraph, dims=None) -> list:
    """All applicable behavior tags for one agent's trajectory slice."""
    states = np.asarray(states, dtype=float)
    valid = np.asarray(valid, dtype=bool)
    if valid.sum() < 2:
        return []
    s = states[valid]
    v = s[:, 3]
    tags = []
    static = bool(np.all(np.abs(v) < STATIC_SPEED))
    if static:
        tags.append("static")
        lane = _assign_lane(map_graph, s[-1, :2], s[-1, 2])
        if lane < 0 or project_to_polyline(map_graph.lanes[lane].points, s[-1, :2])[1] \
                > 0.75 * map_graph.lanes[lane].width:
            tags.append("parked")
    elif float(v.mean()) < SLOW_MEAN_SPEED:
        tags.append("moving_slowly")
    dv = float(v[-1] - v[0])
    if dv > SPEED_DELTA:
        tags.append("speeding_up")
    elif dv < -SPEED_DELTA:
        tags.append("slowing_down")
    if abs(dv) < CONSTANT_DELTA and not static:
        tags.append("constant_speed")
    net_turn = float(wrap_angle(np.diff(s[:, 2])).sum())
    if net_turn > TURN_ANGLE:
        tags.append("turning_left")
    elif net_turn < -TURN_ANGLE:
        tags.append("turning_right")
    else:
        tags.append("going_straight")
    if any(edge_signed_distance(map_graph.road_edges, p) < 0.0 for p in s[:, :2]):
        tags.append("off_road")
    zone = map_graph.conflict_zone
    if zone is not None:
        cx, cy, half = zone
        inside = (np.abs(s[:, 0] - cx) <= half) & (np.abs(s[:, 1] - cy) <= half)
        center_dist = np.hypot(s[:, 0] - cx, s[:, 1] - cy)
        if inside.any():
            tags.append("crossing_intersection")
        elif center_dist[-1] < center_dist[0] and center_dist[-1] < APPROACH_DIST:
            tags.append("approaching_intersection")
    group, ranks = _lane_rank_map(map_graph, float(s[-1, 2]))
    if len(set(ranks.values())) >= 2:
        start_lane = _assign_lane(map_graph, s[0, :2], s[0, 2], kinds=("drive",))
        end_lane = _assign_lane(map_graph, s[-1, :2], s[-1, 2], kinds=("drive",))
        n_ranks = len(set(ranks.values()))
        if end_lane in ranks:
            tags.append(f"lane_position_{_lane_position_name(ranks[end_lane], n_ranks)}")
        if start_lane in ranks and end_lane in ranks and ranks[start_lane] != ranks[end_lane]:
            a = _lane_position_name(ranks[start_lane], n_ranks)
            b = _lane_position_name(ranks[end_lane], n_ranks)
            tags.append(f"lane_change_{a}_to_{b}")
    return tags


# ---------------------------------------------------------------------------
# interaction predicates

def _lane_series(map_graph, states, kinds):
    return [_assign_lane(map_graph, st[:2], st[2], kinds=kinds) for st in states]


def _zone_steps(states, zone):
    cx, cy, half = zone
    inside = (np.abs(states[:, 0] - cx) <= half) & (np.abs(states[:, 1] - cy) <= half)
    steps = np.flatnonzero(inside)
    return (int(steps[0]), int(steps[-1])) if len(steps) else None


def _is_parallel_lane_change(map_graph, start_lane, end_lane):
    if start_lane < 0 or end_lane < 0 or start_lane == end_lane:
        return False
    la, lb = map_graph.lanes[start_lane], map_graph.lanes[end_lane]
    if la.kind != "drive" or lb.kind != "drive":
        return False
    sa = la.points[-1] - la.points[0]
    sb = lb.points[-1] - lb.points[0]
    if np.cos(np.arctan2(sa[1], sa[0]) - np.arctan2(sb[1], sb[0])) < 0.7:
        return False
    mid = lb.points[len(lb.points) // 2]
    _, lateral, _ = project_to_polyline(la.points, mid)
    return 0.5 * la.width <= lateral <= 2.5 * la.width


def interaction_label(scenario, pair) -> InteractionLabel | None:
    """Classify the directed interaction (actor, other) over the future slice."""
    a_id, o_id = pair
    n = scenario.future.agent_count
    if a_id == o_id or not (0 <= a_id < n and 0 <= o_id < n):
        raise ValueError("invalid interaction pair")
    m = scenario.map
    A = scenario.future.states[a_id]
    O = scenario.future.states[o_id]

    # merge topology: a ramp lane flowing into its successor
    series = _lane_series(m, A, ("drive", "ramp"))
    ramp_steps = [t for t, l in enumerate(series) if l >= 0 and m.lanes[l].kind == "ramp"]
    if ramp_steps:
        after = [l for l in series[ramp_steps[-1]:] if l >= 0 and m.lanes[l].kind == "drive"]
        ramp_lane = series[ramp_steps[-1]]
        if any(l in m.lanes[ramp_lane].successors for l in after):
            return InteractionLabel(a_id, o_id, InteractionKind.MERGING, "standard merge")

    # ahead-transition along the other's travel direction
    rel = np.array([
        float((A[t, :2] - O[t, :2]) @ np.array([np.cos(O[t, 2]), np.sin(O[t, 2])]))
        for t in range(len(A))
    ])
    drive_series = _lane_series(m, A, ("drive",))
    start_lane = next((l for l in drive_series if l >= 0), -1)
    end_lane = next((l for l in reversed(drive_series) if l >= 0), -1)
    changed = _is_parallel_lane_change(m, start_lane, end_lane)
    if changed and rel[0] < -2.0 and rel[-1] > 2.0:
        return InteractionLabel(a_id, o_id, InteractionKind.OVERTAKING, "standard overtaking")
    if changed:
        return InteractionLabel(a_id, o_id, InteractionKind.LANE_CHANGE,
                                "changing lane with lead or trail")

    zone = m.conflict_zone
    if zone is not None:
        a_zone = _zone_steps(A, zone)
        o_zone = _zone_steps(O, zone)
        center = np.array(zone[:2])
        if o_zone is not None:
            near = np.hypot(*(A[o_zone[0]:o_zone[1] + 1, :2] - center).T).min() < APPROACH_DIST
            pre_entry = A[: a_zone[0] + 1, 3] if a_zone else A[:, 3]
            if (a_zone is None or a_zone[0] > o_zone[1]) and near and pre_entry.min() < 1.0:
                return InteractionLabel(a_id, o_id, InteractionKind.YIELDING,
                                        "intersection yielding")
        if a_zone is not None and (o_zone is None or o_zone[0] > a_zone[1]):
            o_near = np.hypot(*(O[:, :2] - center).T).min() < APPROACH_DIST
            if A[:, 3].min() > 2.0 and o_near and O[:, 3].min() < 1.5:
                return InteractionLabel(a_id, o_id, InteractionKind.PASSING,
                                        "passing through an intersection with yielding vehicles")

    # same-lane following
    o_series = _lane_series(m, O, ("drive", "ramp", "connector"))
    a_series = _lane_series(m, A, ("drive", "ramp", "connector"))
    same = [t for t in range(len(a_series)) if a_series[t] >= 0 and a_series[t] == o_series[t]]
    if len(same) >= 0.6 * len(a_series):
        gaps, tgaps = [], []
        for t in same:
            lane_pts = m.lanes[a_series[t]].points
            sa, _, _ = project_to_polyline(lane_pts, A[t, :2])
            so, _, _ = project_to_polyline(lane_pts, O[t, :2])
            gaps.append(so - sa)
            tgaps.append((so - sa) / max(A[t, 3], 0.5))
        med_gap = float(np.median(gaps))
        # stopped queues have tiny distance gaps but huge time gaps
        if 0.0 < med_gap < 40.0 and (float(np.median(tgaps)) < 4.5 or med_gap < 12.0):
            if A[:, 3].min() < 0.5:
                subtype = "stopping behind a lead vehicle"
            elif O[:, 3].mean() < 3.5:
                subtype = "following a slow moving lead"
            else:
                subtype = "following with a lead vehicle"
            return InteractionLabel(a_id, o_id, InteractionKind.FOLLOWING_STOPPING, subtype)
    return None


def label_scenario(scenario) -> None:
    """Fill scenario.labels and scenario.prompts in place."""
    from .vocab import compose_prompt

    tags = [
        heuristic_label(scenario.future.states[i], scenario.future.valid[i], scenario.map)
        for i in range(scenario.agent_count)
    ]
    interactions = []
    a, o = scenario.interest_pair
    for pair in ((a, o), (o, a)):
        label = interaction_label(scenario, pair)
        if label is not None:
            interactions.append(label)
    scenario.labels = {"tags": tags, "interactions": interactions}
    scenario.prompts = {
        agent: compose_prompt(scenario.labels, agent) for agent in scenario.interest_pair
    }
