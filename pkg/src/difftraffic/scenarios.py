"""Scripted multi-agent scenario synthesis.

Each script builds a map, spawns agents on reference paths with randomized
speeds/gaps/maneuver choices, and runs the rule-based controllers to produce
a labeled ground-truth Scenario: 1.0 s of history plus 8.0 s of future at
dt = 0.5 s. Generation is deterministic per seed and embarrassingly parallel
across scenarios (each scenario owns its own RNG stream).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .costs import disk_sets_for, no_collision_loss
from .driver import IDMParams, PathFollower, idm_accel
from .geometry import A_MAX, DT, OMEGA_MAX, Trajectory, step_unicycle
from .mapgen import MapGraph, arclengths, build_map

HISTORY_STEPS = 2  # 1.0 s of history at dt = 0.5
FUTURE_STEPS = 16  # 8.0 s of future


class GenerationError(RuntimeError):
    pass


class SpawnCollisionError(GenerationError):
    pass


@dataclass
class AgentPlan:
    path: np.ndarray  # reference polyline
    start_s: float
    start_speed: float
    dims: tuple  # (length, width)
    speed_profile: list  # [(from_step, target_speed), ...] sorted
    lead: int | None = None  # IDM follow target
    hold: tuple | None = None  # (stop_s, other_id, other_exit_s): wait until other passes
    idm: IDMParams = field(default_factory=IDMParams)


@dataclass
class Scenario:
    map: MapGraph
    history: Trajectory
    future: Trajectory
    agent_dims: np.ndarray  # (N, 2) length/width
    labels: dict  # {"tags": [list per agent], "interactions": [InteractionLabel]}
    interest_pair: tuple
    prompts: dict  # agent id -> PromptText
    seed: int
    meta: dict = field(default_factory=dict)  # layout/script bookkeeping

    @property
    def agent_count(self) -> int:
        return self.history.agent_count

    def full_states(self) -> np.ndarray:
        """History and future states concatenated (shared state not repeated)."""
        return np.concatenate([self.history.states[:, :-1], self.future.states], axis=1)


def _profile_speed(profile, step: int) -> float:
    v = profile[0][1]
    for start, val in profile:
        if step >= start:
            v = val
    return v


def run_plans(plans: list, steps: int, dt: float = DT) -> tuple:
    """Run the controllers for `steps` transitions; returns states and actions."""
    n = len(plans)
    followers = [PathFollower(p.path) for p in plans]
    states = np.zeros((n, steps + 1, 4))
    actions = np.zeros((n, steps, 2))
    for i, p in enumerate(plans):
        pos, heading = followers[i].pose_at(p.start_s)
        states[i, 0] = [pos[0], pos[1], heading, p.start_speed]
    for t in range(steps):
        cur = states[:, t]
        proj = [followers[i].project(cur[i, :2]) for i in range(n)]
        for i, p in enumerate(plans):
            x, y, heading, v = cur[i]
            target = _profile_speed(p.speed_profile, t)
            limit = followers[i].speed_limit(proj[i], v)
            accel = float(np.clip(1.2 * (min(target, limit) - v), -4.0, 2.5))
            if p.lead is not None:
                lead_s, _, _ = _project_onto(followers[i], cur[p.lead, :2])
                gap = lead_s - proj[i] - 0.5 * (p.dims[0] + plans[p.lead].dims[0])
                accel = min(accel, idm_accel(gap, v, cur[p.lead, 3], p.idm))
            if p.hold is not None:
                stop_s, other, other_exit = p.hold
                other_s = followers[other].project(cur[other, :2])
                if other_s < other_exit:
                    gap = stop_s - proj[i] - 0.5 * p.dims[0]
                    accel = min(accel, idm_accel(gap, v, 0.0, p.idm))
            omega = followers[i].steer(cur[i])
            actions[i, t] = [np.clip(accel, -A_MAX, A_MAX), np.clip(omega, -OMEGA_MAX, OMEGA_MAX)]
        states[:, t + 1] = step_unicycle(cur, actions[:, t], dt)
    return states, actions


def _project_onto(follower: PathFollower, pos):
    s = follower.project(pos)
    p, _ = follower.pose_at(s)
    lateral = float(np.hypot(*(np.asarray(pos) - p)))
    return s, lateral, p


def _check_spawn(states0, dims):
    disks = disk_sets_for(dims)
    traj = Trajectory(DT, states0[:, None, :], np.zeros((len(dims), 0, 2)))
    if no_collision_loss(traj, disks) > 0.0:
        raise SpawnCollisionError("agents overlap at spawn")


def _lane_path(map_graph: MapGraph, ids) -> np.ndarray:
    pts = [map_graph.lanes[i].points for i in (ids if isinstance(ids, (list, tuple)) else [ids])]
    out = [pts[0]]
    for nxt in pts[1:]:
        start = 1 if np.allclose(nxt[0], out[-1][-1]) else 0
        out.append(nxt[start:])
    return np.concatenate(out, axis=0)


def _blend_paths(src: np.ndarray, dst: np.ndarray, s_start: float, length: float) -> np.ndarray:
    """Lane-change path: slide from src to dst over [s_start, s_start+length]."""
    s = arclengths(src)
    u = np.clip((s - s_start) / max(length, 1e-6), 0.0, 1.0)
    w = u * u * (3.0 - 2.0 * u)
    # match dst points by arclength
    sd = arclengths(dst)
    dx = np.interp(s, sd, dst[:, 0])
    dy = np.interp(s, sd, dst[:, 1])
    return np.column_stack([
        (1 - w) * src[:, 0] + w * dx,
        (1 - w) * src[:, 1] + w * dy,
    ])


def _zone_crossing(path: np.ndarray, zone) -> tuple:
    """(entry_s, exit_s) of a path through a square zone, or (inf, -inf)."""
    cx, cy, h = zone
    s = arclengths(path)
    inside = (np.abs(path[:, 0] - cx) <= h) & (np.abs(path[:, 1] - cy) <= h)
    if not inside.any():
        return np.inf, -np.inf
    return float(s[inside][0]), float(s[inside][-1])


def _dims(rng) -> tuple:
    return (float(rng.uniform(4.2, 5.2)), float(rng.uniform(1.8, 2.2)))


# ---------------------------------------------------------------------------
# script catalog: each returns (map, plans, meta)

def _script_follow_lead(rng):
    m = build_map("straight", length=260.0, lanes=2)
    lane = int(rng.integers(0, 2))
    path = _lane_path(m, lane)
    v_lead = float(rng.uniform(4.0, 8.0))
    v_f = float(rng.uniform(6.0, 10.0))
    gap = float(rng.uniform(12.0, 22.0))
    start = float(rng.uniform(10.0, 40.0))
    lead = AgentPlan(path, start + gap, v_lead, _dims(rng), [(0, v_lead)])
    follower = AgentPlan(path, start, v_f, _dims(rng), [(0, 14.0)], lead=0)
    meta = {"script": "follow_lead", "kind": "following_stopping", "actor": 1, "other": 0}
    return m, [lead, follower], meta


def _script_stop_behind(rng):
    m = build_map("straight", length=260.0, lanes=2)
    lane = int(rng.integers(0, 2))
    path = _lane_path(m, lane)
    v0 = float(rng.uniform(6.0, 9.0))
    stop_at = int(rng.integers(2, 5))
    start = float(rng.uniform(10.0, 30.0))
    gap = float(rng.uniform(14.0, 20.0))
    lead = AgentPlan(path, start + gap, v0, _dims(rng), [(0, v0), (stop_at, 0.0)])
    follower = AgentPlan(path, start, v0, _dims(rng), [(0, 12.0)], lead=0)
    meta = {"script": "stop_behind", "kind": "following_stopping", "actor": 1, "other": 0}
    return m, [lead, follower], meta


_TURNS = {"left": 4, "right": 3, "through": 2}


def _turn_path(m: MapGraph, arm: int, turn: str) -> np.ndarray:
    base = 5 * arm
    conn = base + _TURNS[turn]
    depart = m.lanes[conn].successors[0]
    return _lane_path(m, [base, conn, depart])


def _script_yield_intersection(rng):
    arm_len = float(rng.uniform(60.0, 90.0))
    m = build_map("cross_intersection", arm=arm_len)
    arms = rng.permutation(4)[:2]
    v_a = float(rng.uniform(5.0, 7.5))
    v_b = float(rng.uniform(5.5, 8.0))
    turn_a = ("through", "left", "right")[int(rng.integers(0, 3))]
    path_a = _turn_path(m, int(arms[0]), turn_a)
    path_b = _turn_path(m, int(arms[1]), "through")
    zone = m.conflict_zone
    entry_a, _ = _zone_crossing(path_a, zone)
    entry_b, exit_b = _zone_crossing(path_b, zone)
    # A reaches its stop line early and waits for B, which arrives later
    start_a = entry_a - 4.0 - v_a * float(rng.uniform(1.0, 2.0))
    start_b = entry_b - v_b * float(rng.uniform(3.2, 4.2))
    a = AgentPlan(path_a, start_a, v_a, _dims(rng), [(0, v_a)],
                  hold=(entry_a - 3.0, 1, exit_b + 2.0))
    b = AgentPlan(path_b, start_b, v_b, _dims(rng), [(0, v_b)])
    meta = {"script": "yield_intersection", "kind": "yielding", "actor": 0, "other": 1}
    return m, [a, b], meta


def _script_turn_choice(rng):
    arm_len = float(rng.uniform(60.0, 90.0))
    m = build_map("cross_intersection", arm=arm_len)
    arms = rng.permutation(4)[:2]
    choices = ("left", "right", "through")
    turn_a = choices[int(rng.integers(0, 3))]
    turn_b = choices[int(rng.integers(0, 3))]
    v_a = float(rng.uniform(5.0, 7.0))
    v_b = float(rng.uniform(5.0, 7.0))
    path_a = _turn_path(m, int(arms[0]), turn_a)
    path_b = _turn_path(m, int(arms[1]), turn_b)
    entry_a, _ = _zone_crossing(path_a, m.conflict_zone)
    entry_b, _ = _zone_crossing(path_b, m.conflict_zone)
    # time-separated transits: A crosses around t=2 s, B around t=5.5 s
    start_a = entry_a - v_a * float(rng.uniform(1.6, 2.4))
    start_b = entry_b - v_b * float(rng.uniform(4.6, 5.6))
    a = AgentPlan(path_a, start_a, v_a, _dims(rng), [(0, v_a)])
    b = AgentPlan(path_b, start_b, v_b, _dims(rng), [(0, v_b)])
    meta = {"script": "turn_choice", "kind": None, "actor": 0, "other": 1,
            "turns": (turn_a, turn_b)}
    return m, [a, b], meta


def _script_lane_change(rng):
    m = build_map("straight", length=260.0, lanes=2)
    src, dst = (0, 1) if rng.random() < 0.5 else (1, 0)
    v = float(rng.uniform(7.0, 10.0))
    start = float(rng.uniform(15.0, 35.0))
    s_lc = start + v * float(rng.uniform(1.0, 2.0))
    path = _blend_paths(_lane_path(m, src), _lane_path(m, dst), s_lc, float(rng.uniform(25.0, 40.0)))
    changer = AgentPlan(path, start, v, _dims(rng), [(0, v)])
    trail = rng.random() < 0.5
    offset = float(rng.uniform(14.0, 24.0))
    other_s = start - offset if trail else start + offset
    other = AgentPlan(_lane_path(m, dst), max(other_s, 4.0), v * 0.9, _dims(rng), [(0, v * 0.9)])
    meta = {"script": "lane_change", "kind": "lane_change", "actor": 0, "other": 1}
    return m, [changer, other], meta


def _script_overtake(rng):
    m = build_map("straight", length=300.0, lanes=2)
    slow_lane = int(rng.integers(0, 2))
    fast_lane = 1 - slow_lane
    v_slow = float(rng.uniform(2.5, 4.0))
    v_fast = float(rng.uniform(9.0, 12.0))
    lead_start = float(rng.uniform(45.0, 60.0))
    behind = lead_start - float(rng.uniform(16.0, 22.0))
    s_lc = behind + v_fast * 0.6
    path = _blend_paths(_lane_path(m, slow_lane), _lane_path(m, fast_lane), s_lc, 30.0)
    overtaker = AgentPlan(path, behind, v_fast, _dims(rng), [(0, v_fast)])
    lead = AgentPlan(_lane_path(m, slow_lane), lead_start, v_slow, _dims(rng), [(0, v_slow)])
    meta = {"script": "overtake", "kind": "overtaking", "actor": 0, "other": 1}
    return m, [overtaker, lead], meta


def _script_merge(rng):
    m = build_map("merge_ramp")
    ramp_path = _lane_path(m, [2, 1])
    main_path = _lane_path(m, [0, 1])
    v_m = float(rng.uniform(7.0, 10.0))
    v_r = float(rng.uniform(6.0, 8.5))
    ahead = rng.random() < 0.5
    merge_s_ramp = arclengths(m.lanes[2].points)[-1]
    start_r = merge_s_ramp - v_r * float(rng.uniform(2.2, 3.0))
    ramp = AgentPlan(ramp_path, max(start_r, 5.0), v_r, _dims(rng), [(0, v_r + 1.0)],
                     lead=None if ahead else 1)
    # place the main-road agent so the ramp agent merges ahead of or behind it
    merge_s_main = arclengths(m.lanes[0].points)[-1]
    dt_gap = float(rng.uniform(1.6, 2.4))
    t_merge = (merge_s_ramp - ramp.start_s) / max(v_r, 1.0)
    start_m = merge_s_main - v_m * (t_merge + (dt_gap if ahead else -dt_gap))
    main = AgentPlan(main_path, max(start_m, 5.0), v_m, _dims(rng), [(0, v_m)])
    meta = {"script": "merge", "kind": "merging", "actor": 0, "other": 1}
    return m, [ramp, main], meta


def _script_head_on(rng):
    m = build_map("two_lane", length=220.0)
    v_a = float(rng.uniform(7.0, 10.0))
    v_b = float(rng.uniform(7.0, 10.0))
    # opposing agents pass near the middle of the window
    a = AgentPlan(_lane_path(m, 0), 110.0 - v_a * 5.0 + float(rng.uniform(-8, 8)),
                  v_a, _dims(rng), [(0, v_a)])
    b = AgentPlan(_lane_path(m, 1), 110.0 - v_b * 5.0 + float(rng.uniform(-8, 8)),
                  v_b, _dims(rng), [(0, v_b)])
    meta = {"script": "head_on", "kind": None, "actor": 0, "other": 1}
    return m, [a, b], meta


def _script_cross_traffic(rng):
    m = build_map("cross_intersection", arm=float(rng.uniform(70.0, 90.0)))
    arms = rng.permutation(4)[:2]
    v_a = float(rng.uniform(6.0, 9.0))
    v_b = float(rng.uniform(6.0, 9.0))
    path_a = _turn_path(m, int(arms[0]), "through")
    path_b = _turn_path(m, int(arms[1]), "through")
    entry_a, _ = _zone_crossing(path_a, m.conflict_zone)
    entry_b, _ = _zone_crossing(path_b, m.conflict_zone)
    start_a = entry_a - v_a * float(rng.uniform(1.6, 2.2))
    start_b = entry_b - v_b * float(rng.uniform(4.8, 5.6))
    a = AgentPlan(path_a, start_a, v_a, _dims(rng), [(0, v_a)])
    b = AgentPlan(path_b, start_b, v_b, _dims(rng), [(0, v_b)])
    meta = {"script": "cross_traffic", "kind": None, "actor": 0, "other": 1}
    return m, [a, b], meta


def _script_cruise(rng):
    lanes = int(rng.integers(2, 4))
    m = build_map("straight", length=280.0, lanes=lanes)
    n = int(rng.integers(2, 4))
    plans = []
    used = []
    for i in range(n):
        lane = int(rng.integers(0, lanes))
        start = float(rng.uniform(10.0, 90.0))
        while any(l == lane and abs(start - s) < 18.0 for l, s in used):
            start += 20.0
        used.append((lane, start))
        v0 = float(rng.uniform(4.0, 10.0))
        mode = rng.random()
        if mode < 0.35:
            profile = [(0, v0), (int(rng.integers(1, 4)), min(v0 + rng.uniform(3.0, 5.0), 14.0))]
        elif mode < 0.7:
            profile = [(0, v0), (int(rng.integers(1, 4)), max(v0 - rng.uniform(3.0, 5.0), 0.0))]
        else:
            profile = [(0, v0)]
        plans.append(AgentPlan(_lane_path(m, lane), start, v0, _dims(rng), profile))
    meta = {"script": "cruise", "kind": None, "actor": 0, "other": 1}
    return m, plans, meta


SCRIPTS = {
    "follow_lead": _script_follow_lead,
    "stop_behind": _script_stop_behind,
    "yield_intersection": _script_yield_intersection,
    "turn_choice": _script_turn_choice,
    "lane_change": _script_lane_change,
    "overtake": _script_overtake,
    "merge": _script_merge,
    "head_on": _script_head_on,
    "cross_traffic": _script_cross_traffic,
    "cruise": _script_cruise,
}

DEFAULT_MIX = {
    "turn_choice": 0.26,
    "follow_lead": 0.12,
    "stop_behind": 0.10,
    "yield_intersection": 0.14,
    "lane_change": 0.08,
    "overtake": 0.08,
    "merge": 0.08,
    "head_on": 0.05,
    "cross_traffic": 0.05,
    "cruise": 0.04,
}


def simulate_scenario(map_graph: MapGraph, plans: list, meta: dict, seed: int,
                      dt: float = DT) -> Scenario:
    """Run the controllers and assemble a labeled Scenario (history + future)."""
    from .labeling import label_scenario  # deferred: labeling depends on scenario types

    steps = HISTORY_STEPS + FUTURE_STEPS
    states, actions = run_plans(plans, steps, dt)
    dims = np.array([p.dims for p in plans])
    _check_spawn(states[:, 0], dims)
    full = Trajectory(dt, states, actions)
    if no_collision_loss(full, disk_sets_for(dims)) > 0.0:
        raise GenerationError("ground-truth rollout has overlapping agents")
    h = HISTORY_STEPS
    history = Trajectory(dt, states[:, : h + 1].copy(), actions[:, :h].copy())
    future = Trajectory(dt, states[:, h:].copy(), actions[:, h:].copy())
    scenario = Scenario(
        map=map_graph, history=history, future=future, agent_dims=dims,
        labels={}, interest_pair=(meta["actor"], meta["other"]),
        prompts={}, seed=seed, meta=dict(meta),
    )
    label_scenario(scenario)
    return scenario


def generate_scenario(script: str, seed: int, dt: float = DT,
                      max_attempts: int = 25) -> Scenario:
    """Build one scenario deterministically from (script, seed)."""
    if script not in SCRIPTS:
        raise GenerationError(f"unknown script {script!r}")
    for attempt in range(max_attempts):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(attempt,)))
        m, plans, meta = SCRIPTS[script](rng)
        try:
            return simulate_scenario(m, plans, meta, seed, dt)
        except GenerationError:
            continue
    raise GenerationError(f"could not generate collision-free scenario for {script} seed {seed}")


def pick_script(mix: dict, u: float) -> str:
    names = sorted(mix)
    weights = np.array([mix[n] for n in names], dtype=float)
    weights = weights / weights.sum()
    edges = np.cumsum(weights)
    return names[int(np.searchsorted(edges, u, side="right").clip(0, len(names) - 1))]


def generate_dataset(count: int, seed: int, mix: dict | None = None) -> list:
    """Deterministic scenario batch; scenario i depends only on (seed, i)."""
    mix = dict(DEFAULT_MIX if mix is None else mix)
    out = []
    for i in range(count):
        u = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i, 0xA5))).random()
        script = pick_script(mix, u)
        out.append(generate_scenario(script, seed=int(np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(i,))).integers(0, 2 ** 31)), dt=DT))
    return out
