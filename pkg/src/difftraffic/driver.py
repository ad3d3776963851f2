"""Longitudinal and lateral control used to manufacture ground-truth traffic.

The intelligent-driver model handles car following and stop-line holds; a
pure-pursuit steering law with curvature-aware speed limiting tracks the
reference polylines. These controllers only produce training data; the
learned denoiser never sees them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import A_MAX, OMEGA_MAX, wrap_angle
from .mapgen import arclengths, point_at_arclength, project_to_polyline


@dataclass(frozen=True)
class IDMParams:
    v0: float = 12.0  # desired free speed (m/s)
    T_headway: float = 1.5  # s
    a: float = 1.5  # max comfortable accel (m/s^2)
    b: float = 2.0  # comfortable braking (m/s^2)
    s0: float = 2.0  # jam distance (m)
    delta: float = 4.0


def idm_accel(gap: float, v: float, v_lead: float, params: IDMParams,
              a_max: float = A_MAX) -> float:
    """IDM acceleration a (1 - (v/v0)^delta - (s*/gap)^2).

    s* = s0 + v T + v (v - v_lead) / (2 sqrt(a b)). Non-positive gaps trigger
    an emergency brake at -a_max. Output is clamped to the action bounds.
    """
    if gap <= 0.0:
        return -a_max
    dv = v - v_lead
    s_star = params.s0 + v * params.T_headway + v * dv / (2.0 * np.sqrt(params.a * params.b))
    accel = params.a * (1.0 - (v / params.v0) ** params.delta - (s_star / gap) ** 2)
    return float(np.clip(accel, -a_max, a_max))


def path_curvature(points: np.ndarray) -> np.ndarray:
    """|d(heading)/ds| per polyline vertex."""
    seg = np.diff(points, axis=0)
    headings = np.arctan2(seg[:, 1], seg[:, 0])
    ds = np.linalg.norm(seg, axis=1)
    dth = wrap_angle(np.diff(headings))
    mid = np.abs(dth) / np.maximum(0.5 * (ds[:-1] + ds[1:]), 1e-9)
    return np.concatenate([[mid[0]] if len(mid) else [0.0], mid, [mid[-1]] if len(mid) else [0.0]])


class PathFollower:
    """Tracks a reference polyline with pure pursuit + curvature speed limits."""

    def __init__(self, path: np.ndarray, lat_accel_max: float = 2.2):
        self.path = np.asarray(path, dtype=float)
        self.s_total = float(arclengths(self.path)[-1])
        self._arcs = arclengths(self.path)
        self._curv = path_curvature(self.path)
        self.lat_accel_max = lat_accel_max

    def project(self, pos) -> float:
        s, _, _ = project_to_polyline(self.path, pos)
        return s

    def pose_at(self, s: float):
        return point_at_arclength(self.path, s)

    def speed_limit(self, s: float, v: float) -> float:
        """Curvature-limited speed over the lookahead window [s, s + 2.5 v + 5]."""
        hi = s + 2.5 * max(v, 1.0) + 5.0
        sel = (self._arcs >= s - 1.0) & (self._arcs <= hi)
        if not np.any(sel):
            return np.inf
        kmax = float(self._curv[sel].max())
        if kmax < 1e-4:
            return np.inf
        return float(np.sqrt(self.lat_accel_max / kmax))

    def steer(self, state, omega_max: float = OMEGA_MAX) -> float:
        """Pure-pursuit yaw rate toward a speed-scaled lookahead point."""
        x, y, heading, v = state
        s = self.project([x, y])
        ld = float(np.clip(1.0 + 0.9 * v, 2.5, 12.0))
        target, _ = self.pose_at(min(s + ld, self.s_total))
        alpha = wrap_angle(np.arctan2(target[1] - y, target[0] - x) - heading)
        omega = 2.0 * v * np.sin(alpha) / ld
        return float(np.clip(omega, -omega_max, omega_max))
