"""Agent state/action types, unicycle dynamics, and 2-D frame transforms.

Conventions used throughout the package:
  * a state is a float array ``[..., 4]`` = (x, y, heading, speed), heading in
    radians wrapped to (-pi, pi], speed in m/s (never negative);
  * an action is a float array ``[..., 2]`` = (accel, yaw_rate);
  * trajectories store an ``(N, T+1, 4)`` state grid and an ``(N, T, 2)``
    action grid sharing a fixed step ``dt``.

Integration is explicit Euler with the position advanced from the time-t
speed/heading, which makes the step exactly invertible by
:func:`inverse_dynamics` as long as speed stays positive and actions are
within bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DT = 0.5
A_MAX = 8.0
OMEGA_MAX = 1.5


class InvalidInputError(ValueError):
    """Raised when an operation receives non-finite or malformed input."""


def wrap_angle(theta):
    """Wrap angles to (-pi, pi]. Idempotent; -pi maps to +pi."""
    theta = np.asarray(theta, dtype=float)
    return np.pi - np.mod(np.pi - theta, 2.0 * np.pi)


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    heading: float
    speed: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading, self.speed], dtype=float)

    @staticmethod
    def from_array(arr) -> "AgentState":
        x, y, h, v = np.asarray(arr, dtype=float)
        return AgentState(float(x), float(y), float(h), float(v))


@dataclass(frozen=True)
class Action:
    accel: float
    yaw_rate: float

    def as_array(self) -> np.ndarray:
        return np.array([self.accel, self.yaw_rate], dtype=float)


@dataclass(frozen=True)
class Pose2:
    """A 2-D rigid frame anchor (x, y, heading)."""

    x: float
    y: float
    heading: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading], dtype=float)


@dataclass
class Trajectory:
    """Time-indexed multi-agent state/action grids with a validity mask."""

    dt: float
    states: np.ndarray  # (N, T+1, 4)
    actions: np.ndarray  # (N, T, 2)
    valid: np.ndarray = field(default=None)  # (N, T+1) bool

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        if self.states.ndim != 3 or self.states.shape[-1] != 4:
            raise InvalidInputError(f"states must be (N, T+1, 4), got {self.states.shape}")
        n, t1 = self.states.shape[:2]
        if self.actions.shape != (n, t1 - 1, 2):
            raise InvalidInputError(
                f"actions must be ({n}, {t1 - 1}, 2), got {self.actions.shape}"
            )
        if self.valid is None:
            self.valid = np.ones((n, t1), dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != (n, t1):
                raise InvalidInputError(f"valid must be ({n}, {t1})")
        if self.dt <= 0:
            raise InvalidInputError("dt must be positive")

    @property
    def agent_count(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1] - 1

    def positions(self) -> np.ndarray:
        return self.states[..., :2]

    def copy(self) -> "Trajectory":
        return Trajectory(self.dt, self.states.copy(), self.actions.copy(), self.valid.copy())


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("non-finite input")


def step_unicycle(state, action, dt: float):
    """Advance unicycle states one step of length dt.

    x' = x + v cos(h) dt, y' = y + v sin(h) dt, h' = wrap(h + w dt),
    v' = max(0, v + a dt). Position uses the time-t speed and heading.
    Accepts arrays shaped (..., 4) and (..., 2); vectorized over leading dims.
    """
    if dt <= 0:
        raise InvalidInputError("dt must be positive")
    s = np.asarray(state, dtype=float)
    a = np.asarray(action, dtype=float)
    _check_finite(s, a)
    x, y, h, v = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    out = np.empty(np.broadcast_shapes(s.shape[:-1], a.shape[:-1]) + (4,), dtype=float)
    out[..., 0] = x + v * np.cos(h) * dt
    out[..., 1] = y + v * np.sin(h) * dt
    out[..., 2] = wrap_angle(h + a[..., 1] * dt)
    out[..., 3] = np.maximum(0.0, v + a[..., 0] * dt)
    return out


def rollout(initial, actions, dt: float = DT) -> Trajectory:
    """Chain step_unicycle over an (N, T, 2) action grid from (N, 4) initial states."""
    init = np.asarray(initial, dtype=float)
    acts = np.asarray(actions, dtype=float)
    if init.ndim == 1:
        init = init[None, :]
    if acts.ndim == 2:
        acts = acts[None, ...]
    if init.shape[0] != acts.shape[0] or init.shape[-1] != 4 or acts.shape[-1] != 2:
        raise InvalidInputError(f"shape mismatch: initial {init.shape}, actions {acts.shape}")
    n, t = acts.shape[:2]
    states = np.empty((n, t + 1, 4), dtype=float)
    states[:, 0] = init
    for i in range(t):
        states[:, i + 1] = step_unicycle(states[:, i], acts[:, i], dt)
    return Trajectory(dt, states, acts)


def inverse_dynamics(states, dt: float = DT, a_max: float = A_MAX,
                     omega_max: float = OMEGA_MAX) -> np.ndarray:
    """Recover actions from a (..., T+1, 4) state sequence.

    a_t = (v_{t+1} - v_t) / dt and w_t = wrap(h_{t+1} - h_t) / dt, both clamped
    to the action bounds. A single-state input yields an empty sequence.
    """
    if dt <= 0:
        raise InvalidInputError("dt must be positive")
    s = np.asarray(states, dtype=float)
    _check_finite(s)
    if s.shape[-2] < 2:
        return np.zeros(s.shape[:-2] + (0, 2), dtype=float)
    accel = (s[..., 1:, 3] - s[..., :-1, 3]) / dt
    yaw = wrap_angle(s[..., 1:, 2] - s[..., :-1, 2]) / dt
    out = np.stack([np.clip(accel, -a_max, a_max), np.clip(yaw, -omega_max, omega_max)], axis=-1)
    return out


def clamp_actions(actions, a_max: float = A_MAX, omega_max: float = OMEGA_MAX) -> np.ndarray:
    acts = np.asarray(actions, dtype=float)
    return np.stack(
        [np.clip(acts[..., 0], -a_max, a_max), np.clip(acts[..., 1], -omega_max, omega_max)],
        axis=-1,
    )


def _frame_array(frame) -> np.ndarray:
    if isinstance(frame, Pose2):
        return frame.as_array()
    f = np.asarray(frame, dtype=float)
    if f.shape != (3,):
        raise InvalidInputError("frame must be a Pose2 or a (3,) array")
    return f


def to_local(value, frame):
    """Map points (..., 2), poses (..., 3) or states (..., 4) into a local frame.

    Rotation by -frame.heading followed by removal of the frame origin;
    headings are shifted and re-wrapped.
    """
    f = _frame_array(frame)
    v = np.asarray(value, dtype=float)
    _check_finite(v, f)
    c, s = np.cos(f[2]), np.sin(f[2])
    d = v[..., :2] - f[:2]
    out = v.copy()
    out[..., 0] = c * d[..., 0] + s * d[..., 1]
    out[..., 1] = -s * d[..., 0] + c * d[..., 1]
    if v.shape[-1] >= 3:
        out[..., 2] = wrap_angle(v[..., 2] - f[2])
    return out


def to_global(value, frame):
    """Inverse of :func:`to_local` for the same frame."""
    f = _frame_array(frame)
    v = np.asarray(value, dtype=float)
    _check_finite(v, f)
    c, s = np.cos(f[2]), np.sin(f[2])
    out = v.copy()
    out[..., 0] = c * v[..., 0] - s * v[..., 1] + f[0]
    out[..., 1] = s * v[..., 0] + c * v[..., 1] + f[1]
    if v.shape[-1] >= 3:
        out[..., 2] = wrap_angle(v[..., 2] + f[2])
    return out


def rollout_vjp(initial, actions, dt, grad_states):
    """Backpropagate d(loss)/d(states) of a rollout to its actions and initial state.

    ``grad_states`` has shape (N, T+1, 4) aligned with the forward rollout.
    Returns (grad_actions (N, T, 2), grad_initial (N, 4)). The max(0, v)
    clamp uses the subgradient 0 at v == 0.
    """
    init = np.asarray(initial, dtype=float)
    acts = np.asarray(actions, dtype=float)
    if init.ndim == 1:
        init = init[None, :]
    if acts.ndim == 2:
        acts = acts[None, ...]
    n, t = acts.shape[:2]
    traj = rollout(init, acts, dt)
    s = traj.states
    g = np.asarray(grad_states, dtype=float).reshape(n, t + 1, 4).copy()
    grad_actions = np.zeros((n, t, 2), dtype=float)
    for i in range(t - 1, -1, -1):
        gx, gy, gh, gv = g[:, i + 1, 0], g[:, i + 1, 1], g[:, i + 1, 2], g[:, i + 1, 3]
        h, v = s[:, i, 2], s[:, i, 3]
        c, sn = np.cos(h), np.sin(h)
        alive = (v + acts[:, i, 0] * dt) > 0.0  # speed clamp active below zero
        grad_actions[:, i, 0] = np.where(alive, gv * dt, 0.0)
        grad_actions[:, i, 1] = gh * dt
        g[:, i, 0] += gx
        g[:, i, 1] += gy
        g[:, i, 2] += -v * sn * dt * gx + v * c * dt * gy + gh
        g[:, i, 3] += c * dt * gx + sn * dt * gy + np.where(alive, gv, 0.0)
    return grad_actions, g[:, 0]
