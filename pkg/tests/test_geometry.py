import numpy as np
import pytest
from hypothesis import given, strategies as st

from difftraffic.geometry import (
    A_MAX,
    OMEGA_MAX,
    InvalidInputError,
    Pose2,
    Trajectory,
    clamp_actions,
    inverse_dynamics,
    rollout,
    rollout_vjp,
    step_unicycle,
    to_global,
    to_local,
    wrap_angle,
)


def test_step_zero_action_advances_along_heading():
    out = step_unicycle([0.0, 0.0, 0.0, 10.0], [0.0, 0.0], 0.5)
    np.testing.assert_allclose(out, [5.0, 0.0, 0.0, 10.0])


def test_step_heading_pi_half_moves_plus_y():
    out = step_unicycle([0.0, 0.0, np.pi / 2, 4.0], [0.0, 0.0], 0.5)
    np.testing.assert_allclose(out, [0.0, 2.0, np.pi / 2, 4.0], atol=1e-15)


def test_step_hand_applied_update():
    # x' = 0 + 2*cos(0)*0.5 = 1, theta' = 0 + 1*0.5, v' = 2 + 2*0.5
    out = step_unicycle([0.0, 0.0, 0.0, 2.0], [2.0, 1.0], 0.5)
    np.testing.assert_allclose(out, [1.0, 0.0, 0.5, 3.0])


def test_step_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        step_unicycle([np.nan, 0, 0, 1], [0, 0], 0.5)
    with pytest.raises(InvalidInputError):
        step_unicycle([0, 0, 0, 1], [0, 0], 0.0)


def test_speed_never_negative():
    out = step_unicycle([0, 0, 0, 1.0], [-100.0, 0.0], 0.5)
    assert out[3] == 0.0


def test_rollout_zero_horizon():
    traj = rollout(np.array([[1.0, 2.0, 0.3, 4.0]]), np.zeros((1, 0, 2)), 0.5)
    assert traj.horizon == 0
    assert traj.states.shape == (1, 1, 4)


def test_rollout_straight_line():
    traj = rollout(np.array([[0, 0, 0, 10.0]]), np.zeros((1, 16, 2)), 0.5)
    np.testing.assert_allclose(traj.states[0, -1], [80.0, 0.0, 0.0, 10.0])


def test_rollout_matches_repeated_steps():
    rng = np.random.default_rng(0)
    init = rng.normal(size=(3, 4))
    init[:, 3] = np.abs(init[:, 3]) + 1.0
    acts = rng.normal(size=(3, 8, 2))
    traj = rollout(init, acts, 0.5)
    s = init.copy()
    for t in range(8):
        s = step_unicycle(s, acts[:, t], 0.5)
        np.testing.assert_array_equal(traj.states[:, t + 1], s)


def test_rollout_shape_mismatch():
    with pytest.raises(InvalidInputError):
        rollout(np.zeros((2, 4)), np.zeros((3, 5, 2)), 0.5)


def test_inverse_dynamics_constant_velocity():
    traj = rollout(np.array([[0, 0, 0, 5.0]]), np.zeros((1, 10, 2)), 0.5)
    acts = inverse_dynamics(traj.states, 0.5)
    np.testing.assert_allclose(acts, 0.0, atol=1e-14)


def test_inverse_dynamics_round_trip():
    rng = np.random.default_rng(1)
    acts = np.stack([rng.uniform(-2, 2, size=(4, 12)), rng.uniform(-1, 1, size=(4, 12))], axis=-1)
    init = np.column_stack([rng.normal(size=4), rng.normal(size=4),
                            rng.uniform(-3, 3, 4), rng.uniform(5, 10, 4)])
    traj = rollout(init, acts, 0.5)
    assert np.all(traj.states[..., 3] > 0)
    rec = inverse_dynamics(traj.states, 0.5)
    np.testing.assert_allclose(rec, acts, atol=1e-9)


def test_inverse_dynamics_wrapped_heading():
    states = np.array([[[0, 0, 3.0, 1.0], [0, 0, -3.0, 1.0]]])
    acts = inverse_dynamics(states, 0.5)
    # shortest path crosses pi: delta = 2*(pi - 3.0), rate = delta / 0.5
    np.testing.assert_allclose(acts[0, 0, 1], 2.0 * (np.pi - 3.0) / 0.5, atol=1e-12)


def test_inverse_dynamics_single_state():
    assert inverse_dynamics(np.zeros((1, 1, 4)), 0.5).shape == (1, 0, 2)


def test_inverse_dynamics_clamps():
    states = np.array([[[0, 0, 0, 0.0], [0, 0, 1.4, 20.0]]])
    acts = inverse_dynamics(states, 0.5)
    assert acts[0, 0, 0] == A_MAX
    assert acts[0, 0, 1] == OMEGA_MAX


@given(st.floats(-50, 50))
def test_wrap_idempotent_and_in_range(theta):
    w = wrap_angle(theta)
    assert -np.pi < w <= np.pi
    assert wrap_angle(w) == w


def test_wrap_boundary():
    assert wrap_angle(np.pi) == np.pi
    assert wrap_angle(-np.pi) == np.pi


def test_local_identity_frame():
    p = np.array([3.0, 4.0])
    np.testing.assert_array_equal(to_local(p, Pose2(0, 0, 0)), p)


def test_local_global_round_trip():
    rng = np.random.default_rng(2)
    frame = Pose2(*rng.normal(size=3))
    state = rng.normal(size=(7, 4))
    back = to_global(to_local(state, frame), frame)
    np.testing.assert_allclose(back[..., :2], state[..., :2], atol=1e-12)
    np.testing.assert_allclose(back[..., 3], state[..., 3])


def test_local_hand_rotation():
    local = to_local(np.array([1.0, 0.0]), Pose2(0.0, 0.0, np.pi / 2))
    np.testing.assert_allclose(local, [0.0, -1.0], atol=1e-15)


def test_trajectory_invariants():
    with pytest.raises(InvalidInputError):
        Trajectory(0.5, np.zeros((2, 3, 4)), np.zeros((2, 3, 2)))
    traj = Trajectory(0.5, np.zeros((2, 3, 4)), np.zeros((2, 2, 2)))
    assert traj.agent_count == 2 and traj.horizon == 2


def test_clamp_actions():
    out = clamp_actions(np.array([[9.0, -2.0], [-9.0, 2.0]]))
    np.testing.assert_array_equal(out, [[A_MAX, -OMEGA_MAX], [-A_MAX, OMEGA_MAX]])


def test_rollout_vjp_matches_finite_differences():
    rng = np.random.default_rng(3)
    init = np.array([[0.0, 0.0, 0.2, 6.0], [2.0, -1.0, -0.4, 4.0]])
    acts = rng.uniform(-1, 1, size=(2, 6, 2))
    seed = rng.normal(size=(2, 7, 4))

    def loss(a):
        return float((rollout(init, a, 0.5).states * seed).sum())

    ga, _ = rollout_vjp(init, acts, 0.5, seed)
    h = 1e-6
    for idx in [(0, 0, 0), (0, 3, 1), (1, 5, 0), (1, 2, 1)]:
        ap, am = acts.copy(), acts.copy()
        ap[idx] += h
        am[idx] -= h
        fd = (loss(ap) - loss(am)) / (2 * h)
        assert abs(fd - ga[idx]) < 1e-5 * max(1.0, abs(fd))
