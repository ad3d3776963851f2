import numpy as np
import pytest

from difftraffic.costs import (
    DiskSet,
    collision_cost,
    collision_cost_grad,
    disk_centers,
    disk_decomposition,
    disk_sets_for,
    no_collision_loss,
    no_collision_loss_grad,
    pairwise_overlap,
)
from difftraffic.geometry import Trajectory, rollout


def static_traj(positions, headings=None, steps=3):
    """All agents hold their pose for `steps` transitions."""
    n = len(positions)
    states = np.zeros((n, steps + 1, 4))
    for i, p in enumerate(positions):
        states[i, :, 0] = p[0]
        states[i, :, 1] = p[1]
        if headings is not None:
            states[i, :, 2] = headings[i]
    return Trajectory(0.5, states, np.zeros((n, steps, 2)))


def test_disk_decomposition_square_body():
    d = disk_decomposition(2.0, 2.0, 1)
    assert d.radius == 1.0
    np.testing.assert_array_equal(d.offsets, [0.0])


def test_disk_decomposition_three_disks():
    d = disk_decomposition(5.0, 2.0, 3)
    np.testing.assert_array_equal(d.offsets, [-1.5, 0.0, 1.5])
    assert d.radius == 1.0


def test_disk_decomposition_two_disks():
    d = disk_decomposition(4.0, 2.0, 2)
    np.testing.assert_array_equal(d.offsets, [-1.0, 1.0])


def test_disk_decomposition_degenerate():
    d = disk_decomposition(1.0, 2.0, 3)
    np.testing.assert_array_equal(d.offsets, [0.0])
    assert d.radius == 1.0


def test_disk_centers_rotate_with_heading():
    d = DiskSet(offsets=np.array([2.0]), radius=1.0)
    c = disk_centers(np.array([1.0, 1.0, np.pi / 2, 0.0]), d)
    np.testing.assert_allclose(c, [[1.0, 3.0]], atol=1e-12)


def test_collision_cost_static_pair():
    traj = static_traj([(0.0, 0.0), (5.0, 0.0)], steps=3)
    assert collision_cost(traj, 1, 0) == pytest.approx(-15.0)


def test_collision_cost_coincident():
    traj = static_traj([(2.0, 2.0), (2.0, 2.0)], steps=4)
    assert collision_cost(traj, 0, 1) == 0.0


def test_collision_cost_matches_resummation():
    rng = np.random.default_rng(0)
    states = rng.normal(scale=10, size=(3, 9, 4))
    traj = Trajectory(0.5, states, np.zeros((3, 8, 2)))
    total = 0.0
    for t in range(1, 9):
        total -= float(np.hypot(*(states[2, t, :2] - states[0, t, :2])))
    assert abs(collision_cost(traj, 2, 0) - total) < 1e-12


def test_collision_cost_invalid_pair():
    traj = static_traj([(0, 0), (1, 1)])
    with pytest.raises(ValueError):
        collision_cost(traj, 0, 0)
    with pytest.raises(ValueError):
        collision_cost(traj, 0, 5)


def test_collision_grad_unit_direction():
    traj = static_traj([(5.0, 0.0), (0.0, 0.0)], steps=2)
    g = collision_cost_grad(traj, 0, 1)
    np.testing.assert_allclose(g[1:], [[-1.0, 0.0], [-1.0, 0.0]])
    np.testing.assert_array_equal(g[0], [0.0, 0.0])


def test_collision_grad_coincident_zero():
    traj = static_traj([(1.0, 1.0), (1.0, 1.0)], steps=2)
    np.testing.assert_array_equal(collision_cost_grad(traj, 0, 1), np.zeros((3, 2)))


def test_collision_grad_finite_differences():
    rng = np.random.default_rng(1)
    states = rng.normal(scale=8, size=(2, 6, 4))
    traj = Trajectory(0.5, states, np.zeros((2, 5, 2)))
    g = collision_cost_grad(traj, 0, 1)
    h = 1e-6
    for t in range(1, 6):
        for c in range(2):
            sp, sm = states.copy(), states.copy()
            sp[0, t, c] += h
            sm[0, t, c] -= h
            fd = (collision_cost(Trajectory(0.5, sp, traj.actions), 0, 1)
                  - collision_cost(Trajectory(0.5, sm, traj.actions), 0, 1)) / (2 * h)
            assert abs(fd - g[t, c]) < 1e-6 * max(1.0, abs(fd))


def test_pairwise_overlap_boundary_and_linear():
    di = disk_decomposition(2.0, 2.0, 1)
    dj = disk_decomposition(2.0, 2.0, 1)
    s0 = np.array([0.0, 0.0, 0.0, 0.0])
    make = lambda d: np.array([d, 0.0, 0.0, 0.0])
    assert pairwise_overlap(s0, make(2.0), di, dj) == 0.0
    assert pairwise_overlap(s0, make(0.0), di, dj) == 1.0
    assert pairwise_overlap(s0, make(1.0), di, dj) == pytest.approx(0.5)


def test_pairwise_overlap_monotone_in_disk_distance():
    # single disks make the minimal disk distance equal the separation
    di = disk_decomposition(2.0, 2.0, 1)
    dj = disk_decomposition(3.0, 3.0, 1)
    vals = [pairwise_overlap(np.array([0, 0, 0.7, 0]), np.array([d, 0.0, -0.3, 0]), di, dj)
            for d in np.linspace(0, 8, 40)]
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
    assert all(0.0 <= v <= 1.0 for v in vals)


def test_no_collision_loss_free_scene_zero():
    traj = static_traj([(0.0, 0.0), (50.0, 0.0), (0.0, 50.0)])
    disks = disk_sets_for([(4.5, 2.0)] * 3)
    assert no_collision_loss(traj, disks) == 0.0


def test_no_collision_loss_full_overlap_half():
    traj = static_traj([(0.0, 0.0), (0.0, 0.0)], steps=3)
    disks = disk_sets_for([(2.0, 2.0), (2.0, 2.0)])
    assert no_collision_loss(traj, disks) == pytest.approx(0.5)


def test_no_collision_loss_single_agent_zero():
    traj = static_traj([(0.0, 0.0)])
    assert no_collision_loss(traj, disk_sets_for([(4.0, 2.0)])) == 0.0


def brute_force_loss(states, disks, cap):
    n, t1 = states.shape[:2]
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            acc = 0.0
            for t in range(t1):
                best = np.inf
                for oi in disks[i].offsets:
                    ci = states[i, t, :2] + oi * np.array([np.cos(states[i, t, 2]), np.sin(states[i, t, 2])])
                    for oj in disks[j].offsets:
                        cj = states[j, t, :2] + oj * np.array([np.cos(states[j, t, 2]), np.sin(states[j, t, 2])])
                        best = min(best, float(np.hypot(*(ci - cj))))
                rsum = disks[i].radius + disks[j].radius
                if best <= rsum:
                    acc += 1.0 - best / rsum
            total += min(1.0, acc) if cap == "min" else max(1.0, acc)
    return total / n ** 2


@pytest.mark.parametrize("cap", ["min", "max"])
def test_no_collision_loss_matches_brute_force(cap):
    rng = np.random.default_rng(2)
    for _ in range(5):
        states = rng.normal(scale=4.0, size=(4, 5, 4))
        traj = Trajectory(0.5, states, np.zeros((4, 4, 2)))
        disks = disk_sets_for(rng.uniform([3.5, 1.6], [5.5, 2.4], size=(4, 2)))
        assert abs(no_collision_loss(traj, disks, cap=cap)
                   - brute_force_loss(states, disks, cap)) < 1e-12


def test_costs_translation_invariant():
    rng = np.random.default_rng(3)
    states = rng.normal(scale=5.0, size=(3, 6, 4))
    shifted = states.copy()
    shifted[..., :2] += np.array([123.0, -45.0])
    t1 = Trajectory(0.5, states, np.zeros((3, 5, 2)))
    t2 = Trajectory(0.5, shifted, np.zeros((3, 5, 2)))
    disks = disk_sets_for([(4.5, 2.0)] * 3)
    assert no_collision_loss(t1, disks) == pytest.approx(no_collision_loss(t2, disks), abs=1e-12)
    assert collision_cost(t1, 0, 1) == pytest.approx(collision_cost(t2, 0, 1), abs=1e-9)


def test_no_collision_grad_finite_differences():
    # mild overlap so the pair sums sit strictly inside (0, 1)
    states = np.zeros((2, 2, 4))
    states[0, :, :2] = [0.0, 0.0]
    states[1, :, :2] = [3.9, 0.3]
    states[1, :, 2] = 0.4
    traj = Trajectory(0.5, states, np.zeros((2, 1, 2)))
    disks = disk_sets_for([(4.5, 2.0), (4.5, 2.0)])
    base = no_collision_loss(traj, disks)
    assert 0.0 < base < 0.5
    g = no_collision_loss_grad(traj, disks)
    h = 1e-7
    for i in range(2):
        for t in range(2):
            for c in (0, 1, 2):
                sp, sm = states.copy(), states.copy()
                sp[i, t, c] += h
                sm[i, t, c] -= h
                fd = (no_collision_loss(Trajectory(0.5, sp, traj.actions), disks)
                      - no_collision_loss(Trajectory(0.5, sm, traj.actions), disks)) / (2 * h)
                assert abs(fd - g[i, t, c]) < 1e-5, (i, t, c, fd, g[i, t, c])
