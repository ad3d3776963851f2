"""Differentiable costs for guided sampling and auxiliary training.

Two cost families:
  * an adversarial collision cost, the negated sum of center distances
    between one adversarial agent and one target agent, whose gradient is
    taken with respect to the adversarial agent's positions only;
  * a disk-approximation non-collision penalty over all agent pairs, used
    both for best-sample selection and as an auxiliary training loss.

Gradients are analytic (no graph), with documented subgradient choices at
the kinks; geometry.rollout_vjp chains them back to actions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DiskSet:
    """Disk offsets along one agent's length axis plus the common radius."""

    offsets: np.ndarray  # (D,)
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "offsets", np.asarray(self.offsets, dtype=float))
        if self.radius <= 0:
            raise ValueError("disk radius must be positive")
        if len(self.offsets) < 1:
            raise ValueError("need at least one disk")


def disk_decomposition(length: float, width: float, n_disks: int = 3) -> DiskSet:
    """Cover a length x width body with equally spaced disks of radius width/2.

    Centers span [-(length-width)/2, +(length-width)/2] along the length axis;
    a body with length <= width collapses to a single centered disk.
    """
    if length <= 0 or width <= 0 or n_disks < 1:
        raise ValueError("length, width must be positive and n_disks >= 1")
    r = width / 2.0
    if length <= width or n_disks == 1:
        return DiskSet(offsets=np.zeros(1 if length <= width else n_disks), radius=r)
    half = (length - width) / 2.0
    return DiskSet(offsets=np.linspace(-half, half, n_disks), radius=r)


def disk_sets_for(agent_dims, n_disks: int = 3) -> list[DiskSet]:
    """One DiskSet per agent from an (N, 2) length/width array."""
    dims = np.asarray(agent_dims, dtype=float)
    return [disk_decomposition(float(l), float(w), n_disks) for l, w in dims]


def disk_centers(states, disks: DiskSet) -> np.ndarray:
    """Disk centers (..., D, 2) for states (..., 4)."""
    s = np.asarray(states, dtype=float)
    d = s[..., None, 2]
    direction = np.stack([np.cos(d), np.sin(d)], axis=-1)
    return s[..., None, :2] + disks.offsets[..., :, None] * direction


def collision_cost(traj, adv: int, target: int) -> float:
    """J_coll = -sum_{t=1..T} ||p_adv(t) - p_tgt(t)||; minimizing it encourages collision."""
    states = traj.states if hasattr(traj, "states") else np.asarray(traj, dtype=float)
    n = states.shape[0]
    if adv == target or not (0 <= adv < n) or not (0 <= target < n):
        raise ValueError(f"invalid agent pair ({adv}, {target}) for {n} agents")
    diff = states[adv, 1:, :2] - states[target, 1:, :2]
    return float(-np.sqrt((diff ** 2).sum(axis=-1)).sum())


def collision_cost_grad(traj, adv: int, target: int) -> np.ndarray:
    """d(J_coll)/d(p_adv) as an (T+1, 2) array (zero row at t=0).

    Per step: -(p_adv - p_tgt)/d; the zero vector when d < 1e-9.
    """
    states = traj.states if hasattr(traj, "states") else np.asarray(traj, dtype=float)
    n = states.shape[0]
    if adv == target or not (0 <= adv < n) or not (0 <= target < n):
        raise ValueError("invalid agent pair")
    diff = states[adv, :, :2] - states[target, :, :2]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    dist_safe = np.where(dist < 1e-9, 1.0, dist)
    grad = np.where(dist[:, None] < 1e-9, 0.0, -diff / dist_safe[:, None])
    grad[0] = 0.0
    return grad


def pairwise_overlap(state_i, state_j, disks_i: DiskSet, disks_j: DiskSet) -> float:
    """1 - d/(r_i + r_j) when the closest disk pair is within r_i + r_j, else 0."""
    ci = disk_centers(np.asarray(state_i, dtype=float), disks_i)
    cj = disk_centers(np.asarray(state_j, dtype=float), disks_j)
    d = np.sqrt(((ci[:, None, :] - cj[None, :, :]) ** 2).sum(axis=-1)).min()
    rsum = disks_i.radius + disks_j.radius
    return float(max(0.0, 1.0 - d / rsum))


def no_collision_loss(traj, disk_sets: list[DiskSet], cap: str = "min") -> float:
    """(1/N^2) sum_{i != j} cap_1(sum_t J_pair(i, j, t)) over all timesteps.

    ``cap = "min"`` applies min(1, .) so collision-free scenes score exactly
    zero; ``cap = "max"`` applies max(1, .) for fidelity experiments with the
    printed form of the aggregation.
    """
    states = traj.states if hasattr(traj, "states") else np.asarray(traj, dtype=float)
    n = states.shape[0]
    if n < 2:
        return 0.0
    if cap not in ("min", "max"):
        raise ValueError("cap must be 'min' or 'max'")
    centers = [disk_centers(states[i], disk_sets[i]) for i in range(n)]  # (T+1, D, 2)
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            diff = centers[i][:, :, None, :] - centers[j][:, None, :, :]
            d = np.sqrt((diff ** 2).sum(axis=-1)).min(axis=(1, 2))
            rsum = disk_sets[i].radius + disk_sets[j].radius
            s = np.maximum(0.0, 1.0 - d / rsum).sum()
            total += min(1.0, s) if cap == "min" else max(1.0, s)
    return total / float(n * n)


def no_collision_loss_grad(traj, disk_sets: list[DiskSet]) -> np.ndarray:
    """Gradient of the min-capped loss w.r.t. states (N, T+1, 4); speed column is 0.

    Subgradients: 0 where the pair sum is capped at 1, at J_pair kinks, and
    at coincident closest centers; the disk-pair min routes to the first
    minimizing pair.
    """
    states = traj.states if hasattr(traj, "states") else np.asarray(traj, dtype=float)
    n, t1 = states.shape[:2]
    grad = np.zeros((n, t1, 4), dtype=float)
    if n < 2:
        return grad
    centers = [disk_centers(states[i], disk_sets[i]) for i in range(n)]
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            diff = centers[i][:, :, None, :] - centers[j][:, None, :, :]  # (T+1, Di, Dj, 2)
            dmat = np.sqrt((diff ** 2).sum(axis=-1))
            flat = dmat.reshape(t1, -1)
            amin = flat.argmin(axis=1)
            d = flat[np.arange(t1), amin]
            rsum = disk_sets[i].radius + disk_sets[j].radius
            pair_sum = np.maximum(0.0, 1.0 - d / rsum).sum()
            if pair_sum <= 0.0 or pair_sum >= 1.0:
                continue  # capped or inactive: zero subgradient
            dj_count = len(disk_sets[j].offsets)
            for t in range(t1):
                if d[t] >= rsum or d[t] < 1e-9:
                    continue
                di_idx, dj_idx = divmod(int(amin[t]), dj_count)
                u = diff[t, di_idx, dj_idx] / d[t]
                coef = -1.0 / rsum / float(n * n)
                grad[i, t, :2] += coef * u
                grad[j, t, :2] -= coef * u
                # disk centers rotate with heading: dc/dtheta = offset * (-sin, cos)
                hi, hj = states[i, t, 2], states[j, t, 2]
                oi = disk_sets[i].offsets[di_idx]
                oj = disk_sets[j].offsets[dj_idx]
                grad[i, t, 2] += coef * oi * (-np.sin(hi) * u[0] + np.cos(hi) * u[1])
                grad[j, t, 2] -= coef * oj * (-np.sin(hj) * u[0] + np.cos(hj) * u[1])
    return grad
