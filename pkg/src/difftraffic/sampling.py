"""Guided joint sampling and closed-loop simulation.

sample_joint draws M joint action-field samples via reverse diffusion
(DDIM stride 1 by default), optionally combining conditional and
unconditional branches with classifier-free guidance and nudging the
predicted clean field down a cost gradient (clean guidance). Samples are
always unrolled through the unicycle dynamics, so every returned trajectory
is kinematically feasible by construction.

simulate_closed_loop replans every T_replan steps from the executed
history, mirroring the inference protocol used for evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .costs import collision_cost, collision_cost_grad, disk_sets_for, no_collision_loss
from .denoiser import denoise_t, encode_scene, null_z_lang_t, scene_features, encode_scene_t
from .geometry import Trajectory, clamp_actions, rollout, rollout_vjp
from .netparams import DenoiserParams
from .schedule import NoiseSchedule, cfg_combine, ddim_step, ddpm_step
from .textenc import encode_tokens_t, fuse_language_t, prompt_token_matrix, wrap_params


@dataclass(frozen=True)
class GuidanceSpec:
    kind: str  # "collision" pulls adv toward target; "no_collision" pushes agents apart
    alpha: float  # gradient step size in normalized action space
    n_steps: int = 1
    adv: int = 0
    target: int = 1


@dataclass(frozen=True)
class SampleConfig:
    M: int = 8
    cfg_weight: float = 0.0
    use_text: bool = False
    guidance: GuidanceSpec | None = None
    sampler: str = "ddim"  # ddim | ddpm
    eta: float = 0.0
    horizon: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if not np.isfinite(self.cfg_weight):
            raise ValueError("cfg weight must be finite")
        if self.sampler not in ("ddim", "ddpm"):
            raise ValueError("sampler must be 'ddim' or 'ddpm'")


def action_scale(params: DenoiserParams) -> np.ndarray:
    return np.array([params.config.a_max, params.config.omega_max])


def normalize_actions(actions, params: DenoiserParams) -> np.ndarray:
    return np.asarray(actions, dtype=float) / action_scale(params)


def denormalize_actions(tau, params: DenoiserParams) -> np.ndarray:
    return np.asarray(tau, dtype=float) * action_scale(params)


def make_guidance_cost(spec: GuidanceSpec, init_states, dims, dt, params):
    """Cost closure: normalized clean field -> (J, dJ/dtau) through the unroll.

    The collision gradient is taken only w.r.t. the adversarial agent; the
    clamp to action bounds contributes zero gradient outside the bounds.
    """
    scale = action_scale(params)
    a_max, w_max = params.config.a_max, params.config.omega_max
    disks = disk_sets_for(dims)

    def cost(tau0):
        raw = tau0 * scale
        acts = clamp_actions(raw, a_max, w_max)
        traj = rollout(init_states, acts, dt)
        gstates = np.zeros_like(traj.states)
        if spec.kind == "collision":
            j_val = collision_cost(traj, spec.adv, spec.target)
            gstates[spec.adv, :, :2] = collision_cost_grad(traj, spec.adv, spec.target)
        elif spec.kind == "no_collision":
            from .costs import no_collision_loss_grad

            j_val = no_collision_loss(traj, disks)
            gstates = no_collision_loss_grad(traj, disks)
        else:
            raise ValueError(f"unknown guidance kind {spec.kind!r}")
        gact, _ = rollout_vjp(init_states, acts, dt, gstates)
        inside = np.stack([np.abs(raw[..., 0]) < a_max,
                           np.abs(raw[..., 1]) < w_max], axis=-1).astype(float)
        return j_val, gact * scale * inside

    return cost


def apply_clean_guidance(tau0_hat, cost_fn, alpha_g: float, n_steps: int = 1):
    """Gradient-descend the predicted clean field on a differentiable cost.

    Returns (guided field, aborted flag); a non-finite gradient aborts and
    returns the unguided input.
    """
    tau = np.asarray(tau0_hat, dtype=float)
    if alpha_g == 0.0 or n_steps < 1:
        return tau.copy(), False
    out = tau.copy()
    for _ in range(n_steps):
        _, grad = cost_fn(out)
        if not np.all(np.isfinite(grad)):
            return tau.copy(), True
        out = out - alpha_g * grad
    return out, False


def _prompt_bank(scenario, params, use_text: bool):
    """(N, L) token ids + mask; agents without prompts get the <null> row."""
    n = scenario.agent_count
    prompts = []
    for i in range(n):
        p = scenario.prompts.get(i) if use_text else None
        prompts.append(p.tokens if p is not None else None)
    max_len = max(len(t) if t else 1 for t in prompts)
    return prompt_token_matrix(prompts, max_len)


def sample_joint(scenario, params: DenoiserParams, schedule: NoiseSchedule,
                 config: SampleConfig, history: Trajectory | None = None) -> dict:
    """Draw M joint future trajectories; returns samples plus diagnostics.

    The returned "selected" index always minimizes the disk non-collision
    loss (ties break to the lowest index); adversarial callers can re-select
    from the per-sample diagnostics.
    """
    history = history if history is not None else scenario.history
    n = history.agent_count
    t_len = config.horizon
    m = config.M
    params_t = wrap_params(params, dtype=np.float32)
    cfgm = params.config

    feats, has_state = scene_features(history, scenario.map, cfgm)
    z_enc_1 = encode_scene_t(feats, has_state, params_t)  # (N, d)
    z_tiled = ad.Tensor(np.broadcast_to(z_enc_1.data[None], (m, n, cfgm.d_model)).copy())
    ids_mask_dtype = z_enc_1.data.dtype
    ids, mask = _prompt_bank(scenario, params, config.use_text)
    e_lang = encode_tokens_t(np.broadcast_to(ids[None], (m,) + ids.shape).copy(),
                             np.broadcast_to(mask[None], (m,) + mask.shape).copy(),
                             params_t, cfgm)
    z_lang_cond = fuse_language_t(e_lang, z_tiled, params_t)
    z_lang_null = null_z_lang_t(z_tiled, params_t, cfgm)

    any_text = config.use_text and any(i in scenario.prompts for i in range(n))
    w = config.cfg_weight

    rngs = [np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(i,)))
            for i in range(m)]
    tau = np.stack([r.standard_normal((n, t_len, 2)) for r in rngs])

    guidance_cost = None
    init_states = history.states[:, -1]
    if config.guidance is not None:
        guidance_cost = make_guidance_cost(config.guidance, init_states,
                                           scenario.agent_dims, history.dt, params)
    guidance_aborts = 0

    k_vec = np.empty(m, dtype=int)
    for k in range(schedule.K, 0, -1):
        k_vec[:] = k
        if not any_text or w == -1.0:
            tau0 = denoise_t(tau, k_vec, z_tiled, z_lang_null, params_t, cfgm).data
        elif w == 0.0:
            tau0 = denoise_t(tau, k_vec, z_tiled, z_lang_cond, params_t, cfgm).data
        else:
            cond = denoise_t(tau, k_vec, z_tiled, z_lang_cond, params_t, cfgm).data
            uncond = denoise_t(tau, k_vec, z_tiled, z_lang_null, params_t, cfgm).data
            tau0 = cfg_combine(cond, uncond, w)
        if guidance_cost is not None:
            guided = np.empty_like(tau0)
            for i in range(m):
                guided[i], aborted = apply_clean_guidance(
                    tau0[i], guidance_cost, config.guidance.alpha, config.guidance.n_steps)
                guidance_aborts += int(aborted)
            tau0 = guided
        if config.sampler == "ddim":
            z_noise = None
            if config.eta > 0.0 and k > 1:
                z_noise = np.stack([r.standard_normal((n, t_len, 2)) for r in rngs])
            tau = ddim_step(tau, tau0, k, schedule, eta=(config.eta if k > 1 else 0.0), z=z_noise)
        else:
            z_noise = np.stack([r.standard_normal((n, t_len, 2)) for r in rngs]) if k > 1 \
                else np.zeros_like(tau)
            tau = ddpm_step(tau, tau0, k, schedule, z_noise)

    disks = disk_sets_for(scenario.agent_dims)
    samples, nc_losses = [], []
    for i in range(m):
        acts = clamp_actions(denormalize_actions(tau[i], params),
                             cfgm.a_max, cfgm.omega_max)
        traj = rollout(init_states, acts, history.dt)
        samples.append(traj)
        nc_losses.append(no_collision_loss(traj, disks))
    nc = np.asarray(nc_losses)
    selected = int(np.argmin(nc))  # np.argmin takes the first minimum on ties
    diag = {"no_collision_loss": nc, "selected": selected,
            "guidance_aborts": guidance_aborts}
    if config.guidance is not None and config.guidance.kind == "collision":
        diag["collision_cost"] = np.array([
            collision_cost(s, config.guidance.adv, config.guidance.target) for s in samples
        ])
    return {"samples": samples, **diag}


@dataclass(frozen=True)
class SimulateConfig:
    mode: str = "uncond"  # uncond | text | adversarial
    rollouts: int = 8  # independent closed-loop runs retained per scenario
    samples: int = 4  # M joint samples per replanning step
    cfg_weight: float = 0.0
    guidance_alpha: float = 0.0
    guidance_steps: int = 1
    horizon: int = 16  # planning horizon per replan
    replan: int = 2  # executed steps between plans
    sim_steps: int = 16  # total executed steps (8 s)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("uncond", "text", "adversarial"):
            raise ValueError("mode must be uncond, text, or adversarial")


def simulate_closed_loop(scenario, params: DenoiserParams, schedule: NoiseSchedule,
                         config: SimulateConfig) -> dict:
    """Run `rollouts` independent replanned simulations of one scenario.

    Every plan re-encodes the executed (self-generated) history. In
    adversarial mode the executed sample per replan maximizes progress on the
    collision objective; otherwise it is the non-collision-loss minimizer.
    """
    use_text = config.mode in ("text", "adversarial")
    guidance = None
    if config.mode == "adversarial":
        adv, target = scenario.interest_pair
        guidance = GuidanceSpec(kind="collision", alpha=config.guidance_alpha,
                                n_steps=config.guidance_steps, adv=adv, target=target)
    n = scenario.agent_count
    h1 = scenario.history.states.shape[1]
    disks = disk_sets_for(scenario.agent_dims)
    rollouts, nc_losses, coll_costs = [], [], []
    n_replans = config.sim_steps // config.replan
    for r in range(config.rollouts):
        exec_states = scenario.history.states.copy()
        exec_actions = scenario.history.actions.copy()
        for j in range(n_replans):
            hist = Trajectory(scenario.history.dt, exec_states[:, -h1:],
                              exec_actions[:, -(h1 - 1):] if h1 > 1 else exec_actions[:, :0])
            seed = int(np.random.SeedSequence(
                entropy=config.seed, spawn_key=(r, j)).generate_state(1)[0])
            sub = SampleConfig(M=config.samples, cfg_weight=config.cfg_weight,
                               use_text=use_text, guidance=guidance,
                               horizon=config.horizon, seed=seed)
            res = sample_joint(scenario, params, schedule, sub, history=hist)
            if config.mode == "adversarial":
                pick = int(np.argmin(res["collision_cost"]))
            else:
                pick = res["selected"]
            plan = res["samples"][pick]
            exec_states = np.concatenate(
                [exec_states, plan.states[:, 1:config.replan + 1]], axis=1)
            exec_actions = np.concatenate(
                [exec_actions, plan.actions[:, :config.replan]], axis=1)
        future = Trajectory(scenario.history.dt,
                            exec_states[:, h1 - 1:].copy(),
                            exec_actions[:, h1 - 1:].copy())
        rollouts.append(future)
        nc_losses.append(no_collision_loss(future, disks))
        a, o = scenario.interest_pair
        coll_costs.append(collision_cost(future, a, o))
    nc = np.asarray(nc_losses)
    if config.mode == "adversarial":
        selected = int(np.argmin(np.asarray(coll_costs)))
    else:
        selected = int(np.argmin(nc))
    return {"rollouts": rollouts, "no_collision_loss": nc,
            "collision_cost": np.asarray(coll_costs), "selected": selected}
