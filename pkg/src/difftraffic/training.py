"""Training: open-loop denoising, schedule retargeting, closed-loop fine-tuning.

Open-loop training is the standard x0-prediction objective on normalized
ground-truth actions, run in two stages (unconditional, then mixed
conditional with prompt dropout so classifier-free guidance stays valid).
Retargeting continues the same objective under a shorter schedule.
Closed-loop training replans through the model's own executed states with
teacher forcing, selects the best of M one-step denoised candidates per
replanning step, and backpropagates a global-frame state loss (plus a
disk non-collision penalty) through the selected candidates' denoise calls.

All loops are seed-deterministic; batches accumulate gradients in a fixed
order before a single Adam update.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .costs import disk_sets_for, no_collision_loss, no_collision_loss_grad
from .denoiser import denoise_t, encode_scene_t, scene_features
from .geometry import Trajectory, clamp_actions, rollout, rollout_vjp
from .netparams import DenoiserParams, ModelConfig, init_params
from .schedule import NoiseSchedule, cosine_schedule, forward_noise
from .textenc import encode_tokens_t, fuse_language_t, prompt_token_matrix, wrap_params
from .vocab import NULL_ID


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 16
    iterations: int = 3000
    K: int = 100
    gamma: float = 0.6  # forward-diffusion ratio for closed-loop noise levels
    T_replan: int = 2
    M_candidates: int = 8
    teacher_forcing_prob: float = 0.5
    teacher_agent_frac: float = 0.7
    aux_noncollision_weight: float = 0.1
    cond_dropout_prob: float = 0.5
    history_dropout_prob: float = 0.0  # 0.5 during closed-loop training
    seed: int = 0
    stage1_frac: float = 0.5  # unconditional share of open-loop iterations
    horizon: int = 16  # model horizon (closed-loop uses 8)

    def validate(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        for p in (self.teacher_forcing_prob, self.teacher_agent_frac,
                  self.cond_dropout_prob, self.history_dropout_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must be in [0, 1]")
        if self.batch_size < 1 or self.K < 1 or self.iterations < 0:
            raise ValueError("batch_size/K must be positive, iterations non-negative")
        return self


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    skipped: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def optimizer_step(params: DenoiserParams, grads: dict, state: AdamState,
                   lr: float) -> None:
    """In-place bias-corrected Adam update; NaN gradients skip the step."""
    if any(not np.all(np.isfinite(g)) for g in grads.values()):
        state.skipped += 1
        return
    if not state.m:
        state.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        state.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params.tensors[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# dataset preparation

@dataclass
class PreparedScenario:
    feats: np.ndarray  # (N, F)
    feats_nohist: np.ndarray  # history-dropped variant
    has_state: np.ndarray  # (N,)
    tau0: np.ndarray  # (N, T, 2) normalized ground-truth actions
    prompt_ids: np.ndarray  # (N, L)
    prompt_mask: np.ndarray  # (N, L)
    scenario: object


def prepare_dataset(dataset: list, config: ModelConfig) -> list:
    scale = np.array([config.a_max, config.omega_max])
    out = []
    for sc in dataset:
        feats, has_state = scene_features(sc.history, sc.map, config)
        feats_nh, _ = scene_features(sc.history, sc.map, config, drop_history=True)
        tau0 = sc.future.actions / scale
        prompts = [sc.prompts.get(i).tokens if i in sc.prompts else None
                   for i in range(sc.agent_count)]
        max_len = max(len(t) if t else 1 for t in prompts)
        ids, mask = prompt_token_matrix(prompts, max_len)
        out.append(PreparedScenario(feats, feats_nh, has_state, tau0, ids, mask, sc))
    return out


def _pad_batch(items: list, config: ModelConfig, drop_hist_flags=None):
    """Stack prepared scenarios with agent padding; returns batch arrays."""
    b = len(items)
    n_max = max(p.feats.shape[0] for p in items)
    t_len = items[0].tau0.shape[1]
    l_max = max(p.prompt_ids.shape[1] for p in items)
    feats = np.zeros((b, n_max, config.feature_dim))
    has = np.zeros((b, n_max), dtype=bool)
    tau0 = np.zeros((b, n_max, t_len, 2))
    ids = np.full((b, n_max, l_max), NULL_ID, dtype=int)
    mask = np.zeros((b, n_max, l_max))
    mask[:, :, 0] = 1.0  # padded agents read the <null> token
    for i, p in enumerate(items):
        n = p.feats.shape[0]
        feats[i, :n] = p.feats_nohist if (drop_hist_flags is not None and drop_hist_flags[i]) \
            else p.feats
        has[i, :n] = p.has_state
        tau0[i, :n] = p.tau0
        ids[i, :n, : p.prompt_ids.shape[1]] = p.prompt_ids
        mask[i, :n, : p.prompt_ids.shape[1]] = p.prompt_mask
    return feats, has, tau0, ids, mask


def _null_ids_like(ids, mask):
    out = np.full_like(ids, NULL_ID)
    m = np.zeros_like(mask)
    m[..., 0] = 1.0
    return out, m


def openloop_loss(params: DenoiserParams, batch: list, schedule: NoiseSchedule,
                  rng: np.random.Generator, cond_dropout_prob: float = 0.5,
                  conditional: bool = True, compute_dtype=np.float32) -> tuple:
    """Denoising MSE over a prepared batch; returns (loss, gradients dict).

    Per scenario: k ~ U{1..K}, forward-noise the ground-truth normalized
    actions, denoise with (dropout-masked) conditioning, and penalize the
    squared error against the clean field over valid agents.
    """
    if not batch:
        raise ValueError("empty batch")
    cfgm = params.config
    use_cond = np.array([conditional and rng.random() >= cond_dropout_prob for _ in batch])
    feats, has, tau0, ids, mask = _pad_batch(batch, cfgm)
    for i in range(len(batch)):
        if not use_cond[i]:
            ids[i], mask[i] = np.full_like(ids[i], NULL_ID), np.zeros_like(mask[i])
            mask[i, :, 0] = 1.0
    k_vec = rng.integers(1, schedule.K + 1, size=len(batch))
    eps = rng.standard_normal(tau0.shape)
    tau_k = np.stack([forward_noise(tau0[i], int(k_vec[i]), schedule, eps[i])
                      for i in range(len(batch))])

    params_t = wrap_params(params, dtype=compute_dtype)
    z_enc = encode_scene_t(feats, has, params_t)
    e_lang = encode_tokens_t(ids, mask, params_t, cfgm)
    z_lang = fuse_language_t(e_lang, z_enc, params_t)
    pred = denoise_t(tau_k, k_vec, z_enc, z_lang, params_t, cfgm, agent_mask=has)

    dt = pred.data.dtype
    weight = has[:, :, None, None].astype(dt)
    denom = float(weight.sum()) * tau0.shape[2] * 2.0
    diff = ad.add(pred, -tau0.astype(dt))
    loss = ad.mul(ad.sum_(ad.mul(ad.mul(diff, diff), weight)), 1.0 / denom)
    loss.backward()
    grads = {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
             for name, t in params_t.items()}
    return float(loss.data), grads


def train_openloop(dataset: list, config: TrainConfig,
                   model_config: ModelConfig | None = None,
                   params: DenoiserParams | None = None,
                   log=None) -> tuple:
    """Two-stage open-loop training; returns (params, loss curve)."""
    config.validate()
    if not dataset:
        raise ValueError("dataset must contain at least one scenario")
    model_config = model_config or (params.config if params else ModelConfig())
    params = params.copy() if params else init_params(config.seed, model_config)
    prepared = prepare_dataset(dataset, params.config)
    schedule = cosine_schedule(config.K)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(1,)))
    state = AdamState()
    curve = []
    stage1 = int(round(config.iterations * config.stage1_frac))
    for it in range(config.iterations):
        conditional = it >= stage1
        idx = rng.integers(0, len(prepared), size=config.batch_size)
        # bucket by agent count: padded attention rows are pure waste
        buckets: dict = {}
        for i in idx:
            buckets.setdefault(prepared[i].feats.shape[0], []).append(prepared[i])
        loss = 0.0
        grads: dict = {}
        for n in sorted(buckets):
            sub = buckets[n]
            sub_loss, sub_grads = openloop_loss(params, sub, schedule, rng,
                                                cond_dropout_prob=config.cond_dropout_prob,
                                                conditional=conditional)
            frac = len(sub) / float(len(idx))
            loss += sub_loss * frac
            for name, g in sub_grads.items():
                grads[name] = grads.get(name, 0.0) + g * frac
        optimizer_step(params, grads, state, config.learning_rate)
        curve.append((it, loss))
        if log is not None and (it % 50 == 0 or it == config.iterations - 1):
            log({"iteration": it, "loss": loss,
                 "stage": "cond" if conditional else "uncond"})
    return params, curve


def retarget_schedule(params: DenoiserParams, k_new: int, dataset: list,
                      config: TrainConfig, log=None) -> tuple:
    """Continue open-loop training under a new (typically shorter) schedule."""
    if k_new < 1:
        raise ValueError("K_new must be >= 1")
    cfg = replace(config, K=k_new, stage1_frac=0.0)
    cfg.validate()
    if cfg.iterations == 0:
        return params.copy(), []
    return train_openloop(dataset, cfg, params=params, log=log)


# ---------------------------------------------------------------------------
# closed-loop training

def _state_loss_grad(executed, gt, active):
    """Mean squared full-state error (x, y, sin h, cos h, v) and its gradient.

    `executed`/`gt` are (N, S, 4) aligned state grids; `active` masks the
    agents whose executed states are self-generated (teacher rows are ground
    truth and contribute zero).
    """
    n, s1 = executed.shape[:2]
    count = max(n * (s1 - 1) * 5, 1)
    dx = executed[:, 1:, 0] - gt[:, 1:, 0]
    dy = executed[:, 1:, 1] - gt[:, 1:, 1]
    dsin = np.sin(executed[:, 1:, 2]) - np.sin(gt[:, 1:, 2])
    dcos = np.cos(executed[:, 1:, 2]) - np.cos(gt[:, 1:, 2])
    dv = executed[:, 1:, 3] - gt[:, 1:, 3]
    loss = (dx ** 2 + dy ** 2 + dsin ** 2 + dcos ** 2 + dv ** 2).sum() / count
    grad = np.zeros_like(executed)
    grad[:, 1:, 0] = 2.0 * dx / count
    grad[:, 1:, 1] = 2.0 * dy / count
    grad[:, 1:, 2] = (2.0 * dsin * np.cos(executed[:, 1:, 2])
                      - 2.0 * dcos * np.sin(executed[:, 1:, 2])) / count
    grad[:, 1:, 3] = 2.0 * dv / count
    grad *= active[:, None, None]
    return float(loss), grad


def closedloop_scenario_pass(params_t: dict, prep: PreparedScenario,
                             schedule: NoiseSchedule, config: TrainConfig,
                             rng: np.random.Generator, model_config: ModelConfig,
                             scale: np.ndarray) -> tuple:
    """One closed-loop rollout with teacher forcing; backpropagates in place.

    Returns (state_loss, aux_loss, diagnostics). Gradients accumulate on the
    shared params_t tensors; candidate selection is non-differentiable
    routing and the re-encoded executed history is treated as a constant.
    """
    sc = prep.scenario
    n = sc.agent_count
    dt = sc.history.dt
    h1 = sc.history.states.shape[1]
    t_model = config.horizon
    k_max = int(np.floor(config.K * config.gamma))
    if k_max < 1:
        raise ValueError("K * gamma must be at least 1")
    gt_future = sc.future.states  # (N, 17, 4)
    gt_actions_norm = prep.tau0  # (N, 16, 2)
    n_replans = 4
    exec_steps = n_replans * config.T_replan

    teacher = np.zeros(n, dtype=bool)
    if rng.random() < config.teacher_forcing_prob:
        n_teacher = int(round(config.teacher_agent_frac * n))
        teacher[rng.permutation(n)[:n_teacher]] = True
    drop_cond = rng.random() < config.cond_dropout_prob
    drop_hist = rng.random() < config.history_dropout_prob

    ids, mask = prep.prompt_ids, prep.prompt_mask
    if drop_cond:
        ids, mask = _null_ids_like(ids, mask)

    exec_states = sc.history.states.copy()  # grows by T_replan per plan
    segments = []  # (graph tensor, selected index, clamp mask, k)
    m_c = config.M_candidates
    for j in range(n_replans):
        t = j * config.T_replan
        hist = Trajectory(dt, exec_states[:, -h1:], np.zeros((n, h1 - 1, 2)))
        feats, has = scene_features(hist, sc.map, model_config, drop_history=drop_hist)
        e_lang = encode_tokens_t(np.broadcast_to(ids[None], (m_c,) + ids.shape).copy(),
                                 np.broadcast_to(mask[None], (m_c,) + mask.shape).copy(),
                                 params_t, model_config)
        z_enc_rep = encode_scene_t(np.broadcast_to(feats[None], (m_c,) + feats.shape).copy(),
                                   np.broadcast_to(has[None], (m_c,) + has.shape).copy(),
                                   params_t)
        z_lang = fuse_language_t(e_lang, z_enc_rep, params_t)
        seg_gt = gt_actions_norm[:, t: t + t_model]
        k_j = int(rng.integers(1, k_max + 1))
        eps = rng.standard_normal((m_c,) + seg_gt.shape)
        tau_k = forward_noise(seg_gt[None], k_j, schedule, eps)
        pred = denoise_t(tau_k, np.full(m_c, k_j), z_enc_rep, z_lang, params_t, model_config)

        raw = pred.data * scale
        cand_actions = clamp_actions(raw, model_config.a_max, model_config.omega_max)
        cur = exec_states[:, -1]
        d_vals = np.empty(m_c)
        for m_i in range(m_c):
            traj = rollout(cur, cand_actions[m_i], dt)
            diff = traj.states[:, 1:, :2] - gt_future[:, t + 1: t + t_model + 1, :2]
            d_vals[m_i] = np.sqrt((diff ** 2).sum(axis=-1)).mean()
        m_star = int(np.argmin(d_vals))

        step_actions = cand_actions[m_star][:, : config.T_replan]
        nxt = rollout(cur, step_actions, dt).states[:, 1:]
        nxt[teacher] = gt_future[teacher, t + 1: t + config.T_replan + 1]
        exec_states = np.concatenate([exec_states, nxt], axis=1)
        clamp_mask = np.stack([np.abs(raw[m_star, ..., 0]) < model_config.a_max,
                               np.abs(raw[m_star, ..., 1]) < model_config.omega_max],
                              axis=-1).astype(float)
        segments.append((pred, m_star, clamp_mask, k_j))

    executed = exec_states[:, h1 - 1:]  # (N, exec_steps + 1, 4)
    gt_slice = gt_future[:, : exec_steps + 1]
    active = (~teacher).astype(float)
    state_loss, gstates = _state_loss_grad(executed, gt_slice, active)
    exec_traj = Trajectory(dt, executed, np.zeros((n, exec_steps, 2)))
    disks = disk_sets_for(sc.agent_dims)
    aux = no_collision_loss(exec_traj, disks)
    if config.aux_noncollision_weight > 0.0 and aux > 0.0:
        gstates = gstates + config.aux_noncollision_weight * \
            no_collision_loss_grad(exec_traj, disks) * active[:, None, None]

    # backprop through the executed chain for self-generated agents
    free = np.flatnonzero(~teacher)
    if len(free):
        init = executed[free, 0]
        exec_actions = np.concatenate(
            [seg[0].data[seg[1], free, : config.T_replan] * scale for seg in segments], axis=1)
        exec_actions = clamp_actions(exec_actions, model_config.a_max, model_config.omega_max)
        gact, _ = rollout_vjp(init, exec_actions, dt, gstates[free])
        for j, (pred, m_star, clamp_mask, _) in enumerate(segments):
            upstream = np.zeros(pred.shape)
            sl = slice(j * config.T_replan, (j + 1) * config.T_replan)
            upstream[m_star, free, : config.T_replan] = gact[:, sl] * scale
            upstream[m_star] *= clamp_mask
            pred.backward(upstream)
    return state_loss, float(aux), {"teacher": teacher, "k": [s[3] for s in segments]}


def closedloop_train(params: DenoiserParams, dataset: list, config: TrainConfig,
                     log=None, compute_dtype=np.float32) -> tuple:
    """Algorithm-style closed-loop fine-tuning; returns (params, loss curve)."""
    config.validate()
    if int(np.floor(config.K * config.gamma)) < 1:
        raise ValueError("K * gamma must be at least 1")
    params = params.copy()
    prepared = prepare_dataset(dataset, params.config)
    schedule = cosine_schedule(config.K)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(2,)))
    state = AdamState()
    scale = np.array([params.config.a_max, params.config.omega_max])
    curve = []
    for it in range(config.iterations):
        idx = rng.integers(0, len(prepared), size=config.batch_size)
        params_t = wrap_params(params, dtype=compute_dtype)
        tot_state, tot_aux = 0.0, 0.0
        for i in idx:
            s_loss, aux, _ = closedloop_scenario_pass(
                params_t, prepared[i], schedule, config, rng, params.config, scale)
            tot_state += s_loss
            tot_aux += aux
        b = float(len(idx))
        grads = {name: (t.grad / b if t.grad is not None else np.zeros_like(t.data))
                 for name, t in params_t.items()}
        optimizer_step(params, grads, state, config.learning_rate)
        loss = (tot_state + config.aux_noncollision_weight * tot_aux) / b
        curve.append((it, loss))
        if log is not None and (it % 20 == 0 or it == config.iterations - 1):
            log({"iteration": it, "loss": loss, "state_mse": tot_state / b,
                 "aux": tot_aux / b})
    return params, curve
