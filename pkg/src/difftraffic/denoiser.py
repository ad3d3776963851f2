"""The conditional denoiser and its compact scene encoder.

The scene encoder builds per-agent features in each agent's local frame
(own history, nearest lane points, nearest neighbors) and runs them through
an MLP, which makes the embedding invariant to global translation and
rotation by construction. The denoiser embeds each (agent, timestep) action
token, adds a sinusoidal time code and a diffusion-step code, and runs
transformer blocks of agent-to-agent self-attention, cross-attention to the
scene embedding, cross-attention to the fused language embedding, and a
feed-forward layer. It predicts the clean normalized action field directly.

Everything runs on the tape in autodiff.py; the public denoise() strips the
graph, denoise_grad() returns exact reverse-mode gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import Trajectory, to_local
from .mapgen import MapGraph
from .netparams import DenoiserParams, ModelConfig
from .textenc import encode_tokens_t, fuse_language_t, prompt_token_matrix, sinusoidal_table, wrap_params
from .vocab import NULL_ID


@dataclass(frozen=True)
class SceneEmbedding:
    vectors: np.ndarray  # (N, d_model)
    has_state: np.ndarray  # (N,) bool; False rows are zero embeddings


def sinusoidal_positions(pos, dim: int) -> np.ndarray:
    pos = np.asarray(pos, dtype=float)[..., None]
    i = np.arange(dim // 2, dtype=float)
    angles = pos / np.power(10000.0, 2.0 * i / dim)
    out = np.zeros(pos.shape[:-1] + (dim,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


# ---------------------------------------------------------------------------
# scene features

def scene_features(history: Trajectory, map_graph: MapGraph, config: ModelConfig,
                   drop_history: bool = False) -> tuple:
    """Local-frame feature rows (N, F) plus a per-agent has-valid-state flag."""
    states, valid = history.states, history.valid
    n, h1 = states.shape[:2]
    ps, ss = config.pos_scale, config.speed_scale
    lane_pts = map_graph.all_lane_points()
    feats = np.zeros((n, config.feature_dim))
    has_state = valid.any(axis=1)
    hist_keep = h1 - 1 if drop_history else 0
    for i in range(n):
        if not has_state[i]:
            continue
        anchor_t = int(np.flatnonzero(valid[i])[-1])
        frame = states[i, anchor_t, :3]
        col = 0
        for t in range(h1):
            if valid[i, t] and t >= hist_keep:
                loc = to_local(states[i, t], frame)
                feats[i, col:col + 6] = [loc[0] * ps, loc[1] * ps,
                                         np.cos(loc[2]), np.sin(loc[2]),
                                         loc[3] * ss, 1.0]
            col += 6
        d = np.linalg.norm(lane_pts - states[i, anchor_t, :2], axis=1)
        order = np.argsort(d, kind="stable")[: config.k_map]
        local_pts = to_local(lane_pts[order], frame)
        for j in range(len(order)):
            feats[i, col:col + 3] = [local_pts[j, 0] * ps, local_pts[j, 1] * ps, 1.0]
            col += 3
        col = (h1) * 6 + config.k_map * 3
        others = [j for j in range(n) if j != i and has_state[j]]
        if others:
            oa = [int(np.flatnonzero(valid[j])[-1]) for j in others]
            opos = np.array([states[j, t, :2] for j, t in zip(others, oa)])
            od = np.linalg.norm(opos - states[i, anchor_t, :2], axis=1)
            near = np.argsort(od, kind="stable")[: config.k_nbr]
            for j in near:
                loc = to_local(states[others[j], oa[j]], frame)
                feats[i, col:col + 6] = [loc[0] * ps, loc[1] * ps,
                                         np.cos(loc[2]), np.sin(loc[2]),
                                         loc[3] * ss, 1.0]
                col += 6
    return feats, has_state


def encode_scene_t(feats: np.ndarray, has_state: np.ndarray, params_t: dict) -> ad.Tensor:
    """(..., F) features -> (..., d_model) embeddings; flagged agents get zeros."""
    dt = params_t["enc_w1"].data.dtype
    h = ad.tanh(ad.linear(ad.Tensor(np.asarray(feats).astype(dt, copy=False)),
                          params_t["enc_w1"], params_t["enc_b1"]))
    h = ad.tanh(ad.linear(h, params_t["enc_w2"], params_t["enc_b2"]))
    z = ad.linear(h, params_t["enc_w3"], params_t["enc_b3"])
    return ad.mul(z, np.asarray(has_state, dtype=dt)[..., None])


def encode_scene(history: Trajectory, map_graph: MapGraph, params: DenoiserParams,
                 drop_history: bool = False) -> SceneEmbedding:
    feats, has_state = scene_features(history, map_graph, params.config, drop_history)
    z = encode_scene_t(feats, has_state, wrap_params(params))
    return SceneEmbedding(vectors=z.data, has_state=has_state)


# ---------------------------------------------------------------------------
# denoiser forward

def _self_attention(x: ad.Tensor, params_t: dict, prefix: str, config: ModelConfig,
                    same_matrix: np.ndarray, key_bias: np.ndarray) -> ad.Tensor:
    b, s, d = x.shape
    h = config.n_heads
    hd = d // h
    def split(t):
        return ad.transpose(ad.reshape(t, (b, s, h, hd)), (0, 2, 1, 3))
    q = split(ad.mul(ad.linear(x, params_t[prefix + "wq"]), 1.0 / np.sqrt(hd)))
    k = split(ad.linear(x, params_t[prefix + "wk"]))
    v = split(ad.linear(x, params_t[prefix + "wv"]))
    scores = ad.attn_bias_add(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))),
                              params_t[prefix + "same"], same_matrix, key_bias)
    att = ad.softmax(scores, axis=-1)
    out = ad.transpose(ad.matmul(att, v), (0, 2, 1, 3))
    return ad.linear(ad.reshape(out, (b, s, d)), params_t[prefix + "wo"])


def _gated_read(x: ad.Tensor, z: ad.Tensor, t_len: int, params_t: dict, prefix: str,
                config: ModelConfig) -> ad.Tensor:
    """Cross-attention of each token over {its agent's context, a learned sink}."""
    d = config.d_model
    q = ad.linear(x, params_t[prefix + "wq"])
    # project per agent, then repeat per timestep (cheaper than the reverse)
    kc = ad.repeat_middle(ad.linear(z, params_t[prefix + "wk"]), t_len)
    vc = ad.repeat_middle(ad.linear(z, params_t[prefix + "wv"]), t_len)
    s_ctx = ad.mul(ad.sum_(ad.mul(q, kc), axis=-1, keepdims=True), 1.0 / np.sqrt(d))
    s_snk = ad.mul(ad.sum_(ad.mul(q, params_t[prefix + "sink_k"]), axis=-1, keepdims=True),
                   1.0 / np.sqrt(d))
    w = ad.softmax(ad.concat([s_ctx, s_snk], axis=-1), axis=-1)
    out = ad.add(ad.mul(w[..., 0:1], vc), ad.mul(w[..., 1:2], params_t[prefix + "sink_v"]))
    return ad.linear(out, params_t[prefix + "wo"])


def null_z_lang_t(z_enc: ad.Tensor, params_t: dict, config: ModelConfig) -> ad.Tensor:
    """Language pathway input for the unconditional branch (the <null> prompt)."""
    lead = z_enc.shape[:-1]
    ids = np.full(lead + (1,), NULL_ID, dtype=int)
    mask = np.ones(lead + (1,), dtype=z_enc.data.dtype)
    e = encode_tokens_t(ids, mask, params_t, config)
    return fuse_language_t(e, z_enc, params_t)


def denoise_t(tau: np.ndarray, k, z_enc: ad.Tensor, z_lang: ad.Tensor | None,
              params_t: dict, config: ModelConfig,
              agent_mask: np.ndarray | None = None,
              tau_tensor: ad.Tensor | None = None) -> ad.Tensor:
    """Batched differentiable forward: tau (B, N, T, 2), k (B,) ints."""
    b, n, t_len, _ = tau.shape
    s = n * t_len
    dt = params_t["in_w"].data.dtype
    x_in = tau_tensor if tau_tensor is not None else ad.Tensor(tau.astype(dt, copy=False))
    if z_lang is None:
        z_lang = null_z_lang_t(z_enc, params_t, config)

    x = ad.linear(ad.reshape(x_in, (b, s, 2)), params_t["in_w"], params_t["in_b"])
    time_pe = np.tile(sinusoidal_table(t_len, config.d_model), (n, 1)).astype(dt)
    x = ad.add(x, time_pe)
    step = sinusoidal_positions(np.asarray(k, dtype=float).reshape(b), config.d_step)
    step_emb = ad.linear(ad.Tensor(step.astype(dt)), params_t["step_w"], params_t["step_b"])
    x = ad.add(x, ad.reshape(step_emb, (b, 1, config.d_model)))

    agent_of_token = np.repeat(np.arange(n), t_len)
    same_matrix = (agent_of_token[:, None] == agent_of_token[None, :]).astype(dt)
    if agent_mask is None:
        agent_mask = np.ones((b, n), dtype=bool)
    token_mask = np.repeat(agent_mask.astype(dt), t_len, axis=1)
    key_bias = np.where(token_mask[:, None, None, :] > 0.0, 0.0, -1e9).astype(dt)

    for i in range(config.n_blocks):
        p = f"blk{i}_"
        y = ad.layer_norm(x, params_t[p + "ln1_g"], params_t[p + "ln1_b"])
        x = ad.add(x, _self_attention(y, params_t, p + "attn_", config, same_matrix, key_bias))
        y = ad.layer_norm(x, params_t[p + "ln2_g"], params_t[p + "ln2_b"])
        x = ad.add(x, _gated_read(y, z_enc, t_len, params_t, p + "ctx_", config))
        y = ad.layer_norm(x, params_t[p + "ln3_g"], params_t[p + "ln3_b"])
        x = ad.add(x, _gated_read(y, z_lang, t_len, params_t, p + "txt_", config))
        y = ad.layer_norm(x, params_t[p + "ln4_g"], params_t[p + "ln4_b"])
        ff = ad.tanh(ad.linear(y, params_t[p + "ffn_w1"], params_t[p + "ffn_b1"]))
        x = ad.add(x, ad.linear(ff, params_t[p + "ffn_w2"], params_t[p + "ffn_b2"]))

    y = ad.layer_norm(x, params_t["out_ln_g"], params_t["out_ln_b"])
    out = ad.linear(y, params_t["out_w"], params_t["out_b"])
    return ad.reshape(out, (b, n, t_len, 2))


def _as_z(z) -> np.ndarray:
    return z.vectors if isinstance(z, SceneEmbedding) else np.asarray(z, dtype=float)


def denoise(tau_k, k: int, z_enc, z_lang, params: DenoiserParams) -> np.ndarray:
    """Predict the clean normalized action field for one scene.

    Passing z_lang=None routes through the <null>-prompt pathway, which is the
    exact code path a caller takes when fusing the null embedding explicitly.
    """
    from .textenc import encode_prompt, fuse_language

    tau = np.asarray(tau_k, dtype=float)
    if not np.all(np.isfinite(tau)):
        raise ValueError("non-finite noisy action field")
    if k < 0:
        raise ValueError("diffusion step must be non-negative")
    z = _as_z(z_enc)
    if z_lang is None:
        z_lang = fuse_language(encode_prompt(None, params), z, params)
    out = denoise_t(tau[None], np.array([k]), ad.Tensor(z[None]),
                    ad.Tensor(_as_z(z_lang)[None]), wrap_params(params), params.config)
    return out.data[0]


def denoise_grad(tau_k, k: int, z_enc, z_lang, params: DenoiserParams,
                 upstream) -> tuple:
    """Gradients of <upstream, denoise(...)> w.r.t. params and tau_k."""
    tau = np.asarray(tau_k, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != tau.shape:
        raise ValueError("upstream gradient shape mismatch")
    params_t = wrap_params(params)
    tau_t = ad.Tensor(tau[None])
    z = ad.Tensor(_as_z(z_enc)[None])
    zl = None if z_lang is None else ad.Tensor(_as_z(z_lang)[None])
    out = denoise_t(tau[None], np.array([k]), z, zl, params_t, params.config,
                    tau_tensor=tau_t)
    out.backward(upstream[None])
    grads = {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
             for name, t in params_t.items()}
    return grads, tau_t.grad[0]
