"""Prompt-to-embedding encoding and fusion with scene context.

A prompt's token embeddings (plus fixed sinusoidal position offsets, which
keep role-swapped sentences distinguishable) are averaged and pushed through
a two-layer feed-forward map to give e_lang. Fusion concatenates e_lang with
the per-agent scene embedding and applies a learned linear map. The null
prompt routes through the same weights via a dedicated <null> token, so the
conditional and unconditional pathways share everything but that embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .netparams import DenoiserParams, ModelConfig
from .vocab import NULL_ID, PromptText


@dataclass(frozen=True)
class LangEmbedding:
    vector: np.ndarray  # (d_lang,)
    is_null: bool


def sinusoidal_table(length: int, dim: int) -> np.ndarray:
    """Standard sine/cosine position table, shape (length, dim)."""
    pos = np.arange(length, dtype=float)[:, None]
    i = np.arange(dim // 2, dtype=float)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / dim)
    out = np.zeros((length, dim))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def prompt_token_matrix(prompts: list, max_len: int) -> tuple:
    """Pad a list of token tuples to (len(prompts), L) ids plus a float mask."""
    ids = np.full((len(prompts), max_len), NULL_ID, dtype=int)
    mask = np.zeros((len(prompts), max_len))
    for i, toks in enumerate(prompts):
        toks = tuple(toks) if toks else (NULL_ID,)
        L = min(len(toks), max_len)
        ids[i, :L] = toks[:L]
        mask[i, :L] = 1.0
    return ids, mask


def encode_tokens_t(ids: np.ndarray, mask: np.ndarray, params_t: dict,
                    config: ModelConfig) -> ad.Tensor:
    """Differentiable batch prompt encoding: (..., L) ids -> (..., d_lang)."""
    dt = params_t["tok_emb"].data.dtype
    pos = sinusoidal_table(ids.shape[-1], config.d_lang).astype(dt)
    emb = ad.add(ad.embedding(params_t["tok_emb"], ids), pos)
    m = np.asarray(mask, dtype=dt)[..., None]
    mean = ad.mul(ad.sum_(ad.mul(emb, m), axis=-2),
                  (1.0 / np.maximum(np.asarray(mask).sum(axis=-1), 1.0)[..., None]).astype(dt))
    h = ad.tanh(ad.linear(mean, params_t["txt_w1"], params_t["txt_b1"]))
    return ad.linear(h, params_t["txt_w2"], params_t["txt_b2"])


def wrap_params(params: DenoiserParams, dtype=None) -> dict:
    """Wrap parameter tensors as graph leaves, optionally cast (float32 compute)."""
    if dtype is None:
        return {k: ad.Tensor(v) for k, v in params.tensors.items()}
    return {k: ad.Tensor(v.astype(dtype)) for k, v in params.tensors.items()}


def encode_prompt(prompt: PromptText | None, params: DenoiserParams) -> LangEmbedding:
    """Encode one prompt (or None for the unconditional pathway)."""
    is_null = prompt is None or prompt.is_null
    tokens = (NULL_ID,) if is_null else tuple(prompt.tokens)
    ids, mask = prompt_token_matrix([tokens], max_len=len(tokens))
    out = encode_tokens_t(ids, mask, wrap_params(params), params.config)
    return LangEmbedding(vector=out.data[0], is_null=is_null)


def fuse_language_t(e_lang: ad.Tensor, z_enc: ad.Tensor, params_t: dict) -> ad.Tensor:
    """(..., d_lang) + (..., d_model) -> (..., d_model) via concat + linear."""
    joint = ad.concat([e_lang, z_enc], axis=-1)
    return ad.linear(joint, params_t["fuse_w"], params_t["fuse_b"])


def fuse_language(e_lang, z_enc, params: DenoiserParams) -> np.ndarray:
    e = np.asarray(e_lang.vector if isinstance(e_lang, LangEmbedding) else e_lang, dtype=float)
    z = np.asarray(z_enc, dtype=float)
    if e.shape[-1] != params.config.d_lang or z.shape[-1] != params.config.d_model:
        raise ValueError("fuse_language dimension mismatch")
    e = np.broadcast_to(e, z.shape[:-1] + (e.shape[-1],))
    return fuse_language_t(ad.Tensor(e), ad.Tensor(z), wrap_params(params)).data
