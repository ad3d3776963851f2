"""Model configuration and the learnable parameter container.

All weights of the prompt encoder, scene encoder and denoiser live in one
named-tensor dictionary so that training, checkpointing, and gradient checks
can treat them uniformly. Initialization is a scaled-uniform fan-in scheme,
bitwise deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .geometry import A_MAX, OMEGA_MAX
from .vocab import VOCAB_SIZE


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    n_heads: int = 4
    n_blocks: int = 2
    d_lang: int = 64
    d_step: int = 32
    d_ff: int = 256
    enc_hidden: int = 256
    k_map: int = 16  # nearest lane points fed to the encoder
    k_nbr: int = 8  # nearest neighbor agents fed to the encoder
    hist_steps: int = 2  # history steps before the current state
    vocab_size: int = VOCAB_SIZE
    a_max: float = A_MAX
    omega_max: float = OMEGA_MAX
    pos_scale: float = 0.1  # feature scaling for local positions
    speed_scale: float = 0.1

    @property
    def feature_dim(self) -> int:
        # per history state: x, y, cos, sin, speed, valid
        # per map point: x, y, valid; per neighbor: x, y, cos, sin, speed, valid
        return (self.hist_steps + 1) * 6 + self.k_map * 3 + self.k_nbr * 6

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


def parameter_spec(config: ModelConfig) -> list:
    """Ordered (name, shape, fan_in) triples; fan_in None means zeros/ones init."""
    d, h = config.d_model, config.n_heads
    dl, ds, dff, eh, f = config.d_lang, config.d_step, config.d_ff, config.enc_hidden, config.feature_dim
    spec = [
        ("tok_emb", (config.vocab_size, dl), dl),
        ("txt_w1", (dl, dl), dl), ("txt_b1", (dl,), None),
        ("txt_w2", (dl, dl), dl), ("txt_b2", (dl,), None),
        ("fuse_w", (dl + d, d), dl + d), ("fuse_b", (d,), None),
        ("enc_w1", (f, eh), f), ("enc_b1", (eh,), None),
        ("enc_w2", (eh, eh), eh), ("enc_b2", (eh,), None),
        ("enc_w3", (eh, d), eh), ("enc_b3", (d,), None),
        ("in_w", (2, d), 2), ("in_b", (d,), None),
        ("step_w", (ds, d), ds), ("step_b", (d,), None),
    ]
    for i in range(config.n_blocks):
        p = f"blk{i}_"
        spec += [
            (p + "ln1_g", (d,), "ones"), (p + "ln1_b", (d,), None),
            (p + "attn_wq", (d, d), d), (p + "attn_wk", (d, d), d),
            (p + "attn_wv", (d, d), d), (p + "attn_wo", (d, d), d),
            (p + "attn_same", (h,), None),
            (p + "ln2_g", (d,), "ones"), (p + "ln2_b", (d,), None),
            (p + "ctx_wq", (d, d), d), (p + "ctx_wk", (d, d), d),
            (p + "ctx_wv", (d, d), d), (p + "ctx_wo", (d, d), d),
            (p + "ctx_sink_k", (d,), d), (p + "ctx_sink_v", (d,), d),
            (p + "ln3_g", (d,), "ones"), (p + "ln3_b", (d,), None),
            (p + "txt_wq", (d, d), d), (p + "txt_wk", (d, d), d),
            (p + "txt_wv", (d, d), d), (p + "txt_wo", (d, d), d),
            (p + "txt_sink_k", (d,), d), (p + "txt_sink_v", (d,), d),
            (p + "ln4_g", (d,), "ones"), (p + "ln4_b", (d,), None),
            (p + "ffn_w1", (d, dff), d), (p + "ffn_b1", (dff,), None),
            (p + "ffn_w2", (dff, d), dff), (p + "ffn_b2", (d,), None),
        ]
    spec += [
        ("out_ln_g", (d,), "ones"), ("out_ln_b", (d,), None),
        ("out_w", (d, 2), d), ("out_b", (2,), None),
    ]
    return spec


class DenoiserParams:
    """Named float64 tensors plus the configuration that shaped them."""

    def __init__(self, config: ModelConfig, tensors: dict):
        self.config = config
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list:
        return list(self.tensors)

    def total_count(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def quantized(self) -> "DenoiserParams":
        """Round-trip through float32 so in-memory values match the weights file."""
        return DenoiserParams(
            self.config,
            {k: v.astype(np.float32).astype(np.float64) for k, v in self.tensors.items()},
        )

    def validate(self):
        for name, t in self.tensors.items():
            if not np.all(np.isfinite(t)):
                raise ValueError(f"non-finite parameter tensor {name}")
        return self


def init_params(seed: int, config: ModelConfig | None = None) -> DenoiserParams:
    """Scaled-uniform fan-in initialization, bitwise deterministic per seed."""
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape, fan in parameter_spec(config):
        if fan == "ones":
            tensors[name] = np.ones(shape, dtype=np.float64)
        elif fan is None:
            tensors[name] = np.zeros(shape, dtype=np.float64)
        else:
            bound = 1.0 / np.sqrt(float(fan))
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    tensors["out_w"] *= 0.1  # keep the untrained clean-field prediction small
    return DenoiserParams(config, tensors)
