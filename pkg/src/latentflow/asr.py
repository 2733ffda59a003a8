"""CTC-based recognizer: transformer encoder, classifier head, decoding.

The encoder is a stack of pre-norm transformer layers over an affine input
projection with sinusoidal positional encoding.  There is no temporal
subsampling, so latent sequences stay frame-synchronous with the input --
which is what makes clean/noisy latent pairing and exact CTC verification
possible downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ctc import greedy_decode
from .tensor import Tensor, concat, layer_norm, log_softmax, relu, scaled_dot_attention

__all__ = ["EncoderConfig", "LatentSequence", "CtcAsrModel", "sinusoidal_positions"]


@dataclass(frozen=True)
class EncoderConfig:
    """Encoder/classifier dimensions.  Blank is always the last class."""

    layers: int = 12
    heads: int = 4
    hidden_dim: int = 256
    ffn_dim: int = 2048
    vocab_size: int = 8
    feature_dim: int = 32

    @property
    def blank_id(self) -> int:
        return self.vocab_size

    @property
    def num_classes(self) -> int:
        return self.vocab_size + 1

    @classmethod
    def desk(cls, vocab_size: int = 8, feature_dim: int = 32) -> "EncoderConfig":
        return cls(
            layers=2,
            heads=2,
            hidden_dim=32,
            ffn_dim=64,
            vocab_size=vocab_size,
            feature_dim=feature_dim,
        )

    def validate(self):
        if self.layers < 1:
            raise ValueError("need at least one encoder layer")
        if self.hidden_dim % self.heads != 0:
            raise ValueError(
                f"hidden dim {self.hidden_dim} not divisible by {self.heads} heads"
            )


@dataclass
class LatentSequence:
    """Encoder output (frames x hidden dim) with provenance."""

    data: np.ndarray
    source: str  # clean | noisy | enhanced | refined

    def __post_init__(self):
        if self.source not in ("clean", "noisy", "enhanced", "refined"):
            raise ValueError(f"unknown latent source {self.source!r}")
        if not np.isfinite(self.data).all():
            raise ValueError("latent sequence contains non-finite entries")


def sinusoidal_positions(length: int, dim: int, dtype=np.float32) -> np.ndarray:
    """Standard fixed positional encoding table (length x dim)."""
    pos = np.arange(length)[:, None]
    i = np.arange(dim // 2)[None, :]
    angles = pos / (10000.0 ** (2.0 * i / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table.astype(dtype)


def _uniform_init(rng: np.random.Generator, fan_in: int, shape, dtype) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class CtcAsrModel:
    """Parameter container plus the encode/classify forward passes."""

    def __init__(self, config: EncoderConfig, seed: int = 0, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng([seed, 17])
        d, f = config.hidden_dim, config.feature_dim

        def add(name, array):
            self.params[name] = Tensor(array, requires_grad=True)

        add("input.w", _uniform_init(rng, f, (f, d), dtype))
        add("input.b", _uniform_init(rng, f, (d,), dtype))
        for layer in range(config.layers):
            p = f"enc{layer}"
            add(f"{p}.ln1.g", np.ones(d, dtype=dtype))
            add(f"{p}.ln1.b", np.zeros(d, dtype=dtype))
            for name in ("q", "k", "v", "o"):
                add(f"{p}.attn.{name}.w", _uniform_init(rng, d, (d, d), dtype))
                add(f"{p}.attn.{name}.b", _uniform_init(rng, d, (d,), dtype))
            add(f"{p}.ln2.g", np.ones(d, dtype=dtype))
            add(f"{p}.ln2.b", np.zeros(d, dtype=dtype))
            add(f"{p}.ffn.w1", _uniform_init(rng, d, (d, config.ffn_dim), dtype))
            add(f"{p}.ffn.b1", _uniform_init(rng, d, (config.ffn_dim,), dtype))
            add(f"{p}.ffn.w2", _uniform_init(rng, config.ffn_dim, (config.ffn_dim, d), dtype))
            add(f"{p}.ffn.b2", _uniform_init(rng, config.ffn_dim, (d,), dtype))
        add("head.w", _uniform_init(rng, d, (d, config.num_classes), dtype))
        add("head.b", _uniform_init(rng, d, (config.num_classes,), dtype))

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def freeze(self):
        for p in self.params.values():
            p.requires_grad = False

    def param_checksum(self) -> int:
        crc = 0
        for name in sorted(self.params):
            crc = hash((crc, name, self.params[name].data.tobytes()))
        return crc

    # -- forward -------------------------------------------------------

    def _attention(self, u: Tensor, layer: int) -> Tensor:
        cfg = self.config
        p = self.params
        d_head = cfg.hidden_dim // cfg.heads
        q = u @ p[f"enc{layer}.attn.q.w"] + p[f"enc{layer}.attn.q.b"]
        k = u @ p[f"enc{layer}.attn.k.w"] + p[f"enc{layer}.attn.k.b"]
        v = u @ p[f"enc{layer}.attn.v.w"] + p[f"enc{layer}.attn.v.b"]
        heads = []
        for h in range(cfg.heads):
            s = h * d_head
            heads.append(
                scaled_dot_attention(
                    q.narrow(1, s, d_head), k.narrow(1, s, d_head), v.narrow(1, s, d_head)
                )
            )
        merged = heads[0] if len(heads) == 1 else concat(heads, axis=1)
        return merged @ p[f"enc{layer}.attn.o.w"] + p[f"enc{layer}.attn.o.b"]

    def encode(self, features: np.ndarray) -> Tensor:
        """Features (T, F) -> latents (T, hidden_dim)."""
        features = np.asarray(features, dtype=self.dtype)
        if features.ndim != 2 or features.shape[0] < 1:
            raise ValueError(f"expected a non-empty (T, F) matrix, got {features.shape}")
        if features.shape[1] != self.config.feature_dim:
            raise ValueError(
                f"feature dim {features.shape[1]} != configured {self.config.feature_dim}"
            )
        p = self.params
        h = Tensor(features) @ p["input.w"] + p["input.b"]
        h = h + Tensor(sinusoidal_positions(features.shape[0], self.config.hidden_dim, self.dtype))
        for layer in range(self.config.layers):
            u = layer_norm(h, p[f"enc{layer}.ln1.g"], p[f"enc{layer}.ln1.b"])
            h = h + self._attention(u, layer)
            u = layer_norm(h, p[f"enc{layer}.ln2.g"], p[f"enc{layer}.ln2.b"])
            ff = relu(u @ p[f"enc{layer}.ffn.w1"] + p[f"enc{layer}.ffn.b1"])
            h = h + (ff @ p[f"enc{layer}.ffn.w2"] + p[f"enc{layer}.ffn.b2"])
        return h

    def classify(self, latents: Tensor | np.ndarray) -> Tensor:
        """Latents (T, d) -> frame log-posteriors (T, V+1)."""
        if not isinstance(latents, Tensor):
            latents = Tensor(np.asarray(latents, dtype=self.dtype))
        if latents.shape[1] != self.config.hidden_dim:
            raise ValueError(
                f"latent dim {latents.shape[1]} != configured {self.config.hidden_dim}"
            )
        logits = latents @ self.params["head.w"] + self.params["head.b"]
        return log_softmax(logits, axis=-1)

    def transcribe(self, features: np.ndarray) -> list[int]:
        return greedy_decode(self.classify(self.encode(features)))
