"""Vector-field network: a multi-resolution 1-D U-Net over latent sequences.

Input is the channel concatenation of the transported state and the
conditioning latent.  The encoder halves temporal resolution per level with
stride-2 convolutions; the decoder restores it with nearest-neighbour
upsampling and skip connections.  Residual blocks use group normalization
and SiLU, with a sinusoidal time embedding injected in every block, and a
single-head self-attention sits at the bottleneck.

Sequences of arbitrary length are zero-padded up to a multiple of 2^depth
and cropped after the decoder.  Padding rows are re-zeroed before every
cross-row operation and normalization statistics and the bottleneck
attention only ever see the unpadded rows, so convolutions observe the
same zero neighbourhood beyond the true length that they would without any
padding: the pad-and-crop machinery is inert.

The final projection is zero-initialized: an untrained model is exactly the
zero field, so plugging it into the ODE refinement is a no-op.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor,
    concat,
    conv1d,
    gather_rows,
    group_norm,
    no_grad,
    scaled_dot_attention,
    silu,
)

__all__ = ["RefinerConfig", "VectorFieldModel", "sinusoidal_time_embedding"]

# log-spaced frequency range for the time embedding; the top end bounds the
# Lipschitz constant of the raw embedding (||de/dt|| <= sqrt(sum w^2))
OMEGA_MIN = 1.0
OMEGA_MAX = 30.0


@dataclass(frozen=True)
class RefinerConfig:
    depth: int = 4
    base_channels: int = 64
    channel_mults: tuple[int, ...] = (1, 2, 2, 2)
    time_dim: int = 128
    latent_dim: int = 256

    @classmethod
    def desk(cls, latent_dim: int = 32) -> "RefinerConfig":
        return cls(
            depth=2, base_channels=32, channel_mults=(1, 2), time_dim=32, latent_dim=latent_dim
        )

    def validate(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if len(self.channel_mults) != self.depth:
            raise ValueError(
                f"{len(self.channel_mults)} channel multipliers for depth {self.depth}"
            )
        if min(self.base_channels, self.time_dim, self.latent_dim) < 1:
            raise ValueError("all dimensions must be positive")
        if self.time_dim % 2 != 0:
            raise ValueError("time embedding dim must be even")

    @property
    def channels(self) -> list[int]:
        return [self.base_channels * m for m in self.channel_mults]


def sinusoidal_time_embedding(t: float, dim: int) -> np.ndarray:
    """Raw embedding [sin(t*w_k), cos(t*w_k)] over log-spaced frequencies."""
    if dim % 2 != 0:
        raise ValueError("time embedding dim must be even")
    half = dim // 2
    if half == 1:
        omega = np.array([OMEGA_MIN])
    else:
        omega = OMEGA_MIN * (OMEGA_MAX / OMEGA_MIN) ** (np.arange(half) / (half - 1))
    return np.concatenate([np.sin(t * omega), np.cos(t * omega)])


def _groups_for(channels: int) -> int:
    return math.gcd(8, channels)


class VectorFieldModel:
    """Learned velocity field v(x_t, condition, t) over (T, d) latents."""

    def __init__(self, config: RefinerConfig, seed: int = 0, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng([seed, 29])
        ch = config.channels
        d = config.latent_dim
        td = config.time_dim

        def uniform(fan_in, shape):
            bound = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape).astype(dtype)

        def add(name, array):
            self.params[name] = Tensor(array, requires_grad=True)

        def add_conv(name, k, cin, cout, zero=False):
            if zero:
                add(f"{name}.w", np.zeros((k, cin, cout), dtype=dtype))
                add(f"{name}.b", np.zeros(cout, dtype=dtype))
            else:
                add(f"{name}.w", uniform(k * cin, (k, cin, cout)))
                add(f"{name}.b", uniform(k * cin, (cout,)))

        def add_res(prefix, cin, cout):
            add(f"{prefix}.gn1.g", np.ones(cin, dtype=dtype))
            add(f"{prefix}.gn1.b", np.zeros(cin, dtype=dtype))
            add_conv(f"{prefix}.conv1", 3, cin, cout)
            add(f"{prefix}.time.w", uniform(td, (td, cout)))
            add(f"{prefix}.time.b", uniform(td, (cout,)))
            add(f"{prefix}.gn2.g", np.ones(cout, dtype=dtype))
            add(f"{prefix}.gn2.b", np.zeros(cout, dtype=dtype))
            add_conv(f"{prefix}.conv2", 3, cout, cout)
            if cin != cout:
                add_conv(f"{prefix}.skip", 1, cin, cout)

        add("time.affine.w", uniform(td, (td, td)))
        add("time.affine.b", uniform(td, (td,)))
        add_conv("stem", 3, 2 * d, ch[0])
        for i in range(config.depth):
            add_res(f"down{i}.res", ch[i], ch[i])
            nxt = ch[i + 1] if i + 1 < config.depth else ch[-1]
            add_conv(f"down{i}.down", 3, ch[i], nxt)
        cb = ch[-1]
        add_res("mid.res1", cb, cb)
        add("mid.attn.gn.g", np.ones(cb, dtype=dtype))
        add("mid.attn.gn.b", np.zeros(cb, dtype=dtype))
        for name in ("q", "k", "v", "o"):
            add(f"mid.attn.{name}.w", uniform(cb, (cb, cb)))
            add(f"mid.attn.{name}.b", uniform(cb, (cb,)))
        add_res("mid.res2", cb, cb)
        for i in reversed(range(config.depth)):
            prev = cb if i == config.depth - 1 else ch[i + 1]
            add_conv(f"up{i}.conv", 3, prev, ch[i])
            add_res(f"up{i}.res", 2 * ch[i], ch[i])
        add("out.gn.g", np.ones(ch[0], dtype=dtype))
        add("out.gn.b", np.zeros(ch[0], dtype=dtype))
        add_conv("out.conv", 3, ch[0], d, zero=True)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def freeze(self):
        for p in self.params.values():
            p.requires_grad = False

    # -- forward -------------------------------------------------------

    def _time_vector(self, t: float) -> Tensor:
        raw = sinusoidal_time_embedding(t, self.config.time_dim).astype(self.dtype)
        e = Tensor(raw[None, :]) @ self.params["time.affine.w"] + self.params["time.affine.b"]
        return silu(e)  # (1, time_dim)

    def _mask_pad(self, h: Tensor, valid: int) -> Tensor:
        """Zero all rows past the true length (keeps convolutions blind to
        whatever the pad region accumulated)."""
        rows = h.shape[0]
        if rows == valid:
            return h
        zeros = Tensor(np.zeros((rows - valid, h.shape[1]), dtype=self.dtype))
        return concat([h.narrow(0, 0, valid), zeros], axis=0)

    def _res(self, prefix: str, x: Tensor, temb: Tensor, valid: int) -> Tensor:
        p = self.params
        cin = x.shape[1]
        cout = p[f"{prefix}.conv1.w"].shape[2]
        h = group_norm(x, _groups_for(cin), p[f"{prefix}.gn1.g"], p[f"{prefix}.gn1.b"], valid_rows=valid)
        h = self._mask_pad(silu(h), valid)
        h = conv1d(h, p[f"{prefix}.conv1.w"], p[f"{prefix}.conv1.b"], padding=1)
        h = h + (temb @ p[f"{prefix}.time.w"] + p[f"{prefix}.time.b"])
        h = group_norm(h, _groups_for(cout), p[f"{prefix}.gn2.g"], p[f"{prefix}.gn2.b"], valid_rows=valid)
        h = self._mask_pad(silu(h), valid)
        h = conv1d(h, p[f"{prefix}.conv2.w"], p[f"{prefix}.conv2.b"], padding=1)
        if cin != cout:
            x = conv1d(x, p[f"{prefix}.skip.w"], p[f"{prefix}.skip.b"])
        return h + x

    def _bottleneck_attention(self, h: Tensor, valid: int) -> Tensor:
        p = self.params
        u = group_norm(
            h, _groups_for(h.shape[1]), p["mid.attn.gn.g"], p["mid.attn.gn.b"], valid_rows=valid
        )
        u = u.narrow(0, 0, valid)
        q = u @ p["mid.attn.q.w"] + p["mid.attn.q.b"]
        k = u @ p["mid.attn.k.w"] + p["mid.attn.k.b"]
        v = u @ p["mid.attn.v.w"] + p["mid.attn.v.b"]
        att = scaled_dot_attention(q, k, v) @ p["mid.attn.o.w"] + p["mid.attn.o.b"]
        pad_rows = h.shape[0] - valid
        if pad_rows > 0:
            zeros = Tensor(np.zeros((pad_rows, h.shape[1]), dtype=self.dtype))
            att = concat([att, zeros], axis=0)
        return h + att

    def forward(
        self, x_t: np.ndarray, z_cond: np.ndarray, t: float, pad_to: int | None = None
    ) -> Tensor:
        """Velocity estimate, same shape as the inputs.

        `pad_to` forces extra padding beyond the required multiple of
        2^depth; it exists purely to verify that the pad-and-crop machinery
        is inert.
        """
        x_t = np.asarray(x_t, dtype=self.dtype)
        z_cond = np.asarray(z_cond, dtype=self.dtype)
        if x_t.shape != z_cond.shape:
            raise ValueError(f"state shape {x_t.shape} != condition shape {z_cond.shape}")
        if x_t.ndim != 2 or x_t.shape[1] != self.config.latent_dim:
            raise ValueError(
                f"expected (T, {self.config.latent_dim}) latents, got {x_t.shape}"
            )
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t={t} outside [0, 1]")
        p = self.params
        T = x_t.shape[0]
        block = 2**self.config.depth
        t_pad = math.ceil(max(T, pad_to or 0) / block) * block
        stacked = np.zeros((t_pad, 2 * self.config.latent_dim), dtype=self.dtype)
        stacked[:T] = np.concatenate([x_t, z_cond], axis=1)

        temb = self._time_vector(t)
        h = conv1d(Tensor(stacked), p["stem.w"], p["stem.b"], padding=1)
        valid = T
        valids = []
        skips = []
        for i in range(self.config.depth):
            h = self._res(f"down{i}.res", h, temb, valid)
            skips.append(h)
            valids.append(valid)
            h = self._mask_pad(h, valid)
            h = conv1d(h, p[f"down{i}.down.w"], p[f"down{i}.down.b"], stride=2, padding=1)
            valid = (valid + 1) // 2
        h = self._res("mid.res1", h, temb, valid)
        h = self._bottleneck_attention(h, valid)
        h = self._res("mid.res2", h, temb, valid)
        for i in reversed(range(self.config.depth)):
            up_idx = np.repeat(np.arange(h.shape[0]), 2)
            h = gather_rows(h, up_idx)
            valid = valids[i]
            h = self._mask_pad(h, valid)
            h = conv1d(h, p[f"up{i}.conv.w"], p[f"up{i}.conv.b"], padding=1)
            h = concat([skips[i], h], axis=1)
            h = self._res(f"up{i}.res", h, temb, valid)
        h = group_norm(
            h, _groups_for(h.shape[1]), p["out.gn.g"], p["out.gn.b"], valid_rows=valid
        )
        h = self._mask_pad(silu(h), valid)
        h = conv1d(h, p["out.conv.w"], p["out.conv.b"], padding=1)
        if t_pad != T:
            h = h.narrow(0, 0, T)
        return h

    def velocity(self, x: np.ndarray, cond: np.ndarray, t: float) -> np.ndarray:
        """Inference-mode forward (no graph recorded)."""
        with no_grad():
            return self.forward(x, cond, t).data
