"""Flow matching over latent sequences: OT path, losses, ODE refinement.

The probability path interpolates a degraded latent (source) toward its
clean counterpart (target) linearly with a shrink factor `sigma_min`; the
matching velocity is constant in time, which is what makes the regression
target trivial to form.  Refinement integrates the learned field from the
degraded latent with a fixed-step Euler solver, conditioning the field on
the starting latent throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .asr import CtcAsrModel, LatentSequence
from .corpus import SurrogateSE, Utterance, surrogate_enhance
from .tensor import Tensor, no_grad

__all__ = [
    "FlowConfig",
    "LatentPair",
    "ot_interpolate",
    "target_field",
    "cfm_loss",
    "euler_integrate",
    "refine",
    "extract_latent_pairs",
]

FieldFn = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class FlowConfig:
    sigma_min: float = 0.0
    n_steps: int = 3

    def validate(self):
        if not 0.0 <= self.sigma_min < 1.0:
            raise ValueError(f"sigma_min {self.sigma_min} outside [0, 1)")
        if self.n_steps < 1:
            raise ValueError("need at least one sampling step")


@dataclass
class LatentPair:
    """Source (degraded) and target (clean) latents for one utterance."""

    source: np.ndarray
    target: np.ndarray
    id: str


def ot_interpolate(x0: np.ndarray, x1: np.ndarray, t: float, sigma_min: float = 0.0) -> np.ndarray:
    """Point on the linear path: t*x1 + (1 - (1-sigma_min)*t)*x0."""
    x0, x1 = np.asarray(x0), np.asarray(x1)
    if x0.shape != x1.shape:
        raise ValueError(f"endpoint shapes differ: {x0.shape} vs {x1.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    return t * x1 + (1.0 - (1.0 - sigma_min) * t) * x0


def target_field(x0: np.ndarray, x1: np.ndarray, sigma_min: float = 0.0) -> np.ndarray:
    """Velocity of the path: x1 - (1-sigma_min)*x0, constant in t."""
    x0, x1 = np.asarray(x0), np.asarray(x1)
    if x0.shape != x1.shape:
        raise ValueError(f"endpoint shapes differ: {x0.shape} vs {x1.shape}")
    return x1 - (1.0 - sigma_min) * x0


def cfm_loss(
    model,
    pairs: Sequence[LatentPair],
    rng: np.random.Generator | None,
    config: FlowConfig,
    t_values: Sequence[float] | None = None,
) -> Tensor:
    """Conditional flow-matching regression loss over a batch of pairs.

    Per pair, a time is drawn uniformly (or taken from `t_values` when the
    draw must be frozen), the path point is formed with the pair's source
    latent as both endpoint x0 and the model's conditioning input, and the
    squared error to the constant target velocity is averaged over all
    coordinates.  The batch reduction is a plain mean, so ordering is
    irrelevant.
    """
    config.validate()
    if not pairs:
        raise ValueError("empty batch")
    if t_values is None:
        if rng is None:
            raise ValueError("need an rng when t_values is not given")
        t_values = [float(rng.uniform()) for _ in pairs]
    total: Tensor | None = None
    for pair, t in zip(pairs, t_values):
        if pair.source.shape != pair.target.shape:
            raise ValueError(f"pair {pair.id}: unpaired latent shapes")
        x_t = ot_interpolate(pair.source, pair.target, t, config.sigma_min)
        u = target_field(pair.source, pair.target, config.sigma_min)
        v = model.forward(x_t, pair.source, t)
        err = (v - Tensor(u.astype(v.data.dtype))).square().mean()
        total = err if total is None else total + err
    return total * (1.0 / len(pairs))


def euler_integrate(field: FieldFn, x0: np.ndarray, condition: np.ndarray, config: FlowConfig) -> np.ndarray:
    """Explicit fixed-grid Euler from t=0 to t=1: x += dt * field(x, cond, t)."""
    config.validate()
    dt = 1.0 / config.n_steps
    x = np.array(x0, copy=True)
    for step in range(config.n_steps):
        v = np.asarray(field(x, condition, step * dt))
        x = x + dt * v
        if not np.isfinite(x).all():
            raise ArithmeticError(f"non-finite state after Euler step {step}")
    return x


def refine(z_input: LatentSequence, model, config: FlowConfig) -> LatentSequence:
    """Transport a degraded latent toward the clean manifold.

    The input latent serves as both the initial state and the conditioning;
    neither it nor any model parameter is mutated.
    """
    out = euler_integrate(model.velocity, z_input.data, z_input.data, config)
    return LatentSequence(out, "refined")


def extract_latent_pairs(
    utts: Sequence[Utterance],
    asr: CtcAsrModel,
    variant: str = "noisy",
    se: SurrogateSE | None = None,
) -> list[LatentPair]:
    """Encode each utterance's clean features and the chosen degraded
    variant with the frozen recognizer; frame counts match by construction."""
    if variant not in ("noisy", "enhanced"):
        raise ValueError(f"unknown variant {variant!r}")
    if variant == "enhanced" and se is None:
        raise ValueError("enhanced variant needs surrogate settings")
    pairs = []
    with no_grad():
        for u in utts:
            target = asr.encode(u.clean).data
            feats = u.noisy if variant == "noisy" else surrogate_enhance(u, se)
            source = asr.encode(feats).data
            pairs.append(LatentPair(source=source, target=target, id=u.id))
    return pairs
