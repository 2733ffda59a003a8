"""Experiment configuration and its plain-text file format.

Config files are `key=value` lines with dotted section prefixes
(`encoder.layers=2`).  Values override the desk-scale defaults; unknown
keys are hard errors so typos cannot silently change an experiment.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .asr import EncoderConfig
from .corpus import CorpusSpec
from .flow import FlowConfig
from .unet import RefinerConfig

__all__ = [
    "TrainConfig",
    "ExperimentConfig",
    "desk_config",
    "parse_config_text",
    "format_config_text",
    "load_config",
]


@dataclass(frozen=True)
class TrainConfig:
    asr_epochs: int = 30
    asr_batch: int = 16
    asr_lr: float = 1e-3
    refiner_epochs: int = 60
    refiner_batch: int = 16
    refiner_lr: float = 1e-3
    seed: int = 777

    def validate(self):
        if min(self.asr_epochs, self.refiner_epochs) < 1:
            raise ValueError("epoch counts must be >= 1")
        if min(self.asr_batch, self.refiner_batch) < 1:
            raise ValueError("batch sizes must be >= 1")
        if min(self.asr_lr, self.refiner_lr) <= 0:
            raise ValueError("learning rates must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: CorpusSpec
    encoder: EncoderConfig
    refiner: RefinerConfig
    flow: FlowConfig
    train: TrainConfig
    se_profiles: tuple[tuple[float, float], ...] = ((0.7, 0.1),)  # (strength, artifact)
    se_artifact_seed: int = 99

    def validate(self):
        self.corpus.validate()
        self.encoder.validate()
        self.refiner.validate()
        self.flow.validate()
        self.train.validate()
        if self.encoder.vocab_size != self.corpus.vocab_size:
            raise ValueError("encoder vocab size must match the corpus")
        if self.encoder.feature_dim != self.corpus.feature_dim:
            raise ValueError("encoder feature dim must match the corpus")
        if self.refiner.latent_dim != self.encoder.hidden_dim:
            raise ValueError("refiner latent dim must match the encoder hidden dim")
        if not self.se_profiles:
            raise ValueError("need at least one surrogate-SE profile")
        for alpha, gamma in self.se_profiles:
            if not 0.0 <= alpha <= 1.0 or gamma < 0.0:
                raise ValueError(f"bad surrogate profile ({alpha}, {gamma})")


def desk_config() -> ExperimentConfig:
    """The default desk-scale experiment (runs end to end in minutes)."""
    corpus = CorpusSpec()
    return ExperimentConfig(
        corpus=corpus,
        encoder=EncoderConfig.desk(corpus.vocab_size, corpus.feature_dim),
        refiner=RefinerConfig.desk(latent_dim=32),
        flow=FlowConfig(),
        train=TrainConfig(),
    )


def _parse_profiles(text: str) -> tuple[tuple[float, float], ...]:
    out = []
    for item in text.split(","):
        alpha, _, gamma = item.partition(":")
        out.append((float(alpha), float(gamma)))
    return tuple(out)


def _format_profiles(profiles) -> str:
    return ",".join(f"{a}:{g}" for a, g in profiles)


_INT = int
_FLOAT = float
_STRS = lambda s: tuple(s.split(","))  # noqa: E731
_FLOATS = lambda s: tuple(float(v) for v in s.split(","))  # noqa: E731
_INTS = lambda s: tuple(int(v) for v in s.split(","))  # noqa: E731

# key -> (section, field, parser); sections are rebuilt with dataclasses.replace
_SCHEMA = {
    "corpus.vocab_size": ("corpus", "vocab_size", _INT),
    "corpus.feature_dim": ("corpus", "feature_dim", _INT),
    "corpus.min_symbols": ("corpus", "min_symbols", _INT),
    "corpus.max_symbols": ("corpus", "max_symbols", _INT),
    "corpus.min_frames_per_symbol": ("corpus", "min_frames_per_symbol", _INT),
    "corpus.max_frames_per_symbol": ("corpus", "max_frames_per_symbol", _INT),
    "corpus.noise_kinds": ("corpus", "noise_kinds", _STRS),
    "corpus.snr_grid": ("corpus", "snr_grid", _FLOATS),
    "corpus.train_count": ("corpus", "train_count", _INT),
    "corpus.dev_count": ("corpus", "dev_count", _INT),
    "corpus.test_count": ("corpus", "test_count", _INT),
    "corpus.seed": ("corpus", "seed", _INT),
    "encoder.layers": ("encoder", "layers", _INT),
    "encoder.heads": ("encoder", "heads", _INT),
    "encoder.hidden_dim": ("encoder", "hidden_dim", _INT),
    "encoder.ffn_dim": ("encoder", "ffn_dim", _INT),
    "encoder.vocab_size": ("encoder", "vocab_size", _INT),
    "encoder.feature_dim": ("encoder", "feature_dim", _INT),
    "refiner.depth": ("refiner", "depth", _INT),
    "refiner.base_channels": ("refiner", "base_channels", _INT),
    "refiner.channel_mults": ("refiner", "channel_mults", _INTS),
    "refiner.time_dim": ("refiner", "time_dim", _INT),
    "refiner.latent_dim": ("refiner", "latent_dim", _INT),
    "flow.sigma_min": ("flow", "sigma_min", _FLOAT),
    "flow.n_steps": ("flow", "n_steps", _INT),
    "train.asr_epochs": ("train", "asr_epochs", _INT),
    "train.asr_batch": ("train", "asr_batch", _INT),
    "train.asr_lr": ("train", "asr_lr", _FLOAT),
    "train.refiner_epochs": ("train", "refiner_epochs", _INT),
    "train.refiner_batch": ("train", "refiner_batch", _INT),
    "train.refiner_lr": ("train", "refiner_lr", _FLOAT),
    "train.seed": ("train", "seed", _INT),
    "se.profiles": (None, "se_profiles", _parse_profiles),
    "se.artifact_seed": (None, "se_artifact_seed", _INT),
}


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply `key=value` overrides on top of `base` (default: desk config)."""
    cfg = base if base is not None else desk_config()
    sections: dict[str, dict] = {"corpus": {}, "encoder": {}, "refiner": {}, "flow": {}, "train": {}}
    top: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        if key not in _SCHEMA:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        section, field, parser = _SCHEMA[key]
        try:
            parsed = parser(value)
        except ValueError as err:
            raise ValueError(f"line {lineno}: bad value for {key}: {err}") from err
        if section is None:
            top[field] = parsed
        else:
            sections[section][field] = parsed
    cfg = dataclasses.replace(
        cfg,
        corpus=dataclasses.replace(cfg.corpus, **sections["corpus"]),
        encoder=dataclasses.replace(cfg.encoder, **sections["encoder"]),
        refiner=dataclasses.replace(cfg.refiner, **sections["refiner"]),
        flow=dataclasses.replace(cfg.flow, **sections["flow"]),
        train=dataclasses.replace(cfg.train, **sections["train"]),
        **top,
    )
    cfg.validate()
    return cfg


def format_config_text(cfg: ExperimentConfig) -> str:
    """Canonical serialization; `parse_config_text` round-trips it."""
    values = {
        "se.profiles": _format_profiles(cfg.se_profiles),
        "se.artifact_seed": cfg.se_artifact_seed,
    }
    for key, (section, field, _) in _SCHEMA.items():
        if section is None:
            continue
        value = getattr(getattr(cfg, section), field)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        values[key] = value
    lines = [f"{key}={values[key]}" for key in _SCHEMA]
    return "\n".join(lines) + "\n"


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        cfg = desk_config()
        cfg.validate()
        return cfg
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())
