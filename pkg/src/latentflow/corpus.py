"""Synthetic paired clean/noisy corpus with exact-SNR mixing.

Each symbol of a transcript is rendered as a fixed random prototype vector
held for a few frames, so a sequence model can genuinely learn the task
while the whole corpus stays regenerable from one seed.  Noise is mixed at
an exact target SNR; a parametric surrogate stands in for a speech
enhancement front-end, producing "enhanced but imperfect" inputs.

Per-utterance RNG streams are keyed by (master seed, split, index, purpose)
so generation order never matters.  Splits are persisted in the LFDS binary
format described in `write_split`.
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CorpusSpec",
    "Utterance",
    "SurrogateSE",
    "draw_prototypes",
    "sample_transcript",
    "render_features",
    "generate_noise",
    "mix_to_snr",
    "mix_noise",
    "measured_snr_db",
    "surrogate_enhance",
    "build_corpus",
    "write_split",
    "read_split",
]

LFDS_MAGIC = b"LFDS"
LFDS_VERSION = 1

DEFAULT_JITTER = 0.05
_SPLIT_IDS = {"train": 0, "dev": 1, "test": 2}


@dataclass(frozen=True)
class CorpusSpec:
    """Everything needed to regenerate the corpus byte-for-byte."""

    vocab_size: int = 8
    feature_dim: int = 32
    min_symbols: int = 2
    max_symbols: int = 8
    min_frames_per_symbol: int = 3
    max_frames_per_symbol: int = 6
    noise_kinds: tuple[str, ...] = ("white", "babble")
    snr_grid: tuple[float, ...] = (-5.0, -2.0, 0.0, 2.0, 5.0, 10.0)
    train_count: int = 800
    dev_count: int = 100
    test_count: int = 100
    seed: int = 1234

    def validate(self):
        if self.min_symbols < 1 or self.max_symbols < self.min_symbols:
            raise ValueError("symbol length range invalid")
        if self.feature_dim < 1 or self.vocab_size < 1:
            raise ValueError("vocab_size and feature_dim must be >= 1")
        if self.min_frames_per_symbol < 1 or self.max_frames_per_symbol < self.min_frames_per_symbol:
            raise ValueError("frames-per-symbol range invalid")
        if not self.snr_grid:
            raise ValueError("snr grid must be non-empty")
        if min(self.train_count, self.dev_count, self.test_count) < 1:
            raise ValueError("split counts must be >= 1")
        unknown = set(self.noise_kinds) - {"white", "babble"}
        if unknown:
            raise ValueError(f"unknown noise kinds: {sorted(unknown)}")

    _FIELDS = (
        "vocab_size",
        "feature_dim",
        "min_symbols",
        "max_symbols",
        "min_frames_per_symbol",
        "max_frames_per_symbol",
        "noise_kinds",
        "snr_grid",
        "train_count",
        "dev_count",
        "test_count",
        "seed",
    )

    def to_text(self) -> str:
        lines = []
        for name in self._FIELDS:
            value = getattr(self, name)
            if name == "noise_kinds":
                value = ",".join(value)
            elif name == "snr_grid":
                value = ",".join(repr(float(v)) for v in value)
            lines.append(f"{name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CorpusSpec":
        values = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in cls._FIELDS:
                raise ValueError(f"unknown corpus spec key: {key!r}")
            values[key] = val.strip()
        missing = set(cls._FIELDS) - set(values)
        if missing:
            raise ValueError(f"corpus spec missing keys: {sorted(missing)}")
        kwargs = {
            k: int(values[k])
            for k in cls._FIELDS
            if k not in ("noise_kinds", "snr_grid")
        }
        kwargs["noise_kinds"] = tuple(values["noise_kinds"].split(","))
        kwargs["snr_grid"] = tuple(float(v) for v in values["snr_grid"].split(","))
        spec = cls(**kwargs)
        spec.validate()
        return spec


@dataclass
class Utterance:
    """One paired clean/noisy instance plus its reference labels."""

    id: str
    labels: np.ndarray
    clean: np.ndarray  # (T, F) float32
    noisy: np.ndarray  # (T, F) float32
    snr_db: float
    noise_kind: str


@dataclass(frozen=True)
class SurrogateSE:
    """Parametric enhancement surrogate.

    strength=1, artifact=0 reproduces clean exactly; strength=0, artifact=0
    reproduces noisy exactly.  The artifact term adds a smooth low-frequency
    field scaled by `artifact`, seeded per utterance.
    """

    strength: float = 0.7
    artifact: float = 0.1
    artifact_seed: int = 99

    def validate(self):
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError(f"strength {self.strength} outside [0, 1]")
        if self.artifact < 0.0:
            raise ValueError("artifact amplitude must be >= 0")


def _stream(spec_seed: int, split: str, index: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([spec_seed, _SPLIT_IDS[split], index, purpose])


def draw_prototypes(spec: CorpusSpec) -> np.ndarray:
    """Unit-norm prototype vector per symbol, pairwise cosine < 0.5.

    Drawn once per corpus from the master seed; redrawn (deterministically)
    if any pair is too similar.
    """
    rng = np.random.default_rng([spec.seed, 901])
    for _ in range(100):
        protos = rng.standard_normal((spec.vocab_size, spec.feature_dim))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        cos = protos @ protos.T
        np.fill_diagonal(cos, 0.0)
        if cos.max() < 0.5:
            return protos.astype(np.float64)
    raise RuntimeError("could not draw sufficiently distinct prototypes")


def sample_transcript(spec: CorpusSpec, rng: np.random.Generator) -> np.ndarray:
    length = int(rng.integers(spec.min_symbols, spec.max_symbols + 1))
    return rng.integers(0, spec.vocab_size, size=length, dtype=np.int64)


def render_features(
    labels,
    spec: CorpusSpec,
    prototypes: np.ndarray,
    rng: np.random.Generator,
    jitter: float = DEFAULT_JITTER,
) -> np.ndarray:
    """Clean feature matrix: prototypes held per-symbol with 1-frame
    cross-fades at boundaries and small additive jitter."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot render an empty transcript")
    durations = rng.integers(
        spec.min_frames_per_symbol, spec.max_frames_per_symbol + 1, size=labels.size
    )
    rows = []
    for i, (sym, dur) in enumerate(zip(labels, durations)):
        block = np.tile(prototypes[sym], (dur, 1))
        if i > 0:
            block[0] = 0.5 * (prototypes[labels[i - 1]] + prototypes[sym])
        rows.append(block)
    feats = np.concatenate(rows, axis=0)
    if jitter > 0.0:
        feats = feats + rng.uniform(-jitter, jitter, size=feats.shape)
    return feats


def _babble_stream(length: int, prototypes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    V = prototypes.shape[0]
    rows = []
    total = 0
    while total < length:
        dur = int(rng.integers(2, 7))
        rows.append(np.tile(prototypes[int(rng.integers(0, V))], (dur, 1)))
        total += dur
    return np.concatenate(rows, axis=0)[:length]


def generate_noise(
    kind: str, shape: tuple[int, int], prototypes: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Noise field of the given kind, shape (T, F)."""
    T, F = shape
    if kind == "white":
        return rng.standard_normal((T, F))
    if kind == "babble":
        # a few prototype streams at random circular shifts, speech-shaped
        acc = np.zeros((T, F))
        for _ in range(4):
            stream = _babble_stream(T, prototypes, rng)
            acc += np.roll(stream, int(rng.integers(0, max(T, 1))), axis=0)
        return acc
    raise ValueError(f"unknown noise kind: {kind!r}")


def mix_to_snr(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    """clean + g*noise with g solving 10*log10(P_clean / P_{g*noise}) = snr_db."""
    if not np.isfinite(snr_db):
        raise ValueError("target SNR must be finite")
    p_clean = float(np.mean(np.square(clean)))
    p_noise = float(np.mean(np.square(noise)))
    if p_clean == 0.0 or p_noise == 0.0:
        raise ValueError("zero-power clean or noise")
    gain = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return clean + gain * noise


def mix_noise(
    clean: np.ndarray,
    noise_kind: str,
    snr_db: float,
    prototypes: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    return mix_to_snr(clean, generate_noise(noise_kind, clean.shape, prototypes, rng), snr_db)


def measured_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    """SNR (dB) realized by a stored pair, from full-utterance mean squares."""
    diff = np.asarray(noisy, dtype=np.float64) - np.asarray(clean, dtype=np.float64)
    p_clean = float(np.mean(np.square(np.asarray(clean, dtype=np.float64))))
    p_noise = float(np.mean(np.square(diff)))
    if p_noise == 0.0:
        raise ValueError("pair carries no noise")
    return 10.0 * np.log10(p_clean / p_noise)


def _artifact_field(shape: tuple[int, int], seed: int, utt_id: str) -> np.ndarray:
    """Smooth low-frequency unit-power field, keyed by (seed, utterance id)."""
    T, F = shape
    rng = np.random.default_rng([seed, zlib.crc32(utt_id.encode())])
    knots = max(2, T // 8 + 2)
    coarse = rng.standard_normal((knots, F))
    pos = np.linspace(0.0, knots - 1.0, T)
    low = np.empty((T, F))
    for f in range(F):
        low[:, f] = np.interp(pos, np.arange(knots), coarse[:, f])
    rms = np.sqrt(np.mean(np.square(low)))
    return low / rms


def surrogate_enhance(utt: Utterance, se: SurrogateSE) -> np.ndarray:
    """alpha*clean + (1-alpha)*noisy + gamma*artifact, in float32."""
    se.validate()
    out = se.strength * utt.clean.astype(np.float64) + (1.0 - se.strength) * utt.noisy.astype(
        np.float64
    )
    if se.artifact > 0.0:
        out = out + se.artifact * _artifact_field(utt.clean.shape, se.artifact_seed, utt.id)
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _draw_kind(spec: CorpusSpec, rng: np.random.Generator) -> str:
    return spec.noise_kinds[int(rng.integers(0, len(spec.noise_kinds)))]


def _make_base(spec, prototypes, split, index):
    t_rng = _stream(spec.seed, split, index, 0)
    f_rng = _stream(spec.seed, split, index, 1)
    n_rng = _stream(spec.seed, split, index, 2)
    labels = sample_transcript(spec, t_rng)
    clean = render_features(labels, spec, prototypes, f_rng)
    kind = _draw_kind(spec, n_rng)
    noise = generate_noise(kind, clean.shape, prototypes, n_rng)
    return labels, clean, kind, noise


def _finish(uid, labels, clean, noise, kind, snr_db) -> Utterance:
    snr32 = float(np.float32(snr_db))
    noisy = mix_to_snr(clean, noise, snr32)
    return Utterance(
        id=uid,
        labels=labels.astype(np.int64),
        clean=clean.astype(np.float32),
        noisy=noisy.astype(np.float32),
        snr_db=snr32,
        noise_kind=kind,
    )


def generate_split(spec: CorpusSpec, prototypes: np.ndarray, split: str) -> list[Utterance]:
    """Materialize one split.

    Train/dev draw one SNR per utterance, uniform over the grid's range;
    test emits every grid SNR for every utterance, reusing the utterance's
    noise field so conditions differ only by noise gain.
    """
    spec.validate()
    count = {"train": spec.train_count, "dev": spec.dev_count, "test": spec.test_count}[split]
    lo, hi = min(spec.snr_grid), max(spec.snr_grid)
    utts: list[Utterance] = []
    for i in range(count):
        labels, clean, kind, noise = _make_base(spec, prototypes, split, i)
        if split == "test":
            for snr in spec.snr_grid:
                uid = f"test-{i:04d}.{kind}@{snr:+g}dB"
                utts.append(_finish(uid, labels, clean, noise, kind, snr))
        else:
            s_rng = _stream(spec.seed, split, i, 3)
            snr = float(s_rng.uniform(lo, hi))
            uid = f"{split}-{i:04d}.{kind}"
            utts.append(_finish(uid, labels, clean, noise, kind, snr))
    return utts


# ---------------------------------------------------------------------------
# LFDS container
# ---------------------------------------------------------------------------


def write_split(path, spec: CorpusSpec, utts: list[Utterance]):
    """Persist a split.

    Layout: magic "LFDS", version u32 LE, spec echo (u32 length + UTF-8
    text), then records until EOF: id (u16 length + UTF-8), label count u16,
    labels u16 each, T u32, F u32, realized snr f32, clean then noisy as
    little-endian float32 row-major.
    """
    buf = io.BytesIO()
    buf.write(LFDS_MAGIC)
    buf.write(struct.pack("<I", LFDS_VERSION))
    echo = spec.to_text().encode()
    buf.write(struct.pack("<I", len(echo)))
    buf.write(echo)
    for u in utts:
        ident = u.id.encode()
        buf.write(struct.pack("<H", len(ident)))
        buf.write(ident)
        buf.write(struct.pack("<H", len(u.labels)))
        buf.write(np.asarray(u.labels, dtype="<u2").tobytes())
        T, F = u.clean.shape
        buf.write(struct.pack("<IIf", T, F, u.snr_db))
        buf.write(np.ascontiguousarray(u.clean, dtype="<f4").tobytes())
        buf.write(np.ascontiguousarray(u.noisy, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_split(path) -> tuple[CorpusSpec, list[Utterance]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != LFDS_MAGIC:
        raise ValueError(f"not an LFDS file (expected magic {LFDS_MAGIC!r})")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != LFDS_VERSION:
        raise ValueError(f"unsupported LFDS version {version}")
    (echo_len,) = struct.unpack_from("<I", raw, 8)
    off = 12
    spec = CorpusSpec.from_text(raw[off : off + echo_len].decode())
    off += echo_len
    utts: list[Utterance] = []
    while off < len(raw):
        (id_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        uid = raw[off : off + id_len].decode()
        off += id_len
        (n_labels,) = struct.unpack_from("<H", raw, off)
        off += 2
        labels = np.frombuffer(raw, dtype="<u2", count=n_labels, offset=off).astype(np.int64)
        off += 2 * n_labels
        T, F, snr = struct.unpack_from("<IIf", raw, off)
        off += 12
        clean = np.frombuffer(raw, dtype="<f4", count=T * F, offset=off).reshape(T, F)
        off += 4 * T * F
        noisy = np.frombuffer(raw, dtype="<f4", count=T * F, offset=off).reshape(T, F)
        off += 4 * T * F
        kind = uid.split(".", 1)[1].split("@", 1)[0] if "." in uid else "unknown"
        utts.append(
            Utterance(
                id=uid,
                labels=labels,
                clean=clean.copy(),
                noisy=noisy.copy(),
                snr_db=float(snr),
                noise_kind=kind,
            )
        )
    return spec, utts


def build_corpus(spec: CorpusSpec, out_dir) -> dict[str, str]:
    """Generate and persist all three splits; returns path per split."""
    import os

    spec.validate()
    prototypes = draw_prototypes(spec)
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for split in ("train", "dev", "test"):
        utts = generate_split(spec, prototypes, split)
        path = os.path.join(out_dir, f"{split}.lfds")
        write_split(path, spec, utts)
        paths[split] = path
    return paths
