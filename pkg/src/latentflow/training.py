"""Training loops for the recognizer and the refinement field.

Both loops are single-writer and fully seeded: batch order, parameter
initialization and (for the refiner) the per-sample time draws are all
derived from the run seed, so two runs with the same inputs produce
bit-identical parameters.  Batches are plain gradient accumulation over
individual utterances, which sidesteps padding and masking entirely.
"""

from __future__ import annotations

import numpy as np

from .asr import CtcAsrModel, EncoderConfig
from .checkpoint import save_checkpoint
from .corpus import Utterance
from .ctc import ctc_loss, greedy_decode
from .flow import FlowConfig, LatentPair, cfm_loss
from .metrics import edit_distance
from .optim import Adam
from .tensor import NonFiniteError, no_grad
from .unet import RefinerConfig, VectorFieldModel

__all__ = ["train_asr", "train_refiner"]

PLATEAU_PATIENCE = 3
LR_DECAY = 0.5


def _pooled_wer(model: CtcAsrModel, utts) -> float:
    dist = total = 0
    with no_grad():
        for u in utts:
            hyp = greedy_decode(model.classify(model.encode(u.clean)))
            dist += edit_distance(u.labels.tolist(), hyp)
            total += len(u.labels)
    return dist / total


def _accumulate(params, acc):
    for i, p in enumerate(params):
        acc[i] += p.grad


def train_asr(
    train_utts: list[Utterance],
    dev_utts: list[Utterance],
    config: EncoderConfig,
    epochs: int = 30,
    batch_size: int = 16,
    lr: float = 1e-3,
    seed: int = 777,
    ckpt_path=None,
    log=None,
) -> tuple[CtcAsrModel, list[dict]]:
    """Train encoder + head on clean features only with the CTC objective.

    Greedy dev WER is logged per epoch; the best-dev parameters are restored
    into the returned model (and saved to `ckpt_path` when given).  Training
    aborts with a diagnostic if any loss or gradient goes non-finite.
    """
    model = CtcAsrModel(config, seed=seed)
    params = model.parameters()
    opt = Adam(params, lr=lr)
    history: list[dict] = []
    best = {"wer": float("inf"), "epoch": -1, "params": None}
    stale = 0
    for epoch in range(epochs):
        order = np.random.default_rng([seed, 1000 + epoch]).permutation(len(train_utts))
        losses = []
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            acc = [np.zeros_like(p.data) for p in params]
            for j in batch:
                u = train_utts[j]
                try:
                    loss = ctc_loss(model.classify(model.encode(u.clean)), u.labels.tolist())
                    loss.backward()
                except NonFiniteError as err:
                    raise NonFiniteError(
                        err.op, f"epoch {epoch}, utterance {u.id}"
                    ) from err
                losses.append(float(loss.data))
                _accumulate(params, acc)
            opt.step([a / len(batch) for a in acc])
        dev_wer = _pooled_wer(model, dev_utts)
        history.append(
            {"epoch": epoch, "train_loss": float(np.mean(losses)), "dev_wer": dev_wer, "lr": opt.lr}
        )
        if log:
            log(
                f"asr epoch {epoch:3d}  loss {np.mean(losses):8.4f}  "
                f"dev wer {dev_wer:.4f}  lr {opt.lr:g}"
            )
        if dev_wer < best["wer"]:
            best = {
                "wer": dev_wer,
                "epoch": epoch,
                "params": {k: p.data.copy() for k, p in model.params.items()},
            }
            stale = 0
        else:
            stale += 1
            if stale >= PLATEAU_PATIENCE:
                opt.lr *= LR_DECAY
                stale = 0
    if best["params"] is not None:
        for k, p in model.params.items():
            p.data = best["params"][k]
    if ckpt_path is not None:
        save_checkpoint(model, ckpt_path, epoch=best["epoch"], dev_metric=best["wer"], seed=seed)
    return model, history


def _dev_cfm_loss(model, dev_pairs, dev_t, flow_config) -> float:
    with no_grad():
        return float(cfm_loss(model, dev_pairs, None, flow_config, t_values=dev_t).data)


def train_refiner(
    train_pairs: list[LatentPair],
    dev_pairs: list[LatentPair],
    config: RefinerConfig,
    flow_config: FlowConfig,
    epochs: int = 60,
    batch_size: int = 16,
    lr: float = 1e-3,
    seed: int = 777,
    ckpt_path=None,
    log=None,
) -> tuple[VectorFieldModel, list[dict]]:
    """Fit the vector field by regression onto the path velocity.

    Latent pairs come from a frozen recognizer, which this loop never sees,
    let alone updates.  Dev loss uses time draws frozen at start so epochs
    are comparable; best-dev parameters win.
    """
    model = VectorFieldModel(config, seed=seed)
    params = model.parameters()
    opt = Adam(params, lr=lr)
    dev_t = list(np.random.default_rng([seed, 4242]).uniform(size=len(dev_pairs)))
    history: list[dict] = []
    best = {"loss": float("inf"), "epoch": -1, "params": None}
    for epoch in range(epochs):
        rng = np.random.default_rng([seed, 2000 + epoch])
        order = rng.permutation(len(train_pairs))
        losses = []
        for start in range(0, len(order), batch_size):
            batch = [train_pairs[j] for j in order[start : start + batch_size]]
            try:
                loss = cfm_loss(model, batch, rng, flow_config)
                loss.backward()
            except NonFiniteError as err:
                raise NonFiniteError(err.op, f"epoch {epoch}, batch at {start}") from err
            losses.append(float(loss.data))
            opt.step([p.grad for p in params])
        dev_loss = _dev_cfm_loss(model, dev_pairs, dev_t, flow_config)
        history.append(
            {"epoch": epoch, "train_loss": float(np.mean(losses)), "dev_loss": dev_loss, "lr": opt.lr}
        )
        if log:
            log(
                f"refiner epoch {epoch:3d}  loss {np.mean(losses):8.5f}  "
                f"dev {dev_loss:8.5f}  lr {opt.lr:g}"
            )
        if dev_loss < best["loss"]:
            best = {
                "loss": dev_loss,
                "epoch": epoch,
                "params": {k: p.data.copy() for k, p in model.params.items()},
            }
    if best["params"] is not None:
        for k, p in model.params.items():
            p.data = best["params"][k]
    if ckpt_path is not None:
        save_checkpoint(model, ckpt_path, epoch=best["epoch"], dev_metric=best["loss"], seed=seed)
    return model, history
