"""CTC loss (log-space forward recursion) and greedy decoding.

The blank symbol is always the last class index.  The loss is marginalized
over every alignment path that collapses to the target: adjacent repeats
merge, then blanks drop.  The gradient is computed analytically from the
forward/backward lattice variables, so a whole CTC evaluation is a single
node in the autodiff graph.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

__all__ = ["ctc_log_prob", "ctc_loss", "greedy_decode", "min_frames_required"]

NEG_INF = -np.inf


def min_frames_required(target: list[int] | np.ndarray) -> int:
    """Shortest T that admits any alignment: |Y| plus forced blank slots."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _validate(logpost_shape: tuple, target: list[int]) -> int:
    T, classes = logpost_shape
    blank = classes - 1
    for sym in target:
        if not 0 <= sym < blank:
            raise ValueError(f"target symbol {sym} outside [0, {blank})")
    need = min_frames_required(target)
    if T < need:
        raise ValueError(
            f"target of length {len(target)} needs at least {need} frames, got {T}"
        )
    return blank


def _extended(target: list[int], blank: int) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, blank, dtype=np.intp)
    ext[1::2] = target
    return ext


def ctc_log_prob(logpost: Tensor, target) -> Tensor:
    """log P(target | input) marginalized over all alignment paths.

    `logpost` is (T, V+1) frame log-posteriors with blank last; `target` a
    sequence of symbol ids < V.  Returns a scalar tensor; the backward pass
    distributes gradient over the lattice occupancy probabilities.
    """
    target = [int(s) for s in target]
    blank = _validate(logpost.data.shape, target)
    L = logpost.data
    T = L.shape[0]
    ext = _extended(target, blank)
    S = ext.size

    # skip transition s-2 -> s allowed when labels differ and s is a label
    can_skip = np.zeros(S, dtype=bool)
    if S > 2:
        can_skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    emit = L[:, ext]  # (T, S)

    alpha = np.full((T, S), NEG_INF, dtype=L.dtype)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        stay = alpha[t - 1]
        prev1 = np.full(S, NEG_INF, dtype=L.dtype)
        prev1[1:] = alpha[t - 1, :-1]
        prev2 = np.full(S, NEG_INF, dtype=L.dtype)
        if S > 2:
            prev2[2:] = alpha[t - 1, :-2]
        prev2 = np.where(can_skip, prev2, NEG_INF)
        alpha[t] = emit[t] + np.logaddexp(np.logaddexp(stay, prev1), prev2)

    if S > 1:
        log_p = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    else:
        log_p = alpha[T - 1, 0]
    log_p = np.asarray(log_p, dtype=L.dtype)

    def back(g):
        if not logpost.requires_grad:
            return
        # backward lattice, emission at t included (mirror of alpha)
        beta = np.full((T, S), NEG_INF, dtype=L.dtype)
        beta[T - 1, S - 1] = emit[T - 1, S - 1]
        if S > 1:
            beta[T - 1, S - 2] = emit[T - 1, S - 2]
        skip_fwd = np.zeros(S, dtype=bool)
        if S > 2:
            skip_fwd[:-2] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
        for t in range(T - 2, -1, -1):
            stay = beta[t + 1]
            nxt1 = np.full(S, NEG_INF, dtype=L.dtype)
            nxt1[:-1] = beta[t + 1, 1:]
            nxt2 = np.full(S, NEG_INF, dtype=L.dtype)
            if S > 2:
                nxt2[:-2] = beta[t + 1, 2:]
            nxt2 = np.where(skip_fwd, nxt2, NEG_INF)
            beta[t] = emit[t] + np.logaddexp(np.logaddexp(stay, nxt1), nxt2)

        # occupancy: alpha,beta both include the emission, so divide it out once
        gamma = alpha + beta - emit
        grad = np.zeros_like(L)
        with np.errstate(invalid="ignore"):
            occ = np.exp(gamma - log_p)
        occ = np.where(np.isneginf(gamma), 0.0, occ)
        for s in range(S):
            grad[:, ext[s]] += occ[:, s]
        logpost.grad += grad * g

    return Tensor._from_op(log_p, (logpost,), back, "ctc_log_prob", allow_neg_inf=True)


def ctc_loss(logpost: Tensor, target) -> Tensor:
    """Negative log-likelihood of the target sequence (>= 0)."""
    return -ctc_log_prob(logpost, target)


def greedy_decode(logpost) -> list[int]:
    """Best-path decode: per-frame argmax, collapse repeats, drop blanks.

    Argmax ties break toward the lowest class index.  Accepts a Tensor or a
    plain (T, V+1) array.
    """
    data = logpost.data if isinstance(logpost, Tensor) else np.asarray(logpost)
    blank = data.shape[1] - 1
    path = data.argmax(axis=1)
    out: list[int] = []
    prev = -1
    for p in path:
        if p != prev and p != blank:
            out.append(int(p))
        prev = p
    return out
