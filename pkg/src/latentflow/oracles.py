"""Brute-force reference implementations used for verification only.

These deliberately share no code with the production paths they check.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

__all__ = ["collapse_path", "ctc_log_prob_bruteforce"]


def collapse_path(path, blank: int) -> tuple:
    """Many-to-one path mapping: merge adjacent repeats, then drop blanks."""
    merged = [k for k, _ in itertools.groupby(path)]
    return tuple(k for k in merged if k != blank)


def ctc_log_prob_bruteforce(logpost: np.ndarray, target) -> float:
    """Enumerate all (V+1)^T alignment paths and sum the matching ones."""
    logpost = np.asarray(logpost, dtype=np.float64)
    T, classes = logpost.shape
    blank = classes - 1
    want = tuple(int(s) for s in target)
    total = -math.inf
    for path in itertools.product(range(classes), repeat=T):
        if collapse_path(path, blank) != want:
            continue
        lp = sum(logpost[t, k] for t, k in enumerate(path))
        total = np.logaddexp(total, lp)
    return float(total)
