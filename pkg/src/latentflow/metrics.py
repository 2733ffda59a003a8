"""Edit-distance error rate between label sequences."""

from __future__ import annotations

import numpy as np

__all__ = ["edit_distance", "wer"]


def edit_distance(a, b) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    a, b = list(a), list(b)
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = np.arange(len(b) + 1)
    cur = np.empty_like(prev)
    for i, sa in enumerate(a, start=1):
        cur[0] = i
        for j, sb in enumerate(b, start=1):
            cur[j] = min(
                prev[j] + 1,
                cur[j - 1] + 1,
                prev[j - 1] + (sa != sb),
            )
        prev, cur = cur, prev
    return int(prev[len(b)])


def wer(reference, hypothesis) -> float:
    """Edit distance divided by reference length; reference must be non-empty."""
    reference = list(reference)
    if not reference:
        raise ValueError("WER undefined for an empty reference")
    return edit_distance(reference, hypothesis) / len(reference)
