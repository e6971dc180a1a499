"""Reference matcher: exhaustive sequential argmax in plain Python.

This is the desk-scale oracle the greedy matcher is checked against.  It
shares no code with the vectorized implementation: similarities come from
math-module arithmetic over Python lists, feasibility is recomputed from
scratch by enumerating every (patch, sub-patch) pair at every iteration, and
the lexicographically smallest argmax is found by a strict-greater scan.
"""

from __future__ import annotations

import math


def _cosine(a: list[float], b: list[float]) -> float | None:
    dot = 0.0
    na = 0.0
    nb = 0.0
    for x, y in zip(a, b):
        dot += x * y
        na += x * x
        nb += y * y
    if na == 0.0 or nb == 0.0:
        return None
    return dot / (math.sqrt(na) * math.sqrt(nb))


def _chebyshev(a: int, b: int, cols: int) -> int:
    return max(abs(a // cols - b // cols), abs(a % cols - b % cols))


def match_reference(
    patches: list[list[float]],
    proto: list[list[float]],
    rows: int,
    cols: int,
    r: int,
    weights: list[float],
) -> tuple[list[tuple[int, int, int, float]], float]:
    """Sequentially select the best feasible (patch, sub-patch) pair k times.

    Returns (selections, score) where each selection is
    (iteration t starting at 1, patch index, sub-patch index, similarity).
    """
    n = len(patches)
    k = len(proto)
    if n != rows * cols:
        raise ValueError("patch count does not match the grid")
    if n < k:
        raise ValueError("fewer patches than sub-patches")

    used_patches: set[int] = set()
    used_subpatches: set[int] = set()
    last: int | None = None
    selections: list[tuple[int, int, int, float]] = []
    score = 0.0

    for t in range(1, k + 1):
        best: tuple[int, int, float] | None = None
        for patch in range(n):
            if patch in used_patches:
                continue
            if last is not None and _chebyshev(patch, last, cols) > r:
                continue
            for sub in range(k):
                if sub in used_subpatches:
                    continue
                sim = _cosine(patches[patch], proto[sub])
                if sim is None:
                    continue
                if best is None or sim > best[2]:
                    best = (patch, sub, sim)
        if best is None:
            break
        patch, sub, sim = best
        selections.append((t, patch, sub, sim))
        score += weights[t - 1] * sim
        used_patches.add(patch)
        used_subpatches.add(sub)
        last = patch

    return selections, score
