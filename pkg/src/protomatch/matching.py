"""Spatially-constrained greedy matching of sub-patch prototypes to image patches.

One prototype is matched in k iterations.  Each iteration picks the
(patch, sub-patch) pair with the highest cosine similarity among patches that
are still available (never selected before) AND adjacent (within Chebyshev
radius r of the previous selection; every patch qualifies at iteration 1),
over sub-patches not yet used.  The selected patch is then removed from the
availability mask and the adjacency mask is recentered on it.  The prototype
score is the slot-weighted sum of the selected similarities.

Determinism: ties are broken by the lexicographically smallest (patch,
sub-patch) pair.  Zero-norm patches or sub-patches are never selected (their
similarity is -inf for selection purposes).  If no feasible pair remains, the
iteration contributes zero, the adjacency mask is re-derived from the last
selection and, if the stall persists, matching stops early.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateVectorError, InstanceTooSmallError
from .feature_io import EnhancedFeatures
from .geometry import GridSpec, chebyshev_neighborhood
from .prototypes import PrototypeSet


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """dot(a, b) / (|a| |b|); raises DegenerateVectorError on zero-norm input."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError("cosine similarity of a zero-norm vector is undefined")
    return float(np.dot(a, b) / (na * nb))


def similarity_matrix(patches: np.ndarray, proto: np.ndarray) -> np.ndarray:
    """(N, k) cosine similarities; -inf where either vector has zero norm."""
    patches = np.asarray(patches, dtype=np.float64)
    proto = np.asarray(proto, dtype=np.float64)
    pnorm = np.linalg.norm(patches, axis=1)
    qnorm = np.linalg.norm(proto, axis=1)
    denom = pnorm[:, None] * qnorm[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        sims = (patches @ proto.T) / denom
    sims[denom == 0.0] = -np.inf
    return sims


@dataclass
class MaskState:
    """Availability and adjacency masks carried across matching iterations."""

    available: np.ndarray  # (N,) bool
    adjacent: np.ndarray  # (N,) bool
    last_selected: int | None = None

    @classmethod
    def initial(cls, n: int) -> "MaskState":
        return cls(available=np.ones(n, dtype=bool), adjacent=np.ones(n, dtype=bool))

    def consume(self, patch: int, grid: GridSpec, r: int) -> None:
        """Mark `patch` unavailable and recenter adjacency on it."""
        self.available[patch] = False
        self.adjacent = adjacency_mask(grid, patch, r)
        self.last_selected = patch


def adjacency_mask(grid: GridSpec, center: int, r: int) -> np.ndarray:
    mask = np.zeros(grid.n_patches, dtype=bool)
    mask[chebyshev_neighborhood(grid, center, r)] = True
    return mask


@dataclass(frozen=True)
class Selection:
    """One matched pair: iteration t (1-based), patch index, sub-patch index."""

    t: int
    patch: int
    subpatch: int
    similarity: float

    def to_dict(self) -> dict:
        return {"t": self.t, "patch": self.patch, "subpatch": self.subpatch,
                "sim": self.similarity}

    @classmethod
    def from_dict(cls, d: dict) -> "Selection":
        return cls(t=int(d["t"]), patch=int(d["patch"]), subpatch=int(d["subpatch"]),
                   similarity=float(d["sim"]))


@dataclass
class MatchResult:
    """Ordered selections and slot-weighted score for one prototype."""

    selections: list[Selection]
    score: float
    prototype_index: int = 0

    def to_dict(self) -> dict:
        return {
            "prototype": self.prototype_index,
            "score": self.score,
            "selections": [s.to_dict() for s in self.selections],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MatchResult":
        return cls(
            selections=[Selection.from_dict(s) for s in d["selections"]],
            score=float(d["score"]),
            prototype_index=int(d["prototype"]),
        )


def _slot_weights(weights: np.ndarray, k: int, normalize: bool) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (k,):
        raise ValueError(f"expected {k} slot weights, got shape {weights.shape}")
    if normalize:
        shifted = np.exp(weights - weights.max())
        weights = shifted / shifted.sum()
    return weights


def greedy_match(
    features: EnhancedFeatures,
    proto: np.ndarray,
    grid: GridSpec,
    r: int,
    weights: np.ndarray,
    prototype_index: int = 0,
    normalize_weights: bool = False,
) -> MatchResult:
    """Match one prototype's k sub-patches to image patches.

    Args:
        features: enhanced patch features, (N, D).
        proto: one prototype, (k, D).
        grid: patch grid (N = grid.n_patches must equal the feature count).
        r: Chebyshev adjacency radius, >= 0.
        weights: k slot weights, applied by iteration index.
        prototype_index: recorded in the result for downstream ranking.
        normalize_weights: apply softmax to the slot weights before scoring.

    Raises:
        InstanceTooSmallError: if N < k.
    """
    patches = np.asarray(features.patches, dtype=np.float64)
    proto = np.asarray(proto, dtype=np.float64)
    n, k = patches.shape[0], proto.shape[0]
    if n != grid.n_patches:
        raise ValueError(f"feature count {n} != grid patch count {grid.n_patches}")
    if n < k:
        raise InstanceTooSmallError(f"grid has {n} patches but the prototype needs {k}")
    if r < 0:
        raise ValueError(f"radius must be >= 0, got {r}")
    w = _slot_weights(weights, k, normalize_weights)

    sims = similarity_matrix(patches, proto)
    state = MaskState.initial(n)
    j_unused = np.ones(k, dtype=bool)
    selections: list[Selection] = []
    score = 0.0

    for t in range(1, k + 1):
        feasible = (
            state.available[:, None]
            & state.adjacent[:, None]
            & j_unused[None, :]
            & np.isfinite(sims)
        )
        if not feasible.any():
            # Stall: this iteration contributes 0.  Re-derive adjacency from
            # the last selection (availability still enforced) and stop if
            # that leaves nothing either.
            if state.last_selected is None:
                break
            state.adjacent = adjacency_mask(grid, state.last_selected, r)
            feasible = (
                state.available[:, None]
                & state.adjacent[:, None]
                & j_unused[None, :]
                & np.isfinite(sims)
            )
            if not feasible.any():
                break
        masked = np.where(feasible, sims, -np.inf)
        flat = int(np.argmax(masked))  # first max in row-major order: smallest (n, j)
        n_star, j_star = divmod(flat, k)
        sim = float(sims[n_star, j_star])
        selections.append(Selection(t=t, patch=n_star, subpatch=j_star, similarity=sim))
        score += w[t - 1] * sim
        state.consume(n_star, grid, r)
        j_unused[j_star] = False

    return MatchResult(selections=selections, score=float(score),
                       prototype_index=prototype_index)


def match_all(
    features: EnhancedFeatures,
    protos: PrototypeSet,
    grid: GridSpec,
    r: int,
    normalize_weights: bool = False,
) -> list[MatchResult]:
    """Match every prototype independently; masks reset between prototypes."""
    return [
        greedy_match(
            features,
            protos.protos[i],
            grid,
            r,
            protos.weights_for(i),
            prototype_index=i,
            normalize_weights=normalize_weights,
        )
        for i in range(protos.m)
    ]


def ranked_patches(
    results: list[MatchResult], semantics: str = "patches"
) -> list[tuple[int, float]]:
    """All distinct matched patches as (patch, similarity), best first.

    "patches" semantics ranks every (prototype, selection) pair by similarity
    (descending, ties to the lower patch index) and deduplicates.
    "prototypes" semantics instead orders whole prototypes by score and emits
    their selected patches in selection order.
    """
    if not results:
        raise ValueError("ranking requires at least one match result")
    out: list[tuple[int, float]] = []
    seen: set[int] = set()
    if semantics == "patches":
        pairs = sorted(
            ((sel, res.prototype_index) for res in results for sel in res.selections),
            key=lambda p: (-p[0].similarity, p[0].patch, p[1], p[0].t),
        )
        for sel, _ in pairs:
            if sel.patch not in seen:
                seen.add(sel.patch)
                out.append((sel.patch, sel.similarity))
    elif semantics == "prototypes":
        ranked = sorted(results, key=lambda res: (-res.score, res.prototype_index))
        for res in ranked:
            for sel in res.selections:
                if sel.patch not in seen:
                    seen.add(sel.patch)
                    out.append((sel.patch, sel.similarity))
    else:
        raise ValueError(f"unknown top-k semantics {semantics!r}")
    return out


def top_k_patches(
    results: list[MatchResult], k: int, semantics: str = "patches"
) -> list[int]:
    """First K distinct patches by match quality (fewer if unavailable).

    Under "prototypes" semantics K counts prototypes, not patches: the
    selected patches of the K best-scoring prototypes are returned.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if semantics == "prototypes":
        ranked = sorted(results, key=lambda res: (-res.score, res.prototype_index))
        if not results:
            raise ValueError("ranking requires at least one match result")
        out: list[int] = []
        seen: set[int] = set()
        for res in ranked[:k]:
            for sel in res.selections:
                if sel.patch not in seen:
                    seen.add(sel.patch)
                    out.append(sel.patch)
        return out
    return [patch for patch, _ in ranked_patches(results, semantics)[:k]]
