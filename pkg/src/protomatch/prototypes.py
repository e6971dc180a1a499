"""Question-conditioned sub-patch prototypes and their slot weights.

Prototypes are the first m*k projected question tokens reshaped row-major
into an (m, k, D) tensor.  Questions shorter than m*k tokens are extended by
cyclic padding (token t maps to source token t mod L) so that no prototype
row is ever the zero vector, which would make its cosine similarity
undefined.  Prototypes carry no free parameters of their own: all learnable
capacity lives in the projector that produced the tokens and in the slot
weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class PrototypeSet:
    """m prototypes of k sub-patches each, plus the k slot weights."""

    protos: np.ndarray  # (m, k, D) float64
    slot_weights: np.ndarray  # (k,) shared, or (m, k) in the per-prototype variant
    m: int
    k: int

    def __post_init__(self) -> None:
        self.protos = np.asarray(self.protos, dtype=np.float64)
        self.slot_weights = np.asarray(self.slot_weights, dtype=np.float64)
        if self.protos.shape[:2] != (self.m, self.k):
            raise ValueError(
                f"prototype tensor shape {self.protos.shape} != ({self.m}, {self.k}, D)"
            )
        if self.slot_weights.shape not in ((self.k,), (self.m, self.k)):
            raise ValueError(
                f"slot weights must be ({self.k},) or ({self.m}, {self.k}), "
                f"got {self.slot_weights.shape}"
            )
        if not np.isfinite(self.slot_weights).all():
            raise ValueError("slot weights must be finite")

    def weights_for(self, prototype_index: int) -> np.ndarray:
        if self.slot_weights.ndim == 2:
            return self.slot_weights[prototype_index]
        return self.slot_weights


def token_index_map(n_tokens: int, m: int, k: int) -> np.ndarray:
    """Source-token index feeding each flat prototype slot (length m*k).

    Slot p (= i*k + j, row-major) reads token p when the question is long
    enough and token p mod n_tokens otherwise (cyclic padding).
    """
    if n_tokens < 1:
        raise ValueError("need at least one token")
    if m < 1 or k < 1:
        raise ValueError(f"m and k must be >= 1, got m={m} k={k}")
    flat = np.arange(m * k)
    return np.where(flat < n_tokens, flat, flat % n_tokens)


def build_prototypes(projected_tokens: np.ndarray, m: int, k: int) -> np.ndarray:
    """Reshape the first m*k (cyclically padded) projected tokens into (m, k, D)."""
    tokens = np.asarray(projected_tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[0] < 1:
        raise ValueError("projected_tokens must be a non-empty (L, D) array")
    idx = token_index_map(tokens.shape[0], m, k)
    return tokens[idx].reshape(m, k, tokens.shape[1])


def init_slot_weights(k: int, seed: int, noise_scale: float = 0.01) -> np.ndarray:
    """1/k each plus seeded uniform noise of magnitude <= noise_scale."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    return np.full(k, 1.0 / k) + rng.uniform(-noise_scale, noise_scale, size=k)
