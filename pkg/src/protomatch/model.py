"""End-to-end forward pass, loss, manual gradients, and desk-scale training.

Forward pipeline per example: enhance patch features, project question tokens,
reshape them into prototypes, greedily match each prototype, pool each
prototype's selected patch vectors (softmax-of-similarity weighted mean) and
scale the pooled vector by the prototype's slot-weighted match score, flatten
to m*D, append the candidate's D-vector (coordinate projection or frozen text
projection mean-pooled over tokens), and score the concatenation with a single
affine head, giving one logit per candidate.

Scaling the pooled vector by the match score is what puts the slot weights
into the forward graph; without it they would parameterize nothing.

Gradients treat the greedy selections (which patch, which sub-patch) as
constants and differentiate through the selected similarities, the pooling
softmax, and the scores.  No gradient reaches the frozen answer projector.
Note one structural consequence of the shared single-logit head: everything
that is constant across an example's candidates (the whole visual branch)
cancels in the softmax, so its analytic gradients are exactly zero sums.
They are still computed by the generic chain rule and finite differences
confirm the zeros.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .errors import FormatError
from .feature_io import (
    AnswerInput,
    CoordAnswer,
    EnhancedFeatures,
    QAExample,
    TextAnswer,
    enhance,
)
from .matching import MatchResult, match_all
from .projection import (
    CoordProjector,
    LinearProjector,
    freeze_copy,
    init_coord_projector,
    init_linear_projector,
    load_checkpoint,
    normalize_box,
    project_coords,
    project_tokens,
    save_checkpoint,
)
from .prototypes import PrototypeSet, build_prototypes, init_slot_weights, token_index_map


@dataclass(eq=False)
class FusionHead:
    """Single affine unit mapping the fused (m*D + D)-vector to one logit."""

    weights: np.ndarray  # (d_fused,)
    bias: np.ndarray  # (1,)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(1)


@dataclass(eq=False)
class ModelParams:
    question_projector: LinearProjector
    coord_projector: CoordProjector
    slot_weights: np.ndarray  # (k,)
    head: FusionHead
    config: RunConfig
    frozen_text_projector: LinearProjector = field(init=False)

    def __post_init__(self) -> None:
        self.slot_weights = np.asarray(self.slot_weights, dtype=np.float64)
        if self.slot_weights.shape != (self.config.k,):
            raise ValueError("slot weights must have shape (k,)")
        if self.question_projector.d_out != self.config.d:
            raise ValueError("question projector output dimension != d")
        if self.coord_projector.d_out != self.config.d:
            raise ValueError("coordinate projector output dimension != d")
        if self.head.weights.shape != (self.config.d_fused,):
            raise ValueError(
                f"head expects {self.config.d_fused} fused dims, got {self.head.weights.shape}"
            )
        self.refresh_frozen()

    def refresh_frozen(self) -> None:
        """Re-snapshot the frozen answer projector from the question branch."""
        self.frozen_text_projector = freeze_copy(self.question_projector)


def init_params(config: RunConfig) -> ModelParams:
    """Deterministic parameter initialization from config.seed."""
    base = config.seed
    return ModelParams(
        question_projector=init_linear_projector(config.d_text, config.d, base + 11),
        coord_projector=init_coord_projector(config.d, base + 13),
        slot_weights=init_slot_weights(config.k, base + 17),
        head=FusionHead(
            weights=np.random.default_rng(base + 19).uniform(
                -1.0 / math.sqrt(config.d_fused),
                1.0 / math.sqrt(config.d_fused),
                size=config.d_fused,
            ),
            bias=np.zeros(1),
        ),
        config=config,
    )


@dataclass(eq=False)
class ForwardCache:
    """Intermediates reused by backward (selections are frozen in `results`)."""

    enhanced: np.ndarray  # (N, D)
    question_tokens: np.ndarray  # (L, D_text) float64
    projected: np.ndarray  # (L, D)
    token_map: np.ndarray  # (m*k,) source token per prototype slot
    results: list[MatchResult]
    alphas: list[np.ndarray]  # per prototype, (T_i,)
    pools: list[np.ndarray]  # per prototype, (D,)
    visual: np.ndarray  # (m*D,)
    candidate_feats: np.ndarray  # (C, D)
    candidate_inputs: list[np.ndarray | None]  # normalized coords for Type 1
    logits: np.ndarray  # (C,)


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = np.exp(x - x.max())
    return shifted / shifted.sum()


def _candidate_feature(params: ModelParams, cand: AnswerInput,
                       grid) -> tuple[np.ndarray, np.ndarray | None]:
    if isinstance(cand, CoordAnswer):
        coords = normalize_box(cand.box, grid)
        return coords @ params.coord_projector.weights + params.coord_projector.bias, coords
    if isinstance(cand, TextAnswer):
        projected = project_tokens(params.frozen_text_projector, cand.tokens)
        return projected.mean(axis=0), None
    raise ValueError(f"unknown candidate type {type(cand).__name__}")


def forward(params: ModelParams, ex: QAExample,
            return_cache: bool = False) -> np.ndarray | tuple[np.ndarray, ForwardCache]:
    """Per-candidate logits; deterministic for fixed params and input."""
    cfg = params.config
    grid = ex.features.grid
    if ex.features.d != cfg.d:
        raise ValueError(f"feature dimension {ex.features.d} != configured d {cfg.d}")
    enhanced = enhance(ex.features).patches
    projected = project_tokens(params.question_projector, ex.question)
    protos = build_prototypes(projected, cfg.m, cfg.k)
    pset = PrototypeSet(protos=protos, slot_weights=params.slot_weights, m=cfg.m, k=cfg.k)
    results = match_all(EnhancedFeatures(enhanced), pset, grid, cfg.r)

    alphas: list[np.ndarray] = []
    pools: list[np.ndarray] = []
    visual = np.zeros(cfg.m * cfg.d)
    for i, res in enumerate(results):
        if not res.selections:
            alphas.append(np.zeros(0))
            pools.append(np.zeros(cfg.d))
            continue
        sims = np.array([s.similarity for s in res.selections])
        alpha = _softmax(sims)
        pool = alpha @ enhanced[[s.patch for s in res.selections]]
        alphas.append(alpha)
        pools.append(pool)
        visual[i * cfg.d:(i + 1) * cfg.d] = res.score * pool

    feats = np.zeros((len(ex.candidates), cfg.d))
    inputs: list[np.ndarray | None] = []
    for c, cand in enumerate(ex.candidates):
        feats[c], extra = _candidate_feature(params, cand, grid)
        inputs.append(extra)

    w_visual = params.head.weights[: cfg.m * cfg.d]
    w_answer = params.head.weights[cfg.m * cfg.d:]
    logits = visual @ w_visual + feats @ w_answer + params.head.bias[0]

    if not return_cache:
        return logits
    cache = ForwardCache(
        enhanced=enhanced,
        question_tokens=ex.question.tokens.astype(np.float64),
        projected=projected,
        token_map=token_index_map(len(ex.question), cfg.m, cfg.k),
        results=results,
        alphas=alphas,
        pools=pools,
        visual=visual,
        candidate_feats=feats,
        candidate_inputs=inputs,
        logits=logits,
    )
    return logits, cache


def loss(logits: np.ndarray, correct_index: int) -> float:
    """Softmax cross-entropy over the candidates; always >= 0."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= correct_index < logits.shape[0]:
        raise ValueError(f"correct_index {correct_index} out of range")
    shifted = logits - logits.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[correct_index])


def predict(params: ModelParams, ex: QAExample) -> int:
    """Argmax candidate; ties go to the lowest index."""
    return int(np.argmax(forward(params, ex)))


GRAD_KEYS = (
    "question.weights",
    "question.bias",
    "coord.weights",
    "coord.bias",
    "slot_weights",
    "head.weights",
    "head.bias",
)


def zero_gradients(params: ModelParams) -> dict[str, np.ndarray]:
    return {
        "question.weights": np.zeros_like(params.question_projector.weights),
        "question.bias": np.zeros_like(params.question_projector.bias),
        "coord.weights": np.zeros_like(params.coord_projector.weights),
        "coord.bias": np.zeros_like(params.coord_projector.bias),
        "slot_weights": np.zeros_like(params.slot_weights),
        "head.weights": np.zeros_like(params.head.weights),
        "head.bias": np.zeros_like(params.head.bias),
    }


def backward(params: ModelParams, ex: QAExample,
             grads: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Exact analytic gradients of loss(forward(ex)) for all trainable tensors.

    The greedy selections are treated as constants; differentiation runs
    through the selected similarities, the pooling softmax, the slot-weighted
    scores, the candidate projections, and the head.  The frozen answer
    projector is deliberately absent from the gradient set.
    """
    _, cache = forward(params, ex, return_cache=True)
    if grads is None:
        grads = zero_gradients(params)
    return backward_from_cache(params, ex, cache, grads)


def backward_from_cache(params: ModelParams, ex: QAExample, cache: ForwardCache,
                        grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    cfg = params.config
    probs = _softmax(cache.logits)
    g_logits = probs.copy()
    g_logits[ex.correct_index] -= 1.0  # dL/dlogit_c

    w_visual = params.head.weights[: cfg.m * cfg.d]
    w_answer = params.head.weights[cfg.m * cfg.d:]

    # Head: logit_c = visual . w_visual + feats_c . w_answer + bias.
    grads["head.weights"][: cfg.m * cfg.d] += g_logits.sum() * cache.visual
    grads["head.weights"][cfg.m * cfg.d:] += g_logits @ cache.candidate_feats
    grads["head.bias"][0] += g_logits.sum()

    # Candidate branch.
    for c, cand in enumerate(ex.candidates):
        d_feat = g_logits[c] * w_answer
        if isinstance(cand, CoordAnswer):
            coords = cache.candidate_inputs[c]
            grads["coord.weights"] += np.outer(coords, d_feat)
            grads["coord.bias"] += d_feat
        # TextAnswer flows only through the frozen projector: no gradient.

    # Visual branch (constant across candidates; g_visual sums to exact zeros
    # through the softmax but the chain rule below stays fully general).
    g_visual = g_logits.sum() * w_visual
    for i, res in enumerate(cache.results):
        sels = res.selections
        if not sels:
            continue
        d_v = g_visual[i * cfg.d:(i + 1) * cfg.d]
        alpha = cache.alphas[i]
        pool = cache.pools[i]
        sims = np.array([s.similarity for s in sels])
        d_score = float(d_v @ pool)
        d_pool = res.score * d_v

        patch_rows = cache.enhanced[[s.patch for s in sels]]  # (T, D)
        d_alpha = patch_rows @ d_pool  # (T,)
        d_sims = alpha * (d_alpha - float(alpha @ d_alpha))  # softmax jacobian
        d_sims += d_score * params.slot_weights[[s.t - 1 for s in sels]]
        for s in sels:  # score = sum_t w_t * sim_t
            grads["slot_weights"][s.t - 1] += d_score * s.similarity

        # Through the cosine into the selected prototype rows.
        for s, ds in zip(sels, d_sims):
            x = cache.enhanced[s.patch]
            slot = res.prototype_index * cfg.k + s.subpatch
            p = cache.projected[cache.token_map[slot]]
            nx = np.linalg.norm(x)
            npv = np.linalg.norm(p)
            d_p = ds * (x / (nx * npv) - s.similarity * p / (npv * npv))
            token = cache.question_tokens[cache.token_map[slot]]
            grads["question.weights"] += np.outer(token, d_p)
            grads["question.bias"] += d_p

    return grads


# -- training ----------------------------------------------------------------


class _Adam:
    """Adam with beta=(0.9, 0.999), eps=1e-8; one moment pair per tensor."""

    def __init__(self, shapes: dict[str, tuple], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}

    def update(self, grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Returns the per-tensor deltas to add to the parameters."""
        self.step += 1
        deltas = {}
        for key, g in grads.items():
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * g * g
            m_hat = self.m[key] / (1 - self.beta1 ** self.step)
            v_hat = self.v[key] / (1 - self.beta2 ** self.step)
            deltas[key] = -self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return deltas


def _trainable_shapes(params: ModelParams) -> dict[str, tuple]:
    return {key: g.shape for key, g in zero_gradients(params).items()}


def _apply_deltas(params: ModelParams, deltas: dict[str, np.ndarray]) -> None:
    params.question_projector.apply_delta(deltas["question.weights"],
                                          deltas["question.bias"])
    params.coord_projector.weights += deltas["coord.weights"]
    params.coord_projector.bias += deltas["coord.bias"]
    params.slot_weights += deltas["slot_weights"]
    params.head.weights += deltas["head.weights"]
    params.head.bias += deltas["head.bias"]


def train(
    params: ModelParams,
    dataset: list[QAExample],
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int | None = None,
) -> list[dict]:
    """Train in place; returns the per-epoch metric log.

    Deterministic given the seed: fixed shuffle order, fixed-order gradient
    accumulation within each batch (per-example losses summed), and a frozen
    answer-projector refresh at the configured epoch cadence.
    """
    if not dataset:
        raise ValueError("training requires a non-empty dataset")
    if batch_size is None:
        batch_size = params.config.batch_size
    rng = np.random.default_rng(seed)
    adam = _Adam(_trainable_shapes(params), lr)
    log: list[dict] = []

    for epoch in range(epochs):
        if epoch % params.config.refresh_every == 0:
            params.refresh_frozen()
        order = rng.permutation(len(dataset))
        losses = np.zeros(len(dataset))  # summed in dataset order, not visit order
        correct = 0
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            grads = zero_gradients(params)
            for idx in batch:  # fixed order keeps the reduction deterministic
                ex = dataset[int(idx)]
                logits, cache = forward(params, ex, return_cache=True)
                losses[int(idx)] = loss(logits, ex.correct_index)
                if int(np.argmax(logits)) == ex.correct_index:
                    correct += 1
                backward_from_cache(params, ex, cache, grads)
            if lr != 0.0:
                _apply_deltas(params, adam.update(grads))
        log.append({
            "epoch": epoch,
            "loss": float(losses.sum() / len(dataset)),
            "accuracy": correct / len(dataset),
        })
    return log


def evaluate(params: ModelParams, dataset: list[QAExample]) -> float:
    """Fraction of examples whose argmax logit is the correct candidate."""
    if not dataset:
        raise ValueError("evaluation requires a non-empty dataset")
    hits = sum(1 for ex in dataset if predict(params, ex) == ex.correct_index)
    return hits / len(dataset)


# -- checkpointing ------------------------------------------------------------


def save_model(params: ModelParams, out_dir: str | os.PathLike) -> None:
    """Write per-tensor checkpoint files plus config JSON into a directory."""
    os.makedirs(out_dir, exist_ok=True)
    cfg = params.config
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    save_checkpoint(os.path.join(out_dir, "question_projector.ckpt"), "linear",
                    params.question_projector.weights, params.question_projector.bias)
    save_checkpoint(os.path.join(out_dir, "coord_projector.ckpt"), "coord",
                    params.coord_projector.weights, params.coord_projector.bias)
    save_checkpoint(os.path.join(out_dir, "slot_weights.ckpt"), "slot_weights",
                    params.slot_weights.reshape(-1, 1), np.zeros(1))
    save_checkpoint(os.path.join(out_dir, "head.ckpt"), "fusion_head",
                    params.head.weights.reshape(-1, 1), params.head.bias)


def load_model(ckpt_dir: str | os.PathLike) -> ModelParams:
    """Reload a checkpoint directory; the frozen snapshot is re-derived."""
    config_path = os.path.join(ckpt_dir, "config.json")
    try:
        with open(config_path, "r", encoding="utf-8") as fh:
            cfg = RunConfig.from_dict(json.load(fh))
    except OSError as exc:
        raise FormatError(f"cannot read model config {config_path}: {exc}") from exc
    except (json.JSONDecodeError, ValueError, TypeError) as exc:
        raise FormatError(f"model config: {exc}") from exc

    def tensor(name: str, kind: str) -> tuple[np.ndarray, np.ndarray]:
        header, weights, bias = load_checkpoint(os.path.join(ckpt_dir, name))
        if header["kind"] != kind:
            raise FormatError(f"{name}: expected kind {kind!r}, got {header['kind']!r}")
        return weights, bias

    qw, qb = tensor("question_projector.ckpt", "linear")
    cw, cb = tensor("coord_projector.ckpt", "coord")
    sw, _ = tensor("slot_weights.ckpt", "slot_weights")
    hw, hb = tensor("head.ckpt", "fusion_head")
    return ModelParams(
        question_projector=LinearProjector(weights=qw, bias=qb),
        coord_projector=CoordProjector(weights=cw, bias=cb),
        slot_weights=sw.reshape(-1),
        head=FusionHead(weights=hw.reshape(-1), bias=hb),
        config=cfg,
    )
