"""Shared helpers for model verification: random examples, a straight-line
pipeline oracle, and finite-difference gradient checking with selection
stability control."""

from __future__ import annotations

import math

import numpy as np

from protomatch.bruteforce import match_reference
from protomatch.config import RunConfig
from protomatch.feature_io import (
    CoordAnswer,
    FeatureMap,
    QAExample,
    TextAnswer,
    TokenEmbeddings,
)
from protomatch.geometry import Box, GridSpec
from protomatch.model import ModelParams, backward, forward, loss, zero_gradients

from oracles import naive_matmul, relative_close


def gradcheck_config(seed: int = 0) -> RunConfig:
    return RunConfig(m=2, k=2, r=1, theta=0.5, seed=seed,
                     grid=GridSpec(64, 64, 16), d=6, d_text=8,
                     epochs=1, lr=0.01, batch_size=4)


def make_random_example(cfg: RunConfig, seed: int, pathway: str = "text",
                        n_candidates: int = 3) -> QAExample:
    rng = np.random.default_rng(seed)
    grid = cfg.grid
    features = FeatureMap(
        cls=rng.standard_normal(cfg.d).astype(np.float32),
        patches=rng.standard_normal((grid.n_patches, cfg.d)).astype(np.float32),
        grid=grid,
    )
    question = TokenEmbeddings(
        tokens=rng.standard_normal((cfg.m * cfg.k + 1, cfg.d_text)).astype(np.float32))
    if pathway == "text":
        candidates = [
            TextAnswer(tokens=TokenEmbeddings(
                tokens=rng.standard_normal((2, cfg.d_text)).astype(np.float32)))
            for _ in range(n_candidates)
        ]
    else:
        candidates = []
        for _ in range(n_candidates):
            x0 = int(rng.integers(0, grid.image_width - 16))
            y0 = int(rng.integers(0, grid.image_height - 16))
            candidates.append(CoordAnswer(box=Box(x0, y0, x0 + 16, y0 + 16)))
    return QAExample(
        image_id=f"rand{seed}",
        features=features,
        question=question,
        candidates=candidates,
        correct_index=int(rng.integers(n_candidates)),
    )


# -- straight-line pipeline oracle ---------------------------------------------


def pipeline_oracle(params: ModelParams, ex: QAExample) -> list[float]:
    """Flat reimplementation of the forward pass, list by list.

    Matching comes from the exhaustive reference matcher; everything else is
    spelled out with plain loops.
    """
    cfg = params.config
    grid = ex.features.grid

    x = [[float(p) - float(c) for p, c in zip(row, ex.features.cls)]
         for row in ex.features.patches]

    q_tokens = [[float(v) for v in row] for row in ex.question.tokens]
    q = naive_matmul(q_tokens, params.question_projector.weights.tolist(),
                     params.question_projector.bias.tolist())
    n_tok = len(q)

    visual = []
    for i in range(cfg.m):
        proto = []
        for j in range(cfg.k):
            slot = i * cfg.k + j
            proto.append(q[slot if slot < n_tok else slot % n_tok])
        sels, score = match_reference(x, proto, grid.rows, grid.cols, cfg.r,
                                      params.slot_weights.tolist())
        if not sels:
            visual.extend([0.0] * cfg.d)
            continue
        sims = [s for _, _, _, s in sels]
        peak = max(sims)
        exps = [math.exp(s - peak) for s in sims]
        total = sum(exps)
        pool = [0.0] * cfg.d
        for (_, patch, _, _), e in zip(sels, exps):
            for dim in range(cfg.d):
                pool[dim] += (e / total) * x[patch][dim]
        visual.extend(score * v for v in pool)

    logits = []
    for cand in ex.candidates:
        if isinstance(cand, CoordAnswer):
            b = cand.box
            coords = [b.x_min / grid.image_width, b.y_min / grid.image_height,
                      b.x_max / grid.image_width, b.y_max / grid.image_height]
            feat = naive_matmul([coords], params.coord_projector.weights.tolist(),
                                params.coord_projector.bias.tolist())[0]
        else:
            rows = [[float(v) for v in row] for row in cand.tokens.tokens]
            projected = naive_matmul(rows, params.frozen_text_projector.weights.tolist(),
                                     params.frozen_text_projector.bias.tolist())
            feat = [sum(col) / len(projected) for col in zip(*projected)]
        fused = visual + feat
        logit = float(params.head.bias[0])
        for value, weight in zip(fused, params.head.weights):
            logit += value * weight
        logits.append(logit)
    return logits


# -- finite differences --------------------------------------------------------


def trainable_arrays(params: ModelParams) -> dict[str, np.ndarray]:
    """Live views onto every trainable tensor, keyed like the gradient dict."""
    return {
        "question.weights": params.question_projector.weights,
        "question.bias": params.question_projector.bias,
        "coord.weights": params.coord_projector.weights,
        "coord.bias": params.coord_projector.bias,
        "slot_weights": params.slot_weights,
        "head.weights": params.head.weights,
        "head.bias": params.head.bias,
    }


def selections_signature(params: ModelParams, ex: QAExample) -> tuple:
    _, cache = forward(params, ex, return_cache=True)
    return tuple(
        (res.prototype_index, sel.t, sel.patch, sel.subpatch)
        for res in cache.results for sel in res.selections
    )


def finite_difference_check(params: ModelParams, ex: QAExample,
                            step: float = 1e-4, rtol: float = 1e-4,
                            atol: float = 1e-8):
    """Compare backward() against central differences for every tensor.

    Returns (ok, stable, failures).  stable=False means a probe changed the
    greedy selections, in which case the comparison is not meaningful and the
    caller should use a different example (perturbation-size control).
    """
    base_signature = selections_signature(params, ex)
    analytic = backward(params, ex)
    arrays = trainable_arrays(params)
    failures = []
    for name, arr in arrays.items():
        flat = arr.reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            if selections_signature(params, ex) != base_signature:
                flat[i] = orig
                return True, False, []
            up = loss(forward(params, ex), ex.correct_index)
            flat[i] = orig - step
            if selections_signature(params, ex) != base_signature:
                flat[i] = orig
                return True, False, []
            down = loss(forward(params, ex), ex.correct_index)
            flat[i] = orig
            fd = (up - down) / (2.0 * step)
            if not relative_close(float(grad_flat[i]), fd, rtol=rtol, atol=atol):
                failures.append((name, i, float(grad_flat[i]), fd))
    return not failures, True, failures
