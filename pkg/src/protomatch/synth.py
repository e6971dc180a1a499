"""Planted synthetic dataset generator.

Each example plants:
  (a) an evidence cluster of one or two adjacent patches (a rectangle, so the
      union region of the planted patches is a single box) whose enhanced
      features point along a per-example unit direction;
  (b) question tokens whose first m*k rows embed that direction in their
      leading D coordinates, so prototypes built through the reference
      projector align with the evidence patches;
  (c) text candidates where the correct one carries a fixed marker direction
      (in the token dimensions above D, untouched by the planting) plus the
      evidence direction, while distractors carry neither -- labels are
      linearly recoverable from candidate features alone by construction;
  (d) evidence_box = the union of the planted patch boxes.

Every example is self-checked after float32 rounding: the greedy matcher run
with the reference projector must put a planted patch into its top-k attended
set, and the top-1 patch must convert to a VLAS hit at theta against an
independent per-pixel rasterization oracle.  Failing examples are resampled
from a deterministic substream.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .errors import ValidationError
from .feature_io import (
    EnhancedFeatures,
    FeatureMap,
    TokenEmbeddings,
    save_features,
    save_tokens,
)
from .geometry import Box, GridSpec, patch_to_box
from .matching import match_all, top_k_patches
from .projection import LinearProjector, project_tokens
from .prototypes import PrototypeSet, build_prototypes

_MAX_ATTEMPTS = 50


def reference_projector(d_text: int, d: int) -> LinearProjector:
    """The canonical text projector: take the first D token coordinates.

    The generator plants question content in those coordinates, so matching
    through this projector recovers the planted alignment without training.
    """
    if d_text < d:
        raise ValueError(f"reference projector needs d_text >= d, got {d_text} < {d}")
    weights = np.zeros((d_text, d))
    weights[:d, :] = np.eye(d)
    return LinearProjector(weights=weights, bias=np.zeros(d))


def pixel_union_iou(boxes: list[Box], gt: Box, height: int, width: int) -> float:
    """Rasterization oracle: per-pixel union IoU on the image canvas."""
    canvas = np.zeros((height, width), dtype=bool)
    for b in boxes:
        canvas[b.y_min:b.y_max, b.x_min:b.x_max] = True
    gt_canvas = np.zeros((height, width), dtype=bool)
    gt_canvas[gt.y_min:gt.y_max, gt.x_min:gt.x_max] = True
    union = np.logical_or(canvas, gt_canvas).sum()
    inter = np.logical_and(canvas, gt_canvas).sum()
    return float(inter) / float(union)


@dataclass
class SynthExample:
    features: FeatureMap
    question: TokenEmbeddings
    candidate_tokens: list[TokenEmbeddings] | None
    candidate_boxes: list[Box] | None
    correct_index: int
    evidence_box: Box
    planted_patches: list[int]
    recovered: bool
    vlas1_hit: bool


@dataclass
class SynthStats:
    n_examples: int = 0
    recovered: int = 0
    vlas1_hits: int = 0
    resamples: int = 0

    @property
    def recovery_rate(self) -> float:
        return self.recovered / self.n_examples if self.n_examples else 0.0

    @property
    def vlas1_rate(self) -> float:
        return self.vlas1_hits / self.n_examples if self.n_examples else 0.0

    def to_dict(self) -> dict:
        return {
            "n_examples": self.n_examples,
            "recovery_rate": self.recovery_rate,
            "vlas1_conversion_rate": self.vlas1_rate,
            "resamples": self.resamples,
        }


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _plant_cluster(rng: np.random.Generator, grid: GridSpec) -> list[int]:
    """One patch, or two horizontally/vertically adjacent patches."""
    anchor = int(rng.integers(grid.n_patches))
    if rng.random() < 0.5:
        return [anchor]
    row, col = grid.row_col(anchor)
    steps = [(0, 1), (1, 0), (0, -1), (-1, 0)]
    rng.shuffle(steps)
    for dr, dc in steps:
        rr, cc = row + dr, col + dc
        if 0 <= rr < grid.rows and 0 <= cc < grid.cols:
            return sorted([anchor, rr * grid.cols + cc])
    return [anchor]


def _evidence_union_box(grid: GridSpec, patches: list[int]) -> Box:
    boxes = [patch_to_box(grid, p) for p in patches]
    return Box(
        min(b.x_min for b in boxes),
        min(b.y_min for b in boxes),
        max(b.x_max for b in boxes),
        max(b.y_max for b in boxes),
    )


def _make_candidates_text(rng: np.random.Generator, cfg: RunConfig,
                          evidence_dir: np.ndarray) -> tuple[list[TokenEmbeddings], int]:
    """Four 3-token candidates; the correct one carries the marker direction."""
    marker_dim = cfg.d_text - 1  # outside the planted [0, d) question band
    n_tokens = 3
    correct_index = int(rng.integers(4))
    candidates = []
    for c in range(4):
        noise = 0.1 * rng.standard_normal((n_tokens, cfg.d_text))
        noise[:, marker_dim] = 0.0
        tokens = noise
        if c == correct_index:
            tokens[:, marker_dim] += 2.0
            tokens[:, : cfg.d] += evidence_dir
        else:
            stray = _unit(rng, cfg.d)
            stray -= (stray @ evidence_dir) * evidence_dir  # decorrelate from evidence
            norm = np.linalg.norm(stray)
            if norm > 1e-9:
                tokens[:, : cfg.d] += stray / norm
        candidates.append(TokenEmbeddings(tokens=tokens.astype(np.float32)))
    return candidates, correct_index


def _make_candidates_coord(rng: np.random.Generator, cfg: RunConfig, grid: GridSpec,
                           evidence_box: Box) -> tuple[list[Box], int]:
    """Correct candidate = the evidence box; distractors are single far patches."""
    correct_index = int(rng.integers(4))
    candidates: list[Box] = []
    for c in range(4):
        if c == correct_index:
            candidates.append(evidence_box)
        else:
            patch = int(rng.integers(grid.n_patches))
            candidates.append(patch_to_box(grid, patch))
    return candidates, correct_index


def _generate_one(rng: np.random.Generator, cfg: RunConfig,
                  pathway: str) -> SynthExample:
    grid = cfg.grid
    d = cfg.d
    planted = _plant_cluster(rng, grid)
    evidence_dir = _unit(rng, d)

    enhanced = 1.0 * rng.standard_normal((grid.n_patches, d))
    for p in planted:
        enhanced[p] = 4.0 * evidence_dir + 0.05 * rng.standard_normal(d)

    cls = 0.5 * rng.standard_normal(d)
    features = FeatureMap(
        cls=cls.astype(np.float32),
        patches=(enhanced + cls).astype(np.float32),
        grid=grid,
    )

    n_tokens = cfg.m * cfg.k + 2
    tokens = 0.05 * rng.standard_normal((n_tokens, cfg.d_text))
    tokens[: cfg.m * cfg.k, :d] += evidence_dir
    question = TokenEmbeddings(tokens=tokens.astype(np.float32))

    evidence_box = _evidence_union_box(grid, planted)
    if pathway == "text":
        cand_tokens, correct_index = _make_candidates_text(rng, cfg, evidence_dir)
        cand_boxes = None
    elif pathway == "coord":
        cand_boxes, correct_index = _make_candidates_coord(rng, cfg, grid, evidence_box)
        cand_tokens = None
    else:
        raise ValueError(f"unknown pathway {pathway!r}")

    # Self-check on the float32-rounded data, exactly as a loader would see it.
    ref = reference_projector(cfg.d_text, d)
    projected = project_tokens(ref, question)
    protos = PrototypeSet(
        protos=build_prototypes(projected, cfg.m, cfg.k),
        slot_weights=np.full(cfg.k, 1.0 / cfg.k),
        m=cfg.m,
        k=cfg.k,
    )
    x = features.patches.astype(np.float64) - features.cls.astype(np.float64)
    results = match_all(EnhancedFeatures(x), protos, grid, cfg.r)
    top = top_k_patches(results, cfg.k)
    recovered = any(p in planted for p in top)
    top1_box = patch_to_box(grid, top[0]) if top else None
    vlas1_hit = (
        top1_box is not None
        and pixel_union_iou([top1_box], evidence_box,
                            grid.image_height, grid.image_width) >= cfg.theta
    )

    return SynthExample(
        features=features,
        question=question,
        candidate_tokens=cand_tokens,
        candidate_boxes=cand_boxes,
        correct_index=correct_index,
        evidence_box=evidence_box,
        planted_patches=planted,
        recovered=recovered,
        vlas1_hit=vlas1_hit,
    )


def generate_split(out_dir: str | os.PathLike, n_examples: int, cfg: RunConfig,
                   split_tag: int, pathway: str = "text",
                   stats: SynthStats | None = None) -> SynthStats:
    """Write n_examples feature/token files plus a manifest into out_dir."""
    if stats is None:
        stats = SynthStats()
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for idx in range(n_examples):
        example = None
        for attempt in range(_MAX_ATTEMPTS):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=(cfg.seed, split_tag, idx, attempt))
            )
            example = _generate_one(rng, cfg, pathway)
            if example.recovered and example.vlas1_hit:
                break
            stats.resamples += 1
        assert example is not None
        stats.n_examples += 1
        stats.recovered += int(example.recovered)
        stats.vlas1_hits += int(example.vlas1_hit)

        image_id = f"ex{split_tag}{idx:04d}"
        features_name = f"{image_id}.pvf"
        question_name = f"{image_id}_q.pvt"
        save_features(example.features, os.path.join(out_dir, features_name))
        save_tokens(example.question, os.path.join(out_dir, question_name))
        candidates = []
        if example.candidate_tokens is not None:
            for c, tok in enumerate(example.candidate_tokens):
                cand_name = f"{image_id}_c{c}.pvt"
                save_tokens(tok, os.path.join(out_dir, cand_name))
                candidates.append({"text_path": cand_name})
        else:
            candidates = [{"box": b.to_dict()} for b in example.candidate_boxes]
        entries.append({
            "image_id": image_id,
            "features_path": features_name,
            "question_path": question_name,
            "candidates": candidates,
            "correct_index": example.correct_index,
            "evidence_box": example.evidence_box.to_dict(),
            "planted_patches": example.planted_patches,
        })

    manifest = {"examples": entries}
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return stats


def generate_dataset(out_dir: str | os.PathLike, n_train: int, n_test: int,
                     cfg: RunConfig, pathway: str = "text") -> SynthStats:
    """Train/test splits plus the generator config and self-check report."""
    if cfg.d_text <= cfg.d:
        raise ValidationError(
            f"synthetic generator needs d_text > d, got d_text={cfg.d_text} d={cfg.d}"
        )
    os.makedirs(out_dir, exist_ok=True)
    stats = SynthStats()
    generate_split(os.path.join(out_dir, "train"), n_train, cfg, 0, pathway, stats)
    generate_split(os.path.join(out_dir, "test"), n_test, cfg, 1, pathway, stats)
    with open(os.path.join(out_dir, "synth_config.json"), "w", encoding="utf-8") as fh:
        json.dump({"config": cfg.to_dict(), "pathway": pathway}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "synth_report.json"), "w", encoding="utf-8") as fh:
        json.dump(stats.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return stats
