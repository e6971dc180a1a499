"""Visual-linguistic alignment scoring over a prediction set.

An example counts as a hit when the IoU between the union region of its
attended patch boxes and the ground-truth evidence box clears the threshold
theta.  The comparison is >= by default so that fixtures constructed to land
exactly on the threshold behave deterministically; strict > is available as
a flag.  The emitted report always states which top-K reading produced the
attended set ("k_semantics").
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from .geometry import Box, union_box_region_iou

# (qa_id, attended patch boxes in rank order, ground-truth box)
VlasExample = tuple[str, Sequence[Box], Box]


@dataclass(frozen=True)
class AlignmentRecord:
    """Per-example alignment outcome; iou is recomputable from the boxes."""

    qa_id: str
    attended_patches: tuple[Box, ...]
    gt_box: Box
    iou: float
    hit: bool

    def to_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "attended_patches": [b.to_dict() for b in self.attended_patches],
            "gt_box": self.gt_box.to_dict(),
            "iou": self.iou,
            "hit": self.hit,
            "no_attended": not self.attended_patches,
        }


@dataclass(frozen=True)
class VlasReport:
    theta: float
    k: int
    n_qa: int
    hits: int
    records: tuple[AlignmentRecord, ...]
    k_semantics: str = "top_k_patches"

    @property
    def score(self) -> float:
        return self.hits / self.n_qa

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "k": self.k,
            "n_qa": self.n_qa,
            "hits": self.hits,
            "score": self.score,
            "k_semantics": self.k_semantics,
            "records": [r.to_dict() for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def per_example_iou_dump(examples: Sequence[VlasExample], theta: float, k: int,
                         strict: bool = False) -> list[AlignmentRecord]:
    """One AlignmentRecord per example, in input order.

    The attended list is truncated to its first k boxes (it arrives in match
    rank order).  An example with no attended patches is a miss with iou 0.
    """
    if not examples:
        raise ValueError("need at least one example")
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must be in (0, 1), got {theta}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    records = []
    for qa_id, attended, gt in examples:
        kept = tuple(attended[:k])
        if kept:
            value = union_box_region_iou(kept, gt)
            hit = value > theta if strict else value >= theta
        else:
            value, hit = 0.0, False
        records.append(AlignmentRecord(qa_id=qa_id, attended_patches=kept,
                                       gt_box=gt, iou=value, hit=hit))
    return records


def vlas(examples: Sequence[VlasExample], theta: float, k: int,
         strict: bool = False, k_semantics: str = "top_k_patches") -> VlasReport:
    """Fraction of examples whose attended-region IoU clears theta."""
    records = per_example_iou_dump(examples, theta, k, strict=strict)
    hits = sum(1 for r in records if r.hit)
    return VlasReport(theta=theta, k=k, n_qa=len(records), hits=hits,
                      records=tuple(records), k_semantics=k_semantics)
