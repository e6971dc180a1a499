"""Export jobs: run the backbones and emit PVF1/PVT1 files plus a manifest.

One PVF1 file is written per image (CLS row first, patch rows in grid order;
DeiT's distillation token is dropped).  One PVT1 file is written per question
and per textual answer candidate, holding token-level embeddings (never
pooled).  Grounding boxes are converted from the source x/y/width/height
convention into half-open pixel boxes in the resized feature-grid space, and
the conversion is recorded in the manifest.  QA pairs without a grounding box
are emitted without an evidence box (valid for accuracy-only evaluation).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

from .backbones import (
    DEFAULT_TEXT,
    DEFAULT_VISION,
    TextBackbone,
    VisionBackbone,
    load_text_backbone,
    load_vision_backbone,
)
from .formats import ExportFormatError, write_manifest, write_pvf1, write_pvt1

# channel normalization applied before the vision backbone
_PIXEL_MEAN = 0.5
_PIXEL_STD = 0.5


class AnnotationError(ValueError):
    """The QA annotation source is malformed."""


@dataclass
class ExportJob:
    images_dir: str
    qa_json: str
    out_dir: str
    vision_spec: str = DEFAULT_VISION
    text_spec: str = DEFAULT_TEXT
    layer: int = -1  # hidden-state index; -1 = final layer
    expect_d: int | None = None  # declared feature dimension to enforce
    vision: VisionBackbone | None = field(default=None, repr=False)
    text: TextBackbone | None = field(default=None, repr=False)

    def backbones(self) -> tuple[VisionBackbone, TextBackbone]:
        if self.vision is None:
            self.vision = load_vision_backbone(self.vision_spec)
        if self.text is None:
            self.text = load_text_backbone(self.text_spec)
        if self.expect_d is not None and self.vision.hidden_size != self.expect_d:
            raise ExportFormatError(
                f"vision backbone emits D={self.vision.hidden_size}, "
                f"declared --expect-d {self.expect_d}")
        return self.vision, self.text


def _load_annotations(job: ExportJob) -> dict:
    try:
        with open(job.qa_json, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise AnnotationError(f"cannot read annotations {job.qa_json}: {exc}") from exc
    if not isinstance(doc.get("images"), list) or not isinstance(doc.get("qa_pairs"), list):
        raise AnnotationError("annotations must carry 'images' and 'qa_pairs' lists")
    return doc


def _pixels(path: str, image_size: int) -> tuple[torch.Tensor, tuple[int, int]]:
    try:
        with Image.open(path) as img:
            original = img.size  # (width, height)
            resized = img.convert("RGB").resize((image_size, image_size),
                                                Image.Resampling.BILINEAR)
    except OSError as exc:
        raise AnnotationError(f"cannot read image {path}: {exc}") from exc
    array = np.asarray(resized, dtype=np.float32) / 255.0
    array = (array - _PIXEL_MEAN) / _PIXEL_STD
    tensor = torch.from_numpy(array).permute(2, 0, 1).unsqueeze(0)
    return tensor, original


def _hidden_rows(model: torch.nn.Module, layer: int, **inputs) -> torch.Tensor:
    with torch.no_grad():
        out = model(**inputs, output_hidden_states=True)
    states = out.hidden_states
    if not -len(states) <= layer < len(states):
        raise ExportFormatError(f"--layer {layer} out of range for {len(states)} "
                                "hidden states")
    return states[layer][0]


def export_image_features(job: ExportJob) -> dict[str, dict]:
    """One PVF1 per image; returns per-image metadata keyed by image_id."""
    vision, _ = job.backbones()
    doc = _load_annotations(job)
    os.makedirs(job.out_dir, exist_ok=True)
    exported = {}
    for entry in doc["images"]:
        image_id = entry.get("image_id")
        if not image_id or "path" not in entry:
            raise AnnotationError(f"image entry missing image_id/path: {entry!r}")
        pixels, original = _pixels(os.path.join(job.images_dir, entry["path"]),
                                   vision.image_size)
        rows = _hidden_rows(vision.model, job.layer, pixel_values=pixels)
        n_special = rows.shape[0] - vision.n_patches  # CLS (+ distillation for DeiT)
        if n_special < 1:
            raise ExportFormatError(
                f"{image_id}: backbone emitted {rows.shape[0]} rows for "
                f"{vision.n_patches} patches")
        cls = rows[0].numpy()
        patches = rows[n_special:].numpy()
        filename = f"{image_id}.pvf"
        write_pvf1(os.path.join(job.out_dir, filename), cls, patches,
                   vision.grid_side, vision.grid_side, vision.patch_size)
        exported[image_id] = {
            "features_path": filename,
            "original_size": list(original),
            "scale_x": vision.image_size / original[0],
            "scale_y": vision.image_size / original[1],
        }
    return exported


def _embed_text(text_backbone: TextBackbone, layer: int, text: str,
                what: str) -> np.ndarray:
    if not isinstance(text, str) or not text.strip():
        raise AnnotationError(f"{what}: empty text cannot be embedded (no tokens)")
    inputs = text_backbone.tokenizer(text, return_tensors="pt")
    rows = _hidden_rows(text_backbone.model, layer, **inputs)
    return rows.numpy()


def export_qa(job: ExportJob, image_meta: dict[str, dict]) -> str:
    """PVT1 files for questions/text candidates plus the manifest; returns
    the manifest path."""
    vision, text = job.backbones()
    doc = _load_annotations(job)
    entries = []
    for qa in doc["qa_pairs"]:
        qa_id = qa.get("qa_id")
        image_id = qa.get("image_id")
        if not qa_id or image_id not in image_meta:
            raise AnnotationError(f"qa entry {qa_id!r}: unknown image {image_id!r}")
        meta = image_meta[image_id]

        question_file = f"{qa_id}_q.pvt"
        write_pvt1(os.path.join(job.out_dir, question_file),
                   _embed_text(text, job.layer, qa.get("question"), f"{qa_id} question"))

        raw_candidates = qa.get("candidates")
        if not isinstance(raw_candidates, list) or not raw_candidates:
            raise AnnotationError(f"{qa_id}: candidates must be a non-empty list")
        candidates = []
        for c, cand in enumerate(raw_candidates):
            if isinstance(cand, str):
                cand_file = f"{qa_id}_c{c}.pvt"
                write_pvt1(os.path.join(job.out_dir, cand_file),
                           _embed_text(text, job.layer, cand, f"{qa_id} candidate {c}"))
                candidates.append({"text_path": cand_file})
            elif isinstance(cand, dict):
                candidates.append({"box": _convert_box(cand, meta, vision)})
            else:
                raise AnnotationError(f"{qa_id}: candidate {c} must be text or a box")

        answer_index = qa.get("answer_index")
        if not isinstance(answer_index, int) or not 0 <= answer_index < len(candidates):
            raise AnnotationError(f"{qa_id}: bad answer_index {answer_index!r}")

        entry = {
            "image_id": qa_id,  # one manifest row per QA pair
            "features_path": meta["features_path"],
            "question_path": question_file,
            "candidates": candidates,
            "correct_index": answer_index,
        }
        if qa.get("grounding_box") is not None:
            entry["evidence_box"] = _convert_box(qa["grounding_box"], meta, vision)
        entries.append(entry)

    manifest_path = os.path.join(job.out_dir, "manifest.json")
    write_manifest(manifest_path, entries, coordinate_convention={
        "source": doc.get("box_convention", "xywh_top_left"),
        "converted": "half_open_xyxy",
        "resized_to": [vision.image_size, vision.image_size],
    })
    return manifest_path


def _convert_box(cand: dict, meta: dict, vision: VisionBackbone) -> dict:
    from .formats import xywh_to_half_open

    return xywh_to_half_open(cand, scale_x=meta["scale_x"], scale_y=meta["scale_y"],
                             width=vision.image_size, height=vision.image_size)


def run_export(job: ExportJob) -> str:
    """Full export: image features, then QA embeddings and the manifest."""
    image_meta = export_image_features(job)
    return export_qa(job, image_meta)
