"""Writers for the consumer's on-disk interface.

The downstream artifact ingests three formats; this module emits them byte
for byte and nothing else (no shared code with the consumer):

  PVF1:  b"PVF1" + five little-endian uint32 [N, D, rows, cols, patch_size]
         + (N+1)*D little-endian float32, CLS row first, patches row-major.
  PVT1:  b"PVT1" + two little-endian uint32 [L, D_text]
         + L*D_text little-endian float32, one row per token.
  Manifest: UTF-8 JSON {"examples": [...]} with per-example feature paths,
         candidates ({"box": ...} or {"text_path": ...}), correct_index, and
         an optional half-open pixel evidence_box.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np


class ExportFormatError(ValueError):
    """Emitted data would violate the consumer's format contract."""


def write_pvf1(path: str | os.PathLike, cls: np.ndarray, patches: np.ndarray,
               rows: int, cols: int, patch_size: int) -> None:
    cls = np.ascontiguousarray(cls, dtype="<f4")
    patches = np.ascontiguousarray(patches, dtype="<f4")
    n, d = patches.shape
    if cls.shape != (d,):
        raise ExportFormatError(f"cls shape {cls.shape} != ({d},)")
    if n != rows * cols:
        raise ExportFormatError(f"{n} patch rows but grid is {rows}x{cols}")
    if not (np.isfinite(cls).all() and np.isfinite(patches).all()):
        raise ExportFormatError("non-finite feature values")
    with open(path, "wb") as fh:
        fh.write(b"PVF1")
        fh.write(struct.pack("<5I", n, d, rows, cols, patch_size))
        fh.write(cls.tobytes())
        fh.write(patches.tobytes())


def write_pvt1(path: str | os.PathLike, tokens: np.ndarray) -> None:
    tokens = np.ascontiguousarray(tokens, dtype="<f4")
    if tokens.ndim != 2 or tokens.shape[0] < 1:
        raise ExportFormatError(f"token matrix must be (L>=1, D), got {tokens.shape}")
    if not np.isfinite(tokens).all():
        raise ExportFormatError("non-finite token values")
    with open(path, "wb") as fh:
        fh.write(b"PVT1")
        fh.write(struct.pack("<2I", tokens.shape[0], tokens.shape[1]))
        fh.write(tokens.tobytes())


def xywh_to_half_open(box: dict, scale_x: float = 1.0, scale_y: float = 1.0,
                      width: int | None = None, height: int | None = None) -> dict:
    """Convert a source {x, y, width, height} box (top-left corner plus size)
    to the consumer's half-open {x_min, y_min, x_max, y_max}, optionally
    rescaled into the feature grid's pixel space and clamped to it."""
    try:
        x, y = float(box["x"]), float(box["y"])
        w, h = float(box["width"]), float(box["height"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ExportFormatError(f"grounding box must carry x/y/width/height: {box!r}") from exc
    if w <= 0 or h <= 0:
        raise ExportFormatError(f"grounding box has non-positive size: {box!r}")
    x_min = int(round(x * scale_x))
    y_min = int(round(y * scale_y))
    x_max = int(round((x + w) * scale_x))
    y_max = int(round((y + h) * scale_y))
    if width is not None:
        x_min = max(0, min(x_min, width - 1))
        x_max = max(x_min + 1, min(x_max, width))
    if height is not None:
        y_min = max(0, min(y_min, height - 1))
        y_max = max(y_min + 1, min(y_max, height))
    return {"x_min": x_min, "y_min": y_min, "x_max": x_max, "y_max": y_max}


def half_open_to_xywh(box: dict, scale_x: float = 1.0, scale_y: float = 1.0) -> dict:
    """Inverse of xywh_to_half_open for unclamped boxes (scale factors undo
    the forward rescale)."""
    return {
        "x": box["x_min"] / scale_x,
        "y": box["y_min"] / scale_y,
        "width": (box["x_max"] - box["x_min"]) / scale_x,
        "height": (box["y_max"] - box["y_min"]) / scale_y,
    }


def write_manifest(path: str | os.PathLike, entries: list[dict],
                   coordinate_convention: dict | None = None) -> None:
    doc: dict = {"examples": entries}
    if coordinate_convention is not None:
        doc["coordinate_convention"] = coordinate_convention
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
