"""Feature/annotation file formats, ingestion, and CLS-difference enhancement.

Binary container "PVF1" (per-image features):

    bytes 0..3    magic b"PVF1"
    bytes 4..23   five little-endian uint32 fields: N, D, rows, cols, patch_size
    remainder     (N+1) * D little-endian IEEE-754 float32 values,
                  CLS row first, then the N patch rows in row-major grid order

Binary container "PVT1" (token embeddings):

    bytes 0..3    magic b"PVT1"
    bytes 4..11   two little-endian uint32 fields: L, D_text
    remainder     L * D_text little-endian float32 values, one row per token

Manifests are UTF-8 JSON:

    {"examples": [{"image_id": str,
                   "features_path": str,
                   "question_path": str,
                   "candidates": [{"box": {...}} | {"text_path": str}, ...],
                   "correct_index": int,
                   "evidence_box": {...}?   # optional
                  }, ...]}

Paths are resolved relative to the manifest's directory.  Non-finite values
are rejected at load; nothing is sanitized silently.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import FormatError, ValidationError
from .geometry import Box, GridSpec

_PVF_MAGIC = b"PVF1"
_PVT_MAGIC = b"PVT1"
_PVF_HEADER = struct.Struct("<5I")
_PVT_HEADER = struct.Struct("<2I")


@dataclass(eq=False)
class FeatureMap:
    """Per-image CLS vector plus N patch vectors of dimension D."""

    cls: np.ndarray  # (D,)
    patches: np.ndarray  # (N, D)
    grid: GridSpec

    def __post_init__(self) -> None:
        self.cls = np.asarray(self.cls)
        self.patches = np.asarray(self.patches)
        if self.cls.ndim != 1 or self.patches.ndim != 2:
            raise ValidationError("cls must be 1-D and patches 2-D")
        if self.patches.shape[1] != self.cls.shape[0]:
            raise ValidationError(
                f"patch dimension {self.patches.shape[1]} != cls dimension {self.cls.shape[0]}"
            )
        if self.patches.shape[0] != self.grid.n_patches:
            raise ValidationError(
                f"patch count {self.patches.shape[0]} != grid rows*cols {self.grid.n_patches}"
            )
        if not np.isfinite(self.cls).all() or not np.isfinite(self.patches).all():
            raise ValidationError("feature map contains non-finite values")

    @property
    def n(self) -> int:
        return self.patches.shape[0]

    @property
    def d(self) -> int:
        return self.cls.shape[0]


@dataclass(eq=False)
class EnhancedFeatures:
    """Patch features after CLS subtraction: patches[n] = raw[n] - cls."""

    patches: np.ndarray  # (N, D) float64


@dataclass(eq=False)
class TokenEmbeddings:
    """A sequence of L token vectors of dimension D_text."""

    tokens: np.ndarray  # (L, D_text)

    def __post_init__(self) -> None:
        self.tokens = np.asarray(self.tokens)
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise ValidationError("token embeddings must be a non-empty 2-D array")
        if not np.isfinite(self.tokens).all():
            raise ValidationError("token embeddings contain non-finite values")

    def __len__(self) -> int:
        return self.tokens.shape[0]


@dataclass(frozen=True)
class CoordAnswer:
    """Type 1 candidate: a coordinate box fed through the coordinate projector."""

    box: Box

    pathway = "coord"


@dataclass(eq=False)
class TextAnswer:
    """Type 2 candidate: token embeddings fed through the frozen shared projector."""

    tokens: TokenEmbeddings

    pathway = "text"


AnswerInput = Union[CoordAnswer, TextAnswer]


@dataclass(eq=False)
class QAExample:
    image_id: str
    features: FeatureMap
    question: TokenEmbeddings
    candidates: list[AnswerInput]
    correct_index: int
    evidence_box: Box | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.correct_index < len(self.candidates):
            raise ValidationError(
                f"example {self.image_id}: correct_index {self.correct_index} out of "
                f"range for {len(self.candidates)} candidates"
            )
        pathways = {c.pathway for c in self.candidates}
        if len(pathways) != 1:
            raise ValidationError(
                f"example {self.image_id}: candidates mix pathway types {sorted(pathways)}"
            )

    @property
    def pathway(self) -> str:
        return self.candidates[0].pathway


def enhance(f: FeatureMap) -> EnhancedFeatures:
    """CLS-difference enhancement: subtract the CLS vector from every patch.

    Output is float64 regardless of the stored dtype so that downstream
    similarity and gradient arithmetic runs at full precision.
    """
    patches = f.patches.astype(np.float64) - f.cls.astype(np.float64)
    return EnhancedFeatures(patches=patches)


def _f32(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x), dtype="<f4")


def save_features(f: FeatureMap, path: str | os.PathLike) -> None:
    """Write a FeatureMap as PVF1.  Float32 inputs round-trip bit-for-bit."""
    grid = f.grid
    header = _PVF_HEADER.pack(f.n, f.d, grid.rows, grid.cols, grid.patch_size)
    payload = np.concatenate([_f32(f.cls)[None, :], _f32(f.patches)], axis=0)
    with open(path, "wb") as fh:
        fh.write(_PVF_MAGIC)
        fh.write(header)
        fh.write(payload.tobytes())


def _read_payload(raw: bytes, offset: int, count: int, what: str) -> np.ndarray:
    expected = count * 4
    actual = len(raw) - offset
    if actual != expected:
        raise FormatError(
            f"{what} payload length: expected {expected} bytes for {count} floats, got {actual}"
        )
    values = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    if not np.isfinite(values).all():
        raise FormatError(f"{what} payload: non-finite value at flat index "
                          f"{int(np.flatnonzero(~np.isfinite(values))[0])}")
    return values


def load_features(path: str | os.PathLike) -> FeatureMap:
    """Parse a PVF1 file.  Raises FormatError naming the offending field."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read feature file {path}: {exc}") from exc
    if raw[:4] != _PVF_MAGIC:
        raise FormatError(f"bad magic: expected {_PVF_MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < 4 + _PVF_HEADER.size:
        raise FormatError("header: file truncated before the 5 uint32 header fields")
    n, d, rows, cols, patch_size = _PVF_HEADER.unpack_from(raw, 4)
    if d < 1:
        raise FormatError(f"header D: must be >= 1, got {d}")
    if rows < 1 or cols < 1 or patch_size < 1:
        raise FormatError(f"header grid: rows={rows} cols={cols} patch_size={patch_size} must be >= 1")
    if n != rows * cols:
        raise FormatError(f"header N: {n} != rows*cols = {rows * cols}")
    values = _read_payload(raw, 4 + _PVF_HEADER.size, (n + 1) * d, "PVF1")
    values = values.reshape(n + 1, d)
    grid = GridSpec(rows * patch_size, cols * patch_size, patch_size)
    return FeatureMap(cls=values[0].copy(), patches=values[1:].copy(), grid=grid)


def save_tokens(t: TokenEmbeddings, path: str | os.PathLike) -> None:
    """Write token embeddings as PVT1."""
    arr = _f32(t.tokens)
    with open(path, "wb") as fh:
        fh.write(_PVT_MAGIC)
        fh.write(_PVT_HEADER.pack(arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def load_tokens(path: str | os.PathLike) -> TokenEmbeddings:
    """Parse a PVT1 file.  Raises FormatError naming the offending field."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read token file {path}: {exc}") from exc
    if raw[:4] != _PVT_MAGIC:
        raise FormatError(f"bad magic: expected {_PVT_MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < 4 + _PVT_HEADER.size:
        raise FormatError("header: file truncated before the 2 uint32 header fields")
    length, d_text = _PVT_HEADER.unpack_from(raw, 4)
    if length < 1:
        raise FormatError(f"header L: token count must be >= 1, got {length}")
    if d_text < 1:
        raise FormatError(f"header D_text: must be >= 1, got {d_text}")
    values = _read_payload(raw, 4 + _PVT_HEADER.size, length * d_text, "PVT1")
    return TokenEmbeddings(tokens=values.reshape(length, d_text).copy())


def _manifest_example(entry: dict, base: str, position: int) -> QAExample:
    if not isinstance(entry, dict):
        raise ValidationError(f"manifest example #{position} is not an object")
    image_id = entry.get("image_id")
    if not isinstance(image_id, str) or not image_id:
        raise ValidationError(f"manifest example #{position}: missing or empty image_id")

    def resolve(key: str) -> str:
        rel = entry.get(key)
        if not isinstance(rel, str):
            raise ValidationError(f"example {image_id}: missing {key}")
        path = os.path.join(base, rel)
        if not os.path.isfile(path):
            raise ValidationError(f"example {image_id}: {key} {rel!r} does not exist")
        return path

    try:
        features = load_features(resolve("features_path"))
        question = load_tokens(resolve("question_path"))
    except FormatError as exc:
        raise FormatError(f"example {image_id}: {exc}") from exc

    raw_candidates = entry.get("candidates")
    if not isinstance(raw_candidates, list) or not raw_candidates:
        raise ValidationError(f"example {image_id}: candidates must be a non-empty list")
    candidates: list[AnswerInput] = []
    for i, cand in enumerate(raw_candidates):
        if not isinstance(cand, dict):
            raise ValidationError(f"example {image_id}: candidate {i} is not an object")
        if "box" in cand:
            try:
                candidates.append(CoordAnswer(box=Box.from_dict(cand["box"])))
            except ValueError as exc:
                raise ValidationError(f"example {image_id}: candidate {i}: {exc}") from exc
        elif "text_path" in cand:
            rel = cand["text_path"]
            if not isinstance(rel, str):
                raise ValidationError(f"example {image_id}: candidate {i}: text_path must be a string")
            path = os.path.join(base, rel)
            if not os.path.isfile(path):
                raise ValidationError(f"example {image_id}: candidate {i}: {rel!r} does not exist")
            try:
                candidates.append(TextAnswer(tokens=load_tokens(path)))
            except FormatError as exc:
                raise FormatError(f"example {image_id}: candidate {i}: {exc}") from exc
        else:
            raise ValidationError(
                f"example {image_id}: candidate {i} must carry either 'box' or 'text_path'"
            )

    correct_index = entry.get("correct_index")
    if not isinstance(correct_index, int) or isinstance(correct_index, bool):
        raise ValidationError(f"example {image_id}: correct_index must be an integer")

    evidence_box = None
    if entry.get("evidence_box") is not None:
        try:
            evidence_box = Box.from_dict(entry["evidence_box"])
        except ValueError as exc:
            raise ValidationError(f"example {image_id}: evidence_box: {exc}") from exc

    return QAExample(
        image_id=image_id,
        features=features,
        question=question,
        candidates=candidates,
        correct_index=correct_index,
        evidence_box=evidence_box,
    )


def load_dataset(manifest_path: str | os.PathLike) -> list[QAExample]:
    """Load every example referenced by a manifest, in manifest order."""
    try:
        with open(manifest_path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read manifest {manifest_path}: {exc}") from exc
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"manifest is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("examples"), list):
        raise FormatError("manifest must be an object with an 'examples' list")
    base = os.path.dirname(os.path.abspath(os.fspath(manifest_path)))
    return [_manifest_example(entry, base, i) for i, entry in enumerate(doc["examples"])]
