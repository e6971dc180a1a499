"""Learnable projectors into the shared D-dimensional space.

Two kinds live here: the text projector (question tokens, and answer tokens
through a frozen copy) and the coordinate projector for grounding boxes.
Both are single affine maps.  Frozen projectors reject parameter updates
rather than ignoring them.

Checkpoint layout: one UTF-8 JSON header line {"kind","d_in","d_out","frozen"}
terminated by "\\n", then d_in*d_out + d_out little-endian float32 values
(weights row-major, then bias).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, FrozenParameterError
from .feature_io import TokenEmbeddings
from .geometry import Box, GridSpec


@dataclass(eq=False)
class LinearProjector:
    """Affine map R^{d_in} -> R^{d_out}: out = x @ weights + bias."""

    weights: np.ndarray  # (d_in, d_out) float64
    bias: np.ndarray  # (d_out,) float64
    frozen: bool = False

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ValueError("projector weights must be (d_in, d_out) with matching bias")

    @property
    def d_in(self) -> int:
        return self.weights.shape[0]

    @property
    def d_out(self) -> int:
        return self.weights.shape[1]

    def set_params(self, weights: np.ndarray, bias: np.ndarray) -> None:
        """Replace parameters; frozen projectors refuse."""
        if self.frozen:
            raise FrozenParameterError("cannot update parameters of a frozen projector")
        weights = np.asarray(weights, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weights.shape != self.weights.shape or bias.shape != self.bias.shape:
            raise ValueError("parameter shape mismatch")
        self.weights = weights.copy()
        self.bias = bias.copy()

    def apply_delta(self, d_weights: np.ndarray, d_bias: np.ndarray) -> None:
        """In-place additive update; frozen projectors refuse."""
        if self.frozen:
            raise FrozenParameterError("cannot update parameters of a frozen projector")
        self.weights += d_weights
        self.bias += d_bias


@dataclass(eq=False)
class CoordProjector:
    """Affine map from a normalized (x_min, y_min, x_max, y_max) in [0,1]^4 to R^D."""

    weights: np.ndarray  # (4, d) float64
    bias: np.ndarray  # (d,) float64

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.weights.shape[0] != 4:
            raise ValueError("coordinate projector weights must be (4, d)")
        if self.bias.shape != (self.weights.shape[1],):
            raise ValueError("coordinate projector bias must be (d,)")

    @property
    def d_out(self) -> int:
        return self.weights.shape[1]


def init_linear_projector(d_in: int, d_out: int, seed: int) -> LinearProjector:
    """Uniform(-1/sqrt(d_in), 1/sqrt(d_in)) weights, zero bias, deterministic."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(d_in)
    weights = rng.uniform(-scale, scale, size=(d_in, d_out))
    return LinearProjector(weights=weights, bias=np.zeros(d_out))


def init_coord_projector(d_out: int, seed: int) -> CoordProjector:
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(4)
    weights = rng.uniform(-scale, scale, size=(4, d_out))
    return CoordProjector(weights=weights, bias=np.zeros(d_out))


def project_tokens(p: LinearProjector, e: TokenEmbeddings) -> np.ndarray:
    """Project every token into the shared space; returns (L, d_out) float64."""
    tokens = e.tokens.astype(np.float64)
    if tokens.shape[1] != p.d_in:
        raise ValueError(f"token dimension {tokens.shape[1]} != projector d_in {p.d_in}")
    return tokens @ p.weights + p.bias


def freeze_copy(source: LinearProjector) -> LinearProjector:
    """Snapshot the source parameters into a frozen projector.

    Copy-at-call semantics: later updates to the source never propagate to
    the returned copy.
    """
    return LinearProjector(
        weights=source.weights.copy(), bias=source.bias.copy(), frozen=True
    )


def normalize_box(box: Box, grid: GridSpec) -> np.ndarray:
    """Box corners scaled by image width/height into [0, 1]^4."""
    if box.x_min < 0 or box.y_min < 0 or box.x_max > grid.image_width or box.y_max > grid.image_height:
        raise ValueError(
            f"box {box} outside image {grid.image_width}x{grid.image_height}"
        )
    return np.array(
        [
            box.x_min / grid.image_width,
            box.y_min / grid.image_height,
            box.x_max / grid.image_width,
            box.y_max / grid.image_height,
        ],
        dtype=np.float64,
    )


def project_coords(c: CoordProjector, box: Box, grid: GridSpec) -> np.ndarray:
    """Normalize the box to [0,1]^4 and affine-map it into the shared space."""
    return normalize_box(box, grid) @ c.weights + c.bias


# -- checkpoint I/O ----------------------------------------------------------


def save_checkpoint(path: str | os.PathLike, kind: str, weights: np.ndarray,
                    bias: np.ndarray, frozen: bool = False) -> None:
    weights = np.asarray(weights)
    bias = np.asarray(bias)
    header = {
        "kind": kind,
        "d_in": int(weights.shape[0]),
        "d_out": int(weights.shape[1]),
        "frozen": bool(frozen),
    }
    payload = np.concatenate(
        [np.ascontiguousarray(weights, dtype="<f4").reshape(-1),
         np.ascontiguousarray(bias, dtype="<f4")]
    )
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload.tobytes())


def load_checkpoint(path: str | os.PathLike) -> tuple[dict, np.ndarray, np.ndarray]:
    """Returns (header, weights (d_in, d_out) float64, bias (d_out,) float64)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    newline = raw.find(b"\n")
    if newline < 0:
        raise FormatError("checkpoint header: no newline-terminated JSON header")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint header: invalid JSON: {exc}") from exc
    for key in ("kind", "d_in", "d_out", "frozen"):
        if key not in header:
            raise FormatError(f"checkpoint header: missing field {key!r}")
    d_in, d_out = header["d_in"], header["d_out"]
    if not (isinstance(d_in, int) and isinstance(d_out, int) and d_in >= 1 and d_out >= 1):
        raise FormatError(f"checkpoint header: bad dimensions d_in={d_in} d_out={d_out}")
    count = d_in * d_out + d_out
    expected = count * 4
    actual = len(raw) - newline - 1
    if actual != expected:
        raise FormatError(
            f"checkpoint payload length: expected {expected} bytes, got {actual}"
        )
    values = np.frombuffer(raw, dtype="<f4", count=count, offset=newline + 1)
    if not np.isfinite(values).all():
        raise FormatError("checkpoint payload: non-finite value")
    weights = values[: d_in * d_out].reshape(d_in, d_out).astype(np.float64)
    bias = values[d_in * d_out:].astype(np.float64)
    return header, weights, bias


def save_projector(p: LinearProjector | CoordProjector, path: str | os.PathLike) -> None:
    if isinstance(p, CoordProjector):
        save_checkpoint(path, "coord", p.weights, p.bias, frozen=False)
    else:
        save_checkpoint(path, "linear", p.weights, p.bias, frozen=p.frozen)


def load_projector(path: str | os.PathLike) -> LinearProjector | CoordProjector:
    header, weights, bias = load_checkpoint(path)
    if header["kind"] == "coord":
        return CoordProjector(weights=weights, bias=bias)
    if header["kind"] == "linear":
        return LinearProjector(weights=weights, bias=bias, frozen=bool(header["frozen"]))
    raise FormatError(f"checkpoint header: unknown projector kind {header['kind']!r}")
