"""Run configuration shared by the model, the generator, and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .geometry import GridSpec

# Full-scale defaults: 224x224 images with 16x16 patches, m=10 prototypes of
# k=3 sub-patches, adjacency radius 3, alignment threshold 0.5, Adam at
# lr=1e-4 with batch size 64 for 200 epochs.
_FULL_GRID = GridSpec(224, 224, 16)


@dataclass(frozen=True)
class RunConfig:
    m: int = 10
    k: int = 3
    r: int = 3
    theta: float = 0.5
    seed: int = 0
    grid: GridSpec = _FULL_GRID
    d: int = 768
    d_text: int = 768
    epochs: int = 200
    lr: float = 1e-4
    batch_size: int = 64
    refresh_every: int = 1  # frozen-projector refresh cadence, in epochs

    def __post_init__(self) -> None:
        for name in ("m", "k", "r", "seed", "d", "d_text", "epochs", "batch_size",
                     "refresh_every"):
            value = getattr(self, name)
            if not isinstance(value, int):
                raise ValueError(f"{name} must be an integer, got {value!r}")
        if min(self.m, self.k, self.d, self.d_text, self.batch_size, self.refresh_every) < 1:
            raise ValueError("m, k, d, d_text, batch_size, refresh_every must be >= 1")
        if self.r < 0 or self.epochs < 0:
            raise ValueError("r and epochs must be >= 0")
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must be in (0, 1), got {self.theta}")

    @property
    def d_fused(self) -> int:
        return self.m * self.d + self.d

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "k": self.k,
            "r": self.r,
            "theta": self.theta,
            "seed": self.seed,
            "grid": [self.grid.image_height, self.grid.image_width, self.grid.patch_size],
            "d": self.d,
            "d_text": self.d_text,
            "epochs": self.epochs,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "refresh_every": self.refresh_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        kwargs = dict(d)
        if "grid" in kwargs:
            h, w, p = kwargs["grid"]
            kwargs["grid"] = GridSpec(int(h), int(w), int(p))
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in kwargs.items() if k in known})

    def with_overrides(self, **kwargs) -> "RunConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


def desk_config(seed: int = 0) -> RunConfig:
    """Small configuration that exercises every code path quickly: an 8x8
    patch grid (N=64), D=16, D_text=24, m=4 prototypes of k=3 sub-patches."""
    return RunConfig(
        m=4,
        k=3,
        r=3,
        theta=0.5,
        seed=seed,
        grid=GridSpec(128, 128, 16),
        d=16,
        d_text=24,
        epochs=50,
        lr=0.05,
        batch_size=16,
    )
