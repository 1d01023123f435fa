"""Deterministic patch-sampling geometry.

Every image is rescaled so its smaller side hits a fixed target, then a
regular grid of fixed-size patches is slid across it.  Multiple scales
repeat the same grid on geometrically shrinking targets; patch boxes are
always reported in source-image pixels so detectors pooled across scales
agree on where a patch sits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class SamplingSpec:
    """Grid parameters: smaller-side target, patch size, stride, scales."""

    resize_to: int = 256
    patch: int = 128
    stride: int = 32
    n_scales: int = 3

    def validate(self) -> None:
        if self.resize_to < 1:
            raise ConfigError(f"resize_to must be positive, got {self.resize_to}")
        if self.patch < 1:
            raise ConfigError(f"patch must be positive, got {self.patch}")
        if not 1 <= self.stride <= self.patch:
            raise ConfigError(
                f"stride must be in [1, patch]; got stride={self.stride}, "
                f"patch={self.patch}"
            )
        if self.n_scales < 1:
            raise ConfigError(f"need at least 1 scale, got {self.n_scales}")

    def scale_sizes(self) -> list[int]:
        """Smaller-side targets per scale: geometric sqrt(2) shrink steps."""
        return [
            int(round(self.resize_to / math.sqrt(2) ** i))
            for i in range(self.n_scales)
        ]


def resized_dims(width: int, height: int, smaller: int) -> tuple[int, int]:
    """(width, height) after scaling the smaller side to ``smaller``."""
    if width <= 0 or height <= 0:
        raise ValueError(f"bad image size {width}x{height}")
    if width <= height:
        return smaller, max(1, int(round(height * smaller / width)))
    return max(1, int(round(width * smaller / height))), smaller


def grid_positions(
    width: int, height: int, patch: int, stride: int
) -> list[tuple[int, int]]:
    """Top-left corners of a row-major patch grid; empty when nothing fits."""
    if width < patch or height < patch:
        return []
    xs = range(0, width - patch + 1, stride)
    ys = range(0, height - patch + 1, stride)
    return [(x, y) for y in ys for x in xs]


def source_bbox(
    x: int,
    y: int,
    patch: int,
    resized: tuple[int, int],
    source: tuple[int, int],
) -> tuple[int, int, int, int]:
    """Map a patch box from resized-image pixels back to source pixels."""
    rw, rh = resized
    sw, sh = source
    fx, fy = sw / rw, sh / rh
    return (
        int(round(x * fx)),
        int(round(y * fy)),
        max(1, int(round(patch * fx))),
        max(1, int(round(patch * fy))),
    )


@dataclass(frozen=True)
class PlannedPatch:
    """One grid cell: where to crop in resized pixels, reported in source."""

    scale_index: int
    resized: tuple[int, int]
    crop: tuple[int, int]
    bbox: tuple[int, int, int, int]


def plan_patches(width: int, height: int, spec: SamplingSpec) -> list[PlannedPatch]:
    """The full deterministic patch plan for one source image.

    Scales ascend; within a scale the grid is row-major.  An image whose
    resized form cannot hold a single patch contributes nothing at that
    scale.
    """
    spec.validate()
    plan = []
    for scale_index, smaller in enumerate(spec.scale_sizes()):
        rw, rh = resized_dims(width, height, smaller)
        for x, y in grid_positions(rw, rh, spec.patch, spec.stride):
            plan.append(
                PlannedPatch(
                    scale_index=scale_index,
                    resized=(rw, rh),
                    crop=(x, y),
                    bbox=source_bbox(x, y, spec.patch, (rw, rh), (width, height)),
                )
            )
    return plan
