"""Patch-feature models: a loadable projection or a seeded fallback.

A model consumes mean-subtracted square patches and emits a fixed-width
non-negative activation vector per patch (rectification is part of the
model contract, so downstream consumers may rely on the sign).

When no weights file is supplied the extractor falls back to a
deterministic randomly-initialized network: block average pooling over
the input followed by a seeded dense projection and a ReLU.  That keeps
the sampling geometry and the file format fully exercisable on machines
without trained weights; swap in a weights file for real features.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ModelLoadError

OUTPUT_DIM = 4096


def _block_pool(batch: np.ndarray, pool_to: int) -> np.ndarray:
    """Average (N, S, S, C) over a pool_to x pool_to block grid."""
    n, size, _, c = batch.shape
    edges = np.linspace(0, size, pool_to + 1).astype(np.int64)
    counts = np.diff(edges).astype(np.float64)
    out = np.add.reduceat(batch, edges[:-1], axis=1)
    out = np.add.reduceat(out, edges[:-1], axis=2)
    out /= counts[None, :, None, None]
    out /= counts[None, None, :, None]
    return out.reshape(n, pool_to * pool_to * c)


@dataclass
class ProjectionModel:
    """pool -> dense -> ReLU; weights either loaded or seeded."""

    w: np.ndarray  # (pool_to^2 * 3, OUTPUT_DIM)
    b: np.ndarray  # (OUTPUT_DIM,)
    mean: np.ndarray  # per-channel, subtracted before pooling
    input_size: int
    pool_to: int

    @property
    def dim(self) -> int:
        return self.w.shape[1]

    def apply(self, batch: np.ndarray) -> np.ndarray:
        """(N, input_size, input_size, 3) uint8/float -> (N, dim) float32."""
        x = np.asarray(batch, np.float64)
        if x.ndim != 4 or x.shape[1:] != (self.input_size, self.input_size, 3):
            raise ValueError(
                f"expected (N, {self.input_size}, {self.input_size}, 3), "
                f"got {x.shape}"
            )
        x -= self.mean[None, None, None, :]
        pooled = _block_pool(x, self.pool_to)
        acts = pooled @ self.w + self.b
        np.maximum(acts, 0.0, out=acts)
        return acts.astype(np.float32)


def fallback_model(seed: int = 0) -> ProjectionModel:
    """Deterministic random projection; same seed, same features."""
    rng = np.random.default_rng(seed)
    pool_to = 14
    fan_in = pool_to * pool_to * 3
    return ProjectionModel(
        w=(rng.standard_normal((fan_in, OUTPUT_DIM)) / np.sqrt(fan_in)),
        b=0.05 * rng.standard_normal(OUTPUT_DIM),
        mean=np.full(3, 127.5),
        input_size=227,
        pool_to=pool_to,
    )


def load_model(path: str | Path | None, seed: int = 0) -> ProjectionModel:
    """Load projection weights from an .npz file, or build the fallback.

    The archive must hold ``w`` (fan_in, dim), ``b`` (dim,), ``mean`` (3,)
    and scalars ``input_size`` and ``pool_to`` with
    fan_in == pool_to * pool_to * 3.
    """
    if path is None:
        return fallback_model(seed)
    try:
        with np.load(Path(path)) as npz:
            model = ProjectionModel(
                w=np.asarray(npz["w"], np.float64),
                b=np.asarray(npz["b"], np.float64),
                mean=np.asarray(npz["mean"], np.float64),
                input_size=int(npz["input_size"]),
                pool_to=int(npz["pool_to"]),
            )
    except Exception as exc:
        raise ModelLoadError(f"cannot load weights from {path}: {exc}") from exc
    fan_in = model.pool_to * model.pool_to * 3
    if model.w.ndim != 2 or model.w.shape[0] != fan_in:
        raise ModelLoadError(
            f"weights shape {model.w.shape} does not match "
            f"pool_to={model.pool_to} (need ({fan_in}, dim))"
        )
    if model.b.shape != (model.w.shape[1],) or model.mean.shape != (3,):
        raise ModelLoadError("bias or mean shape does not match the weights")
    if model.input_size < model.pool_to:
        raise ModelLoadError(
            f"input_size {model.input_size} smaller than pool grid "
            f"{model.pool_to}"
        )
    return model
