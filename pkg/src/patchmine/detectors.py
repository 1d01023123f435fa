"""Shared background statistics and closed-form linear detectors.

One set of background statistics (mean and covariance of natural-world
patch features) is fit once per dataset and reused for every detector.
Training a detector for a patch set then reduces to a single triangular
solve: w = (sigma + lambda I)^-1 (mean(positives) - mu0).  No per-element
negative mining happens anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (
    ConfigError,
    DimensionMismatchError,
    FactorizationError,
)
from .featurestore import FeatureSet, PatchRecord
from .featurestore import load as load_feature_set
from .featurestore import save as save_feature_set
from .transactions import FeatureResolver

# Full covariance above this dimension is refused rather than approximated.
DEFAULT_DIMENSION_CAP = 4096


def default_lambda(sigma: np.ndarray) -> float:
    """Scale-relative ridge: 0.01 * trace(sigma) / D."""
    d = sigma.shape[0]
    return 0.01 * float(np.trace(sigma)) / d


@dataclass(eq=False)
class BackgroundStats:
    """Natural-world mean, covariance, and ridge, with a cached factorization."""

    mu0: np.ndarray
    sigma: np.ndarray
    lam: float
    _factor: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.mu0 = np.asarray(self.mu0, np.float64)
        self.sigma = np.asarray(self.sigma, np.float64)
        if self.sigma.shape != (len(self.mu0), len(self.mu0)):
            raise DimensionMismatchError(
                f"sigma shape {self.sigma.shape} does not match "
                f"mu0 length {len(self.mu0)}"
            )
        if not np.allclose(self.sigma, self.sigma.T, rtol=1e-10, atol=1e-12):
            raise ValueError("sigma is not symmetric")
        # exact symmetry for the factorization
        self.sigma = (self.sigma + self.sigma.T) / 2.0
        if self.lam < 0:
            raise ValueError(f"lambda {self.lam} is negative")

    @property
    def dimension(self) -> int:
        return len(self.mu0)

    @property
    def factor(self) -> tuple:
        """Cholesky factorization of (sigma + lambda I), computed once."""
        if self._factor is None:
            ridged = self.sigma + self.lam * np.eye(self.dimension)
            try:
                self._factor = cho_factor(ridged, lower=True)
            except np.linalg.LinAlgError as exc:
                suggested = default_lambda(self.sigma)
                if self.lam >= suggested:
                    suggested = 10.0 * max(self.lam, suggested)
                raise FactorizationError(
                    f"(sigma + {self.lam} I) is not positive definite; "
                    f"try lambda >= {suggested:.6g}",
                    suggested_lambda=suggested,
                ) from exc
        return self._factor


@dataclass(eq=False)
class LdaDetector:
    """A bias-free linear detector; scoring is a plain dot product."""

    w: np.ndarray

    def __post_init__(self) -> None:
        self.w = np.asarray(self.w, np.float64)
        if not np.all(np.isfinite(self.w)):
            raise ValueError("detector weights contain non-finite entries")


def fit_background(
    features: np.ndarray,
    lam: float | None = None,
    dimension_cap: int = DEFAULT_DIMENSION_CAP,
) -> BackgroundStats:
    """Mean and covariance (denominator n-1) of natural-world features.

    ``lam=None`` selects the scale-relative default.  Dimensions above
    ``dimension_cap`` are refused: a full covariance there would be
    silently wrong long before it is slow.
    """
    x = np.asarray(features, np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-d sample matrix, got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise ValueError(f"need at least 2 samples to fit covariance, got {n}")
    if d > dimension_cap:
        raise ConfigError(
            f"dimension {d} exceeds the full-covariance cap {dimension_cap}; "
            "refusing to approximate"
        )
    mu0 = x.mean(axis=0)
    sigma = np.cov(x, rowvar=False, ddof=1)
    sigma = np.atleast_2d(sigma)
    stats = BackgroundStats(
        mu0=mu0,
        sigma=sigma,
        lam=default_lambda(sigma) if lam is None else float(lam),
    )
    stats.factor  # force the factorization so failures surface here
    return stats


def fit_background_from_set(
    fset: FeatureSet,
    lam: float | None = None,
    dimension_cap: int = DEFAULT_DIMENSION_CAP,
) -> BackgroundStats:
    return fit_background(fset.features, lam=lam, dimension_cap=dimension_cap)


def train_lda(positives: np.ndarray, stats: BackgroundStats) -> LdaDetector:
    """w = (sigma + lambda I)^-1 (mean(positives) - mu0)."""
    x = np.atleast_2d(np.asarray(positives, np.float64))
    if x.shape[0] < 1:
        raise ValueError("need at least one positive sample")
    if x.shape[1] != stats.dimension:
        raise DimensionMismatchError(
            f"positives have dimension {x.shape[1]}, "
            f"background has {stats.dimension}"
        )
    return train_lda_from_mean(x.mean(axis=0), stats)


def train_lda_from_mean(
    mu_pos: np.ndarray, stats: BackgroundStats
) -> LdaDetector:
    """Train from a precomputed positive mean (single triangular solve)."""
    mu_pos = np.asarray(mu_pos, np.float64)
    if mu_pos.shape != (stats.dimension,):
        raise DimensionMismatchError(
            f"mean has shape {mu_pos.shape}, expected ({stats.dimension},)"
        )
    w = cho_solve(stats.factor, mu_pos - stats.mu0)
    return LdaDetector(w=w)


def score_patch(detector: LdaDetector, x: np.ndarray) -> float:
    return float(np.dot(detector.w, np.asarray(x, np.float64)))


def score_matrix(detector: LdaDetector, x: np.ndarray) -> np.ndarray:
    """Scores of each row of x."""
    return np.asarray(x, np.float64) @ detector.w


def score_element(
    detector: LdaDetector, element, resolver: FeatureResolver
) -> float:
    """Mean patch score over the element's members."""
    feats = resolver.matrix(element.members)
    return float(score_matrix(detector, feats).mean())


def save_detectors(
    pairs: Sequence[tuple[int, LdaDetector]],
    path: str | Path,
    category: str = "detectors",
) -> None:
    """Write (element_id, detector) pairs in the feature-file envelope.

    Each record's image_id is the decimal element id; bbox and scale are
    zeroed.  The parallel manifest carries the category tag.
    """
    if not pairs:
        raise ValueError("no detectors to save")
    dim = len(pairs[0][1].w)
    records = [
        PatchRecord(
            image_id=str(eid),
            bbox=(0, 0, 0, 0),
            scale_index=0,
            feature=np.asarray(det.w, np.float32),
        )
        for eid, det in pairs
    ]
    fset = FeatureSet(
        dimension=dim,
        records=records,
        image_labels={str(eid): 0 for eid, _ in pairs},
        category_names=[category],
    )
    save_feature_set(fset, path)


def load_detectors(path: str | Path) -> list[tuple[int, LdaDetector]]:
    fset = load_feature_set(path)
    return [
        (int(r.image_id), LdaDetector(w=np.asarray(r.feature, np.float64)))
        for r in fset.records
    ]
