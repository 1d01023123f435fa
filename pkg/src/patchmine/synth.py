"""Synthetic patch-feature corpus with planted co-activation patterns.

Each category owns a few disjoint sets of feature dimensions.  A patch
gets sparse background noise below magnitude 1.0 and, with configured
probability, one of its category's planted sets at magnitudes well above
the noise ceiling, so planted items always survive top-k sparsification.
The generator logs the planted sets (as 1-based item ids) so mining
results can be checked against ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .featurestore import FeatureSet, PatchRecord
from .miner import Pattern


@dataclass
class SynthSpec:
    n_categories: int = 5
    images_per_category: int = 40
    patches_per_image: int = 50
    dimension: int = 512
    plants_per_category: int = 2
    plant_size: int = 3
    plant_probability: float = 0.6
    plant_magnitude: tuple[float, float] = (15.0, 25.0)
    noise_nonzeros: tuple[int, int] = (2, 4)  # inclusive range
    noise_magnitude: tuple[float, float] = (0.05, 1.0)
    image_size: int = 256
    patch_extent: int = 64
    seed: int = 0

    def validate(self) -> None:
        if self.n_categories < 1:
            raise ValueError("n_categories < 1")
        if self.images_per_category < 1 or self.patches_per_image < 1:
            raise ValueError("images and patches per image must be >= 1")
        needed = self.n_categories * self.plants_per_category * self.plant_size
        if needed > self.dimension:
            raise ValueError(
                f"{needed} planted dimensions do not fit in D={self.dimension}"
            )
        if not 0.0 <= self.plant_probability <= 1.0:
            raise ValueError("plant_probability outside [0, 1]")
        if self.plant_magnitude[0] <= self.noise_magnitude[1]:
            raise ValueError(
                "plant magnitudes must exceed the noise ceiling so planted "
                "items always reach the top k"
            )
        if self.patch_extent > self.image_size:
            raise ValueError("patch_extent larger than image_size")


@dataclass
class SynthResult:
    train: FeatureSet
    test: FeatureSet
    # per category: list of planted item-id tuples (1-based, sorted)
    plants: list[list[tuple[int, ...]]]
    spec: SynthSpec

    def plant_log(self) -> dict:
        return {
            "dimension": self.spec.dimension,
            "categories": [
                {
                    "name": self.train.category_names[c],
                    "plants": [list(p) for p in self.plants[c]],
                }
                for c in range(self.spec.n_categories)
            ],
        }


def _draw_plants(spec: SynthSpec, rng: np.random.Generator) -> list[list[tuple[int, ...]]]:
    """Disjoint planted dimension sets, so categories never share a plant."""
    perm = rng.permutation(spec.dimension)
    plants: list[list[tuple[int, ...]]] = []
    at = 0
    for _ in range(spec.n_categories):
        per_cat = []
        for _ in range(spec.plants_per_category):
            dims = np.sort(perm[at : at + spec.plant_size])
            at += spec.plant_size
            per_cat.append(tuple(int(d) + 1 for d in dims))  # 1-based items
        plants.append(per_cat)
    return plants


def _generate_split(
    spec: SynthSpec,
    plants: list[list[tuple[int, ...]]],
    rng: np.random.Generator,
    id_prefix: str,
) -> FeatureSet:
    records: list[PatchRecord] = []
    image_labels: dict[str, int] = {}
    lo_nz, hi_nz = spec.noise_nonzeros
    for c in range(spec.n_categories):
        for i in range(spec.images_per_category):
            image_id = f"{id_prefix}cat{c:02d}_img{i:03d}"
            image_labels[image_id] = c
            for _ in range(spec.patches_per_image):
                feat = np.zeros(spec.dimension, np.float32)
                n_nz = int(rng.integers(lo_nz, hi_nz + 1))
                dims = rng.choice(spec.dimension, size=n_nz, replace=False)
                feat[dims] = rng.uniform(
                    spec.noise_magnitude[0], spec.noise_magnitude[1], n_nz
                )
                if rng.random() < spec.plant_probability:
                    plant = plants[c][int(rng.integers(len(plants[c])))]
                    idx = np.array(plant, np.int64) - 1  # back to 0-based
                    feat[idx] = rng.uniform(
                        spec.plant_magnitude[0],
                        spec.plant_magnitude[1],
                        spec.plant_size,
                    )
                span = spec.image_size - spec.patch_extent
                x0 = int(rng.integers(0, span + 1))
                y0 = int(rng.integers(0, span + 1))
                records.append(
                    PatchRecord(
                        image_id=image_id,
                        bbox=(x0, y0, spec.patch_extent, spec.patch_extent),
                        scale_index=0,
                        feature=feat,
                    )
                )
    return FeatureSet(
        dimension=spec.dimension,
        records=records,
        image_labels=image_labels,
        category_names=[f"cat{c:02d}" for c in range(spec.n_categories)],
    )


def generate_synthetic(spec: SynthSpec) -> SynthResult:
    """Deterministic train/test corpora sharing one set of planted patterns."""
    spec.validate()
    plants = _draw_plants(spec, np.random.default_rng(spec.seed))
    train = _generate_split(
        spec, plants, np.random.default_rng(spec.seed + 1), "tr_"
    )
    test = _generate_split(
        spec, plants, np.random.default_rng(spec.seed + 2), "te_"
    )
    return SynthResult(train=train, test=test, plants=plants, spec=spec)


def planted_recall(
    mined: dict[int, Sequence[Pattern]], plants: list[list[tuple[int, ...]]]
) -> float:
    """Fraction of planted item sets mined exactly for their own category."""
    total = hits = 0
    for c, per_cat in enumerate(plants):
        found = {p.items for p in mined.get(c, [])}
        for plant in per_cat:
            total += 1
            if tuple(sorted(plant)) in found:
                hits += 1
    return hits / total if total else 1.0
