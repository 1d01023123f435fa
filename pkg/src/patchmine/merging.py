"""Greedy merging of redundant visual elements while training detectors.

One merge step seeds on the element covering the most training images,
trains a detector on the absorbed members, pulls in every remaining
element whose mean score exceeds the threshold, and repeats until no
element crosses it.  The outer loop peels merge groups off the pool until
it is empty.  Every source element ends up in exactly one merged element.

Scoring uses each element's precomputed mean member feature: the mean of
dot products equals the dot product with the mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .detectors import BackgroundStats, LdaDetector, train_lda_from_mean
from .elements import VisualElement
from .transactions import FeatureResolver, PatchRef


@dataclass
class MergeConfig:
    threshold: float = 150.0
    max_rounds: int = 10

    def validate(self) -> None:
        if self.max_rounds < 1:
            raise ValueError(f"max_rounds {self.max_rounds} < 1")


@dataclass
class MergedEnsemble:
    """Merged elements, their detectors, and which sources each absorbed."""

    elements: list[VisualElement]
    detectors: list[LdaDetector]
    provenance: list[list[int]]
    warnings: list[str] = field(default_factory=list)


def _seed_order_key(e: VisualElement) -> tuple:
    # max coverage; ties: more members, then lower element_id
    return (-len(e.covered_images), -len(e.members), e.element_id)


def element_means(
    elements: Sequence[VisualElement], resolver: FeatureResolver
) -> np.ndarray:
    """Per-element mean member feature, stacked (n, D)."""
    return np.stack(
        [resolver.matrix(e.members).mean(axis=0) for e in elements]
    )


class _MemberPool:
    """Deduplicated member accumulation with an incremental feature sum."""

    def __init__(self, resolver: FeatureResolver, dimension: int):
        self._resolver = resolver
        self._seen: set[PatchRef] = set()
        self._sum = np.zeros(dimension, np.float64)
        self.refs: list[PatchRef] = []

    def absorb(self, element: VisualElement) -> None:
        fresh = [m for m in element.members if m not in self._seen]
        if not fresh:
            return
        self._seen.update(fresh)
        self.refs.extend(fresh)
        self._sum += self._resolver.matrix(fresh).sum(axis=0)

    @property
    def mean(self) -> np.ndarray:
        return self._sum / len(self.refs)


def _merge_group(
    pool: Sequence[VisualElement],
    means: np.ndarray,
    candidates: np.ndarray,
    seed_pos: int,
    stats: BackgroundStats,
    resolver: FeatureResolver,
    config: MergeConfig,
) -> tuple[list[int], LdaDetector, bool]:
    """One merge group: (absorbed positions, final detector, cap exhausted).

    ``candidates`` masks pool positions still up for absorption; the seed
    must not be flagged in it.  The mask is consumed in place.  The
    returned detector is always trained on exactly the absorbed set's
    deduplicated members.
    """
    members = _MemberPool(resolver, stats.dimension)
    members.absorb(pool[seed_pos])
    absorbed = [seed_pos]
    exhausted = False
    rounds = 0
    while True:
        detector = train_lda_from_mean(members.mean, stats)
        rounds += 1
        if not candidates.any():
            break
        scores = means @ detector.w
        hit = candidates & (scores > config.threshold)
        if not hit.any():
            break
        pulled = sorted(
            np.nonzero(hit)[0], key=lambda i: pool[i].element_id
        )
        for i in pulled:
            members.absorb(pool[i])
        absorbed.extend(int(i) for i in pulled)
        candidates &= ~hit
        if rounds >= config.max_rounds:
            exhausted = True
            detector = train_lda_from_mean(members.mean, stats)
            break
    return absorbed, detector, exhausted


def merging_train(
    pool: Sequence[VisualElement],
    stats: BackgroundStats,
    resolver: FeatureResolver,
    config: MergeConfig,
) -> tuple[list[VisualElement], LdaDetector, bool]:
    """One merge group: (absorbed elements, final detector, cap exhausted)."""
    config.validate()
    if not pool:
        raise ValueError("pool is empty")
    seed_pos = min(range(len(pool)), key=lambda i: _seed_order_key(pool[i]))
    candidates = np.ones(len(pool), bool)
    candidates[seed_pos] = False
    positions, detector, exhausted = _merge_group(
        pool,
        element_means(pool, resolver),
        candidates,
        seed_pos,
        stats,
        resolver,
        config,
    )
    return [pool[i] for i in positions], detector, exhausted


def ensemble_merge(
    elements: Sequence[VisualElement],
    stats: BackgroundStats,
    resolver: FeatureResolver,
    config: MergeConfig,
) -> MergedEnsemble:
    """Partition elements into merge groups, each with its detector.

    Terminates in at most len(elements) outer iterations since every merge
    group absorbs at least its seed.
    """
    config.validate()
    pool = list(elements)
    out = MergedEnsemble(elements=[], detectors=[], provenance=[])
    if not pool:
        return out
    means = element_means(pool, resolver)
    priority = sorted(range(len(pool)), key=lambda i: _seed_order_key(pool[i]))
    alive = np.ones(len(pool), bool)
    head = 0
    while True:
        while head < len(priority) and not alive[priority[head]]:
            head += 1
        if head >= len(priority):
            break
        seed_pos = priority[head]
        candidates = alive.copy()
        candidates[seed_pos] = False
        positions, detector, exhausted = _merge_group(
            pool, means, candidates, seed_pos, stats, resolver, config
        )
        absorbed = [pool[i] for i in positions]
        if exhausted:
            out.warnings.append(
                f"merge group seeded at element "
                f"{absorbed[0].element_id} hit max_rounds="
                f"{config.max_rounds} before converging"
            )
        seen: set[PatchRef] = set()
        refs: list[PatchRef] = []
        covered: set[str] = set()
        for e in absorbed:
            covered |= e.covered_images
            for m in e.members:
                if m not in seen:
                    seen.add(m)
                    refs.append(m)
        merged = VisualElement(
            element_id=absorbed[0].element_id,
            pattern=absorbed[0].pattern,
            members=refs,
            covered_images=covered,
        )
        out.elements.append(merged)
        out.detectors.append(detector)
        out.provenance.append(sorted(e.element_id for e in absorbed))
        alive[positions] = False
    return out
