"""Conversion of patch features into an itemset transaction database.

Each patch becomes one transaction: the 1-based dimension indices of its k
largest activation magnitudes, plus a single class-label item.  With
dimension D the positive (target-category) label is D+1 and the negative
(natural-world) label is D+2, so a D=4096 target patch whose largest
magnitudes sit at dimensions 3, 100 and 4096 yields {3, 100, 4096, 4097}.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionMismatchError
from .featurestore import FeatureSet, top_k_indices


@dataclass(frozen=True)
class PatchRef:
    """Provenance of one transaction: feature-set source tag + record index."""

    source: str
    index: int


@dataclass(frozen=True)
class Transaction:
    """Ascending non-label item ids plus exactly one label item."""

    items: tuple[int, ...]
    label_item: int


class FeatureResolver:
    """Maps PatchRefs back to feature vectors across several feature sets."""

    def __init__(self, sets: dict[str, FeatureSet]):
        self.sets = dict(sets)

    def feature(self, ref: PatchRef) -> np.ndarray:
        return self.sets[ref.source].records[ref.index].feature

    def record(self, ref: PatchRef):
        return self.sets[ref.source].records[ref.index]

    def image_id(self, ref: PatchRef) -> str:
        return self.sets[ref.source].records[ref.index].image_id

    def matrix(self, refs: Sequence[PatchRef]) -> np.ndarray:
        """Stack the referenced features into an (m, D) float64 matrix."""
        if not refs:
            dim = next(iter(self.sets.values())).dimension if self.sets else 0
            return np.zeros((0, dim))
        out = np.empty(
            (len(refs), self.sets[refs[0].source].dimension), np.float64
        )
        # gather source-contiguous runs with one fancy index each
        start = 0
        for i in range(1, len(refs) + 1):
            if i == len(refs) or refs[i].source != refs[start].source:
                idxs = [r.index for r in refs[start:i]]
                out[start:i] = self.sets[refs[start].source].features[idxs]
                start = i
        return out


@dataclass
class TransactionDatabase:
    """Immutable transaction list with per-transaction patch provenance."""

    dimension: int
    k: int
    transactions: list[Transaction]
    patch_refs: list[PatchRef]
    sources: dict[str, FeatureSet] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.transactions) != len(self.patch_refs):
            raise ValueError(
                f"{len(self.transactions)} transactions vs "
                f"{len(self.patch_refs)} patch refs"
            )

    def validate(self) -> None:
        """Check every transaction against the database's D and k."""
        labels = (self.pos_label, self.neg_label)
        for i, t in enumerate(self.transactions):
            if t.label_item not in labels:
                raise ValueError(f"transaction {i}: bad label {t.label_item}")
            if len(t.items) > self.k:
                raise ValueError(
                    f"transaction {i}: {len(t.items)} items exceeds k={self.k}"
                )
            if any(not 1 <= a <= self.dimension for a in t.items):
                raise ValueError(f"transaction {i}: item id out of [1, D]")
            if any(a >= b for a, b in zip(t.items, t.items[1:])):
                raise ValueError(f"transaction {i}: items not increasing")

    @property
    def N(self) -> int:
        return len(self.transactions)

    @property
    def pos_label(self) -> int:
        return self.dimension + 1

    @property
    def neg_label(self) -> int:
        return self.dimension + 2

    def is_positive(self, index: int) -> bool:
        return self.transactions[index].label_item == self.pos_label

    @property
    def resolver(self) -> FeatureResolver:
        return FeatureResolver(self.sources)

    def positive_indices(self) -> np.ndarray:
        return np.array(
            [i for i in range(self.N) if self.is_positive(i)], dtype=np.int64
        )


def make_transaction(
    feature: np.ndarray, k: int, is_target: bool, dimension: int
) -> Transaction:
    """Build one transaction from a non-negative feature vector.

    Items are the 1-based indices of the k largest magnitudes; fewer when
    the vector has fewer than k strictly-positive entries.
    """
    feature = np.asarray(feature)
    if feature.shape != (dimension,):
        raise DimensionMismatchError(
            f"feature length {feature.shape} != dimension {dimension}"
        )
    idx = top_k_indices(feature, k)
    label = dimension + 1 if is_target else dimension + 2
    return Transaction(items=tuple(int(i) + 1 for i in idx), label_item=label)


Selection = tuple[FeatureSet, Sequence[int]]


def select_by_category(fset: FeatureSet, category_id: int) -> Selection:
    """Selection of all records whose image belongs to ``category_id``."""
    return (fset, fset.indices_for_category(category_id))


def select_excluding_category(fset: FeatureSet, category_id: int) -> Selection:
    """Selection of all records from every other category."""
    return (
        fset,
        [
            i
            for i, rec in enumerate(fset.records)
            if fset.image_labels[rec.image_id] != category_id
        ],
    )


def _source_key(fset: FeatureSet, taken: dict[str, FeatureSet]) -> str:
    key = fset.source or "set"
    base, n = key, 1
    while key in taken and taken[key] is not fset:
        n += 1
        key = f"{base}#{n}"
    return key


def build_database(
    target: Selection,
    natural: Selection,
    k: int,
    natural_rate: float = 1.0,
    seed: int = 0,
) -> TransactionDatabase:
    """One transaction per selected patch; target patches labeled positive.

    ``natural_rate`` optionally subsamples the natural-world selection
    (deterministically from ``seed``); the default keeps every patch.
    """
    target_set, target_idx = target
    natural_set, natural_idx = natural
    if target_set.dimension != natural_set.dimension:
        raise DimensionMismatchError(
            f"target dimension {target_set.dimension} != natural "
            f"dimension {natural_set.dimension}"
        )
    dim = target_set.dimension

    natural_idx = list(natural_idx)
    if natural_rate < 1.0:
        rng = np.random.default_rng(seed)
        m = int(len(natural_idx) * natural_rate)
        keep = rng.choice(len(natural_idx), size=m, replace=False)
        natural_idx = [natural_idx[i] for i in np.sort(keep)]

    sources: dict[str, FeatureSet] = {}
    tkey = _source_key(target_set, sources)
    sources[tkey] = target_set
    nkey = _source_key(natural_set, sources)
    sources[nkey] = natural_set

    transactions: list[Transaction] = []
    refs: list[PatchRef] = []
    for is_target, fset, key, indices in (
        (True, target_set, tkey, target_idx),
        (False, natural_set, nkey, natural_idx),
    ):
        for i in indices:
            rec = fset.records[i]
            transactions.append(
                make_transaction(rec.feature, k, is_target, dim)
            )
            refs.append(PatchRef(key, int(i)))
    return TransactionDatabase(
        dimension=dim,
        k=k,
        transactions=transactions,
        patch_refs=refs,
        sources=sources,
    )


def export_text(db: TransactionDatabase, path: str | Path) -> None:
    """Write one transaction per line: ascending item ids, label id last.

    The format interoperates with standard itemset-mining tools.
    """
    with open(path, "w") as fh:
        for t in db.transactions:
            fh.write(" ".join(map(str, (*t.items, t.label_item))) + "\n")
