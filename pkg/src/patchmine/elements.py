"""Retrieval of visual elements: the positive patches sharing a pattern.

An inverted index maps each item id to the ascending list of positive
transaction indices containing it; retrieving a pattern intersects the
posting lists of its items.  Only positive-class transactions enter the
index, so an element's members are always patches of the target category.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyElementError
from .miner import Pattern
from .transactions import PatchRef, TransactionDatabase


@dataclass
class InvertedIndex:
    """Item id -> ascending array of positive-transaction indices."""

    postings: dict[int, np.ndarray] = field(default_factory=dict)

    def posting(self, item: int) -> np.ndarray:
        return self.postings.get(item, np.empty(0, np.int64))


@dataclass
class VisualElement:
    """Patches of the positive class whose transactions share a pattern."""

    element_id: int
    pattern: Pattern
    members: list[PatchRef]
    covered_images: set[str]


def build_index(db: TransactionDatabase) -> InvertedIndex:
    """Invert the positive transactions of the database.

    Posting lists are global transaction indices, strictly increasing.
    """
    lists: dict[int, list[int]] = {}
    pos_label = db.pos_label
    for i, t in enumerate(db.transactions):
        if t.label_item != pos_label:
            continue
        for a in t.items:
            lists.setdefault(a, []).append(i)
    return InvertedIndex(
        postings={a: np.asarray(v, np.int64) for a, v in lists.items()}
    )


def matching_transactions(
    pattern: Pattern, index: InvertedIndex
) -> np.ndarray:
    """Ascending indices of positive transactions containing the pattern."""
    if not pattern.items:
        raise ValueError("pattern is empty")
    posts = sorted(
        (index.posting(a) for a in pattern.items), key=len
    )
    acc = posts[0]
    for p in posts[1:]:
        if len(acc) == 0:
            break
        acc = np.intersect1d(acc, p, assume_unique=True)
    return acc


def retrieve(
    pattern: Pattern,
    index: InvertedIndex,
    db: TransactionDatabase,
    element_id: int = 0,
) -> VisualElement:
    """The visual element of a pattern: all matching positive patches.

    A pattern that passed the mining criteria always has positive members;
    an empty intersection therefore signals an index/database mismatch and
    raises EmptyElementError.
    """
    hits = matching_transactions(pattern, index)
    if len(hits) == 0:
        raise EmptyElementError(
            f"pattern {list(pattern.items)} matches no positive transaction; "
            "index and database disagree"
        )
    pattern.positive_transaction_ids = [int(i) for i in hits]
    members = [db.patch_refs[int(i)] for i in hits]
    resolver = db.resolver
    covered = {resolver.image_id(ref) for ref in members}
    return VisualElement(
        element_id=element_id,
        pattern=pattern,
        members=members,
        covered_images=covered,
    )


def retrieve_all(
    patterns: Sequence[Pattern], db: TransactionDatabase
) -> list[VisualElement]:
    """Retrieve every pattern; element_id is the pattern's list position."""
    index = build_index(db)
    return [
        retrieve(p, index, db, element_id=i) for i, p in enumerate(patterns)
    ]


def save_elements(elements: Sequence[VisualElement], path: str | Path) -> None:
    """JSON manifest: id, pattern, member refs (source path + record index)."""
    payload = [
        {
            "element_id": e.element_id,
            "items": list(e.pattern.items),
            "support": e.pattern.support,
            "confidence": e.pattern.confidence_pos,
            "members": [[m.source, m.index] for m in e.members],
            "covered_images": sorted(e.covered_images),
        }
        for e in elements
    ]
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_elements(path: str | Path) -> list[VisualElement]:
    with open(path) as fh:
        payload = json.load(fh)
    out = []
    for obj in payload:
        pattern = Pattern(
            items=tuple(obj["items"]),
            support=obj["support"],
            confidence_pos=obj["confidence"],
        )
        out.append(
            VisualElement(
                element_id=obj["element_id"],
                pattern=pattern,
                members=[PatchRef(s, i) for s, i in obj["members"]],
                covered_images=set(obj["covered_images"]),
            )
        )
    return out
