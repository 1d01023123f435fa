"""Shared builders for test databases, feature sets, and element pools."""

import numpy as np

from patchmine.detectors import BackgroundStats
from patchmine.elements import VisualElement
from patchmine.featurestore import FeatureSet, PatchRecord
from patchmine.miner import Pattern
from patchmine.transactions import (
    FeatureResolver,
    PatchRef,
    Transaction,
    TransactionDatabase,
)


def make_db(rows, dimension, k=None):
    """Database from (items, is_positive) rows; dummy patch provenance."""
    if k is None:
        k = max((len(items) for items, _ in rows), default=1)
        k = max(k, 1)
    transactions = []
    refs = []
    for i, (items, is_pos) in enumerate(rows):
        label = dimension + 1 if is_pos else dimension + 2
        transactions.append(
            Transaction(items=tuple(sorted(items)), label_item=label)
        )
        refs.append(PatchRef("none", i))
    return TransactionDatabase(
        dimension=dimension,
        k=k,
        transactions=transactions,
        patch_refs=refs,
        sources={},
    )


def random_db(rng, max_txns=500, max_items=30, max_k=8):
    """Random transaction database within the oracle-suite size bounds."""
    n = int(rng.integers(20, max_txns + 1))
    dimension = int(rng.integers(4, max_items + 1))
    k = int(rng.integers(1, max_k + 1))
    rows = []
    for _ in range(n):
        size = int(rng.integers(1, k + 1))
        size = min(size, dimension)
        items = rng.choice(dimension, size=size, replace=False) + 1
        rows.append((tuple(int(a) for a in items), bool(rng.random() < 0.5)))
    return make_db(rows, dimension, k=k)


def make_grid_set(features, images_per="img", patches_per_image=None):
    """FeatureSet whose patch centers tile the four image quadrants.

    ``features`` is an (N, D) array; patches cycle through bbox positions
    that land centers in TL, TR, BL, BR of a 100x100 extent.
    """
    features = np.asarray(features, np.float32)
    n, d = features.shape
    corners = [(0, 0), (80, 0), (0, 80), (80, 80)]
    records = []
    image_labels = {}
    per = patches_per_image or n
    for i in range(n):
        image_id = f"{images_per}{i // per:03d}"
        image_labels[image_id] = 0
        x0, y0 = corners[i % 4]
        records.append(
            PatchRecord(
                image_id=image_id,
                bbox=(x0, y0, 20, 20),
                scale_index=0,
                feature=features[i],
            )
        )
    return FeatureSet(
        dimension=d,
        records=records,
        image_labels=image_labels,
        category_names=["only"],
    )


def random_element_pool(rng, max_elements=12, max_patches=40, dimension=8):
    """Random visual elements over one shared patch set, plus identity stats.

    Returns (elements, resolver, stats).  Member features are non-negative,
    coverage comes from the patches' image ids, element ids are positions.
    """
    n_patches = int(rng.integers(4, max_patches + 1))
    n_images = int(rng.integers(2, max(3, n_patches // 2) + 1))
    feats = rng.uniform(0.0, 4.0, size=(n_patches, dimension)).astype(np.float32)
    records = []
    image_labels = {}
    for i in range(n_patches):
        image_id = f"img{int(rng.integers(n_images)):03d}"
        image_labels[image_id] = 0
        records.append(
            PatchRecord(
                image_id=image_id,
                bbox=(0, 0, 10, 10),
                scale_index=0,
                feature=feats[i],
            )
        )
    fset = FeatureSet(
        dimension=dimension,
        records=records,
        image_labels=image_labels,
        category_names=["only"],
    )
    resolver = FeatureResolver({"pool": fset})

    n_elements = int(rng.integers(1, max_elements + 1))
    elements = []
    for eid in range(n_elements):
        size = int(rng.integers(1, min(6, n_patches) + 1))
        idx = rng.choice(n_patches, size=size, replace=False)
        members = [PatchRef("pool", int(i)) for i in sorted(idx)]
        covered = {records[i].image_id for i in idx}
        elements.append(
            VisualElement(
                element_id=eid,
                pattern=Pattern(items=(1, 2), support=0.5, confidence_pos=1.0),
                members=members,
                covered_images=covered,
            )
        )
    stats = BackgroundStats(
        mu0=np.zeros(dimension),
        sigma=np.eye(dimension),
        lam=0.0,
    )
    return elements, resolver, stats
