"""Conversion of sparse activations into labeled transactions."""

import numpy as np
import pytest

from patchmine.errors import DimensionMismatchError
from patchmine.featurestore import FeatureSet, PatchRecord
from patchmine.transactions import (
    FeatureResolver,
    PatchRef,
    build_database,
    export_text,
    make_transaction,
    select_by_category,
    select_excluding_category,
)


def _set_from_features(features, labels, n_categories):
    """One image per record; labels[i] is record i's category."""
    features = np.asarray(features, np.float32)
    records = []
    image_labels = {}
    for i in range(len(features)):
        image_id = f"img{i:04d}"
        image_labels[image_id] = int(labels[i])
        records.append(
            PatchRecord(image_id, (0, 0, 4, 4), 0, features[i])
        )
    return FeatureSet(
        dimension=features.shape[1],
        records=records,
        image_labels=image_labels,
        category_names=[f"c{j}" for j in range(n_categories)],
        source="mem",
    )


def test_worked_example_top3_of_4096_dims():
    v = np.zeros(4096, np.float32)
    v[2] = 5.0    # dim 3, 1-based
    v[99] = 7.0   # dim 100
    v[4095] = 9.0 # dim 4096
    t = make_transaction(v, k=3, is_target=True, dimension=4096)
    assert set(t.items) | {t.label_item} == {3, 100, 4096, 4097}
    assert t.items == (3, 100, 4096)
    assert t.label_item == 4097


def test_all_zero_vector_keeps_only_label():
    v = np.zeros(16)
    t = make_transaction(v, k=4, is_target=False, dimension=16)
    assert t.items == ()
    assert t.label_item == 18
    t = make_transaction(v, k=4, is_target=True, dimension=16)
    assert t.items == ()
    assert t.label_item == 17


def test_fewer_positive_entries_than_k():
    v = np.zeros(8)
    v[1] = 2.0
    t = make_transaction(v, k=5, is_target=True, dimension=8)
    assert t.items == (2,)


def test_make_transaction_rejects_wrong_length():
    with pytest.raises(DimensionMismatchError):
        make_transaction(np.zeros(4), k=2, is_target=True, dimension=5)


def test_empty_selections_build_empty_database():
    fset = _set_from_features(np.zeros((3, 4)), [0, 0, 1], 2)
    db = build_database((fset, []), (fset, []), k=2)
    assert db.N == 0


def test_two_target_three_natural():
    rng = np.random.default_rng(0)
    fset = _set_from_features(rng.random((5, 6)), [0] * 5, 1)
    db = build_database((fset, [0, 1]), (fset, [2, 3, 4]), k=3)
    assert db.N == 5
    assert sum(db.is_positive(i) for i in range(db.N)) == 2
    assert db.positive_indices().tolist() == [0, 1]
    assert db.pos_label == 7
    assert db.neg_label == 8
    db.validate()


def test_sixty_seven_categories_accepted():
    rng = np.random.default_rng(1)
    n_cat = 67
    feats = rng.random((n_cat * 2, 5))
    labels = [i % n_cat for i in range(n_cat * 2)]
    fset = _set_from_features(feats, labels, n_cat)
    db = build_database(
        select_by_category(fset, 66),
        select_excluding_category(fset, 66),
        k=3,
    )
    assert db.N == n_cat * 2
    assert sum(db.is_positive(i) for i in range(db.N)) == 2


def test_items_never_exceed_k_and_stay_sorted():
    rng = np.random.default_rng(2)
    feats = rng.random((40, 30)) * (rng.random((40, 30)) > 0.5)
    fset = _set_from_features(feats, [0] * 20 + [1] * 20, 2)
    db = build_database(
        select_by_category(fset, 0), select_by_category(fset, 1), k=6
    )
    for t in db.transactions:
        assert len(t.items) <= 6
        assert list(t.items) == sorted(set(t.items))
        assert all(1 <= a <= 30 for a in t.items)
    db.validate()


def test_selection_helpers_split_by_label():
    fset = _set_from_features(np.ones((6, 3)), [0, 1, 2, 0, 1, 2], 3)
    _, pos_idx = select_by_category(fset, 1)
    _, neg_idx = select_excluding_category(fset, 1)
    assert list(pos_idx) == [1, 4]
    assert list(neg_idx) == [0, 2, 3, 5]


def test_natural_rate_subsamples_deterministically():
    rng = np.random.default_rng(3)
    fset = _set_from_features(rng.random((40, 5)), [0] * 10 + [1] * 30, 2)
    kw = dict(k=3, natural_rate=0.5, seed=9)
    db1 = build_database(
        select_by_category(fset, 0), select_excluding_category(fset, 0), **kw
    )
    db2 = build_database(
        select_by_category(fset, 0), select_excluding_category(fset, 0), **kw
    )
    assert db1.N == 10 + 15
    assert db1.transactions == db2.transactions
    assert db1.patch_refs == db2.patch_refs


def test_patch_refs_resolve_to_their_source_rows():
    rng = np.random.default_rng(4)
    feats = rng.random((12, 7)).astype(np.float32)
    fset = _set_from_features(feats, [0] * 6 + [1] * 6, 2)
    db = build_database(
        select_by_category(fset, 1), select_by_category(fset, 0), k=3
    )
    resolver = db.resolver
    for i, ref in enumerate(db.patch_refs):
        row = resolver.feature(ref)
        expected = 6 + i if i < 6 else i - 6
        assert np.array_equal(row, feats[expected])


def test_resolver_matrix_matches_per_ref_lookup():
    rng = np.random.default_rng(5)
    feats_a = rng.random((9, 4)).astype(np.float32)
    feats_b = rng.random((7, 4)).astype(np.float32)
    set_a = _set_from_features(feats_a, [0] * 9, 1)
    set_b = _set_from_features(feats_b, [0] * 7, 1)
    resolver = FeatureResolver({"a": set_a, "b": set_b})
    refs = [
        PatchRef("a", 3),
        PatchRef("a", 0),
        PatchRef("b", 6),
        PatchRef("b", 1),
        PatchRef("a", 8),
    ]
    mat = resolver.matrix(refs)
    assert mat.shape == (5, 4)
    for row, ref in zip(mat, refs):
        assert np.array_equal(row, resolver.feature(ref))


def test_export_text_lines(tmp_path):
    fset = _set_from_features(
        np.array([[0.0, 2.0, 1.0], [3.0, 0.0, 0.0]]), [0, 1], 2
    )
    db = build_database(
        select_by_category(fset, 0), select_by_category(fset, 1), k=2
    )
    out = tmp_path / "txns.txt"
    export_text(db, out)
    lines = out.read_text().splitlines()
    assert lines == ["2 3 4", "1 5"]
