"""Binary feature format round-trips plus the sparsify/binarize/pool ops."""

import numpy as np
import pytest

from oracles import top_k_oracle
from patchmine.errors import (
    BadMagicError,
    DimensionMismatchError,
    FormatError,
    TruncatedPayloadError,
)
from patchmine.featurestore import (
    FeatureSet,
    PatchRecord,
    binarize,
    load,
    manifest_path,
    max_pool,
    save,
    sparsify,
    top_k_indices,
)


def _random_set(rng, n_records, dimension, n_images=None):
    n_images = n_images or max(1, n_records // 4)
    records = []
    image_labels = {}
    for i in range(n_records):
        image_id = f"img{int(rng.integers(n_images)):05d}"
        image_labels[image_id] = int(rng.integers(3))
        records.append(
            PatchRecord(
                image_id=image_id,
                bbox=tuple(int(v) for v in rng.integers(0, 200, 4)),
                scale_index=int(rng.integers(3)),
                feature=rng.random(dimension, dtype=np.float32),
            )
        )
    return FeatureSet(
        dimension=dimension,
        records=records,
        image_labels=image_labels,
        category_names=["a", "b", "c"],
    )


# -- round trips ----------------------------------------------------------


def test_empty_set_round_trip(tmp_path):
    fset = FeatureSet(4096, [], {}, ["solo"])
    path = tmp_path / "empty.features"
    save(fset, path)
    back = load(path)
    assert back == fset
    assert back.dimension == 4096
    assert len(back) == 0


def test_single_record_round_trip(tmp_path):
    rec = PatchRecord(
        image_id="im0",
        bbox=(1, 2, 3, 4),
        scale_index=2,
        feature=np.arange(8, dtype=np.float32),
    )
    fset = FeatureSet(8, [rec], {"im0": 0}, ["only"])
    path = tmp_path / "one.features"
    save(fset, path)
    back = load(path)
    assert back == fset
    assert back.records[0].bbox == (1, 2, 3, 4)
    assert back.records[0].scale_index == 2
    assert np.array_equal(back.records[0].feature, np.arange(8, dtype=np.float32))


def test_large_round_trip_byte_exact(tmp_path):
    rng = np.random.default_rng(7)
    fset = _random_set(rng, 10_000, 4096)
    path = tmp_path / "big.features"
    save(fset, path)
    back = load(path)
    assert back == fset
    # saving the loaded copy reproduces the files byte for byte
    path2 = tmp_path / "big2.features"
    save(back, path2)
    assert path.read_bytes() == path2.read_bytes()
    assert manifest_path(path).read_text() == manifest_path(path2).read_text()


def test_round_trip_is_bit_exact_on_features(tmp_path):
    rng = np.random.default_rng(3)
    fset = _random_set(rng, 50, 17)
    path = tmp_path / "small.features"
    save(fset, path)
    back = load(path)
    for a, b in zip(fset.records, back.records):
        assert a.feature.tobytes() == b.feature.tobytes()


def test_source_is_set_on_load(tmp_path):
    fset = _random_set(np.random.default_rng(0), 4, 5)
    path = tmp_path / "tagged.features"
    save(fset, path)
    assert load(path).source == str(path)


# -- malformed payloads ---------------------------------------------------


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.features"
    path.write_bytes(b"NOPE" + bytes(14))
    with pytest.raises(BadMagicError):
        load(path)


def test_short_file_rejected(tmp_path):
    path = tmp_path / "short.features"
    path.write_bytes(b"PF")
    with pytest.raises(BadMagicError):
        load(path)


def test_truncation_names_record_index(tmp_path):
    rng = np.random.default_rng(1)
    fset = _random_set(rng, 5, 6)
    path = tmp_path / "cut.features"
    save(fset, path)
    whole = path.read_bytes()
    path.write_bytes(whole[: len(whole) - 10])
    with pytest.raises(TruncatedPayloadError) as err:
        load(path)
    assert err.value.record_index == 4


def test_missing_manifest_rejected(tmp_path):
    fset = _random_set(np.random.default_rng(2), 3, 4)
    path = tmp_path / "lonely.features"
    save(fset, path)
    manifest_path(path).unlink()
    with pytest.raises(FormatError):
        load(path)


def test_manifest_dimension_mismatch_rejected(tmp_path):
    fset = _random_set(np.random.default_rng(2), 3, 4)
    path = tmp_path / "skewed.features"
    save(fset, path)
    mpath = manifest_path(path)
    mpath.write_text(mpath.read_text().replace('"dimension": 4', '"dimension": 5'))
    with pytest.raises(DimensionMismatchError):
        load(path)


def test_trailing_bytes_rejected(tmp_path):
    fset = _random_set(np.random.default_rng(2), 3, 4)
    path = tmp_path / "tail.features"
    save(fset, path)
    path.write_bytes(path.read_bytes() + b"\x00\x01")
    with pytest.raises(FormatError):
        load(path)


def test_negative_check_is_opt_in(tmp_path):
    rec = PatchRecord("im0", (0, 0, 1, 1), 0, np.array([-1.0, 2.0], np.float32))
    fset = FeatureSet(2, [rec], {"im0": 0}, ["only"])
    path = tmp_path / "neg.features"
    save(fset, path)
    load(path)  # sign check off by default
    with pytest.raises(ValueError):
        load(path, require_non_negative=True)


# -- sparsify / binarize / top-k ------------------------------------------


def test_top_k_examples():
    assert top_k_indices(np.array([0.0, 7.0, 0.0, 5.0]), 2).tolist() == [1, 3]
    assert top_k_indices(np.array([9.0]), 3).tolist() == [0]


def test_top_k_skips_zeros():
    assert top_k_indices(np.array([0.0, 0.0, 0.0]), 2).tolist() == []


def test_top_k_tie_goes_to_lower_index():
    assert top_k_indices(np.array([2.0, 2.0, 1.0]), 1).tolist() == [0]


def test_top_k_rejects_negative_input():
    with pytest.raises(ValueError):
        top_k_indices(np.array([1.0, -0.5]), 1)


def test_sparsify_examples():
    out = sparsify(np.array([0.5, 3.0, 1.0, 2.0]), 2)
    assert out.tolist() == [0.0, 3.0, 0.0, 2.0]
    v = np.array([0.5, 3.0, 1.0, 2.0])
    assert sparsify(v, len(v)).tolist() == v.tolist()
    assert sparsify(np.array([2.0, 2.0, 1.0]), 1).tolist() == [2.0, 0.0, 0.0]


def test_binarize_examples():
    assert binarize(np.array([0.5, 3.0, 1.0, 2.0]), 2).tolist() == [0, 1, 0, 1]
    assert binarize(np.array([0.0, 0.0, 0.0]), 2).tolist() == [0, 0, 0]


def test_top_k_matches_brute_force_oracle():
    rng = np.random.default_rng(11)
    for _ in range(200):
        d = int(rng.integers(1, 40))
        v = np.round(rng.random(d) * 4, 1)  # coarse values force ties
        k = int(rng.integers(1, d + 2))
        assert top_k_indices(v, k).tolist() == top_k_oracle(v, k)


def test_sparsify_idempotent_and_supports_nest():
    rng = np.random.default_rng(5)
    for _ in range(100):
        d = int(rng.integers(2, 50))
        v = rng.random(d) * rng.integers(0, 2, d)  # mix zeros in
        k = int(rng.integers(1, d + 1))
        s = sparsify(v, k)
        b = binarize(v, k)
        assert np.array_equal(sparsify(s, k), s)
        assert np.array_equal(binarize(b, k), b)
        assert np.array_equal(s > 0, b > 0)
        assert set(np.nonzero(s)[0]) <= set(np.nonzero(v)[0])


def test_top_k_monotone_in_k():
    rng = np.random.default_rng(6)
    for _ in range(100):
        d = int(rng.integers(2, 40))
        v = rng.random(d)
        k = int(rng.integers(1, d))
        small = set(top_k_indices(v, k).tolist())
        large = set(top_k_indices(v, k + 1).tolist())
        assert small <= large


def test_max_pool_example():
    recs = [
        PatchRecord("a", (0, 0, 1, 1), 0, np.array([1.0, 0.0])),
        PatchRecord("a", (0, 0, 1, 1), 0, np.array([0.0, 2.0])),
    ]
    assert max_pool(recs).tolist() == [1.0, 2.0]


def test_max_pool_permutation_invariant():
    rng = np.random.default_rng(8)
    recs = [
        PatchRecord("a", (0, 0, 1, 1), 0, rng.random(12)) for _ in range(9)
    ]
    base = max_pool(recs)
    for _ in range(5):
        order = rng.permutation(len(recs))
        assert np.array_equal(max_pool([recs[i] for i in order]), base)


def test_max_pool_applies_transform():
    recs = [
        PatchRecord("a", (0, 0, 1, 1), 0, np.array([0.5, 3.0, 1.0, 2.0])),
        PatchRecord("a", (0, 0, 1, 1), 0, np.array([4.0, 0.0, 0.0, 0.1])),
    ]
    pooled = max_pool(recs, transform=lambda v: binarize(v, 2))
    assert pooled.tolist() == [1.0, 1.0, 0.0, 1.0]


def test_max_pool_rejects_empty():
    with pytest.raises(ValueError):
        max_pool([])


# -- structural validation ------------------------------------------------


def test_validate_rejects_unknown_image():
    rec = PatchRecord("ghost", (0, 0, 1, 1), 0, np.zeros(3, np.float32))
    with pytest.raises(ValueError):
        FeatureSet(3, [rec], {}, ["only"])


def test_validate_rejects_wrong_feature_length():
    rec = PatchRecord("im0", (0, 0, 1, 1), 0, np.zeros(2, np.float32))
    with pytest.raises(ValueError):
        FeatureSet(3, [rec], {"im0": 0}, ["only"])


def test_validate_rejects_label_out_of_range():
    rec = PatchRecord("im0", (0, 0, 1, 1), 0, np.zeros(3, np.float32))
    with pytest.raises(ValueError):
        FeatureSet(3, [rec], {"im0": 5}, ["only"])
