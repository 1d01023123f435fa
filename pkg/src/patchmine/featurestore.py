"""On-disk patch-feature format plus the sparsify/binarize/pool operations.

A feature set is a pair of files:

* ``<name>.<ext>`` -- little-endian binary payload::

      magic   4  bytes  b"PFST"
      version u16       currently 1
      D       u32       feature dimension
      count   u64       number of records
      then per record:
        id_len  u16     byte length of the UTF-8 image id
        id      bytes   UTF-8 image id
        bbox    4 x u32 x, y, w, h in source-image pixels
        scale   u8      scale index
        feature D x f32 activation values

* ``<name>.manifest.json`` -- sibling JSON with keys ``dimension``,
  ``categories`` (ordered list) and ``image_labels`` (image id -> category
  index).

Feature values are stored as 32-bit floats; save followed by load is
bit-exact on them.  The payload layout (not the non-negativity of values)
is the format contract: activation sets are non-negative, but derived sets
such as detector-score encodings may carry negative components, so sign
checking is opt-in at load time.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    DimensionMismatchError,
    FormatError,
    TruncatedPayloadError,
)

MAGIC = b"PFST"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sHIQ")
_RECORD_FIXED = struct.Struct("<4IB")


@dataclass
class PatchRecord:
    """One sampled image patch: provenance plus its activation vector."""

    image_id: str
    bbox: tuple[int, int, int, int]
    scale_index: int
    feature: np.ndarray

    def center(self) -> tuple[float, float]:
        """Patch center in source-image pixel coordinates."""
        x, y, w, h = self.bbox
        return (x + w / 2.0, y + h / 2.0)


class FeatureSet:
    """An ordered collection of patch records sharing one dimension.

    ``image_labels`` maps every image id occurring in ``records`` to an
    index into ``category_names``.  ``source`` is an opaque tag used in
    patch provenance references (the file path after :func:`load`).
    """

    def __init__(
        self,
        dimension: int,
        records: Sequence[PatchRecord],
        image_labels: dict[str, int],
        category_names: Sequence[str],
        source: str = "",
    ):
        if dimension < 1:
            raise ValueError("dimension must be a positive integer")
        self.dimension = int(dimension)
        self.records = list(records)
        self.image_labels = dict(image_labels)
        self.category_names = list(category_names)
        self.source = source
        self._features: np.ndarray | None = None
        self._by_image: dict[str, list[int]] | None = None
        self.validate()

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureSet):
            return NotImplemented
        if (
            self.dimension != other.dimension
            or len(self.records) != len(other.records)
            or self.image_labels != other.image_labels
            or self.category_names != other.category_names
        ):
            return False
        for a, b in zip(self.records, other.records):
            if (
                a.image_id != b.image_id
                or tuple(a.bbox) != tuple(b.bbox)
                or a.scale_index != b.scale_index
                or not np.array_equal(a.feature, b.feature)
            ):
                return False
        return True

    def validate(self, require_non_negative: bool = False) -> None:
        """Check structural invariants, raising ValueError on violation."""
        n_cat = len(self.category_names)
        for image_id, label in self.image_labels.items():
            if not 0 <= label < n_cat:
                raise ValueError(
                    f"image {image_id!r} has label {label} outside "
                    f"[0, {n_cat})"
                )
        for i, rec in enumerate(self.records):
            if rec.image_id not in self.image_labels:
                raise ValueError(
                    f"record {i}: image {rec.image_id!r} missing from "
                    "image_labels"
                )
            if rec.feature.shape != (self.dimension,):
                raise ValueError(
                    f"record {i}: feature length {rec.feature.shape} != "
                    f"dimension {self.dimension}"
                )
            if require_non_negative and np.any(rec.feature < 0):
                raise ValueError(f"record {i}: negative feature component")

    @property
    def features(self) -> np.ndarray:
        """All feature vectors as one (N, D) float32 matrix (cached)."""
        if self._features is None:
            if self.records:
                self._features = np.stack(
                    [r.feature for r in self.records]
                ).astype(np.float32, copy=False)
            else:
                self._features = np.zeros((0, self.dimension), np.float32)
        return self._features

    def record_indices_by_image(self) -> dict[str, list[int]]:
        """Map image id -> indices of its records, in record order."""
        if self._by_image is None:
            by_image: dict[str, list[int]] = {}
            for i, rec in enumerate(self.records):
                by_image.setdefault(rec.image_id, []).append(i)
            self._by_image = by_image
        return self._by_image

    def indices_for_category(self, category_id: int) -> list[int]:
        """Indices of records whose image belongs to ``category_id``."""
        return [
            i
            for i, rec in enumerate(self.records)
            if self.image_labels[rec.image_id] == category_id
        ]

    def scale_set(self) -> set[int]:
        return {rec.scale_index for rec in self.records}


def manifest_path(path: str | Path) -> Path:
    """Sibling manifest path for a payload path (``train.features`` ->
    ``train.manifest.json``)."""
    p = Path(path)
    return p.with_name(p.stem + ".manifest.json")


def save(fset: FeatureSet, path: str | Path) -> None:
    """Write the binary payload and JSON manifest for ``fset``.

    Deterministic: identical sets produce byte-identical files.
    """
    path = Path(path)
    parts: list[bytes] = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, fset.dimension, len(fset.records))
    ]
    for rec in fset.records:
        ident = rec.image_id.encode("utf-8")
        if len(ident) > 0xFFFF:
            raise ValueError(f"image id too long ({len(ident)} bytes)")
        x, y, w, h = rec.bbox
        parts.append(struct.pack("<H", len(ident)))
        parts.append(ident)
        parts.append(_RECORD_FIXED.pack(x, y, w, h, rec.scale_index))
        parts.append(
            np.ascontiguousarray(rec.feature, dtype="<f4").tobytes()
        )
    path.write_bytes(b"".join(parts))

    manifest = {
        "dimension": fset.dimension,
        "categories": fset.category_names,
        "image_labels": fset.image_labels,
    }
    manifest_path(path).write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )


def load(path: str | Path, require_non_negative: bool = False) -> FeatureSet:
    """Read a feature set, validating header, payload and manifest.

    Raises BadMagicError, DimensionMismatchError or TruncatedPayloadError
    on malformed payloads; FormatError when the manifest is absent or
    inconsistent.
    """
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < _HEADER.size:
        raise BadMagicError(f"{path}: file shorter than header")
    magic, version, dim, count = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise BadMagicError(f"{path}: unsupported version {version}")

    mpath = manifest_path(path)
    if not mpath.exists():
        raise FormatError(f"{path}: manifest {mpath} not found")
    manifest = json.loads(mpath.read_text())
    if manifest.get("dimension") != dim:
        raise DimensionMismatchError(
            f"{path}: manifest dimension {manifest.get('dimension')} != "
            f"payload dimension {dim}",
            record_index=-1,
        )

    feat_bytes = 4 * dim
    records: list[PatchRecord] = []
    off = _HEADER.size
    for i in range(count):
        if off + 2 > len(buf):
            raise TruncatedPayloadError(
                f"{path}: truncated at record {i} (id length)", i
            )
        (id_len,) = struct.unpack_from("<H", buf, off)
        off += 2
        end = off + id_len + _RECORD_FIXED.size + feat_bytes
        if end > len(buf):
            raise TruncatedPayloadError(
                f"{path}: truncated at record {i}", i
            )
        image_id = buf[off : off + id_len].decode("utf-8")
        off += id_len
        x, y, w, h, scale = _RECORD_FIXED.unpack_from(buf, off)
        off += _RECORD_FIXED.size
        feature = np.frombuffer(buf, dtype="<f4", count=dim, offset=off).copy()
        off += feat_bytes
        records.append(PatchRecord(image_id, (x, y, w, h), scale, feature))
    if off != len(buf):
        raise FormatError(
            f"{path}: {len(buf) - off} trailing bytes after last record"
        )

    fset = FeatureSet(
        dimension=dim,
        records=records,
        image_labels={k: int(v) for k, v in manifest["image_labels"].items()},
        category_names=list(manifest["categories"]),
        source=str(path),
    )
    if require_non_negative:
        fset.validate(require_non_negative=True)
    return fset


def top_k_indices(v: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest strictly-positive entries, ascending.

    Ties break toward the lower index.  When fewer than k entries are
    positive the result is correspondingly shorter: a zero activation
    carries no magnitude-ranking information.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    v = np.asarray(v)
    if v.ndim != 1:
        raise ValueError("expected a 1-D feature vector")
    if np.any(v < 0):
        raise ValueError("feature vector has negative components")
    order = np.argsort(-v, kind="stable")
    order = order[v[order] > 0][:k]
    return np.sort(order)


def sparsify(v: np.ndarray, k: int) -> np.ndarray:
    """Keep the k largest entries of a non-negative vector, zero the rest."""
    v = np.asarray(v)
    idx = top_k_indices(v, k)
    out = np.zeros_like(v)
    out[idx] = v[idx]
    return out


def binarize(v: np.ndarray, k: int) -> np.ndarray:
    """Set the k largest strictly-positive entries to one, the rest to zero."""
    v = np.asarray(v)
    idx = top_k_indices(v, k)
    out = np.zeros_like(v)
    out[idx] = 1
    return out


def max_pool(
    records: Iterable[PatchRecord],
    transform: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Componentwise max of (optionally transformed) record features.

    ``transform`` is applied to each feature vector before pooling, e.g.
    ``lambda v: binarize(v, 20)``.  Raises ValueError on an empty record
    set.
    """
    it = iter(records)
    try:
        first = next(it)
    except StopIteration:
        raise ValueError("max_pool requires at least one record") from None
    if transform is None:
        transform = lambda v: v  # noqa: E731
    out = np.array(transform(first.feature), dtype=np.float64)
    for rec in it:
        np.maximum(out, transform(rec.feature), out=out)
    return out
