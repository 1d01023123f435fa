"""Canonical writer for the patch-feature interchange format.

The payload is little-endian binary::

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

with a sibling ``<name>.manifest.json`` carrying ``dimension``,
``categories`` and ``image_labels``.  The writer is canonical: identical
content always produces identical bytes, and a consumer's load/save cycle
reproduces the file exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"PFST"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sHIQ")
_RECORD_FIXED = struct.Struct("<4IB")


@dataclass
class Record:
    """One patch: image id, source-pixel box, scale, activation vector."""

    image_id: str
    bbox: tuple[int, int, int, int]
    scale_index: int
    feature: np.ndarray


def manifest_path(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".manifest.json")


def write_features(
    path: str | Path,
    dimension: int,
    records: Sequence[Record],
    categories: Sequence[str],
    image_labels: dict[str, int],
) -> None:
    """Write payload + manifest; raises ValueError on malformed records."""
    path = Path(path)
    parts: list[bytes] = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, dimension, len(records))
    ]
    for i, rec in enumerate(records):
        if rec.image_id not in image_labels:
            raise ValueError(f"record {i}: image {rec.image_id!r} unlabeled")
        feature = np.ascontiguousarray(rec.feature, dtype="<f4")
        if feature.shape != (dimension,):
            raise ValueError(
                f"record {i}: feature shape {feature.shape}, "
                f"expected ({dimension},)"
            )
        ident = rec.image_id.encode("utf-8")
        if len(ident) > 0xFFFF:
            raise ValueError(f"record {i}: image id too long")
        parts.append(struct.pack("<H", len(ident)))
        parts.append(ident)
        parts.append(_RECORD_FIXED.pack(*rec.bbox, rec.scale_index))
        parts.append(feature.tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(parts))

    manifest = {
        "dimension": int(dimension),
        "categories": list(categories),
        "image_labels": {k: int(v) for k, v in image_labels.items()},
    }
    manifest_path(path).write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )
