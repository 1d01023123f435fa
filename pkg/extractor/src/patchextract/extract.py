"""Dataset walking, patch cropping, and feature-file assembly."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError
from .model import ProjectionModel
from .sampling import SamplingSpec, plan_patches
from .store import Record, write_features

log = logging.getLogger("patchextract")

IMAGE_SUFFIXES = {
    ".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".pgm", ".tif", ".tiff", ".webp",
}


@dataclass
class DatasetImage:
    image_id: str
    path: Path
    category: int


def discover_images(root: str | Path) -> tuple[list[str], list[DatasetImage]]:
    """Category names and images under ``root``, in sorted-id order.

    Immediate subdirectories are the categories; a flat directory of
    images becomes a single category named after the directory itself.
    Image ids are forward-slash relative paths, so the output is
    independent of where the dataset lives.
    """
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"image directory {root} does not exist")
    subdirs = sorted(d for d in root.iterdir() if d.is_dir())
    images: list[DatasetImage] = []
    if subdirs:
        categories = [d.name for d in subdirs]
        for ci, d in enumerate(subdirs):
            for p in sorted(d.iterdir()):
                if p.suffix.lower() in IMAGE_SUFFIXES:
                    images.append(
                        DatasetImage(f"{d.name}/{p.name}", p, ci)
                    )
    else:
        categories = [root.name]
        for p in sorted(root.iterdir()):
            if p.suffix.lower() in IMAGE_SUFFIXES:
                images.append(DatasetImage(p.name, p, 0))
    if not images:
        raise ConfigError(f"no image files found under {root}")
    images.sort(key=lambda im: im.image_id)
    return categories, images


def _patch_batch(
    img: Image.Image, spec: SamplingSpec, input_size: int
) -> tuple[np.ndarray, list]:
    """Crop every planned patch and resize it to the model input."""
    plan = plan_patches(img.width, img.height, spec)
    resized_cache: dict[tuple[int, int], Image.Image] = {}
    crops = []
    for pp in plan:
        if pp.resized not in resized_cache:
            resized_cache[pp.resized] = img.resize(pp.resized, Image.BILINEAR)
        x, y = pp.crop
        crop = resized_cache[pp.resized].crop(
            (x, y, x + spec.patch, y + spec.patch)
        )
        crop = crop.resize((input_size, input_size), Image.BILINEAR)
        crops.append(np.asarray(crop, np.uint8))
    batch = (
        np.stack(crops)
        if crops
        else np.empty((0, input_size, input_size, 3), np.uint8)
    )
    return batch, plan


def extract_dataset(
    images_dir: str | Path,
    out_path: str | Path,
    spec: SamplingSpec,
    model: ProjectionModel,
) -> dict:
    """Extract features for every readable image and write the output pair.

    Unreadable images are skipped with a logged record; the summary
    reports how many.  Output record order is sorted image id, then scale,
    then row-major grid position.
    """
    spec.validate()
    categories, images = discover_images(images_dir)
    records: list[Record] = []
    image_labels: dict[str, int] = {}
    skipped: list[str] = []
    for im in images:
        try:
            with Image.open(im.path) as raw:
                img = raw.convert("RGB")
        except Exception as exc:
            log.warning("skipping unreadable image %s: %s", im.path, exc)
            skipped.append(im.image_id)
            continue
        batch, plan = _patch_batch(img, spec, model.input_size)
        feats = model.apply(batch)
        image_labels[im.image_id] = im.category
        for pp, feat in zip(plan, feats):
            records.append(
                Record(
                    image_id=im.image_id,
                    bbox=pp.bbox,
                    scale_index=pp.scale_index,
                    feature=feat,
                )
            )
    write_features(out_path, model.dim, records, categories, image_labels)
    return {
        "images": len(image_labels),
        "skipped": skipped,
        "records": len(records),
        "dimension": model.dim,
        "scales": spec.n_scales,
    }
