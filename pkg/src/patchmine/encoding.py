"""Coverage-based element selection, spatial-pyramid encoding, classification.

The same number of detectors is selected per category by greedy set cover
over training images (resetting the uncovered set whenever it empties).
An image encoding evaluates every bank detector on every patch, takes the
max per detector per pyramid region (whole + four quadrants) within each
scale, then max-pools across scales.  Layout is detector-major: the five
region values of detector j occupy slots 5j..5j+4 in the order
[whole, TL, TR, BL, BR].
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.model_selection import StratifiedKFold
from sklearn.svm import LinearSVC

from .detectors import LdaDetector
from .errors import ConfigError, DimensionMismatchError
from .featurestore import FeatureSet, PatchRecord
from .featurestore import load as load_feature_set
from .featurestore import save as save_feature_set
from .merging import MergedEnsemble

REGION_NAMES = ("whole", "TL", "TR", "BL", "BR")
REGIONS_PER_DETECTOR = 5
DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)


def select_elements(
    ensemble: MergedEnsemble, n_per_class: int
) -> tuple[list[int], str | None]:
    """Greedy set-cover pick of element indices for one category.

    Repeatedly takes the element covering the most not-yet-covered images
    (ties: larger total coverage, then lower element_id); when everything
    is covered the uncovered set resets and selection continues.  Returns
    fewer than n_per_class only when the ensemble is smaller, with a
    report string.
    """
    if not ensemble.elements:
        raise ValueError("ensemble is empty")
    if n_per_class < 1:
        raise ValueError(f"n_per_class {n_per_class} < 1")
    universe: set[str] = set()
    for e in ensemble.elements:
        universe |= e.covered_images
    chosen: list[int] = []
    remaining = list(range(len(ensemble.elements)))
    uncovered = set(universe)
    while len(chosen) < n_per_class and remaining:
        best = min(
            remaining,
            key=lambda i: (
                -len(ensemble.elements[i].covered_images & uncovered),
                -len(ensemble.elements[i].covered_images),
                ensemble.elements[i].element_id,
            ),
        )
        chosen.append(best)
        remaining.remove(best)
        uncovered -= ensemble.elements[best].covered_images
        if not uncovered:
            uncovered = set(universe)
    report = None
    if len(chosen) < n_per_class:
        report = (
            f"only {len(chosen)} elements available, "
            f"wanted {n_per_class} per class"
        )
    return chosen, report


@dataclass(eq=False)
class DetectorBank:
    """Stacked detectors: categories in manifest order, selection order within."""

    categories: list[str]
    element_ids: list[list[int]]
    weights: np.ndarray  # (n_categories * n_per_class, D) float64
    n_per_class: int

    def __post_init__(self) -> None:
        if any(len(ids) != self.n_per_class for ids in self.element_ids):
            raise ValueError("unequal detector counts across categories")
        if self.weights.shape[0] != len(self.categories) * self.n_per_class:
            raise ValueError("weight row count does not match the bank layout")

    @property
    def n_detectors(self) -> int:
        return self.weights.shape[0]

    @property
    def dimension(self) -> int:
        return self.weights.shape[1]


def build_bank(
    categories: Sequence[str],
    per_category: Sequence[Sequence[tuple[int, LdaDetector]]],
) -> tuple[DetectorBank, str | None]:
    """Stack per-category (element_id, detector) picks into one bank.

    If categories supplied unequal counts, every category is trimmed to the
    smallest so the per-class count stays uniform; the trim is reported.
    """
    if len(categories) != len(per_category):
        raise ValueError("one detector list per category required")
    counts = [len(p) for p in per_category]
    if min(counts) == 0:
        raise ValueError("a category has no detectors")
    n = min(counts)
    report = None
    if max(counts) != n:
        report = f"trimmed categories to {n} detectors each (had {counts})"
    ids = [[eid for eid, _ in p[:n]] for p in per_category]
    weights = np.stack(
        [np.asarray(det.w, np.float64) for p in per_category for _, det in p[:n]]
    )
    return (
        DetectorBank(
            categories=list(categories),
            element_ids=ids,
            weights=weights,
            n_per_class=n,
        ),
        report,
    )


def _region_masks(
    records: Sequence[PatchRecord],
    extent: tuple[float, float] | None = None,
) -> list[np.ndarray]:
    """[whole, TL, TR, BL, BR] membership by bbox center.

    ``extent`` is the image (width, height); when unknown it defaults to
    the tightest box around the patches at this scale.  Centers exactly on
    the midline fall to the right/bottom half.
    """
    centers = np.array([r.center() for r in records], np.float64)
    if extent is None:
        width = max(r.bbox[0] + r.bbox[2] for r in records)
        height = max(r.bbox[1] + r.bbox[3] for r in records)
    else:
        width, height = extent
    left = centers[:, 0] * 2 < width
    top = centers[:, 1] * 2 < height
    whole = np.ones(len(records), bool)
    return [whole, left & top, ~left & top, left & ~top, ~left & ~top]


def encode_image(
    by_scale: Mapping[int, Sequence[PatchRecord]],
    bank: DetectorBank,
    empty_region_value: float = 0.0,
    extent: tuple[float, float] | None = None,
) -> np.ndarray:
    """Spatial-pyramid encoding of one image, length 5 * n_detectors.

    Per scale: max detector score per region; regions with no patch center
    contribute ``empty_region_value``.  Scales then max-pool componentwise.
    ``extent`` fixes the image frame used to split regions; by default each
    scale uses the tightest box around its own patches.
    """
    if not by_scale:
        raise ValueError("image has no patches")
    pooled: np.ndarray | None = None
    for scale in sorted(by_scale):
        records = by_scale[scale]
        if not records:
            continue
        feats = np.stack(
            [np.asarray(r.feature, np.float64) for r in records]
        )
        if feats.shape[1] != bank.dimension:
            raise DimensionMismatchError(
                f"patch dimension {feats.shape[1]} does not match "
                f"bank dimension {bank.dimension}"
            )
        scores = feats @ bank.weights.T  # (m, n_detectors)
        vec = np.full(
            (bank.n_detectors, REGIONS_PER_DETECTOR),
            empty_region_value,
            np.float64,
        )
        for ri, mask in enumerate(_region_masks(records, extent)):
            if mask.any():
                vec[:, ri] = scores[mask].max(axis=0)
        flat = vec.ravel()
        pooled = flat if pooled is None else np.maximum(pooled, flat)
    if pooled is None:
        raise ValueError("image has no patches")
    return pooled


def encode_set(
    fset: FeatureSet,
    bank: DetectorBank,
    empty_region_value: float = 0.0,
) -> FeatureSet:
    """Encode every image of a feature set; one record per image.

    Output reuses the feature-file envelope with D = 5 * n_detectors and
    zeroed patch geometry.  Encodings may be negative, so loaders must not
    demand non-negativity of this file.
    """
    groups = fset.record_indices_by_image()
    records = []
    for image_id in sorted(groups):
        by_scale: dict[int, list[PatchRecord]] = {}
        for idx in groups[image_id]:
            r = fset.records[idx]
            by_scale.setdefault(r.scale_index, []).append(r)
        enc = encode_image(by_scale, bank, empty_region_value)
        records.append(
            PatchRecord(
                image_id=image_id,
                bbox=(0, 0, 0, 0),
                scale_index=0,
                feature=enc.astype(np.float32),
            )
        )
    return FeatureSet(
        dimension=bank.n_detectors * REGIONS_PER_DETECTOR,
        records=records,
        image_labels={i: fset.image_labels[i] for i in sorted(groups)},
        category_names=list(fset.category_names),
    )


def unit_normalize(x: np.ndarray) -> np.ndarray:
    """Row-wise unit norm; zero rows stay zero."""
    x = np.asarray(x, np.float64)
    single = x.ndim == 1
    mat = np.atleast_2d(x)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    out = np.divide(mat, norms, out=np.zeros_like(mat), where=norms > 0)
    return out[0] if single else out


def concat_global(encoding: np.ndarray, global_feature: np.ndarray) -> np.ndarray:
    """Append an external per-image vector, each part unit-normalized."""
    return np.concatenate(
        [unit_normalize(encoding), unit_normalize(global_feature)]
    )


@dataclass(eq=False)
class LinearModel:
    """One-vs-rest linear scorers; prediction is first-argmax of scores."""

    categories: list[str]
    weights: np.ndarray  # (C, D)
    intercepts: np.ndarray  # (C,)
    reg_constants: list[float]
    normalize: bool = True


def decision_scores(model: LinearModel, encodings: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(encodings, np.float64))
    if model.normalize:
        x = unit_normalize(x)
    return x @ model.weights.T + model.intercepts


def predict(model: LinearModel, encoding: np.ndarray) -> int:
    """Category index of the highest score; ties go to the lowest index."""
    return int(np.argmax(decision_scores(model, encoding)[0]))


def predict_batch(model: LinearModel, encodings: np.ndarray) -> np.ndarray:
    return np.argmax(decision_scores(model, encodings), axis=1)


def _fit_binary(x: np.ndarray, y: np.ndarray, c: float) -> tuple[np.ndarray, float]:
    svc = LinearSVC(
        C=c,
        dual=False,
        tol=1e-6,
        max_iter=20000,
        random_state=0,
    )
    svc.fit(x, y)
    w = svc.coef_[0].astype(np.float64)
    b = float(svc.intercept_[0])
    # sklearn orients by class order; flip so positive class scores high
    if svc.classes_[1] != 1:
        w, b = -w, -b
    return w, b


def train_classifier(
    encodings: np.ndarray,
    labels: Sequence[int],
    categories: Sequence[str],
    folds: int = 5,
    c_grid: Sequence[float] = DEFAULT_C_GRID,
) -> LinearModel:
    """One linear scorer per category, C chosen by stratified CV accuracy.

    Ties in CV accuracy resolve to the smaller C.  A category with too few
    positives or negatives for 2-fold CV gets C = 1.0; a category absent
    from (or equal to) the whole training set gets a constant scorer.
    """
    x = np.asarray(encodings, np.float64)
    y = np.asarray(labels, np.int64)
    if x.shape[0] != len(y):
        raise ValueError("encodings and labels differ in length")
    if x.shape[0] == 0:
        raise ValueError("empty training set")
    xn = unit_normalize(x)
    n_cat = len(categories)
    weights = np.zeros((n_cat, x.shape[1]), np.float64)
    intercepts = np.zeros(n_cat, np.float64)
    regs: list[float] = []
    for cat in range(n_cat):
        yc = (y == cat).astype(np.int64)
        n_pos, n_neg = int(yc.sum()), int((1 - yc).sum())
        if n_pos == 0 or n_neg == 0:
            # degenerate one-vs-rest task: constant scorer
            intercepts[cat] = 1.0 if n_pos > 0 else -1.0
            regs.append(0.0)
            continue
        n_splits = min(folds, n_pos, n_neg)
        if n_splits >= 2:
            best_c, best_acc = None, -1.0
            skf = StratifiedKFold(n_splits=n_splits, shuffle=False)
            for c in c_grid:
                correct = 0
                for tr, te in skf.split(xn, yc):
                    if len(np.unique(yc[tr])) < 2:
                        correct += int(
                            (yc[te] == yc[tr][0]).sum()
                        )
                        continue
                    w, b = _fit_binary(xn[tr], yc[tr], c)
                    pred = (xn[te] @ w + b > 0).astype(np.int64)
                    correct += int((pred == yc[te]).sum())
                acc = correct / len(y)
                if acc > best_acc:
                    best_acc, best_c = acc, c
            chosen = best_c
        else:
            chosen = 1.0
        w, b = _fit_binary(xn, yc, chosen)
        weights[cat] = w
        intercepts[cat] = b
        regs.append(float(chosen))
    return LinearModel(
        categories=list(categories),
        weights=weights,
        intercepts=intercepts,
        reg_constants=regs,
    )


def evaluate(
    model: LinearModel, encodings: np.ndarray, labels: Sequence[int]
) -> dict:
    """Accuracy, per-category accuracy, and average precision per category."""
    from sklearn.metrics import average_precision_score

    y = np.asarray(labels, np.int64)
    scores = decision_scores(model, encodings)
    pred = np.argmax(scores, axis=1)
    report: dict = {
        "accuracy": float((pred == y).mean()),
        "per_category": {},
    }
    aps = []
    for cat, name in enumerate(model.categories):
        mask = y == cat
        cat_acc = float((pred[mask] == cat).mean()) if mask.any() else None
        if mask.any() and not mask.all():
            ap = float(average_precision_score(mask, scores[:, cat]))
            aps.append(ap)
        else:
            ap = None
        report["per_category"][name] = {"accuracy": cat_acc, "ap": ap}
    report["mAP"] = float(np.mean(aps)) if aps else None
    return report


def save_model(
    model: LinearModel, json_path: str | Path, weights_path: str | Path
) -> None:
    """JSON metadata plus weights in the feature-file envelope."""
    records = [
        PatchRecord(
            image_id=name,
            bbox=(0, 0, 0, 0),
            scale_index=0,
            feature=model.weights[i].astype(np.float32),
        )
        for i, name in enumerate(model.categories)
    ]
    save_feature_set(
        FeatureSet(
            dimension=model.weights.shape[1],
            records=records,
            image_labels={n: i for i, n in enumerate(model.categories)},
            category_names=list(model.categories),
        ),
        weights_path,
    )
    meta = {
        "categories": list(model.categories),
        "intercepts": [float(v) for v in model.intercepts],
        "reg_constants": model.reg_constants,
        "normalize": model.normalize,
        "weights_file": Path(weights_path).name,
    }
    with open(json_path, "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_model(json_path: str | Path) -> LinearModel:
    json_path = Path(json_path)
    with open(json_path) as fh:
        meta = json.load(fh)
    wset = load_feature_set(json_path.parent / meta["weights_file"])
    by_id = {r.image_id: r.feature for r in wset.records}
    weights = np.stack(
        [np.asarray(by_id[name], np.float64) for name in meta["categories"]]
    )
    return LinearModel(
        categories=meta["categories"],
        weights=weights,
        intercepts=np.asarray(meta["intercepts"], np.float64),
        reg_constants=meta["reg_constants"],
        normalize=meta["normalize"],
    )
