"""Command-line pipeline orchestration.

Every stage reads and writes named artifacts inside a work directory, so
any stage can be rerun independently and reruns with unchanged inputs are
byte-identical.  Subcommands:

    synth     generate a synthetic train/test corpus with planted patterns
    ingest    validate external feature files and record a summary
    study     top-k sparsified/binarized image-level classification table
    mine      per-category pattern mining over patch transactions
    merge     element retrieval, background fit, detector training, merging
    select    coverage-based element selection into a detector bank
    encode    spatial-pyramid encoding of train and test images
    train     one-vs-rest linear classifier with cross-validated C
    eval      accuracy / average-precision report on the test encodings
    pipeline  mine through eval in sequence

Exit codes: 0 success, 2 configuration error, 3 missing artifact,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import detectors as det
from . import elements as elem
from . import encoding as enc
from . import featurestore as fs
from . import merging as mrg
from . import miner as mn
from . import synth as syn
from . import transactions as txn
from .errors import (
    ConfigError,
    MissingArtifactError,
    NumericalError,
    PatchMineError,
)


@dataclass
class PipelineConfig:
    """All tunables of the pipeline, loadable from a JSON file."""

    k: int = 20
    supp_min: float = 0.0001
    conf_min: float = 0.30
    min_len: int = 2
    max_len: int = 4
    lam: float | None = None  # None = scale-relative default
    threshold: float = 150.0  # merge threshold
    max_rounds: int = 10
    n_per_class: int = 50
    natural_rate: float = 1.0
    folds: int = 5
    empty_region_value: float = 0.0
    study_k: list[int] = field(default_factory=lambda: [10, 20, 50, 100])
    features_train: str = "train.features"
    features_test: str = "test.features"
    seed: int = 0
    synth: syn.SynthSpec = field(default_factory=syn.SynthSpec)

    def validate(self) -> None:
        checks = [
            ("k", self.k >= 1),
            ("supp_min", 0 < self.supp_min <= 1),
            ("conf_min", 0 < self.conf_min <= 1),
            ("min_len", 1 <= self.min_len <= self.max_len),
            ("max_len", self.max_len >= 1),
            ("lam", self.lam is None or self.lam >= 0),
            ("max_rounds", self.max_rounds >= 1),
            ("n_per_class", self.n_per_class >= 1),
            ("natural_rate", 0 < self.natural_rate <= 1),
            ("folds", self.folds >= 2),
            ("features_train", bool(self.features_train)),
            ("features_test", bool(self.features_test)),
            (
                "features_test",
                self.features_train != self.features_test,
            ),
            ("study_k", all(v >= 1 for v in self.study_k)),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"config field {name!r} is invalid")


def load_config(path: str | None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown config field {key!r}")
        if key == "synth":
            if not isinstance(value, dict):
                raise ConfigError("config field 'synth' must be an object")
            synth_known = {f.name for f in dataclasses.fields(syn.SynthSpec)}
            for sk, sv in value.items():
                if sk not in synth_known:
                    raise ConfigError(f"unknown config field 'synth.{sk}'")
                if sk in ("plant_magnitude", "noise_magnitude", "noise_nonzeros"):
                    sv = tuple(sv)
                setattr(cfg.synth, sk, sv)
        else:
            setattr(cfg, key, value)
    return cfg


# -- artifact paths -------------------------------------------------------


class Paths:
    def __init__(self, workdir: Path, cfg: PipelineConfig):
        self.workdir = workdir
        self.train = self._resolve(cfg.features_train)
        self.test = self._resolve(cfg.features_test)
        self.plants = workdir / "plants.json"
        self.ingest = workdir / "ingest.json"
        self.patterns_dir = workdir / "patterns"
        self.mine_summary = workdir / "mine.json"
        self.background = workdir / "background.npz"
        self.elements_dir = workdir / "elements"
        self.detectors_dir = workdir / "detectors"
        self.merge_summary = workdir / "merge.json"
        self.bank = workdir / "bank.json"
        self.enc_train = workdir / "encodings_train.features"
        self.enc_test = workdir / "encodings_test.features"
        self.model = workdir / "model.json"
        self.model_weights = workdir / "model_weights.features"
        self.eval_report = workdir / "eval.json"
        self.study_report = workdir / "study.json"

    def _resolve(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.workdir / q

    def patterns(self, cat: str) -> Path:
        return self.patterns_dir / f"{cat}.jsonl"

    def elements(self, cat: str) -> Path:
        return self.elements_dir / f"{cat}.json"

    def detectors(self, cat: str) -> Path:
        return self.detectors_dir / f"{cat}.features"


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(
            f"{path} is missing; run `patchmine {produced_by}` first"
        )
    return path


def _load_features(path: Path, produced_by: str, non_negative: bool = True) -> fs.FeatureSet:
    fset = fs.load(_require(path, produced_by), require_non_negative=non_negative)
    # path-independent provenance tag for patch refs
    fset.source = path.name
    return fset


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


# -- stages ---------------------------------------------------------------


def stage_synth(cfg: PipelineConfig, paths: Paths) -> None:
    spec = dataclasses.replace(cfg.synth, seed=cfg.seed)
    result = syn.generate_synthetic(spec)
    paths.workdir.mkdir(parents=True, exist_ok=True)
    fs.save(result.train, paths.train)
    fs.save(result.test, paths.test)
    _write_json(paths.plants, result.plant_log())
    print(
        f"synth: {len(result.train)} train / {len(result.test)} test patches, "
        f"D={spec.dimension}, {spec.n_categories} categories -> {paths.workdir}"
    )


def stage_ingest(cfg: PipelineConfig, paths: Paths) -> None:
    summary = {}
    for name, path in (("train", paths.train), ("test", paths.test)):
        fset = _load_features(path, "synth (or point features_* at real files)")
        fset.validate(require_non_negative=True)
        summary[name] = {
            "path": path.name,
            "records": len(fset),
            "dimension": fset.dimension,
            "images": len(fset.image_labels),
            "categories": fset.category_names,
            "scales": sorted(fset.scale_set()),
        }
    _write_json(paths.ingest, summary)
    print(f"ingest: validated train/test features -> {paths.ingest}")


def stage_study(cfg: PipelineConfig, paths: Paths) -> None:
    train = _load_features(paths.train, "synth")
    test = _load_features(paths.test, "synth")
    variants = {
        "sparsified": fs.sparsify,
        "binarized": fs.binarize,
    }
    table: dict[str, dict[str, float]] = {v: {} for v in variants}
    for k in cfg.study_k:
        for vname, transform in variants.items():
            def image_matrix(fset: fs.FeatureSet):
                groups = fset.record_indices_by_image()
                ids = sorted(groups)
                mat = np.stack(
                    [
                        fs.max_pool(
                            (fset.records[i] for i in groups[g]),
                            transform=lambda v: transform(v, k),
                        )
                        for g in ids
                    ]
                )
                labels = np.array([fset.image_labels[g] for g in ids])
                return mat, labels

            xtr, ytr = image_matrix(train)
            xte, yte = image_matrix(test)
            model = enc.train_classifier(
                xtr, ytr, train.category_names, folds=cfg.folds
            )
            pred = enc.predict_batch(model, xte)
            table[vname][str(k)] = float((pred == yte).mean())
    _write_json(paths.study_report, {"k": cfg.study_k, "accuracy": table})
    header = "k          " + "".join(f"{k:>10}" for k in cfg.study_k)
    print(header)
    for vname in variants:
        row = "".join(f"{table[vname][str(k)]:>10.4f}" for k in cfg.study_k)
        print(f"{vname:<11}{row}")
    print(f"study: report -> {paths.study_report}")


def _build_category_db(
    train: fs.FeatureSet, cat: int, cfg: PipelineConfig
) -> txn.TransactionDatabase:
    return txn.build_database(
        txn.select_by_category(train, cat),
        txn.select_excluding_category(train, cat),
        cfg.k,
        natural_rate=cfg.natural_rate,
        seed=cfg.seed,
    )


def stage_mine(cfg: PipelineConfig, paths: Paths) -> None:
    train = _load_features(paths.train, "synth")
    mcfg = mn.MineConfig(
        supp_min=cfg.supp_min,
        conf_min=cfg.conf_min,
        min_len=cfg.min_len,
        max_len=cfg.max_len,
    )
    mcfg.validate()
    paths.patterns_dir.mkdir(parents=True, exist_ok=True)
    summary = {"per_category": {}, "warnings": []}
    for cat, name in enumerate(train.category_names):
        db = _build_category_db(train, cat, cfg)
        patterns = mn.mine(db, mcfg)
        mn.save_patterns(patterns, paths.patterns(name))
        summary["per_category"][name] = len(patterns)
        if len(patterns) < 100:
            summary["warnings"].append(
                f"category {name!r}: {len(patterns)} patterns (fewer than 100)"
            )
        print(f"mine: {name}: {len(patterns)} patterns")
    _write_json(paths.mine_summary, summary)
    for w in summary["warnings"]:
        print(f"mine: warning: {w}")


def stage_merge(cfg: PipelineConfig, paths: Paths) -> None:
    train = _load_features(paths.train, "synth")
    stats = det.fit_background(train.features, lam=cfg.lam)
    np.savez(
        paths.background,
        mu0=stats.mu0,
        sigma=stats.sigma,
        lam=np.float64(stats.lam),
    )
    mconf = mrg.MergeConfig(threshold=cfg.threshold, max_rounds=cfg.max_rounds)
    paths.elements_dir.mkdir(parents=True, exist_ok=True)
    paths.detectors_dir.mkdir(parents=True, exist_ok=True)
    summary = {"per_category": {}, "warnings": []}
    for cat, name in enumerate(train.category_names):
        patterns = mn.load_patterns(
            _require(paths.patterns(name), "mine")
        )
        db = _build_category_db(train, cat, cfg)
        found = elem.retrieve_all(patterns, db)
        ensemble = mrg.ensemble_merge(found, stats, db.resolver, mconf)
        elem.save_elements(ensemble.elements, paths.elements(name))
        det.save_detectors(
            [
                (e.element_id, d)
                for e, d in zip(ensemble.elements, ensemble.detectors)
            ],
            paths.detectors(name),
            category=name,
        )
        summary["per_category"][name] = {
            "elements_in": len(found),
            "elements_out": len(ensemble.elements),
        }
        summary["warnings"].extend(ensemble.warnings)
        print(
            f"merge: {name}: {len(found)} elements -> "
            f"{len(ensemble.elements)} merged"
        )
    _write_json(paths.merge_summary, summary)
    for w in summary["warnings"]:
        print(f"merge: warning: {w}")


def stage_select(cfg: PipelineConfig, paths: Paths) -> None:
    train = _load_features(paths.train, "synth")
    chosen: dict[str, list[int]] = {}
    reports: list[str] = []
    for name in train.category_names:
        merged = elem.load_elements(_require(paths.elements(name), "merge"))
        dets = dict(det.load_detectors(_require(paths.detectors(name), "merge")))
        ensemble = mrg.MergedEnsemble(
            elements=merged,
            detectors=[dets[e.element_id] for e in merged],
            provenance=[[e.element_id] for e in merged],
        )
        idxs, report = enc.select_elements(ensemble, cfg.n_per_class)
        chosen[name] = [merged[i].element_id for i in idxs]
        if report:
            reports.append(f"category {name!r}: {report}")
    n_common = min(len(v) for v in chosen.values())
    if n_common < cfg.n_per_class:
        reports.append(
            f"bank trimmed to {n_common} detectors per class "
            f"(wanted {cfg.n_per_class})"
        )
        chosen = {k: v[:n_common] for k, v in chosen.items()}
    payload = {
        "categories": train.category_names,
        "n_per_class": n_common,
        "element_ids": chosen,
        "reports": reports,
    }
    _write_json(paths.bank, payload)
    print(
        f"select: {n_common} detectors per class x "
        f"{len(train.category_names)} categories -> {paths.bank}"
    )
    for r in reports:
        print(f"select: note: {r}")


def _load_bank(paths: Paths) -> enc.DetectorBank:
    with open(_require(paths.bank, "select")) as fh:
        meta = json.load(fh)
    per_category = []
    for name in meta["categories"]:
        dets = dict(det.load_detectors(_require(paths.detectors(name), "merge")))
        per_category.append(
            [(eid, dets[eid]) for eid in meta["element_ids"][name]]
        )
    bank, report = enc.build_bank(meta["categories"], per_category)
    if report:
        print(f"encode: note: {report}")
    return bank


def stage_encode(cfg: PipelineConfig, paths: Paths) -> None:
    bank = _load_bank(paths)
    train = _load_features(paths.train, "synth")
    test = _load_features(paths.test, "synth")
    if train.scale_set() != test.scale_set():
        raise ConfigError(
            f"train scales {sorted(train.scale_set())} differ from test "
            f"scales {sorted(test.scale_set())}; re-extract with matching "
            "scale lists"
        )
    for fset, out in ((train, paths.enc_train), (test, paths.enc_test)):
        encoded = enc.encode_set(
            fset, bank, empty_region_value=cfg.empty_region_value
        )
        fs.save(encoded, out)
    print(
        f"encode: {bank.n_detectors} detectors x 5 regions = "
        f"{bank.n_detectors * 5} dims -> {paths.enc_train.name}, "
        f"{paths.enc_test.name}"
    )


def _encoding_matrix(path: Path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    fset = fs.load(path)  # encodings may be negative: no sign check
    ids = [r.image_id for r in fset.records]
    x = fset.features.astype(np.float64)
    y = np.array([fset.image_labels[i] for i in ids], np.int64)
    return x, y, fset.category_names


def stage_train(cfg: PipelineConfig, paths: Paths) -> None:
    x, y, categories = _encoding_matrix(_require(paths.enc_train, "encode"))
    model = enc.train_classifier(x, y, categories, folds=cfg.folds)
    enc.save_model(model, paths.model, paths.model_weights)
    print(
        f"train: {len(categories)} one-vs-rest scorers, "
        f"C={model.reg_constants} -> {paths.model}"
    )


def stage_eval(cfg: PipelineConfig, paths: Paths) -> None:
    model = enc.load_model(_require(paths.model, "train"))
    x, y, _ = _encoding_matrix(_require(paths.enc_test, "encode"))
    report = enc.evaluate(model, x, y)
    _write_json(paths.eval_report, report)
    print(f"accuracy: {report['accuracy']:.4f}")
    for name, row in report["per_category"].items():
        acc = "n/a" if row["accuracy"] is None else f"{row['accuracy']:.4f}"
        ap = "n/a" if row["ap"] is None else f"{row['ap']:.4f}"
        print(f"  {name}: accuracy {acc}, ap {ap}")
    if report["mAP"] is not None:
        print(f"mAP: {report['mAP']:.4f}")
    print(f"eval: report -> {paths.eval_report}")


_PIPELINE = ("mine", "merge", "select", "encode", "train", "eval")

_STAGES = {
    "synth": stage_synth,
    "ingest": stage_ingest,
    "study": stage_study,
    "mine": stage_mine,
    "merge": stage_merge,
    "select": stage_select,
    "encode": stage_encode,
    "train": stage_train,
    "eval": stage_eval,
}


def stage_pipeline(cfg: PipelineConfig, paths: Paths) -> None:
    for name in _PIPELINE:
        _STAGES[name](cfg, paths)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchmine",
        description="pattern mining over sparsified patch activations",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*_STAGES, "pipeline"):
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument(
            "--workdir", default=".", help="artifact directory (default .)"
        )
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument(
            "--threads",
            type=int,
            default=1,
            help="worker-parallelism cap (stages are currently sequential)",
        )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {args.threads}")
        cfg.validate()
        cfg.synth.validate()
        workdir = Path(args.workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        paths = Paths(workdir, cfg)
        if args.command == "pipeline":
            stage_pipeline(cfg, paths)
        else:
            _STAGES[args.command](cfg, paths)
        return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except PatchMineError as exc:
        # format violations and retrieval mismatches mean an artifact is unusable
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
