"""Staged pipeline: extract -> build-dict -> signatures -> evaluate.

Each stage reads the previous stage's files from the output directory and
stamps its own artifacts with a hash of every configuration value that
influenced them, so stale or foreign artifacts are refused instead of mixed.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .cdk import CdkParams
from .codebook import Codebook, first_pass, second_pass
from .errors import ConfigMismatchError, DataFormatError, MissingArtifactError
from .graph_builder import LayerSpec, build_graph_features, read_feature_dump, write_feature_dump
from .keypoint_io import ImageRecord, load_dataset, save_dataset, select_seeds
from .retrieval import EvalReport, evaluate, report_json, reports_to_csv, split_dataset
from .signatures import (
    NORMALIZATIONS,
    METRICS,
    compute_signature,
    nested_concat,
    read_signatures,
    signature_from_record,
    signature_record,
    write_signatures,
)
from .synthetic import BenchmarkSpec, synthetic_benchmark

logger = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    manifest: str = ""
    output_dir: str = "out"
    n_seeds: int = 300
    layers: list[int] = field(default_factory=lambda: [0, 3, 6, 9])
    alpha: float = 1e-4
    beta: float = 0.1
    iterations: int = 2
    distance_flavor: str = "squared_l2"
    linkage: str = "average"
    first_pass_k: int = 500
    dict_sizes: list[int] = field(default_factory=lambda: [50, 100, 500, 1000, 2000, 5000])
    normalization: str = "l1_normalized"
    metric: str = "l1"
    split_fraction: float = 0.5
    rng_seed: int = 0
    resplit: bool = False
    workers: int = 1

    def __post_init__(self):
        self.layers = [int(k) for k in self.layers]
        self.dict_sizes = [int(s) for s in self.dict_sizes]
        LayerSpec(tuple(self.layers))
        self.cdk_params  # validates
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if self.n_seeds < 1 or self.first_pass_k < 1 or any(s < 1 for s in self.dict_sizes):
            raise ValueError("n_seeds, first_pass_k and dictionary sizes must be >= 1")

    @property
    def layer_spec(self) -> LayerSpec:
        return LayerSpec(tuple(self.layers))

    @property
    def cdk_params(self) -> CdkParams:
        return CdkParams(self.alpha, self.beta, self.iterations, self.distance_flavor)

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(json.dumps(part, sort_keys=True).encode() if not isinstance(part, bytes) else part)
        h.update(b"\0")
    return h.hexdigest()[:16]


def dataset_hash(manifest_path) -> str:
    manifest_path = Path(manifest_path)
    h = hashlib.sha256(manifest_path.read_bytes())
    manifest = json.loads(manifest_path.read_text())
    for entry in manifest["images"]:
        kp = manifest_path.parent / entry["keypoint_file"]
        if kp.is_file():
            h.update(kp.read_bytes())
    return h.hexdigest()[:16]


def features_hash(cfg: PipelineConfig) -> str:
    return _digest("features", dataset_hash(cfg.manifest), cfg.n_seeds, cfg.layers)


def codebook_hash(cfg: PipelineConfig) -> str:
    split = [cfg.resplit, cfg.split_fraction, cfg.rng_seed] if cfg.resplit else [False]
    return _digest(
        "codebook", features_hash(cfg), split, cfg.cdk_params.to_dict(), cfg.linkage, cfg.first_pass_k
    )


def signatures_hash(cfg: PipelineConfig) -> str:
    return _digest("signatures", codebook_hash(cfg), cfg.normalization)


def _write_config(cfg: PipelineConfig) -> None:
    cfg.out.mkdir(parents=True, exist_ok=True)
    cfg.save(cfg.out / "config.json")


def _load_records(cfg: PipelineConfig) -> list[ImageRecord]:
    if not cfg.manifest:
        raise DataFormatError("no dataset manifest configured")
    records = load_dataset(cfg.manifest)
    if cfg.resplit:
        train, test = split_dataset(records, cfg.split_fraction, cfg.rng_seed)
        split = {r.image_id: r.split for r in train + test}
        records = [r.with_split(split[r.image_id]) for r in records]
    return records


def _feature_path(cfg: PipelineConfig, image_id: str) -> Path:
    return cfg.out / "features" / f"{image_id.replace('/', '_')}.jsonl"


def codebook_path(cfg: PipelineConfig, layer: int, size: int) -> Path:
    return cfg.out / "codebooks" / f"layer{layer}_size{size}.json"


def signature_path(cfg: PipelineConfig, size: int) -> Path:
    return cfg.out / "signatures" / f"size{size}.jsonl"


def layer_subsets(n_layers: int) -> list[tuple[int, ...]]:
    """Each layer alone, then the nested prefixes {0,1}, {0,1,2}, ..."""
    singles = [(l,) for l in range(n_layers)]
    nested = [tuple(range(j + 1)) for j in range(1, n_layers)]
    return singles + nested


def subset_name(subset: Sequence[int]) -> str:
    return "+".join(str(l) for l in subset)


# stages ---------------------------------------------------------------------


def cmd_extract(cfg: PipelineConfig) -> dict[str, int]:
    """Write one graph feature dump per image; returns feature counts per image."""
    records = _load_records(cfg)
    _write_config(cfg)
    (cfg.out / "features").mkdir(parents=True, exist_ok=True)
    layers = cfg.layer_spec
    counts = {}
    for rec in records:
        if rec.keypoints:
            feats = build_graph_features(rec, select_seeds(rec.keypoints, cfg.n_seeds), layers)
        else:
            logger.warning("image %s has no keypoints; writing an empty feature file", rec.image_id)
            feats = []
        write_feature_dump(_feature_path(cfg, rec.image_id), feats)
        counts[rec.image_id] = len(feats)
    meta = {"config_hash": features_hash(cfg), "n_seeds": cfg.n_seeds, "layers": cfg.layers, "counts": counts}
    (cfg.out / "features" / "_meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    return counts


def _check_features(cfg: PipelineConfig) -> None:
    meta_path = cfg.out / "features" / "_meta.json"
    if not meta_path.is_file():
        raise MissingArtifactError(f"no extracted features in {cfg.out / 'features'}; run extract first")
    meta = json.loads(meta_path.read_text())
    if meta.get("config_hash") != features_hash(cfg):
        raise ConfigMismatchError(
            f"features in {meta_path.parent} were extracted under a different dataset/seed/layer config"
        )


def _load_features(cfg: PipelineConfig, rec: ImageRecord):
    path = _feature_path(cfg, rec.image_id)
    if not path.is_file():
        raise MissingArtifactError(f"missing feature file for image {rec.image_id}: {path}")
    return read_feature_dump(path, rec)


def cmd_build_dict(
    cfg: PipelineConfig, layers: Sequence[int] | None = None, sizes: Sequence[int] | None = None
) -> list[Path]:
    """Build and save codebooks for the given layers and dictionary sizes (default: all)."""
    _check_features(cfg)
    records = _load_records(cfg)
    _write_config(cfg)
    layers = list(range(len(cfg.layers))) if layers is None else list(layers)
    sizes = list(cfg.dict_sizes) if sizes is None else list(sizes)
    for layer in layers:
        if not 0 <= layer < len(cfg.layers):
            raise ValueError(f"layer {layer} is not configured (layers: {cfg.layers})")
    params = cfg.cdk_params
    by_object: dict[str, list] = {}
    for rec in records:
        if rec.split != "train":
            continue
        by_object.setdefault(rec.object_label, []).extend(_load_features(cfg, rec))
    if not by_object:
        raise DataFormatError("no training images in the dataset")

    (cfg.out / "codebooks").mkdir(parents=True, exist_ok=True)
    stamp = codebook_hash(cfg)
    written = []
    for layer in layers:
        fp = first_pass(by_object, layer, cfg.first_pass_k, params, cfg.linkage, cfg.workers)
        for size, cb in second_pass(fp, layer, sizes, params, cfg.linkage).items():
            cb = dataclasses.replace(cb, config_hash=stamp)
            path = codebook_path(cfg, layer, size)
            cb.save(path)
            written.append(path)
    return written


def _load_codebooks(cfg: PipelineConfig, size: int) -> list[Codebook]:
    stamp = codebook_hash(cfg)
    books = []
    for layer in range(len(cfg.layers)):
        path = codebook_path(cfg, layer, size)
        if not path.is_file():
            raise MissingArtifactError(f"missing codebook for layer {layer} (size {size}): {path}")
        cb = Codebook.load(path)
        if cb.layer != layer:
            raise DataFormatError(f"{path} holds layer {cb.layer}, expected layer {layer}")
        if cb.config_hash != stamp:
            raise ConfigMismatchError(f"codebook {path} was built under a different config")
        books.append(cb)
    return books


def cmd_signatures(cfg: PipelineConfig, sizes: Sequence[int] | None = None) -> list[Path]:
    _check_features(cfg)
    records = _load_records(cfg)
    _write_config(cfg)
    sizes = list(cfg.dict_sizes) if sizes is None else list(sizes)
    n_layers = len(cfg.layers)
    (cfg.out / "signatures").mkdir(parents=True, exist_ok=True)
    stamp = signatures_hash(cfg)
    features = {rec.image_id: _load_features(cfg, rec) for rec in records}
    written = []
    for size in sizes:
        books = _load_codebooks(cfg, size)
        rows = []
        for rec in records:
            per_layer = [[f for f in features[rec.image_id] if f.layer == l] for l in range(n_layers)]
            sig = compute_signature(per_layer, books, cfg.normalization)
            rows.append(
                signature_record(
                    rec.image_id, rec.object_label, rec.split, sig,
                    dict_size=size, config_hash=stamp,
                )
            )
        path = signature_path(cfg, size)
        write_signatures(path, rows)
        written.append(path)
    return written


def cmd_evaluate(cfg: PipelineConfig, sizes: Sequence[int] | None = None) -> list[EvalReport]:
    """One report per (dictionary size, layer subset); also writes ``reports/eval.csv``."""
    _write_config(cfg)
    sizes = list(cfg.dict_sizes) if sizes is None else list(sizes)
    stamp = signatures_hash(cfg)
    report_dir = cfg.out / "reports"
    report_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for size in sizes:
        path = signature_path(cfg, size)
        if not path.is_file():
            raise MissingArtifactError(f"missing signatures for dictionary size {size}: {path}")
        rows = read_signatures(path)
        if any(r.get("config_hash") != stamp for r in rows):
            raise ConfigMismatchError(f"signatures in {path} were computed under a different config")
        labels = {r["image_id"]: r["object_label"] for r in rows}
        sigs = {r["image_id"]: signature_from_record(r) for r in rows}
        for subset in layer_subsets(len(cfg.layers)):
            vec = {i: nested_concat(s, subset) for i, s in sigs.items()}
            train = {r["image_id"]: vec[r["image_id"]] for r in rows if r["split"] == "train"}
            test = {r["image_id"]: vec[r["image_id"]] for r in rows if r["split"] == "test"}
            config = {
                "dict_size": size,
                "layers": list(subset),
                "neighbor_counts": [cfg.layers[l] for l in subset],
                "normalization": cfg.normalization,
                "distance_flavor": cfg.distance_flavor,
                "ap_variant": "non-interpolated, full list",
                "split_rounding": "train = ceil(fraction * n)",
                "config_hash": stamp,
            }
            rep = evaluate(test, train, labels, cfg.metric, config)
            (report_dir / f"size{size}_layers{subset_name(subset)}.json").write_text(report_json(rep))
            reports.append(rep)
    (report_dir / "eval.csv").write_text(reports_to_csv(reports))
    return reports


def run_all(cfg: PipelineConfig) -> list[EvalReport]:
    cmd_extract(cfg)
    cmd_build_dict(cfg)
    cmd_signatures(cfg)
    return cmd_evaluate(cfg)


def cmd_synth(directory, rng_seed: int = 0, bench: BenchmarkSpec = BenchmarkSpec()) -> Path:
    """Write the bundled synthetic benchmark as a manifest plus keypoint files."""
    records = synthetic_benchmark(rng_seed, bench)
    return save_dataset(records, directory, bench.descriptor_dim)


def benchmark_config(manifest, output_dir, rng_seed: int = 0) -> PipelineConfig:
    """Desk-scale settings for the synthetic benchmark; CDK parameters stay at their defaults."""
    return PipelineConfig(
        manifest=str(manifest),
        output_dir=str(output_dir),
        n_seeds=12,
        first_pass_k=24,
        dict_sizes=[16, 32],
        rng_seed=rng_seed,
    )
