"""Bag-of-graph-words histograms, nested concatenation and signature distances."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cdk import dissimilarity_matrix
from .codebook import Codebook
from .errors import GraphWordsError
from .graph_builder import GraphFeature

NORMALIZATIONS = ("l1_normalized", "raw_counts")
METRICS = ("l1", "l2", "hamming")
HAMMING_TOL = 1e-12


class EmptyCodebookError(GraphWordsError):
    pass


@dataclass(frozen=True, eq=False)
class Signature:
    layer_histograms: tuple[np.ndarray, ...]
    normalization: str = "l1_normalized"
    layers: tuple[int, ...] = ()

    def __post_init__(self):
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}, got {self.normalization!r}")
        if not self.layers:
            object.__setattr__(self, "layers", tuple(range(len(self.layer_histograms))))

    def histogram(self, layer: int) -> np.ndarray:
        return self.layer_histograms[self.layers.index(layer)]

    def to_json(self) -> list[dict]:
        return [{"layer": l, "histogram": h.tolist()} for l, h in zip(self.layers, self.layer_histograms)]


def assign_words(features: Sequence[GraphFeature], codebook: Codebook) -> np.ndarray:
    """Index of the closest word for every feature; ties go to the lowest index."""
    if len(codebook.words) == 0:
        raise EmptyCodebookError(f"codebook for layer {codebook.layer} has no words")
    if not features:
        return np.zeros(0, dtype=int)
    for f in features:
        if f.layer != codebook.layer:
            raise ValueError(f"feature layer {f.layer} does not match codebook layer {codebook.layer}")
    dist = dissimilarity_matrix(features, codebook.words, codebook.params)
    return np.argmin(dist, axis=1)


def assign_word(feature: GraphFeature, codebook: Codebook) -> int:
    return int(assign_words([feature], codebook)[0])


def compute_signature(
    features_per_layer: Sequence[Sequence[GraphFeature]],
    codebooks: Sequence[Codebook],
    normalization: str = "l1_normalized",
) -> Signature:
    """Per-layer word histograms; every feature counts once, in its closest word."""
    if len(features_per_layer) != len(codebooks):
        raise ValueError(f"{len(features_per_layer)} feature layers but {len(codebooks)} codebooks")
    hists = []
    for feats, cb in zip(features_per_layer, codebooks):
        counts = np.bincount(assign_words(feats, cb), minlength=len(cb)).astype(float)
        if normalization == "l1_normalized" and counts.sum() > 0:
            counts = counts / counts.sum()
        hists.append(counts)
    return Signature(tuple(hists), normalization, tuple(cb.layer for cb in codebooks))


def nested_concat(signature: Signature, layer_subset: Sequence[int]) -> np.ndarray:
    """Concatenate the selected layers' histograms, in layer order, without reweighting."""
    subset = list(layer_subset)
    if not subset:
        raise ValueError("layer subset is empty")
    if subset != sorted(set(subset)):
        raise ValueError(f"layer subset must be strictly ascending, got {subset}")
    missing = [l for l in subset if l not in signature.layers]
    if missing:
        raise ValueError(f"signature has no layers {missing}")
    return np.concatenate([signature.histogram(l) for l in subset])


def signature_distance(u, v, metric: str = "l1") -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"signature length mismatch: {u.shape} vs {v.shape}")
    diff = u - v
    if metric == "l1":
        return float(np.abs(diff).sum())
    if metric == "l2":
        return float(np.sqrt(diff @ diff))
    if metric == "hamming":
        return float(np.count_nonzero(np.abs(diff) > HAMMING_TOL))
    raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")


def signature_record(image_id: str, object_label: str, split: str, sig: Signature, **extra) -> dict:
    return {
        "image_id": image_id,
        "object_label": object_label,
        "split": split,
        "normalization": sig.normalization,
        "layers": sig.to_json(),
        **extra,
    }


def signature_from_record(obj: dict) -> Signature:
    layers = tuple(int(entry["layer"]) for entry in obj["layers"])
    hists = tuple(np.asarray(entry["histogram"], dtype=float) for entry in obj["layers"])
    return Signature(hists, obj["normalization"], layers)


def write_signatures(path, records: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_signatures(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
