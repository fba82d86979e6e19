"""Per-layer dictionaries from two-pass agglomerative clustering with medoid words."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .cdk import CdkParams, dissimilarity_matrix
from .graph_builder import GraphFeature, LayerSpec, build_graph_features
from .keypoint_io import ImageRecord, select_seeds

logger = logging.getLogger(__name__)

LINKAGES = ("average", "single", "complete")


@dataclass(frozen=True)
class Cluster:
    member_ids: tuple[int, ...]
    medoid_id: int


def _as_matrix(items, dissim) -> np.ndarray:
    if dissim is None:
        return np.asarray(items, dtype=float)
    n = len(items)
    mat = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            mat[i, j] = mat[j, i] = dissim(items[i], items[j])
    return mat


def cluster_medoid(member_ids: Sequence[int], dissim: np.ndarray | Callable[[int, int], float]) -> int:
    """Member with the smallest summed dissimilarity to all members; ties go to the smallest id.

    ``dissim`` is either a full matrix indexed by id or a callable on id pairs.
    """
    members = sorted(int(i) for i in member_ids)
    if not members:
        raise ValueError("empty cluster")
    if callable(dissim):
        sums = [sum(dissim(g, v) for v in members) for g in members]
    else:
        sub = np.asarray(dissim)[np.ix_(members, members)]
        sums = sub.sum(axis=1)
    best = min(range(len(members)), key=lambda i: (sums[i], members[i]))
    return members[best]


def merge_sequence(dist: np.ndarray, stop_at: int = 1, linkage: str = "average") -> list[tuple[int, int]]:
    """Greedy agglomeration down to ``stop_at`` clusters, as a list of merged slot pairs.

    Clusters live in the slot of their smallest member, so taking the first
    minimum of the upper triangle in row-major order breaks ties towards the
    pair with the smallest member ids.
    """
    if linkage not in LINKAGES:
        raise ValueError(f"linkage must be one of {LINKAGES}, got {linkage!r}")
    n = len(dist)
    full = np.array(dist, dtype=float, copy=True)
    work = full.copy()
    work[np.tril_indices(n)] = np.inf
    sizes = np.ones(n)
    alive = np.ones(n, dtype=bool)
    merges = []
    while n - len(merges) > max(stop_at, 1):
        i, j = divmod(int(np.argmin(work)), n)
        if not np.isfinite(work[i, j]):
            break
        # Lance-Williams update of slot i; slot j is retired
        if linkage == "average":
            new = (sizes[i] * full[i] + sizes[j] * full[j]) / (sizes[i] + sizes[j])
        elif linkage == "single":
            new = np.minimum(full[i], full[j])
        else:
            new = np.maximum(full[i], full[j])
        full[i, :] = new
        full[:, i] = new
        alive[j] = False
        lower = np.flatnonzero(alive[:i])
        higher = i + 1 + np.flatnonzero(alive[i + 1 :])
        work[lower, i] = new[lower]
        work[i, higher] = new[higher]
        work[j, :] = np.inf
        work[:, j] = np.inf
        sizes[i] += sizes[j]
        merges.append((i, j))
    return merges


def partition_after(n: int, merges: Sequence[tuple[int, int]]) -> list[list[int]]:
    """Clusters (sorted member lists, ordered by smallest member) after replaying ``merges``."""
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    for i, j in merges:
        members[i].extend(members.pop(j))
    return [sorted(members[k]) for k in sorted(members)]


def agglomerative_cluster(
    items: Sequence,
    dissim: Callable | None = None,
    target_k: int = 1,
    linkage: str = "average",
) -> list[Cluster]:
    """Agglomerative clustering of ``items`` into ``target_k`` medoid clusters.

    If ``dissim`` is None, ``items`` must already be a square dissimilarity
    matrix. Clusters are returned ordered by their smallest member id.
    """
    if target_k < 1:
        raise ValueError(f"target_k must be >= 1, got {target_k}")
    mat = _as_matrix(items, dissim)
    n = len(mat)
    if n == 0:
        raise ValueError("nothing to cluster")
    if target_k > n:
        logger.warning("target_k=%d exceeds %d items; returning singletons", target_k, n)
    partition = partition_after(n, merge_sequence(mat, stop_at=target_k, linkage=linkage))
    return [Cluster(tuple(m), cluster_medoid(m, mat)) for m in partition]


def clusters_at(mat: np.ndarray, sizes: Sequence[int], linkage: str = "average") -> dict[int, list[Cluster]]:
    """Clusterings for several target sizes from a single merge sequence."""
    n = len(mat)
    merges = merge_sequence(mat, stop_at=min(sizes), linkage=linkage)
    out = {}
    for k in sizes:
        partition = partition_after(n, merges[: max(n - k, 0)])
        out[k] = [Cluster(tuple(m), cluster_medoid(m, mat)) for m in partition]
    return out


@dataclass(frozen=True, eq=False)
class Codebook:
    layer: int
    words: tuple[GraphFeature, ...]
    params: CdkParams
    linkage: str = "average"
    build_manifest: dict = field(default_factory=dict)
    config_hash: str = ""

    def __len__(self) -> int:
        return len(self.words)

    def to_json(self) -> dict:
        return {
            "layer": self.layer,
            "params": self.params.to_dict(),
            "linkage": self.linkage,
            "config_hash": self.config_hash,
            "build_manifest": self.build_manifest,
            "words": [w.to_json(with_descriptors=True) for w in self.words],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Codebook":
        return cls(
            layer=int(obj["layer"]),
            words=tuple(GraphFeature.from_json(w) for w in obj["words"]),
            params=CdkParams.from_dict(obj["params"]),
            linkage=str(obj.get("linkage", "average")),
            build_manifest=dict(obj.get("build_manifest", {})),
            config_hash=str(obj.get("config_hash", "")),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path) -> "Codebook":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class FirstPass:
    """Pooled first-pass medoids of every object, with their dissimilarity matrix."""

    medoids: list[GraphFeature]
    matrix: np.ndarray
    manifest: dict


def first_pass(
    features_by_object: Mapping[str, Sequence[GraphFeature]],
    layer: int,
    first_pass_k: int,
    params: CdkParams,
    linkage: str = "average",
    workers: int = 1,
) -> FirstPass:
    if first_pass_k < 1:
        raise ValueError(f"first_pass_k must be >= 1, got {first_pass_k}")
    labels = sorted(features_by_object)
    warnings = []

    def run(label):
        feats = [f for f in features_by_object[label] if f.layer == layer]
        if not feats:
            return label, []
        if first_pass_k >= len(feats):
            return label, feats
        mat = dissimilarity_matrix(feats, params=params)
        clusters = agglomerative_cluster(mat, target_k=first_pass_k, linkage=linkage)
        return label, [feats[c.medoid_id] for c in clusters]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, labels))
    else:
        results = [run(label) for label in labels]

    medoids: list[GraphFeature] = []
    counts = {}
    for label, meds in results:
        if not meds:
            msg = f"object {label!r} has no features at layer {layer}; skipped"
            logger.warning(msg)
            warnings.append(msg)
        counts[label] = len(meds)
        medoids.extend(meds)
    matrix = dissimilarity_matrix(medoids, params=params) if medoids else np.zeros((0, 0))
    manifest = {
        "objects": labels,
        "first_pass_k": first_pass_k,
        "first_pass_counts": counts,
        "pass2_inputs": len(medoids),
        "warnings": warnings,
    }
    return FirstPass(medoids, matrix, manifest)


def second_pass(
    fp: FirstPass,
    layer: int,
    final_sizes: Sequence[int],
    params: CdkParams,
    linkage: str = "average",
) -> dict[int, Codebook]:
    """Cluster the pooled medoids into each requested dictionary size."""
    if not fp.medoids:
        raise ValueError(f"no training features at layer {layer}")
    if any(s < 1 for s in final_sizes):
        raise ValueError(f"dictionary sizes must be >= 1, got {list(final_sizes)}")
    n = len(fp.medoids)
    by_size = clusters_at(fp.matrix, sorted(set(final_sizes)), linkage=linkage)
    out = {}
    for size in final_sizes:
        clusters = by_size[size]
        manifest = dict(fp.manifest, final_size_requested=size, final_size=len(clusters))
        manifest["warnings"] = list(fp.manifest["warnings"])
        if size > n:
            msg = f"requested {size} words but only {n} first-pass medoids are available"
            logger.warning(msg)
            manifest["warnings"].append(msg)
        words = tuple(fp.medoids[c.medoid_id] for c in clusters)
        out[size] = Codebook(layer, words, params, linkage, manifest)
    return out


def build_dictionary_from_features(
    features_by_object: Mapping[str, Sequence[GraphFeature]],
    layer: int,
    first_pass_k: int,
    final_size: int,
    params: CdkParams = CdkParams(),
    linkage: str = "average",
) -> Codebook:
    fp = first_pass(features_by_object, layer, first_pass_k, params, linkage)
    return second_pass(fp, layer, [final_size], params, linkage)[final_size]


def build_dictionary(
    training: Sequence[ImageRecord],
    layer: int,
    first_pass_k: int,
    final_size: int,
    params: CdkParams = CdkParams(),
    *,
    n_seeds: int = 300,
    layers: LayerSpec = LayerSpec(),
    linkage: str = "average",
) -> Codebook:
    """Dictionary for one layer straight from training images.

    Features of each object are clustered separately first; the pooled
    medoids of all objects are then clustered into ``final_size`` words.
    """
    if not training:
        raise ValueError("training set is empty")
    by_object: dict[str, list[GraphFeature]] = {}
    for rec in training:
        feats = build_graph_features(rec, select_seeds(rec.keypoints, n_seeds), layers) if rec.keypoints else []
        by_object.setdefault(rec.object_label, []).extend(f for f in feats if f.layer == layer)
    return build_dictionary_from_features(by_object, layer, first_pass_k, final_size, params, linkage)
