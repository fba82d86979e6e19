"""Nested graph features: k-nearest-neighbour node sets triangulated per layer."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .delaunay import delaunay_edges
from .keypoint_io import ImageRecord, KeyPoint, SeedSet

DEFAULT_NEIGHBOR_COUNTS = (0, 3, 6, 9)


@dataclass(frozen=True)
class LayerSpec:
    neighbor_counts: tuple[int, ...] = DEFAULT_NEIGHBOR_COUNTS

    def __post_init__(self):
        counts = tuple(int(k) for k in self.neighbor_counts)
        if not counts or counts[0] != 0:
            raise ValueError(f"first layer must have 0 neighbours, got {counts}")
        if any(b <= a for a, b in zip(counts, counts[1:])):
            raise ValueError(f"neighbour counts must be strictly increasing, got {counts}")
        object.__setattr__(self, "neighbor_counts", counts)

    def __len__(self) -> int:
        return len(self.neighbor_counts)

    def node_count(self, layer: int) -> int:
        return self.neighbor_counts[layer] + 1


@dataclass(frozen=True, eq=False)
class GraphFeature:
    layer: int
    seed_index: int
    node_indices: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    node_descriptors: np.ndarray = field(repr=False)
    short: bool = False
    image_id: str = ""

    @property
    def n_nodes(self) -> int:
        return len(self.node_indices)

    def adjacency(self) -> np.ndarray:
        n = self.n_nodes
        adj = np.zeros((n, n))
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = 1.0
        return adj

    def same_structure(self, other: "GraphFeature") -> bool:
        return (
            self.layer == other.layer
            and self.seed_index == other.seed_index
            and self.node_indices == other.node_indices
            and self.edges == other.edges
        )

    def to_json(self, with_descriptors: bool = False) -> dict:
        obj = {
            "image_id": self.image_id,
            "seed_index": self.seed_index,
            "layer": self.layer,
            "node_indices": list(self.node_indices),
            "edges": [list(e) for e in self.edges],
        }
        if self.short:
            obj["short"] = True
        if with_descriptors:
            obj["descriptors"] = self.node_descriptors.tolist()
        return obj

    @classmethod
    def from_json(cls, obj: dict, descriptors: np.ndarray | None = None) -> "GraphFeature":
        if descriptors is None:
            descriptors = np.asarray(obj["descriptors"], dtype=float)
        return cls(
            layer=int(obj["layer"]),
            seed_index=int(obj["seed_index"]),
            node_indices=tuple(int(i) for i in obj["node_indices"]),
            edges=tuple((int(i), int(j)) for i, j in obj["edges"]),
            node_descriptors=descriptors,
            short=bool(obj.get("short", False)),
            image_id=str(obj.get("image_id", "")),
        )


def _neighbor_order(seed_index: int, positions: np.ndarray) -> np.ndarray:
    """All other points sorted by (distance, y, x, index) from the seed."""
    d2 = ((positions - positions[seed_index]) ** 2).sum(axis=1)
    idx = np.arange(len(positions))
    order = np.lexsort((idx, positions[:, 0], positions[:, 1], d2))
    return order[order != seed_index]


def knn_neighbors(seed_index: int, keypoints: Sequence[KeyPoint] | np.ndarray, k: int) -> list[int]:
    """The ``k`` spatially nearest keypoints to the seed, nearest first.

    Equal distances are ordered by ascending ``(y, x)`` and then index. When
    fewer than ``k`` other points exist, all of them are returned.
    """
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    positions = _as_positions(keypoints)
    return [int(i) for i in _neighbor_order(seed_index, positions)[:k]]


def _as_positions(keypoints) -> np.ndarray:
    if isinstance(keypoints, np.ndarray):
        return keypoints.reshape(-1, 2).astype(float)
    return np.array([(kp.x, kp.y) for kp in keypoints], dtype=float).reshape(-1, 2)


def build_graph_features(
    image: ImageRecord, seeds: SeedSet | Iterable[int], layers: LayerSpec = LayerSpec()
) -> list[GraphFeature]:
    """One feature per (seed, layer), seed-major.

    The node list is the seed followed by its neighbours by increasing
    distance, so each layer's node list is a prefix of the next one.
    """
    positions = image.positions
    descriptors = image.descriptors
    max_k = layers.neighbor_counts[-1]
    features = []
    for seed in seeds:
        seed = int(seed)
        neighbors = _neighbor_order(seed, positions)[:max_k]
        for layer, k in enumerate(layers.neighbor_counts):
            nodes = (seed, *(int(i) for i in neighbors[:k]))
            edges = tuple(sorted(delaunay_edges(positions[list(nodes)])))
            features.append(
                GraphFeature(
                    layer=layer,
                    seed_index=seed,
                    node_indices=nodes,
                    edges=edges,
                    node_descriptors=descriptors[list(nodes)],
                    short=len(nodes) < k + 1,
                    image_id=image.image_id,
                )
            )
    return features


def features_by_layer(features: Iterable[GraphFeature], n_layers: int) -> list[list[GraphFeature]]:
    out: list[list[GraphFeature]] = [[] for _ in range(n_layers)]
    for f in features:
        out[f.layer].append(f)
    return out


def write_feature_dump(path, features: Iterable[GraphFeature]) -> None:
    with open(path, "w") as fh:
        for f in features:
            fh.write(json.dumps(f.to_json()) + "\n")


def read_feature_dump(path, image: ImageRecord) -> list[GraphFeature]:
    """Read a dump written by :func:`write_feature_dump`, re-attaching descriptors from ``image``."""
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            nodes = [int(i) for i in obj["node_indices"]]
            out.append(GraphFeature.from_json(obj, descriptors=image.descriptors[nodes]))
    return out
