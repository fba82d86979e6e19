"""Context dependent kernel between two graph features and the derived dissimilarity.

For graphs A (m nodes) and B (n nodes) the kernel lives on their union: the
first m rows/columns are A's nodes, the next n are B's. It starts from the
normalised exponential of the descriptor distances and is repeatedly
reinforced along the (block-diagonal) adjacency, renormalising to unit L1
mass each step. The dissimilarity is ``s(A,A) + s(B,B) - 2 s(A,B)`` where
``s`` sums a block of the final kernel.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .graph_builder import GraphFeature

logger = logging.getLogger(__name__)

FLAVORS = ("squared_l2", "l2")
_NEGATIVE_TOL = 1e-12
_CHUNK = 512


@dataclass(frozen=True)
class CdkParams:
    alpha: float = 1e-4
    beta: float = 0.1
    iterations: int = 2
    distance_flavor: str = "squared_l2"

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.distance_flavor not in FLAVORS:
            raise ValueError(f"distance_flavor must be one of {FLAVORS}, got {self.distance_flavor!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "CdkParams":
        return cls(
            alpha=float(obj["alpha"]),
            beta=float(obj["beta"]),
            iterations=int(obj["iterations"]),
            distance_flavor=str(obj["distance_flavor"]),
        )


@dataclass(frozen=True, eq=False)
class PairMatrices:
    d_matrix: np.ndarray
    t_matrix: np.ndarray
    m: int
    n: int


class _ClampCounter:
    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def add(self, k: int) -> None:
        if k:
            with self._lock:
                self.count += k


negative_rho_clamps = _ClampCounter()


def _descriptor_distances(x: np.ndarray, y: np.ndarray, flavor: str) -> np.ndarray:
    diff = x[..., :, None, :] - y[..., None, :, :]
    sq = np.einsum("...k,...k->...", diff, diff)
    return sq if flavor == "squared_l2" else np.sqrt(sq)


def point_dissimilarity(a, b, flavor: str = "squared_l2") -> float:
    """Descriptor distance used in place of the kernel for isolated points."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"descriptor dimension mismatch: {a.shape} vs {b.shape}")
    if flavor not in FLAVORS:
        raise ValueError(f"unknown distance flavor {flavor!r}")
    diff = a - b
    sq = float(diff @ diff)
    return sq if flavor == "squared_l2" else float(np.sqrt(sq))


def assemble_pair_matrices(a: GraphFeature, b: GraphFeature, flavor: str = "squared_l2") -> PairMatrices:
    da, db = a.node_descriptors, b.node_descriptors
    if da.shape[1] != db.shape[1]:
        raise ValueError(f"descriptor dimension mismatch: {da.shape[1]} vs {db.shape[1]}")
    if flavor not in FLAVORS:
        raise ValueError(f"unknown distance flavor {flavor!r}")
    m, n = a.n_nodes, b.n_nodes
    union = np.vstack([da, db])
    d = _descriptor_distances(union, union, flavor)
    np.fill_diagonal(d, 0.0)
    t = np.zeros((m + n, m + n))
    t[:m, :m] = a.adjacency()
    t[m:, m:] = b.adjacency()
    return PairMatrices(d, t, m, n)


def _normalized_exp(exponent: np.ndarray) -> np.ndarray:
    # shifting by the max is neutral under the L1 renormalisation
    e = np.exp(exponent - exponent.max(axis=(-2, -1), keepdims=True))
    return e / e.sum(axis=(-2, -1), keepdims=True)


def cdk_iterate(pm: PairMatrices, params: CdkParams, return_history: bool = False):
    """Kernel after ``params.iterations`` propagation steps.

    With ``return_history`` the list of every intermediate kernel (step 0
    included) is returned instead.
    """
    base = -pm.d_matrix / params.beta
    k = _normalized_exp(base)
    history = [k]
    for _ in range(params.iterations):
        k = _normalized_exp(base + (params.alpha / params.beta) * (pm.t_matrix @ k @ pm.t_matrix))
        history.append(k)
    return history if return_history else k


def _rho_from_kernel(k: np.ndarray, m: int) -> np.ndarray:
    s_aa = k[..., :m, :m].sum(axis=(-2, -1))
    s_bb = k[..., m:, m:].sum(axis=(-2, -1))
    s_ab = k[..., :m, m:].sum(axis=(-2, -1))
    rho = s_aa + s_bb - 2.0 * s_ab
    negative_rho_clamps.add(int(np.count_nonzero(rho < -_NEGATIVE_TOL)))
    return np.maximum(rho, 0.0)


def graph_dissimilarity(a: GraphFeature, b: GraphFeature, params: CdkParams = CdkParams()) -> float:
    if a.layer != b.layer:
        raise ValueError(f"cannot compare features from layers {a.layer} and {b.layer}")
    pm = assemble_pair_matrices(a, b, params.distance_flavor)
    return float(_rho_from_kernel(cdk_iterate(pm, params), pm.m))


def feature_dissimilarity(a: GraphFeature, b: GraphFeature, params: CdkParams = CdkParams()) -> float:
    """Layer-appropriate dissimilarity: descriptor distance on layer 0, kernel otherwise."""
    if a.layer == 0 and b.layer == 0:
        return point_dissimilarity(a.node_descriptors[0], b.node_descriptors[0], params.distance_flavor)
    return graph_dissimilarity(a, b, params)


# batched evaluation -------------------------------------------------------


def _group_by_size(features: Sequence[GraphFeature]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, f in enumerate(features):
        groups.setdefault(f.n_nodes, []).append(i)
    return groups


def _batched_rho(
    desc_a: np.ndarray, adj_a: np.ndarray, self_a: np.ndarray,
    desc_b: np.ndarray, adj_b: np.ndarray, self_b: np.ndarray,
    params: CdkParams,
) -> np.ndarray:
    """Dissimilarities for P pairs given stacked (P, m, f) / (P, n, f) inputs.

    ``self_a`` and ``self_b`` hold each graph's own descriptor distances, so
    only the cross block is computed per pair.
    """
    p, m = desc_a.shape[:2]
    n = desc_b.shape[1]
    cross = _descriptor_distances(desc_a, desc_b, params.distance_flavor)
    d = np.empty((p, m + n, m + n))
    d[:, :m, :m] = self_a
    d[:, m:, m:] = self_b
    d[:, :m, m:] = cross
    d[:, m:, :m] = cross.transpose(0, 2, 1)
    t = np.zeros_like(d)
    t[:, :m, :m] = adj_a
    t[:, m:, m:] = adj_b
    base = -d / params.beta
    k = _normalized_exp(base)
    for _ in range(params.iterations):
        k = _normalized_exp(base + (params.alpha / params.beta) * (t @ k @ t))
    return _rho_from_kernel(k, m)


def _stack(features: Sequence[GraphFeature], idx: Sequence[int], flavor: str):
    desc = np.stack([features[i].node_descriptors for i in idx])
    adj = np.stack([features[i].adjacency() for i in idx])
    own = _descriptor_distances(desc, desc, flavor)
    size = desc.shape[1]
    own[:, np.arange(size), np.arange(size)] = 0.0
    return desc, adj, own


def dissimilarity_matrix(
    features_a: Sequence[GraphFeature],
    features_b: Sequence[GraphFeature] | None = None,
    params: CdkParams = CdkParams(),
) -> np.ndarray:
    """Pairwise layer-appropriate dissimilarities, vectorised over pairs.

    With ``features_b`` omitted the symmetric self-matrix is returned and
    only its upper triangle is evaluated.
    """
    symmetric = features_b is None
    if symmetric:
        features_b = features_a
    na, nb = len(features_a), len(features_b)
    out = np.zeros((na, nb))
    if na == 0 or nb == 0:
        return out

    layers = {f.layer for f in features_a} | {f.layer for f in features_b}
    if len(layers) != 1:
        raise ValueError(f"features span several layers: {sorted(layers)}")
    if layers == {0}:
        xa = np.stack([f.node_descriptors[0] for f in features_a])
        xb = np.stack([f.node_descriptors[0] for f in features_b])
        return _descriptor_distances(xa, xb, params.distance_flavor)

    groups_a = _group_by_size(features_a)
    groups_b = _group_by_size(features_b)
    for ma, idx_a in groups_a.items():
        desc_a, adj_a, own_a = _stack(features_a, idx_a, params.distance_flavor)
        for mb, idx_b in groups_b.items():
            desc_b, adj_b, own_b = _stack(features_b, idx_b, params.distance_flavor)
            ii, jj = np.meshgrid(np.arange(len(idx_a)), np.arange(len(idx_b)), indexing="ij")
            ii, jj = ii.ravel(), jj.ravel()
            if symmetric:
                keep = np.asarray(idx_a)[ii] < np.asarray(idx_b)[jj]
                ii, jj = ii[keep], jj[keep]
            for start in range(0, len(ii), _CHUNK):
                bi, bj = ii[start : start + _CHUNK], jj[start : start + _CHUNK]
                rho = _batched_rho(
                    desc_a[bi], adj_a[bi], own_a[bi], desc_b[bj], adj_b[bj], own_b[bj], params
                )
                out[np.asarray(idx_a)[bi], np.asarray(idx_b)[bj]] = rho
    if symmetric:
        out = np.triu(out, 1)
        out = out + out.T
    return out
