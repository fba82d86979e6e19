"""Nested graph words: Delaunay graph features over keypoints, compared with a
context dependent kernel and quantized into per-layer bag-of-words signatures."""

from .cdk import (
    CdkParams,
    PairMatrices,
    assemble_pair_matrices,
    cdk_iterate,
    dissimilarity_matrix,
    graph_dissimilarity,
    point_dissimilarity,
)
from .codebook import Cluster, Codebook, agglomerative_cluster, build_dictionary, cluster_medoid
from .delaunay import delaunay_edges
from .graph_builder import GraphFeature, LayerSpec, build_graph_features, knn_neighbors
from .keypoint_io import ImageRecord, KeyPoint, SeedSet, load_dataset, save_dataset, select_seeds
from .retrieval import EvalReport, RankedList, average_precision, evaluate, rank, split_dataset
from .signatures import Signature, assign_word, compute_signature, nested_concat, signature_distance
from .synthetic import SceneSpec, generate_synthetic_scene, synthetic_benchmark

__all__ = [
    "CdkParams", "PairMatrices", "assemble_pair_matrices", "cdk_iterate", "dissimilarity_matrix",
    "graph_dissimilarity", "point_dissimilarity", "Cluster", "Codebook", "agglomerative_cluster",
    "build_dictionary", "cluster_medoid", "delaunay_edges", "GraphFeature", "LayerSpec",
    "build_graph_features", "knn_neighbors", "ImageRecord", "KeyPoint", "SeedSet", "load_dataset",
    "save_dataset", "select_seeds", "EvalReport", "RankedList", "average_precision", "evaluate",
    "rank", "split_dataset", "Signature", "assign_word", "compute_signature", "nested_concat",
    "signature_distance", "SceneSpec", "generate_synthetic_scene", "synthetic_benchmark",
]
