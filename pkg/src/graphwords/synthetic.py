"""Synthetic keypoint scenes standing in for detector output.

A scene is a template constellation of keypoints (position, descriptor
prototype, base response) seen through a random similarity transform, with
positional jitter, descriptor noise and optional low-response clutter.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .keypoint_io import ImageRecord, KeyPoint
from .retrieval import split_dataset

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True, eq=False)
class SceneSpec:
    template_xy: np.ndarray
    template_prototypes: Sequence[int]
    template_responses: Sequence[float]
    prototypes: np.ndarray
    descriptor_noise: float = 0.0
    rotation_range: tuple[float, float] = (0.0, 0.0)
    scale_range: tuple[float, float] = (1.0, 1.0)
    translation_range: tuple[float, float] = (0.0, 0.0)
    jitter: float = 0.0
    response_noise: float = 0.0
    n_clutter: int = 0
    clutter_prototypes: Sequence[int] = ()
    clutter_response: tuple[float, float] = (0.0, 0.5)
    base_scale: float = 2.0
    image_id: str = "synthetic"
    object_label: str = "object"
    scene_id: str = ""
    split: str = "train"

    @property
    def n_points(self) -> int:
        return len(self.template_prototypes) + self.n_clutter


def _unit(v: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(norms > 0, v / np.where(norms > 0, norms, 1.0), v)


def random_prototypes(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    return _unit(rng.normal(size=(count, dim)))


def generate_synthetic_scene(spec: SceneSpec, rng_seed: int) -> ImageRecord:
    if spec.n_points <= 0:
        raise ValueError(f"scene must have a positive point count, got {spec.n_points}")
    if spec.n_clutter and not len(spec.clutter_prototypes):
        raise ValueError("clutter requested without clutter prototypes")
    rng = np.random.default_rng(rng_seed)
    template = np.asarray(spec.template_xy, dtype=float).reshape(-1, 2)
    protos = np.asarray(spec.prototypes, dtype=float)

    theta = rng.uniform(*spec.rotation_range)
    s = rng.uniform(*spec.scale_range)
    shift = rng.uniform(*spec.translation_range, size=2)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])

    proto_ids = list(spec.template_prototypes)
    local = template.copy()
    responses = np.asarray(spec.template_responses, dtype=float).copy()
    if spec.n_clutter:
        lo, hi = template.min(axis=0), template.max(axis=0)
        local = np.vstack([local, rng.uniform(lo, hi, size=(spec.n_clutter, 2))])
        proto_ids += list(rng.choice(np.asarray(spec.clutter_prototypes), size=spec.n_clutter))
        responses = np.concatenate([responses, rng.uniform(*spec.clutter_response, size=spec.n_clutter)])

    xy = s * local @ rot.T + shift
    if spec.jitter:
        xy = xy + rng.normal(scale=spec.jitter, size=xy.shape)
    desc = protos[proto_ids]
    if spec.descriptor_noise:
        desc = _unit(desc + rng.normal(scale=spec.descriptor_noise, size=desc.shape))
    if spec.response_noise:
        responses = responses * (1.0 + rng.normal(scale=spec.response_noise, size=responses.shape))
    responses = np.maximum(responses, 0.0)
    orientation = float(np.mod(theta, TWO_PI))

    keypoints = tuple(
        KeyPoint(
            x=float(xy[i, 0]),
            y=float(xy[i, 1]),
            scale=float(spec.base_scale * s),
            orientation=orientation,
            response=float(responses[i]),
            descriptor=tuple(float(v) for v in desc[i]),
        )
        for i in range(len(xy))
    )
    return ImageRecord(spec.image_id, spec.object_label, spec.scene_id, spec.split, keypoints)


def spread_layout(rng: np.random.Generator, count: int, extent: float, min_gap: float) -> np.ndarray:
    """Random points in a square with a minimum pairwise gap (dart throwing)."""
    pts: list[np.ndarray] = []
    for _ in range(count * 2000):
        p = rng.uniform(0.0, extent, size=2)
        if all(np.hypot(*(p - q)) >= min_gap for q in pts):
            pts.append(p)
            if len(pts) == count:
                return np.array(pts)
    raise RuntimeError(f"could not place {count} points with gap {min_gap} in extent {extent}")


@dataclass(frozen=True)
class BenchmarkSpec:
    images_per_class: int = 20
    descriptor_dim: int = 16
    prototypes_per_pool: int = 24
    template_points: int = 24
    n_clutter: int = 6
    extent: float = 100.0
    min_gap: float = 12.0
    descriptor_noise: float = 0.03
    jitter: float = 1.0
    response_noise: float = 0.05
    split_fraction: float = 0.5


CONSTELLATION_CLASSES = ("constellation_a", "constellation_b")
DESCRIPTOR_CLASSES = ("descriptor_a", "descriptor_b")


def benchmark_class_specs(rng_seed: int, bench: BenchmarkSpec = BenchmarkSpec()) -> dict[str, SceneSpec]:
    """Scene templates for the four benchmark classes.

    The constellation classes draw the same multiset of (prototype, response)
    pairs from one shared pool but place them in different layouts. The
    descriptor classes share one layout and prototype pattern but use two
    disjoint prototype pools.
    """
    rng = np.random.default_rng(rng_seed)
    k, n = bench.prototypes_per_pool, bench.template_points
    pools = random_prototypes(rng, 3 * k, bench.descriptor_dim)
    shared = np.arange(k)
    pool_a, pool_b = np.arange(k, 2 * k), np.arange(2 * k, 3 * k)

    pattern = np.resize(np.arange(k), n)
    rng.shuffle(pattern)
    responses = rng.uniform(1.0, 2.0, size=n)

    common = dict(
        prototypes=pools,
        descriptor_noise=bench.descriptor_noise,
        rotation_range=(0.0, float(TWO_PI)),
        scale_range=(0.7, 1.4),
        translation_range=(0.0, 200.0),
        jitter=bench.jitter,
        response_noise=bench.response_noise,
        n_clutter=bench.n_clutter,
        clutter_response=(0.1, 0.8),
    )
    layouts = [spread_layout(rng, n, bench.extent, bench.min_gap) for _ in range(3)]
    specs = {}
    for name, layout in zip(CONSTELLATION_CLASSES, layouts[:2]):
        specs[name] = SceneSpec(
            template_xy=layout,
            template_prototypes=tuple(int(p) for p in shared[pattern]),
            template_responses=tuple(responses),
            clutter_prototypes=tuple(int(p) for p in shared),
            object_label=name,
            **common,
        )
    for name, pool in zip(DESCRIPTOR_CLASSES, (pool_a, pool_b)):
        specs[name] = SceneSpec(
            template_xy=layouts[2],
            template_prototypes=tuple(int(p) for p in pool[pattern]),
            template_responses=tuple(responses),
            clutter_prototypes=tuple(int(p) for p in pool),
            object_label=name,
            **common,
        )
    return specs


def synthetic_benchmark(rng_seed: int = 0, bench: BenchmarkSpec = BenchmarkSpec()) -> list[ImageRecord]:
    """The bundled four-class benchmark, already split into train and test.

    Image ids are a random numbering, so id-ordered tie-breaks in ranking
    carry no class information.
    """
    specs = benchmark_class_specs(rng_seed, bench)
    rng = np.random.default_rng([rng_seed, 1])
    seeds = rng.integers(0, 2**31, size=(len(specs), bench.images_per_class))
    ids = rng.permutation(len(specs) * bench.images_per_class)
    records = []
    for c, spec in enumerate(specs.values()):
        for i in range(bench.images_per_class):
            image_id = f"img{ids[c * bench.images_per_class + i]:04d}"
            scene = replace(spec, image_id=image_id, scene_id=f"scene{i % 10}")
            records.append(generate_synthetic_scene(scene, int(seeds[c, i])))
    train, test = split_dataset(records, bench.split_fraction, rng_seed)
    split = {r.image_id: r.split for r in train + test}
    return [r.with_split(split[r.image_id]) for r in records]
