import numpy as np
import pytest

from graphwords.graph_builder import GraphFeature
from graphwords.keypoint_io import ImageRecord, KeyPoint

ACCEPTANCE_LINES: list[str] = []


def make_keypoints(xy, responses=None, descriptors=None, dim=4, seed=0):
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    rng = np.random.default_rng(seed)
    if responses is None:
        responses = rng.uniform(0.1, 1.0, size=len(xy))
    if descriptors is None:
        descriptors = rng.normal(size=(len(xy), dim))
    return [
        KeyPoint(float(x), float(y), 1.5, 0.0, float(r), tuple(float(v) for v in d))
        for (x, y), r, d in zip(xy, responses, descriptors)
    ]


def make_image(xy, image_id="img", label="obj", split="train", **kw):
    return ImageRecord(image_id, label, "s0", split, tuple(make_keypoints(xy, **kw)))


def random_graph(rng, n_nodes, dim=4, layer=1, edge_p=0.5, desc_scale=0.3):
    edges = tuple(
        (i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes) if rng.random() < edge_p
    )
    return GraphFeature(
        layer=layer,
        seed_index=0,
        node_indices=tuple(range(n_nodes)),
        edges=edges,
        node_descriptors=rng.normal(scale=desc_scale, size=(n_nodes, dim)),
    )


def singleton(desc, layer=0):
    desc = np.asarray(desc, dtype=float).reshape(1, -1)
    return GraphFeature(layer=layer, seed_index=0, node_indices=(0,), edges=(), node_descriptors=desc)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
