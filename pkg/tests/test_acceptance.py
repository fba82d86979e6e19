"""The ten acceptance criteria, each at its stated tolerance and time budget.

Every test appends one PASS/FAIL line to the terminal summary.
"""

import itertools
import math
import time

import numpy as np
import pytest

from graphwords.cdk import CdkParams, assemble_pair_matrices, cdk_iterate, graph_dissimilarity
from graphwords.codebook import cluster_medoid
from graphwords.delaunay import delaunay_edges, delaunay_triangles
from graphwords.graph_builder import GraphFeature, LayerSpec, build_graph_features
from graphwords.keypoint_io import select_seeds
from graphwords.pipeline import benchmark_config, cmd_synth, run_all, signature_path
from graphwords.retrieval import average_precision, evaluate, expected_random_ap
from graphwords.signatures import nested_concat, read_signatures, signature_from_record
from graphwords.synthetic import CONSTELLATION_CLASSES, DESCRIPTOR_CLASSES, SceneSpec, generate_synthetic_scene

from conftest import ACCEPTANCE_LINES, make_image, random_graph, singleton
from oracles import ap_by_enumeration, brute_force_map, empty_circumcircle_violations, exhaustive_medoid

TIMINGS = {}


class Check:
    """Collects failures for one criterion and reports it once."""

    def __init__(self, number, title, budget):
        self.number, self.title, self.budget = number, title, budget
        self.failures = []

    def expect(self, ok, message):
        if not ok and len(self.failures) < 5:
            self.failures.append(message)

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        TIMINGS[self.number] = elapsed
        if exc is not None:
            self.failures.append(f"raised {exc_type.__name__}: {exc}")
        if elapsed >= self.budget:
            self.failures.append(f"took {elapsed:.2f}s, budget {self.budget:.2f}s")
        status = "FAIL" if self.failures else "PASS"
        detail = "; ".join(self.failures)
        ACCEPTANCE_LINES.append(
            f"{status} criterion {self.number:>2}: {self.title} ({elapsed:.2f}s / {self.budget:.0f}s)"
            + (f" :: {detail}" if detail else "")
        )
        if exc is None and self.failures:
            pytest.fail(detail)
        return False


def closed_form(d, beta):
    e = math.exp(-d / beta)
    return (1 - e) / (1 + e)


def test_c01_singleton_closed_form():
    rng = np.random.default_rng(1)
    with Check(1, "singleton closed form within 1e-9", 1.0) as c:
        for _ in range(200):
            beta = rng.uniform(0.01, 1.0)
            d = rng.uniform(0, 3 * beta)
            a, b = singleton([0.0], 1), singleton([d], 1)
            for t in (0, 1, 2):
                rho = graph_dissimilarity(a, b, CdkParams(beta=beta, iterations=t, distance_flavor="l2"))
                c.expect(abs(rho - closed_form(d, beta)) <= 1e-9, f"d={d} beta={beta} t={t}: {rho}")


def test_c02_small_distance_bound():
    rng = np.random.default_rng(2)
    with Check(2, "small-distance bound |rho - d/2b| <= (d/2b)^3/3", 1.0) as c:
        for _ in range(200):
            beta = rng.uniform(0.01, 1.0)
            d = rng.uniform(0, beta / 10)
            rho = graph_dissimilarity(singleton([0.0], 1), singleton([d], 1), CdkParams(beta=beta, distance_flavor="l2"))
            x = d / (2 * beta)
            c.expect(abs(rho - x) <= x**3 / 3 + 1e-12, f"d={d} beta={beta}: {rho}")


def _permuted(g, perm):
    # node perm[i] of the new graph is node i of the old one
    inv = np.argsort(perm)
    desc = g.node_descriptors[inv]
    edges = tuple(sorted(tuple(sorted((int(perm[i]), int(perm[j])))) for i, j in g.edges))
    return GraphFeature(g.layer, g.seed_index, tuple(range(g.n_nodes)), edges, desc)


def test_c03_cdk_invariants():
    rng = np.random.default_rng(3)
    with Check(3, "CDK normalisation, symmetry, self-distance, permutation", 10.0) as c:
        for k in range(100):
            a, b = random_graph(rng, int(rng.integers(1, 11))), random_graph(rng, int(rng.integers(1, 11)))
            p = CdkParams(alpha=float(rng.uniform(0, 1)), beta=float(rng.uniform(0.05, 1)), iterations=int(rng.integers(0, 5)))
            for kern in cdk_iterate(assemble_pair_matrices(a, b), p, return_history=True):
                c.expect(abs(kern.sum() - 1) <= 1e-9, f"pair {k}: sum {kern.sum()}")
            rab, rba = graph_dissimilarity(a, b, p), graph_dissimilarity(b, a, p)
            c.expect(abs(rab - rba) <= 1e-12, f"pair {k}: asymmetry {rab - rba}")
            c.expect(graph_dissimilarity(a, a, p) <= 1e-9, f"pair {k}: self distance")
            pa = _permuted(a, rng.permutation(a.n_nodes))
            c.expect(abs(graph_dissimilarity(pa, b, p) - rab) <= 1e-12, f"pair {k}: permutation")


def test_c04_delaunay_oracle():
    rng = np.random.default_rng(4)
    with Check(4, "Delaunay empty circumcircle and 3n-6 edge bound", 10.0) as c:
        for k in range(100):
            n = int(rng.integers(3, 13))
            pts = rng.uniform(0, 100, size=(n, 2))
            tris = delaunay_triangles(pts)
            c.expect(bool(tris), f"set {k}: no triangles")
            c.expect(not empty_circumcircle_violations(pts.tolist(), tris), f"set {k}: circumcircle violated")
            c.expect(len(delaunay_edges(pts)) <= 3 * n - 6, f"set {k}: too many edges")


def _similarity(xy, rng):
    theta = rng.uniform(0, 2 * np.pi)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    return rng.uniform(0.3, 3) * xy @ rot.T + rng.uniform(-500, 500, size=2)


def test_c05_similarity_invariance():
    rng = np.random.default_rng(5)
    with Check(5, "similarity-transform invariance of edges and graph features", 10.0) as c:
        for k in range(50):
            n = int(rng.integers(4, 41))
            xy = rng.uniform(0, 100, size=(n, 2))
            moved = _similarity(xy, rng)
            c.expect(delaunay_edges(xy) == delaunay_edges(moved), f"set {k}: edges differ")
            a, b = make_image(xy, seed=k), make_image(moved, seed=k)
            seeds = select_seeds(a.keypoints, 8)
            c.expect(seeds == select_seeds(b.keypoints, 8), f"set {k}: seeds differ")
            fa, fb = build_graph_features(a, seeds), build_graph_features(b, seeds)
            c.expect(all(x.same_structure(y) for x, y in zip(fa, fb)), f"set {k}: features differ")


def test_c06_medoid_oracle():
    rng = np.random.default_rng(6)
    with Check(6, "medoid equals exhaustive argmin", 5.0) as c:
        for k in range(100):
            n = int(rng.integers(1, 31))
            mat = rng.random((n, n))
            mat = mat + mat.T
            np.fill_diagonal(mat, 0)
            members = list(range(n))
            c.expect(cluster_medoid(members, mat) == exhaustive_medoid(members, mat.tolist()), f"cluster {k}")


def test_c07_ap_map_oracle():
    rng = np.random.default_rng(7)
    with Check(7, "AP exhaustive enumeration and 10-image MAP oracle", 5.0) as c:
        for n in range(1, 7):
            for r in range(0, min(n, 3) + 1):
                for pos in itertools.combinations(range(n), r):
                    flags = [int(i in pos) for i in range(n)]
                    c.expect(average_precision(flags) == float(ap_by_enumeration(flags)), f"flags {flags}")
        vecs = {f"im{i}": rng.random(6) for i in range(10)}
        labels = {k: "ab"[i % 2] if i < 8 else "c" for i, k in enumerate(vecs)}
        test = {k: vecs[k] for k in ("im0", "im1", "im8")}
        train = {k: v for k, v in vecs.items() if k not in test}
        for metric in ("l1", "l2"):
            report = evaluate(test, train, labels, metric)
            per_object, overall = brute_force_map(test, train, labels, metric)
            c.expect(report.per_object_map == per_object, f"{metric}: per-object MAP")
            c.expect(report.overall_mean == overall, f"{metric}: overall")


@pytest.fixture(scope="module")
def benchmark_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    start = time.perf_counter()
    manifest = cmd_synth(root / "data", rng_seed=0)
    cfg = benchmark_config(manifest, root / "out1", rng_seed=0)
    reports = run_all(cfg)
    return cfg, reports, time.perf_counter() - start


def _restricted_layer0(cfg, size, classes):
    rows = [r for r in read_signatures(signature_path(cfg, size)) if r["object_label"] in classes]
    vec = {r["image_id"]: nested_concat(signature_from_record(r), [0]) for r in rows}
    labels = {r["image_id"]: r["object_label"] for r in rows}
    train = {r["image_id"]: vec[r["image_id"]] for r in rows if r["split"] == "train"}
    test = {r["image_id"]: vec[r["image_id"]] for r in rows if r["split"] == "test"}
    report = evaluate(test, train, labels, cfg.metric)
    per_class_train = {c: sum(labels[i] == c for i in train) for c in classes}
    chance = np.mean([expected_random_ap(per_class_train[c], len(train)) for c in classes])
    return report, float(chance)


def test_c08_synthetic_benchmark(benchmark_run):
    cfg, reports, elapsed = benchmark_run
    TIMINGS["bench"] = elapsed
    with Check(8, "synthetic benchmark: layer 0 blind to constellations, layer 3 not, nested best", 120.0) as c:
        c.start -= elapsed  # the pipeline run itself happened in the fixture
        last = len(cfg.layers) - 1
        full = tuple(range(len(cfg.layers)))
        for size in cfg.dict_sizes:
            by_subset = {tuple(r.config["layers"]): r for r in reports if r.config["dict_size"] == size}
            layer0 = by_subset[(0,)].per_object_map
            for cls in DESCRIPTOR_CLASSES:
                c.expect(layer0[cls] >= 0.8, f"size {size}: layer 0 MAP on {cls} = {layer0[cls]:.3f}")
            restricted, chance = _restricted_layer0(cfg, size, CONSTELLATION_CLASSES)
            got = np.mean([restricted.per_object_map[cls] for cls in CONSTELLATION_CLASSES])
            c.expect(abs(got - chance) <= 0.10, f"size {size}: constellation layer 0 MAP {got:.3f} vs chance {chance:.3f}")
            top = by_subset[(last,)].per_object_map
            for cls in CONSTELLATION_CLASSES:
                c.expect(top[cls] >= 0.8, f"size {size}: layer {last} MAP on {cls} = {top[cls]:.3f}")
            best_single = max(by_subset[(l,)].overall_mean for l in range(len(cfg.layers)))
            nested = by_subset[full].overall_mean
            c.expect(nested >= best_single - 0.02, f"size {size}: nested {nested:.3f} vs best single {best_single:.3f}")


def test_c09_end_to_end_determinism(benchmark_run, tmp_path):
    # the benchmark run above is the first of the two; this one starts from an empty output directory
    cfg, _, bench_elapsed = benchmark_run
    budget = 2 * TIMINGS.get("bench", bench_elapsed)
    with Check(9, "two pipeline runs give byte-identical eval.csv", budget) as c:
        rerun = benchmark_config(cfg.manifest, tmp_path / "rerun", rng_seed=cfg.rng_seed)
        run_all(rerun)
        first = (cfg.out / "reports" / "eval.csv").read_bytes()
        second = (rerun.out / "reports" / "eval.csv").read_bytes()
        c.expect(first == second, "eval.csv differs between runs")
        c.expect(len(first.splitlines()) > 1, "eval.csv has no rows")


def test_c10_full_scale_feature_counts():
    rng = np.random.default_rng(10)
    protos = rng.normal(size=(32, 16))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    spec = SceneSpec(
        template_xy=rng.uniform(0, 640, size=(400, 2)),
        template_prototypes=tuple(int(i) for i in rng.integers(0, 32, size=400)),
        template_responses=tuple(rng.uniform(0.1, 1, size=400)),
        prototypes=protos,
        descriptor_noise=0.05,
    )
    image = generate_synthetic_scene(spec, 10)
    with Check(10, "400 keypoints, 300 seeds, layers 0,3,6,9 -> 1200 features", 1.0) as c:
        feats = build_graph_features(image, select_seeds(image.keypoints, 300), LayerSpec((0, 3, 6, 9)))
        c.expect(len(feats) == 1200, f"{len(feats)} features")
        sizes = {layer: {f.n_nodes for f in feats if f.layer == layer} for layer in range(4)}
        c.expect(sizes == {0: {1}, 1: {4}, 2: {7}, 3: {10}}, f"node counts {sizes}")
