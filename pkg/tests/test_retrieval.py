import itertools
import logging
from fractions import Fraction

import numpy as np
import pytest

from graphwords.retrieval import (
    CSV_HEADER,
    average_precision,
    evaluate,
    expected_random_ap,
    rank,
    reports_to_csv,
    split_dataset,
)

from conftest import make_image
from oracles import ap_by_enumeration, brute_force_map


class TestAveragePrecision:
    @pytest.mark.parametrize("flags, expected", [
        ([1, 1, 0], Fraction(1)),
        ([1, 0, 1], Fraction(5, 6)),
        ([0, 0, 1], Fraction(1, 3)),
        ([0, 1], Fraction(1, 2)),
    ])
    def test_hand_values(self, flags, expected):
        assert average_precision(flags) == float(expected)

    def test_no_relevant(self, caplog):
        with caplog.at_level(logging.WARNING):
            assert average_precision([0, 0, 0]) == 0.0
        assert "no relevant" in caplog.text

    def test_exhaustive_small_rankings(self):
        for n in range(1, 7):
            for r in range(1, min(n, 3) + 1):
                for pos in itertools.combinations(range(n), r):
                    flags = [int(i in pos) for i in range(n)]
                    assert average_precision(flags) == float(ap_by_enumeration(flags))

    def test_swap_towards_top_never_hurts(self):
        for flags in itertools.product([0, 1], repeat=6):
            if not any(flags):
                continue
            for i in range(5):
                if flags[i] == 0 and flags[i + 1] == 1:
                    better = list(flags)
                    better[i], better[i + 1] = 1, 0
                    assert average_precision(better) > average_precision(list(flags))

    def test_expected_random_matches_enumeration(self):
        for n in range(1, 8):
            for r in range(1, n + 1):
                perms = set(itertools.permutations([1] * r + [0] * (n - r)))
                mean = sum(ap_by_enumeration(list(p)) for p in perms) / len(perms)
                assert expected_random_ap(r, n) == pytest.approx(float(mean), abs=1e-12)


class TestRank:
    def test_matches_sort_oracle(self, rng):
        corpus = {f"id{i:02d}": rng.integers(0, 3, size=4).astype(float) for i in range(25)}
        q = rng.integers(0, 3, size=4).astype(float)
        for metric in ("l1", "l2", "hamming"):
            ranked = rank(q, corpus, metric)
            dists = dict(ranked.entries)
            assert ranked.ids == sorted(corpus, key=lambda k: (dists[k], k))
            assert dists["id03"] == pytest.approx(
                {"l1": np.abs(q - corpus["id03"]).sum(),
                 "l2": np.linalg.norm(q - corpus["id03"]),
                 "hamming": np.count_nonzero(q != corpus["id03"])}[metric])

    def test_single_entry_and_exact_match(self, rng):
        assert rank(np.zeros(3), {"only": np.ones(3)}).ids == ["only"]
        corpus = {f"c{i}": rng.random(3) for i in range(6)}
        ranked = rank(corpus["c4"].copy(), corpus)
        assert ranked.entries[0] == ("c4", 0.0)

    def test_ties_by_id(self):
        ranked = rank(np.zeros(2), {"b": np.ones(2), "a": np.ones(2), "c": np.zeros(2)})
        assert ranked.ids == ["c", "a", "b"]

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            rank(np.zeros(2), {})


def _toy(rng, n_objects=3, per_object=6, dim=5):
    centers = rng.random((n_objects, dim))
    vecs, labels = {}, {}
    for o in range(n_objects):
        for k in range(per_object):
            key = f"o{o}_{k}"
            vecs[key] = centers[o] + rng.normal(scale=0.3, size=dim)
            labels[key] = f"obj{o}"
    keys = sorted(vecs)
    test = {k: vecs[k] for k in keys if int(k.rsplit("_", 1)[1]) % 2}
    train = {k: vecs[k] for k in keys if k not in test}
    return test, train, labels


class TestEvaluate:
    @pytest.mark.parametrize("metric", ["l1", "l2"])
    def test_matches_brute_force(self, rng, metric):
        test, train, labels = _toy(rng)
        report = evaluate(test, train, labels, metric)
        per_object, overall = brute_force_map(test, train, labels, metric)
        assert report.per_object_map == per_object
        assert report.overall_mean == overall

    def test_identical_twins_rank_first(self, rng):
        test, train, labels = _toy(rng)
        twins = {f"t_{k}": v.copy() for k, v in train.items()}
        labels.update({f"t_{k}": labels[k] for k in train})
        report = evaluate(twins, train, labels)
        for qid in twins:
            assert rank(twins[qid], train).ids[0] == qid[2:]
        assert all(ap > 0 for ap in report.per_query_ap.values())

    def test_corpus_order_invariance(self, rng):
        test, train, labels = _toy(rng)
        base = evaluate(test, train, labels)
        keys = list(train)
        rng.shuffle(keys)
        shuffled = evaluate(dict(reversed(list(test.items()))), {k: train[k] for k in keys}, labels)
        assert shuffled.per_object_map == base.per_object_map
        assert shuffled.overall_mean == base.overall_mean

    def test_perfect_separation(self):
        vecs = {"a1": [0.0], "a2": [0.1], "b1": [5.0], "b2": [5.1]}
        labels = {k: k[0] for k in vecs}
        report = evaluate({k: vecs[k] for k in ("a2", "b2")}, {k: vecs[k] for k in ("a1", "b1")}, labels)
        assert report.per_object_map == {"a": 1.0, "b": 1.0}

    def test_object_missing_from_train(self, rng, caplog):
        test, train, labels = _toy(rng)
        test["lonely"] = np.zeros(5)
        labels["lonely"] = "solo"
        with caplog.at_level(logging.WARNING):
            report = evaluate(test, train, labels)
        assert report.per_object_map["solo"] is None
        defined = [v for v in report.per_object_map.values() if v is not None]
        assert report.overall_mean == pytest.approx(sum(defined) / len(defined), abs=1e-15)
        assert "solo" in caplog.text

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            evaluate({"a": [0]}, {"a": [0]}, {"a": "x"})

    def test_csv(self, rng):
        test, train, labels = _toy(rng)
        report = evaluate(test, train, labels, config={"dict_size": 50, "layers": [0, 1]})
        lines = reports_to_csv([report]).splitlines()
        assert lines[0].split(",") == CSV_HEADER
        assert lines[-1].startswith("mean,")
        for line in lines[1:]:
            label, value, size, layers, metric = line.split(",")
            assert 0 <= float(value) <= 1 and size == "50" and layers == "0+1" and metric == "l1"


def _records(counts):
    out = []
    for label, n in counts.items():
        out.extend(make_image([(0, 0)], image_id=f"{label}{i}", label=label) for i in range(n))
    return out


class TestSplit:
    def test_even_and_odd(self):
        train, test = split_dataset(_records({"a": 60, "b": 5}), 0.5, 1)
        count = lambda recs, l: sum(r.object_label == l for r in recs)
        assert (count(train, "a"), count(test, "a")) == (30, 30)
        assert (count(train, "b"), count(test, "b")) == (3, 2)
        assert all(r.split == "train" for r in train) and all(r.split == "test" for r in test)

    def test_single_image_goes_to_train(self, caplog):
        with caplog.at_level(logging.WARNING):
            train, test = split_dataset(_records({"x": 1}), 0.5)
        assert len(train) == 1 and not test

    def test_deterministic(self):
        recs = _records({"a": 9, "b": 7})
        ids = lambda s: [r.image_id for r in s[0]]
        assert ids(split_dataset(recs, 0.5, 4)) == ids(split_dataset(recs, 0.5, 4))
        assert ids(split_dataset(recs, 0.5, 4)) != ids(split_dataset(recs, 0.5, 5))

    def test_other_fractions(self):
        train, _ = split_dataset(_records({"a": 10}), 0.3)
        assert len(train) == 3
        with pytest.raises(ValueError):
            split_dataset(_records({"a": 2}), 1.0)
