"""Ranking by signature distance, average precision and per-object MAP."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .keypoint_io import ImageRecord
from .signatures import signature_distance

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankedList:
    query_id: str
    entries: tuple[tuple[str, float], ...]

    @property
    def ids(self) -> list[str]:
        return [e[0] for e in self.entries]


@dataclass
class EvalReport:
    per_object_map: dict[str, float | None]
    overall_mean: float
    config: dict = field(default_factory=dict)
    per_query_ap: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "per_object_map": self.per_object_map,
            "overall_mean": self.overall_mean,
            "config": self.config,
            "per_query_ap": self.per_query_ap,
        }

    def csv_rows(self) -> list[list]:
        dict_size = self.config.get("dict_size", "")
        layers = "+".join(str(l) for l in self.config.get("layers", []))
        metric = self.config.get("metric", "")
        rows = [[label, _fmt(m), dict_size, layers, metric] for label, m in self.per_object_map.items()]
        rows.append(["mean", _fmt(self.overall_mean), dict_size, layers, metric])
        return rows


CSV_HEADER = ["object_label", "map", "dict_size", "layers", "metric"]


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def reports_to_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for rep in reports:
        writer.writerows(rep.csv_rows())
    return buf.getvalue()


def rank(query, corpus: Mapping[str, np.ndarray], metric: str = "l1", query_id: str = "") -> RankedList:
    """Corpus ids ordered by distance to the query, ties by id."""
    if not corpus:
        raise ValueError("corpus is empty")
    scored = [(image_id, signature_distance(query, vec, metric)) for image_id, vec in corpus.items()]
    scored.sort(key=lambda e: (e[1], e[0]))
    return RankedList(query_id, tuple(scored))


def average_precision(flags: Sequence[int]) -> float:
    """Non-interpolated AP over the full ranking: mean of precision at each relevant rank."""
    return float(_exact_ap(flags))


def _exact_ap(flags: Sequence[int]) -> Fraction:
    # exact rationals keep AP and MAP independent of summation order
    hits = 0
    total = Fraction(0)
    for r, rel in enumerate(flags, start=1):
        if rel:
            hits += 1
            total += Fraction(hits, r)
    if hits == 0:
        logger.warning("ranking has no relevant items; AP defined as 0")
        return Fraction(0)
    return total / hits


def expected_random_ap(n_relevant: int, n_total: int) -> float:
    """Expected AP of a uniformly random ranking with ``n_relevant`` of ``n_total`` relevant."""
    if n_relevant == 0:
        return 0.0
    if n_total == 1:
        return 1.0
    ratio = (n_relevant - 1) / (n_total - 1)
    return sum((1 + (r - 1) * ratio) / r for r in range(1, n_total + 1)) / n_total


def evaluate(
    test: Mapping[str, np.ndarray],
    train: Mapping[str, np.ndarray],
    labels: Mapping[str, str],
    metric: str = "l1",
    config: dict | None = None,
) -> EvalReport:
    """Rank the training set for every test query and average AP per object.

    An object without training images gets an undefined (None) MAP and is
    left out of the overall mean.
    """
    overlap = set(test) & set(train)
    if overlap:
        raise ValueError(f"train and test share ids: {sorted(overlap)[:5]}")
    train_labels = {labels[i] for i in train}
    per_query: dict[str, float] = {}
    by_object: dict[str, list[Fraction]] = {}
    for qid in sorted(test):
        label = labels[qid]
        by_object.setdefault(label, [])
        if label not in train_labels:
            continue
        ranked = rank(test[qid], train, metric, qid)
        ap = _exact_ap([labels[i] == label for i in ranked.ids])
        per_query[qid] = float(ap)
        by_object[label].append(ap)
    per_object: dict[str, float | None] = {}
    defined = []
    for label in sorted(by_object):
        aps = by_object[label]
        if not aps:
            logger.warning("object %r has no training images; MAP undefined", label)
            per_object[label] = None
        else:
            mean_ap = sum(aps, Fraction(0)) / len(aps)
            defined.append(mean_ap)
            per_object[label] = float(mean_ap)
    overall = float(sum(defined, Fraction(0)) / len(defined)) if defined else 0.0
    return EvalReport(per_object, overall, dict(config or {}, metric=metric), per_query)


def split_dataset(
    records: Sequence[ImageRecord], fraction: float = 0.5, rng_seed: int = 0
) -> tuple[list[ImageRecord], list[ImageRecord]]:
    """Per-object random split; each object keeps ceil(fraction * n) training images.

    Returned records carry the new split label and keep input order.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(rng_seed)
    by_object: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        by_object.setdefault(rec.object_label, []).append(i)
    train_idx = set()
    for label in sorted(by_object):
        idx = by_object[label]
        if len(idx) == 1:
            logger.warning("object %r has a single image; assigned to train", label)
        n_train = min(len(idx), math.ceil(round(fraction * len(idx), 9)))
        perm = rng.permutation(len(idx))
        train_idx.update(idx[p] for p in perm[:n_train])
    train, test = [], []
    for i, rec in enumerate(records):
        if i in train_idx:
            train.append(rec.with_split("train"))
        else:
            test.append(rec.with_split("test"))
    return train, test


def report_json(report: EvalReport) -> str:
    return json.dumps(report.to_json(), indent=1, sort_keys=True) + "\n"
