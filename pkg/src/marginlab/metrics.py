"""Robustness metrics over margin records.

Aggregates ray-walk outcomes into the mean margin matrix, the scalar model
robustness R, per-class robustness ratios R_i, vulnerability tiers,
adjacent-class proportions, and class center images (CCIs).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from jsonschema import validate as _validate_schema

from ._format import fmt9, round9
from .boundary import MarginRecord, search_all

TIERS = ("high", "medium", "low")

INFINITE = math.inf


def _infer_num_classes(records):
    c = 0
    for r in records:
        c = max(c, r.origin_class + 1)
        if r.adjacent_class is not None:
            c = max(c, r.adjacent_class + 1)
    return c


@dataclass(frozen=True)
class MeanMarginMatrix:
    """Mean margin and traverse count per (origin, adjacent) class pair.

    ``mean[i, j]`` is NaN where ``count[i, j]`` is zero. Capped walks are
    kept out of the pair grid: they land in the per-origin ``na_mean`` /
    ``na_count`` buckets (``na_mean`` is NaN where the count is zero).
    """

    num_classes: int
    mean: np.ndarray      # (c, c)
    count: np.ndarray     # (c, c) ints
    na_mean: np.ndarray   # (c,)
    na_count: np.ndarray  # (c,) ints

    def __post_init__(self):
        c = self.num_classes
        if self.mean.shape != (c, c) or self.count.shape != (c, c):
            raise ValueError("matrix fields must be (c, c)")
        if self.na_mean.shape != (c,) or self.na_count.shape != (c,):
            raise ValueError("na fields must be (c,)")
        if np.any(np.diag(self.count) != 0):
            raise ValueError("diagonal counts must be zero")

    def margin_sums(self):
        """Raw per-pair margin sums (mean * count), zero where count is zero."""
        sums = np.where(self.count > 0, self.mean, 0.0) * self.count
        return sums


def build_matrix(records, num_classes=None):
    """Group records by (origin, adjacent) pair and average their margins."""
    if num_classes is None:
        num_classes = _infer_num_classes(records)
    c = num_classes
    total = np.zeros((c, c))
    count = np.zeros((c, c), dtype=np.int64)
    na_total = np.zeros(c)
    na_count = np.zeros(c, dtype=np.int64)
    for r in records:
        if r.origin_class >= c or (r.adjacent_class is not None and r.adjacent_class >= c):
            raise ValueError("record class out of range for declared num_classes")
        if r.adjacent_class is None:
            na_total[r.origin_class] += r.margin
            na_count[r.origin_class] += 1
        else:
            if r.adjacent_class == r.origin_class:
                raise ValueError("record with adjacent class equal to origin")
            total[r.origin_class, r.adjacent_class] += r.margin
            count[r.origin_class, r.adjacent_class] += 1
    with np.errstate(invalid="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
        na_mean = np.where(na_count > 0, na_total / np.maximum(na_count, 1), np.nan)
    return MeanMarginMatrix(num_classes=c, mean=mean, count=count,
                            na_mean=na_mean, na_count=na_count)


def model_robustness(matrix):
    """Sum of all populated pair means, plus each origin class's capped mean.

    Every origin class with at least one capped walk contributes exactly one
    extra summand: the mean of its capped margins (always the cap distance).
    """
    pair_part = float(np.where(matrix.count > 0, matrix.mean, 0.0).sum())
    na_part = float(np.where(matrix.na_count > 0, matrix.na_mean, 0.0).sum())
    return pair_part + na_part


def class_robustness(matrix):
    """Per-class ratio of defensive to offensive summed margins.

    Numerator: summed margins of walks that ended in class i (i adjacent).
    Denominator: summed margins of walks that started in class i (i origin).
    Capped walks join neither sum. A zero denominator yields +inf: a class
    never breached as an origin is maximally robust.
    """
    sums = matrix.margin_sums()
    num = sums.sum(axis=0)
    den = sums.sum(axis=1)
    out = np.empty(matrix.num_classes)
    for i in range(matrix.num_classes):
        out[i] = INFINITE if den[i] == 0.0 else num[i] / den[i]
    return out


def tier_assign(class_values):
    """Percentile tiers over per-class robustness, ranked descending.

    The top ceil(0.2 c) classes are "high", the bottom floor(0.5 c) "low",
    the remainder "medium". +inf ranks above every finite value; exact ties
    rank the lower class index higher.
    """
    values = np.asarray(class_values, dtype=np.float64)
    c = values.shape[0]
    if c < 2:
        raise ValueError("tier assignment needs at least two classes")
    order = np.lexsort((np.arange(c), -values))
    n_high = math.ceil(0.2 * c)
    n_low = math.floor(0.5 * c)
    tiers = [""] * c
    for rank, cls in enumerate(order):
        if rank < n_high:
            tiers[cls] = "high"
        elif rank >= c - n_low:
            tiers[cls] = "low"
        else:
            tiers[cls] = "medium"
    return tiers


def adjacency_proportions(records, num_classes=None):
    """Fraction of walks ending in each class, with the capped fraction last."""
    if not records:
        raise ValueError("adjacency proportions need at least one record")
    if num_classes is None:
        num_classes = _infer_num_classes(records)
    counts = np.zeros(num_classes + 1, dtype=np.int64)
    for r in records:
        counts[num_classes if r.adjacent_class is None else r.adjacent_class] += 1
    return counts / counts.sum()


def per_sample_mean_margins(records):
    """Mean margin per searched sample (capped walks count at the cap)."""
    totals, counts, origins = {}, {}, {}
    for r in records:
        totals[r.sample_index] = totals.get(r.sample_index, 0.0) + r.margin
        counts[r.sample_index] = counts.get(r.sample_index, 0) + 1
        origins[r.sample_index] = r.origin_class
    return {idx: (totals[idx] / counts[idx], origins[idx]) for idx in totals}


def find_cci(records, num_classes=None):
    """Class center images: per class, the sample with the largest mean margin.

    Returns ``{class: (sample_index, mean_margin)}``; ties pick the lowest
    sample index. Every class must have at least one searched sample.
    """
    if num_classes is None:
        num_classes = _infer_num_classes(records)
    per_sample = per_sample_mean_margins(records)
    best = {}
    for idx in sorted(per_sample):
        mean, origin = per_sample[idx]
        if origin not in best or mean > best[origin][1]:
            best[origin] = (idx, mean)
    missing = [i for i in range(num_classes) if i not in best]
    if missing:
        raise ValueError(f"classes without searched samples: {missing}")
    return {i: best[i] for i in range(num_classes)}


def per_class_mean_margins(records, num_classes=None):
    """Mean margin per origin class over all its walks (capped at the cap)."""
    if num_classes is None:
        num_classes = _infer_num_classes(records)
    totals = np.zeros(num_classes)
    counts = np.zeros(num_classes, dtype=np.int64)
    for r in records:
        totals[r.origin_class] += r.margin
        counts[r.origin_class] += 1
    with np.errstate(invalid="ignore"):
        return np.where(counts > 0, totals / np.maximum(counts, 1), np.nan)


@dataclass(frozen=True)
class RobustnessReport:
    """Everything the analysis stage publishes about one model."""

    num_classes: int
    model_robustness: float
    class_robustness: np.ndarray      # (c,), may contain +inf
    tiers: tuple[str, ...]
    adjacency_proportions: np.ndarray  # (c + 1,), capped fraction last
    cci: dict                          # class -> (sample_index, mean_margin)
    per_class_mean_margin: np.ndarray  # (c,)
    record_count: int

    @property
    def summary_stats(self):
        finite = self.per_class_mean_margin[np.isfinite(self.per_class_mean_margin)]
        return {"per_class_mean_margin_mean": float(finite.mean()),
                "per_class_mean_margin_std": float(finite.std())}


def build_report(records, num_classes=None):
    """Run the full metric pipeline over one model's records."""
    if not records:
        raise ValueError("cannot build a report from zero records")
    if num_classes is None:
        num_classes = _infer_num_classes(records)
    matrix = build_matrix(records, num_classes)
    r_i = class_robustness(matrix)
    return RobustnessReport(
        num_classes=num_classes,
        model_robustness=model_robustness(matrix),
        class_robustness=r_i,
        tiers=tuple(tier_assign(r_i)),
        adjacency_proportions=adjacency_proportions(records, num_classes),
        cci=find_cci(records, num_classes),
        per_class_mean_margin=per_class_mean_margins(records, num_classes),
        record_count=len(records),
    )


def cci_cross_margins(data, cci_sets, models, dirs, cfg, threads=1):
    """Measure each CCI set's margins on every model.

    ``cci_sets`` maps a source id to a ``{class: (sample_index, ...)}``
    mapping (the shape :func:`find_cci` returns); ``models`` maps a model id
    to a network. Output: ``table[source_id][model_id]`` with the per-class
    mean margins of the source's CCI samples measured on that model, plus
    their average and population standard deviation.
    """
    table = {}
    for source_id in sorted(cci_sets):
        cci = cci_sets[source_id]
        indices = [cci[cls][0] if isinstance(cci[cls], tuple) else cci[cls]
                   for cls in sorted(cci)]
        table[source_id] = {}
        for model_id in sorted(models):
            net = models[model_id]
            if net.input_dim != data.dimension:
                raise ValueError("model input dimension does not match data")
            records = search_all(net, data, indices, dirs, cfg, threads=threads)
            per_sample = per_sample_mean_margins(records)
            per_class = [per_sample[idx][0] for idx in indices]
            arr = np.asarray(per_class)
            table[source_id][model_id] = {
                "per_class": per_class,
                "avg": float(arr.mean()),
                "std": float(arr.std()),
            }
    return table


# ---------------------------------------------------------------------------
# mean_margin_matrix.csv: header `to_0..to_{c-1},na`, then one row per origin
# class; cells are blank where the pair count is zero.
# ---------------------------------------------------------------------------

def write_matrix_csv(matrix, path):
    c = matrix.num_classes
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"to_{j}" for j in range(c)] + ["na"])
        for i in range(c):
            row = [fmt9(matrix.mean[i, j]) if matrix.count[i, j] > 0 else ""
                   for j in range(c)]
            row.append(fmt9(matrix.na_mean[i]) if matrix.na_count[i] > 0 else "")
            writer.writerow(row)


# ---------------------------------------------------------------------------
# robustness_report.json. JSON cannot express +inf, so an infinite class
# robustness is encoded as null and mapped back to +inf on read.
# ---------------------------------------------------------------------------

REPORT_SCHEMA = {
    "type": "object",
    "required": ["num_classes", "model_robustness", "class_robustness",
                 "tiers", "adjacency_proportions", "cci", "summary_stats",
                 "record_count"],
    "additionalProperties": False,
    "properties": {
        "num_classes": {"type": "integer", "minimum": 1},
        "model_robustness": {"type": "number"},
        "class_robustness": {
            "type": "array",
            "items": {"type": ["number", "null"]},
        },
        "tiers": {"type": "array", "items": {"enum": list(TIERS)}},
        "adjacency_proportions": {
            "type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1},
        },
        "cci": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["class", "sample_index", "mean_margin"],
                "additionalProperties": False,
                "properties": {
                    "class": {"type": "integer", "minimum": 0},
                    "sample_index": {"type": "integer", "minimum": 0},
                    "mean_margin": {"type": "number"},
                },
            },
        },
        "per_class_mean_margin": {"type": "array", "items": {"type": "number"}},
        "summary_stats": {
            "type": "object",
            "required": ["per_class_mean_margin_mean", "per_class_mean_margin_std"],
            "additionalProperties": False,
            "properties": {
                "per_class_mean_margin_mean": {"type": "number"},
                "per_class_mean_margin_std": {"type": "number"},
            },
        },
        "record_count": {"type": "integer", "minimum": 1},
    },
}


def report_to_dict(report):
    return {
        "num_classes": report.num_classes,
        "model_robustness": round9(report.model_robustness),
        "class_robustness": [None if math.isinf(v) else round9(v)
                             for v in report.class_robustness],
        "tiers": list(report.tiers),
        "adjacency_proportions": [round9(v) for v in report.adjacency_proportions],
        "cci": [{"class": cls, "sample_index": int(report.cci[cls][0]),
                 "mean_margin": round9(report.cci[cls][1])}
                for cls in sorted(report.cci)],
        "per_class_mean_margin": [round9(v) for v in report.per_class_mean_margin],
        "summary_stats": {k: round9(v) for k, v in sorted(report.summary_stats.items())},
        "record_count": report.record_count,
    }


def write_report(report, path):
    doc = report_to_dict(report)
    _validate_schema(doc, REPORT_SCHEMA)
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path):
    """Load a report file back; null class robustness becomes +inf."""
    with open(path, "r", encoding="ascii") as fh:
        doc = json.load(fh)
    _validate_schema(doc, REPORT_SCHEMA)
    return RobustnessReport(
        num_classes=doc["num_classes"],
        model_robustness=doc["model_robustness"],
        class_robustness=np.asarray(
            [INFINITE if v is None else v for v in doc["class_robustness"]]),
        tiers=tuple(doc["tiers"]),
        adjacency_proportions=np.asarray(doc["adjacency_proportions"]),
        cci={entry["class"]: (entry["sample_index"], entry["mean_margin"])
             for entry in doc["cci"]},
        per_class_mean_margin=np.asarray(doc["per_class_mean_margin"]),
        record_count=doc["record_count"],
    )
