"""Margin-guided retraining.

Selects samples per class in proportion to measured vulnerability, emits
cross-boundary examples along their smallest-margin directions, and retrains
the classifier on the shuffled union of originals and generated examples.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from ._format import fmt9
from .data import LabeledDataset
from .metrics import build_report
from .network import TrainConfig, train

logger = logging.getLogger(__name__)

TIER_COUNTS = {"high": 20, "medium": 100, "low": 150}
REDUCED_COUNT = 150
DIRECTIONS_PER_SAMPLE = 40
STRENGTH_RANGE = (1.5, 2.0)

MODES = ("fl", "reduced")


@dataclass(frozen=True)
class GenerationPlan:
    """Per-class selection budgets plus the example-synthesis knobs."""

    class_counts: tuple[int, ...]
    directions_per_sample: int = DIRECTIONS_PER_SAMPLE
    strength_range: tuple[float, float] = STRENGTH_RANGE
    clip_to_range: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.class_counts or any(c < 1 for c in self.class_counts):
            raise ValueError("every class count must be positive")
        if self.directions_per_sample < 1:
            raise ValueError("directions_per_sample must be positive")
        lo, hi = self.strength_range
        if lo < 1.0:
            raise ValueError("strength factors below 1.0 cannot cross the boundary")
        if hi < lo:
            raise ValueError("strength_range must be ordered")


@dataclass(frozen=True)
class GeneratedExample:
    """One cross-boundary vector plus the provenance to audit it."""

    vector: np.ndarray
    label: int
    seed_sample: int
    direction_index: int
    sign: int
    factor: float
    clipped: bool


def plan_from_report(report, mode, clip_to_range=True, seed=0):
    """Turn tier assignments into per-class selection budgets.

    ``fl`` mode maps high/medium/low tiers to 20/100/150 picks; ``reduced``
    mode ignores the tiers and gives every class 150.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "reduced":
        counts = tuple(REDUCED_COUNT for _ in report.tiers)
    else:
        counts = tuple(TIER_COUNTS[t] for t in report.tiers)
    return GenerationPlan(class_counts=counts, clip_to_range=clip_to_range,
                          seed=int(seed))


def _eligible_by_class(data, records, num_classes):
    """Per class, the sorted searched-sample indices with >=1 uncapped record."""
    has_uncapped = set()
    for r in records:
        if r.adjacent_class is not None:
            has_uncapped.add(r.sample_index)
    eligible = [[] for _ in range(num_classes)]
    for idx in sorted(has_uncapped):
        eligible[int(data.labels[idx])].append(idx)
    return eligible


def generate_examples(data, records, dirs, plan):
    """Synthesize boundary-crossing examples per the plan.

    For each class, a seeded draw picks ``class_counts[cls]`` searched
    samples (all of them, with a warning, if fewer are eligible). For each
    chosen sample the uncapped records with the smallest margins (at most
    ``directions_per_sample``) each yield one example
    ``x + sign * (u * margin) * direction`` with its own strength factor
    ``u`` drawn uniformly from ``strength_range``, labeled with the seed
    sample's dataset label, optionally clipped into the value range.
    """
    num_classes = data.num_classes
    if len(plan.class_counts) != num_classes:
        raise ValueError("plan has a count per class; dataset class count differs")
    rng = np.random.default_rng(plan.seed)
    eligible = _eligible_by_class(data, records, num_classes)

    chosen = []
    for cls in range(num_classes):
        want = plan.class_counts[cls]
        pool = eligible[cls]
        if len(pool) < want:
            logger.warning(
                "class %d has %d eligible samples, plan wants %d; using all",
                cls, len(pool), want)
            picked = list(pool)
        else:
            order = rng.permutation(len(pool))[:want]
            picked = [pool[i] for i in order]
        chosen.append(sorted(picked))

    by_sample = {}
    for r in records:
        if r.adjacent_class is not None:
            by_sample.setdefault(r.sample_index, []).append(r)

    lo, hi = data.value_range
    u_lo, u_hi = plan.strength_range
    examples = []
    for cls in range(num_classes):
        for idx in chosen[cls]:
            recs = by_sample.get(idx, [])
            if not recs:
                logger.warning("sample %d has no uncapped records; skipped", idx)
                continue
            recs = sorted(recs, key=lambda r: (r.margin, r.direction_index, -r.sign))
            recs = recs[:plan.directions_per_sample]
            x = data.samples[idx]
            for r in recs:
                factor = float(rng.uniform(u_lo, u_hi))
                vector = x + r.sign * (factor * r.margin) * dirs.vectors[r.direction_index]
                clipped = False
                if plan.clip_to_range:
                    bounded = np.clip(vector, lo, hi)
                    clipped = bool(np.any(bounded != vector))
                    vector = bounded
                vector.setflags(write=False)
                examples.append(GeneratedExample(
                    vector=vector, label=int(data.labels[idx]),
                    seed_sample=int(idx), direction_index=r.direction_index,
                    sign=r.sign, factor=factor, clipped=clipped))
    return examples


def assemble_retrain_set(data, examples, seed):
    """Seeded shuffle of all originals plus all generated examples."""
    if examples:
        extra = np.stack([e.vector for e in examples])
        if extra.shape[1] != data.dimension:
            raise ValueError("example dimension does not match dataset")
        samples = np.vstack([data.samples, extra])
        labels = np.concatenate([data.labels,
                                 np.asarray([e.label for e in examples], dtype=np.int64)])
    else:
        samples = data.samples.copy()
        labels = data.labels.copy()
    order = np.random.default_rng(seed).permutation(samples.shape[0])
    return LabeledDataset(samples=samples[order], labels=labels[order],
                          num_classes=data.num_classes,
                          value_range=data.value_range,
                          name=f"{data.name}-retrain",
                          image_shape=data.image_shape)


@dataclass(frozen=True)
class RetrainConfig:
    """Like TrainConfig, but zero epochs or a zero rate mean "skip training"."""

    learning_rate: float
    epochs: int
    batch_size: int
    loss: str = "cross-entropy"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("invalid retrain configuration")


@dataclass(frozen=True)
class FeedbackBundle:
    """Provenance of one retraining run."""

    report: object
    plan: GenerationPlan
    examples: list
    retrain_size: int
    trace: dict


def feedback_retrain(net, data, records, dirs, mode, cfg, plan_seed=0,
                     clip_to_range=True):
    """Full retraining pass: analyze, plan, generate, assemble, warm-start train.

    The returned network continues from ``net``'s parameters; with zero
    epochs or a zero learning rate the parameters are returned unchanged
    (the plan and examples are still produced and reported).
    """
    report = build_report(records, num_classes=net.num_classes)
    plan = plan_from_report(report, mode, clip_to_range=clip_to_range,
                            seed=plan_seed)
    examples = generate_examples(data, records, dirs, plan)
    retrain_set = assemble_retrain_set(data, examples, seed=cfg.seed)
    if cfg.epochs == 0 or cfg.learning_rate == 0:
        return net, FeedbackBundle(report=report, plan=plan, examples=examples,
                                   retrain_size=len(retrain_set), trace={})
    train_cfg = TrainConfig(learning_rate=cfg.learning_rate, epochs=cfg.epochs,
                            batch_size=cfg.batch_size, loss=cfg.loss,
                            seed=cfg.seed)
    retrained, trace = train(net, retrain_set, train_cfg)
    return retrained, FeedbackBundle(report=report, plan=plan, examples=examples,
                                     retrain_size=len(retrain_set), trace=trace)


# ---------------------------------------------------------------------------
# examples.csv / plan.json
# ---------------------------------------------------------------------------

def write_examples(examples, path):
    if not examples:
        raise ValueError("no examples to write")
    dim = examples[0].vector.shape[0]
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed_sample", "direction", "sign", "factor",
                         "clipped", "label"] + [f"c{i}" for i in range(dim)])
        for e in examples:
            writer.writerow([e.seed_sample, e.direction_index, e.sign,
                             fmt9(e.factor), int(e.clipped), e.label]
                            + [fmt9(v) for v in e.vector])


def read_examples(path):
    examples = []
    with open(path, "r", newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 6
        if header[:6] != ["seed_sample", "direction", "sign", "factor",
                          "clipped", "label"] or dim < 1:
            raise ValueError(f"unexpected examples header {header!r}")
        for row in reader:
            examples.append(GeneratedExample(
                vector=np.asarray([float(v) for v in row[6:]]),
                label=int(row[5]), seed_sample=int(row[0]),
                direction_index=int(row[1]), sign=int(row[2]),
                factor=float(row[3]), clipped=bool(int(row[4]))))
    return examples


def write_plan(plan, mode, path):
    doc = {
        "mode": mode,
        "class_counts": list(plan.class_counts),
        "directions_per_sample": plan.directions_per_sample,
        "strength_range": list(plan.strength_range),
        "clip_to_range": plan.clip_to_range,
        "seed": plan.seed,
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_plan(path):
    with open(path, "r", encoding="ascii") as fh:
        doc = json.load(fh)
    plan = GenerationPlan(class_counts=tuple(doc["class_counts"]),
                          directions_per_sample=doc["directions_per_sample"],
                          strength_range=tuple(doc["strength_range"]),
                          clip_to_range=doc["clip_to_range"],
                          seed=doc["seed"])
    return plan, doc["mode"]
