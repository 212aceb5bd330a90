"""Randomized linear boundary search.

Walks rays from labeled samples along random orthonormal directions until
the model's prediction changes, recording the distance (margin) and the
first foreign class (adjacent class). Designed so parallel and serial runs
produce byte-identical record lists.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .network import predict_batch

logger = logging.getLogger(__name__)

NA = None  # adjacent_class value for a capped search

# Directions processed per forward pass; bounds probe-matrix memory while
# keeping the call shapes independent of thread count and total k.
_DIRECTION_CHUNK = 64


@dataclass(frozen=True)
class DirectionSet:
    """k mutually orthonormal D-vectors, reproducible from a seed."""

    dimension: int
    count: int
    vectors: np.ndarray  # (k, D)
    seed: int

    def __post_init__(self):
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        if vectors.shape != (self.count, self.dimension):
            raise ValueError("vectors must have shape (count, dimension)")
        if not 1 <= self.count <= self.dimension:
            raise ValueError("count must satisfy 1 <= k <= dimension")


def make_directions(dimension, count, seed):
    """Draw ``count`` random orthonormal directions in ``dimension`` space.

    A seeded standard-normal matrix is orthonormalized by QR with the usual
    sign fix (positive R diagonal), giving a deterministic frame that is
    uniformly distributed over orthogonal k-frames.
    """
    if not 1 <= count <= dimension:
        raise ValueError(f"count must be in [1, {dimension}], got {count}")
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((dimension, count))
    q, r = np.linalg.qr(raw, mode="reduced")
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    return DirectionSet(dimension=dimension, count=count,
                        vectors=q.T.copy(), seed=int(seed))


@dataclass(frozen=True)
class SearchConfig:
    """Step size, cap distance, and which signs of each direction to walk."""

    step_size: float
    max_range: float
    signs: str = "both"  # both | positive | negative

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.max_range < self.step_size:
            raise ValueError("max_range must be at least step_size")
        if self.signs not in ("both", "positive", "negative"):
            raise ValueError(f"unknown signs mode {self.signs!r}")
        steps = self.max_range / self.step_size
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(
                "max_range must be an integer multiple of step_size "
                "(margins are recorded as step multiples and capped runs "
                "are recorded at exactly max_range)"
            )

    @property
    def max_steps(self):
        return int(round(self.max_range / self.step_size))

    @property
    def sign_values(self):
        if self.signs == "both":
            return (1, -1)
        return (1,) if self.signs == "positive" else (-1,)

    def step_distances(self):
        """Probe distances 1..max_steps, with the last pinned to max_range."""
        distances = np.arange(1, self.max_steps + 1, dtype=np.float64) * self.step_size
        distances[-1] = self.max_range
        return distances


@dataclass(frozen=True)
class MarginRecord:
    """Outcome of one ray walk: where the prediction first changed."""

    sample_index: int
    origin_class: int
    direction_index: int
    sign: int
    margin: float
    adjacent_class: int | None  # None when the walk exhausted max_range

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if not self.margin > 0:
            raise ValueError("margin must be positive")
        if self.adjacent_class is not None and self.adjacent_class == self.origin_class:
            raise ValueError("adjacent class cannot equal the origin class")

    @property
    def capped(self):
        return self.adjacent_class is None


def _search_sample(net, x, label, vectors, sample_index, cfg):
    """All (direction, sign) walks for one sample, via one batched kernel.

    Every probe point of every direction, sign, and step goes through a
    single fixed-shape forward pass per direction chunk, so results do not
    depend on how samples are distributed over worker threads.
    """
    distances = cfg.step_distances()
    signs = np.asarray(cfg.sign_values, dtype=np.float64)
    n_steps, n_signs = distances.shape[0], signs.shape[0]
    records = []
    for start in range(0, vectors.shape[0], _DIRECTION_CHUNK):
        chunk = vectors[start:start + _DIRECTION_CHUNK]
        k = chunk.shape[0]
        # probes[j, s, t] = x + signs[s] * distances[t] * chunk[j]
        offsets = (signs[None, :, None, None]
                   * distances[None, None, :, None]
                   * chunk[:, None, None, :])
        probes = (x[None, None, None, :] + offsets).reshape(-1, x.shape[0])
        preds = predict_batch(net, probes).reshape(k, n_signs, n_steps)
        changed = preds != label
        found = changed.any(axis=2)
        first = np.argmax(changed, axis=2)
        for j in range(k):
            for s in range(n_signs):
                if found[j, s]:
                    margin = float(distances[first[j, s]])
                    adjacent = int(preds[j, s, first[j, s]])
                else:
                    margin = cfg.max_range
                    adjacent = NA
                records.append(MarginRecord(
                    sample_index=int(sample_index),
                    origin_class=int(label),
                    direction_index=start + j,
                    sign=int(signs[s]),
                    margin=margin,
                    adjacent_class=adjacent,
                ))
    return records


def search_one(net, sample, label, direction, sign, cfg,
               sample_index=0, direction_index=0):
    """Walk a single ray and return its margin record."""
    direction = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(direction)
    if abs(norm - 1.0) > 1e-9:
        raise ValueError(f"direction must be unit-norm, got |d| = {norm}")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    x = np.asarray(sample, dtype=np.float64)
    base = _search_sample(net, x, int(label), direction[None, :], sample_index,
                          _single_sign_config(cfg, sign))
    record = base[0]
    return MarginRecord(sample_index=record.sample_index,
                        origin_class=record.origin_class,
                        direction_index=direction_index,
                        sign=record.sign,
                        margin=record.margin,
                        adjacent_class=record.adjacent_class)


def _single_sign_config(cfg, sign):
    return SearchConfig(step_size=cfg.step_size, max_range=cfg.max_range,
                        signs="positive" if sign == 1 else "negative")


def search_all(net, data, indices, dirs, cfg, threads=1):
    """Search every (sample, direction, sign) combination.

    Returns records in canonical order: samples in the order given by
    ``indices``, directions ascending, and within a direction the +1 walk
    before the -1 walk. The record list is identical for any thread count.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        return []
    if indices.min() < 0 or indices.max() >= len(data):
        raise ValueError("sample indices out of range")
    if dirs.dimension != data.dimension:
        raise ValueError("direction dimension does not match data dimension")

    X = data.samples
    y = data.labels
    mispredicted = [int(i) for i in indices
                    if int(predict_batch(net, X[i][None, :])[0]) != int(y[i])]
    if mispredicted:
        logger.warning(
            "%d of %d selected samples are misclassified by the model; "
            "their searches start outside their labeled region (indices %s%s)",
            len(mispredicted), indices.size, mispredicted[:10],
            "..." if len(mispredicted) > 10 else "")

    def run(i):
        return _search_sample(net, X[i], int(y[i]), dirs.vectors, int(i), cfg)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_sample = list(pool.map(run, indices))
    else:
        per_sample = [run(i) for i in indices]
    return [record for batch in per_sample for record in batch]


# ---------------------------------------------------------------------------
# margins.csv: one row per record; adjacent_class -1 encodes a capped walk;
# margins carry 9 significant digits.
# ---------------------------------------------------------------------------

MARGINS_HEADER = ("sample_index", "origin_class", "direction_index",
                  "sign", "margin", "adjacent_class")


def write_margins(records, path):
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(MARGINS_HEADER)
        for r in records:
            adjacent = -1 if r.adjacent_class is None else r.adjacent_class
            writer.writerow((r.sample_index, r.origin_class, r.direction_index,
                             r.sign, format(r.margin, ".9g"), adjacent))


def read_margins(path):
    records = []
    with open(path, "r", newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != MARGINS_HEADER:
            raise ValueError(f"unexpected margins header {header!r}")
        for row in reader:
            adjacent = int(row[5])
            records.append(MarginRecord(
                sample_index=int(row[0]), origin_class=int(row[1]),
                direction_index=int(row[2]), sign=int(row[3]),
                margin=float(row[4]),
                adjacent_class=None if adjacent == -1 else adjacent))
    return records
