"""Evasion attacks and attacked-accuracy evaluation.

All gradient attacks share one iterative core (ascend the cross-entropy
loss at the dataset label, project into the epsilon ball, clip into the
value range), so the single-step reductions between methods hold bitwise.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._format import fmt9
from .network import backward, predict

METHODS = ("fgsm", "pgd", "bim", "mim", "uniform-noise", "gaussian-noise")
GRADIENT_METHODS = ("fgsm", "pgd", "bim", "mim")


@dataclass(frozen=True)
class AttackConfig:
    """One attack's full parameterization."""

    method: str
    epsilon: float = 0.0
    iterations: int = 1
    step_alpha: float | None = None  # None: epsilon / iterations
    momentum_decay: float = 1.0
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown attack method {self.method!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.method in GRADIENT_METHODS and self.iterations < 1:
            raise ValueError("iterative attacks need at least one iteration")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    def resolved_alpha(self):
        if self.step_alpha is not None:
            return self.step_alpha
        return self.epsilon / self.iterations


def _iterative_core(net, x, label, eps, iters, alpha, mu, normalize,
                    value_range, start_offset=None):
    """Shared ascent loop for fgsm / bim / pgd / mim.

    Each iteration steps by ``alpha * sign(g)`` where ``g`` is either the
    raw input gradient or the L1-normalized momentum accumulator, then
    projects into the eps ball around ``x`` and clips into ``value_range``.
    A zero-gradient iteration leaves the point unchanged.
    """
    lo, hi = value_range
    x0 = np.asarray(x, dtype=np.float64)
    current = x0
    if start_offset is not None:
        current = np.clip(x0 + start_offset, lo, hi)
    momentum = np.zeros_like(x0)
    for _ in range(iters):
        grad = backward(net, current, int(label)).input_grad
        if normalize:
            l1 = float(np.abs(grad).sum())
            if l1 == 0.0:
                continue
            momentum = mu * momentum + grad / l1
            step_dir = np.sign(momentum)
        else:
            step_dir = np.sign(grad)
        current = current + alpha * step_dir
        current = x0 + np.clip(current - x0, -eps, eps)
        current = np.clip(current, lo, hi)
    return current


def fgsm(net, x, label, eps, value_range=(0.0, 1.0)):
    """One signed-gradient step of size eps, clipped into the value range."""
    return _iterative_core(net, x, label, eps, iters=1, alpha=eps, mu=0.0,
                           normalize=False, value_range=value_range)


def bim(net, x, label, eps, iters, alpha, value_range=(0.0, 1.0)):
    """Iterated signed-gradient steps projected into the eps ball each step."""
    return _iterative_core(net, x, label, eps, iters=iters, alpha=alpha,
                           mu=0.0, normalize=False, value_range=value_range)


def pgd(net, x, label, eps, iters, alpha, seed, value_range=(0.0, 1.0),
        start_radius=None):
    """bim from a seeded uniform random start inside the eps ball."""
    radius = eps if start_radius is None else start_radius
    rng = np.random.default_rng(seed)
    offset = rng.uniform(-radius, radius, size=np.shape(x))
    return _iterative_core(net, x, label, eps, iters=iters, alpha=alpha,
                           mu=0.0, normalize=False, value_range=value_range,
                           start_offset=offset)


def mim(net, x, label, eps, iters, alpha, mu, value_range=(0.0, 1.0)):
    """Momentum variant: accumulate L1-normalized gradients, step by sign."""
    return _iterative_core(net, x, label, eps, iters=iters, alpha=alpha,
                           mu=mu, normalize=True, value_range=value_range)


def noise(x, kind, level, seed, value_range=(0.0, 1.0)):
    """Random perturbation: uniform in [-level, level] or gaussian with std level."""
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    if kind == "uniform":
        perturbed = x + rng.uniform(-level, level, size=x.shape)
    elif kind == "gaussian":
        perturbed = x + level * rng.standard_normal(x.shape)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    return np.clip(perturbed, value_range[0], value_range[1])


def attack_sample(net, x, label, cfg, value_range, sample_seed):
    """Dispatch one sample through the configured attack."""
    m = cfg.method
    if m == "fgsm":
        return fgsm(net, x, label, cfg.epsilon, value_range)
    if m == "bim":
        return bim(net, x, label, cfg.epsilon, cfg.iterations,
                   cfg.resolved_alpha(), value_range)
    if m == "pgd":
        return pgd(net, x, label, cfg.epsilon, cfg.iterations,
                   cfg.resolved_alpha(), sample_seed, value_range)
    if m == "mim":
        return mim(net, x, label, cfg.epsilon, cfg.iterations,
                   cfg.resolved_alpha(), cfg.momentum_decay, value_range)
    if m == "uniform-noise":
        return noise(x, "uniform", cfg.epsilon, sample_seed, value_range)
    return noise(x, "gaussian", cfg.sigma, sample_seed, value_range)


def evaluate(net, data, cfg, threads=1):
    """Attacked accuracy: the fraction of samples still predicted correctly.

    Every sample is attacked and re-predicted independently (stochastic
    attacks get the per-sample seed ``(cfg.seed, index)``), so the result
    does not depend on the thread count.
    """
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    X, y = data.samples, data.labels

    def run(i):
        adv = attack_sample(net, X[i], int(y[i]), cfg, data.value_range,
                            sample_seed=(cfg.seed, i))
        return predict(net, adv) == int(y[i])

    indices = range(len(data))
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            hits = list(pool.map(run, indices))
    else:
        hits = [run(i) for i in indices]
    return float(np.mean(hits))


def sweep(net, data, method, eps_list, iterations=1, step_alpha=None,
          momentum_decay=1.0, seed=0, threads=1):
    """Accuracy-vs-epsilon curve; rows come back ordered by epsilon."""
    rows = []
    for eps in sorted(eps_list):
        cfg = AttackConfig(method=method, epsilon=float(eps),
                           iterations=iterations, step_alpha=step_alpha,
                           momentum_decay=momentum_decay,
                           sigma=float(eps), seed=seed)
        rows.append((float(eps), evaluate(net, data, cfg, threads=threads)))
    return rows


ACCURACY_HEADER = ("epsilon", "accuracy", "n_samples", "method", "model_id")


def write_accuracy_csv(rows, n_samples, method, model_id, path):
    """Persist sweep rows as accuracy_vs_eps.csv."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(ACCURACY_HEADER)
        for eps, acc in rows:
            writer.writerow((fmt9(eps), fmt9(acc), n_samples, method, model_id))


def read_accuracy_csv(path):
    rows = []
    with open(path, "r", newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != ACCURACY_HEADER:
            raise ValueError(f"unexpected accuracy header {header!r}")
        for row in reader:
            rows.append({"epsilon": float(row[0]), "accuracy": float(row[1]),
                         "n_samples": int(row[2]), "method": row[3],
                         "model_id": row[4]})
    return rows
