"""Numerical checks of the retraining guarantees on binary classifiers.

Two executable claims about a scalar-output classifier f (class A where
f < 0, class B where f > 0) and a cross-boundary example x_e generated
along a search direction:

* alignment: if a ray from a class-A point reaches the boundary, the
  direction has positive cosine with the input gradient of f;
* decrease: one SGD step on (x_e, y = -1) under L = 1/2 (y - sigma(f))^2
  strictly lowers f(x_e), matching a closed-form delta exactly when the
  classifier is a single dense layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._format import round9
from .network import Layer, Network, backward, forward, logit_gradient, sgd_step


def _f_value(net, x):
    """Scalar classifier output: the single pre-activation logit."""
    if net.num_classes != 1:
        raise ValueError("theory checks need a single-output classifier")
    logits, scores = forward(net, x)
    return float(logits[0]), float(scores[0])


def _sigma_prime(activation, f, score):
    if activation == "identity":
        return 1.0
    if activation == "sigmoid":
        return score * (1.0 - score)
    if activation == "tanh":
        return 1.0 - score * score
    if activation == "relu":
        return 1.0 if f > 0 else 0.0
    raise ValueError(f"activation {activation!r} unsupported for theory checks")


def find_boundary_distance(net, x0, direction, step_size, max_range):
    """First stepped distance along ``direction`` where f crosses above zero.

    Walks step_size, 2*step_size, ... up to max_range; returns None when f
    stays nonpositive for every probe (the ray misses the boundary).
    """
    f0, _ = _f_value(net, x0)
    if f0 >= 0:
        raise ValueError("x0 must start strictly inside the f < 0 region")
    steps = int(round(max_range / step_size))
    if abs(steps * step_size - max_range) > 1e-9 or steps < 1:
        raise ValueError("max_range must be a positive multiple of step_size")
    distances = np.arange(1, steps + 1, dtype=np.float64) * step_size
    distances[-1] = max_range
    probes = np.asarray(x0)[None, :] + distances[:, None] * np.asarray(direction)[None, :]
    logits = np.asarray([_f_value(net, p)[0] for p in probes])
    crossed = logits > 0
    if not crossed.any():
        return None
    return float(distances[np.argmax(crossed)])


@dataclass(frozen=True)
class TheoryProbe:
    """One boundary crossing with everything both checks need."""

    net: Network
    x0: np.ndarray
    direction: np.ndarray
    eta0: float          # stepped boundary distance along direction
    strength: float      # x_e overshoot factor, > 1
    alpha: float
    x_e: np.ndarray
    f_x0: float
    f_e: float           # f at x_e
    score_e: float       # sigma(f) at x_e
    delta_sigma: float   # loss slope dL/df at x_e for y = -1
    gradient: np.ndarray  # unit input gradient of f at x0
    alignment: float     # cos(direction, gradient)
    eta1: float          # component of eta0 * direction along gradient
    eta2: float          # tangential component magnitude
    tangent: np.ndarray


def make_probe(net, x0, direction, step_size, max_range, strength=1.5,
               alpha=0.05):
    """Build a probe, or return None when the ray never reaches the boundary."""
    x0 = np.asarray(x0, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("direction must be unit-norm")
    if strength <= 1.0:
        raise ValueError("strength must exceed 1 to overshoot the boundary")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    eta0 = find_boundary_distance(net, x0, direction, step_size, max_range)
    if eta0 is None:
        return None
    f_x0, _ = _f_value(net, x0)
    x_e = x0 + (strength * eta0) * direction
    f_e, score_e = _f_value(net, x_e)
    activation = net.layers[-1].activation
    delta_sigma = (1.0 + score_e) * _sigma_prime(activation, f_e, score_e)
    raw_grad = logit_gradient(net, x0)
    norm = float(np.linalg.norm(raw_grad))
    if norm == 0.0:
        return None
    gradient = raw_grad / norm
    alignment = float(direction @ gradient)
    residual = direction - alignment * gradient
    res_norm = float(np.linalg.norm(residual))
    tangent = residual / res_norm if res_norm > 1e-12 else np.zeros_like(direction)
    return TheoryProbe(net=net, x0=x0, direction=direction, eta0=eta0,
                       strength=strength, alpha=alpha, x_e=x_e, f_x0=f_x0,
                       f_e=f_e, score_e=score_e, delta_sigma=delta_sigma,
                       gradient=gradient, alignment=alignment,
                       eta1=eta0 * alignment, eta2=eta0 * res_norm,
                       tangent=tangent)


@dataclass(frozen=True)
class LemmaResult:
    alignment: float
    passed: bool
    eta1: float
    eta2: float
    reconstruction_error: float


def lemma1_check(probe):
    """Alignment claim: a boundary-reaching direction has cos(d, g) > 0.

    Also reports how well eta0*d decomposes back into eta1*g + eta2*t.
    """
    recon = probe.eta1 * probe.gradient + probe.eta2 * probe.tangent
    err = float(np.linalg.norm(probe.eta0 * probe.direction - recon))
    return LemmaResult(alignment=probe.alignment,
                       passed=probe.alignment > 0.0,
                       eta1=probe.eta1, eta2=probe.eta2,
                       reconstruction_error=err)


@dataclass(frozen=True)
class TheoremResult:
    f_before: float
    f_after: float
    delta: float
    closed_form_delta: float | None  # populated for single-layer classifiers
    passed: bool
    within_hypotheses: bool


def theorem1_check(net, x_e, alpha):
    """Decrease claim: one SGD step on (x_e, y=-1) strictly lowers f(x_e).

    The step minimizes L = 1/2 (y - sigma(f))^2 where sigma is the
    classifier's output activation. For a single dense layer f is linear in
    its parameters, so the measured delta must equal
    -alpha * delta_sigma * (||x_e||^2 + 1) with
    delta_sigma = (1 + sigma(f)) * sigma'(f) evaluated before the step.
    """
    x_e = np.asarray(x_e, dtype=np.float64)
    f_before, score = _f_value(net, x_e)
    if f_before <= 0:
        raise ValueError("theorem check requires f(x_e) > 0 (misclassified example)")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    activation = net.layers[-1].activation
    sigma_p = _sigma_prime(activation, f_before, score)
    delta_sigma = (1.0 + score) * sigma_p
    within = sigma_p > 0.0

    grads = backward(net, x_e, np.asarray([-1.0]), loss="squared-error")
    stepped = sgd_step(net, grads, alpha)
    f_after, _ = _f_value(stepped, x_e)
    delta = f_after - f_before

    closed = None
    if len(net.layers) == 1:
        closed = -alpha * delta_sigma * (float(x_e @ x_e) + 1.0)
    return TheoremResult(f_before=f_before, f_after=f_after, delta=delta,
                         closed_form_delta=closed,
                         passed=f_after < f_before,
                         within_hypotheses=within)


# ---------------------------------------------------------------------------
# Randomized sweeps. Each trial derives its own generator from
# (master seed, trial counter), so trials are independent and the sweep is
# reproducible and safely parallelizable.
# ---------------------------------------------------------------------------

def _linear_net(w, b):
    return Network(layers=(Layer(weights=np.asarray(w, dtype=np.float64)[None, :],
                                 biases=np.asarray([b], dtype=np.float64),
                                 activation="identity"),),
                   input_dim=len(w), num_classes=1)


def run_lemma_trials(n_trials, seed, step_size=0.05, max_range=8.0):
    """Alignment sweep over random linear classifiers.

    Draws classifiers and class-A points, keeps only rays that actually
    reach the boundary within range, and checks the alignment sign on each.
    Returns (results, attempts).
    """
    if n_trials < 1:
        raise ValueError("need at least one trial")
    results = []
    attempt = 0
    while len(results) < n_trials:
        rng = np.random.default_rng((seed, attempt))
        attempt += 1
        dim = int(rng.integers(2, 9))
        w = rng.standard_normal(dim)
        b = float(rng.standard_normal())
        x0 = rng.standard_normal(dim)
        f0 = float(w @ x0 + b)
        if f0 == 0.0:
            continue
        if f0 > 0:
            w, b, f0 = -w, -b, -f0
        net = _linear_net(w, b)
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
        probe = make_probe(net, x0, direction, step_size, max_range)
        if probe is None:
            continue
        check = lemma1_check(probe)
        results.append({
            "seed": attempt - 1,
            "dimension": dim,
            "eta0": probe.eta0,
            "alignment": check.alignment,
            "reconstruction_error": check.reconstruction_error,
            "pass": check.passed,
        })
    return results, attempt


def _random_theorem_case(rng):
    """Random classifier from {single identity layer, sigmoid-sigmoid stack}
    plus an input it misclassifies (f > 0)."""
    single = bool(rng.integers(0, 2))
    dim = int(rng.integers(2, 9))
    if single:
        net = _linear_net(rng.standard_normal(dim), float(rng.standard_normal()))
    else:
        hidden = int(rng.integers(2, 9))
        net = Network(layers=(
            Layer(weights=rng.standard_normal((hidden, dim)),
                  biases=rng.standard_normal(hidden), activation="sigmoid"),
            Layer(weights=rng.standard_normal((1, hidden)),
                  biases=rng.standard_normal(1), activation="sigmoid"),
        ), input_dim=dim, num_classes=1)
    for _ in range(200):
        x = rng.standard_normal(dim)
        f, _ = _f_value(net, x)
        if f > 0:
            return net, x
    return None, None


def run_theorem_trials(n_trials, seed):
    """Decrease sweep: one step per trial under the alpha cap
    0.1 / (||x_e||^2 + 1), scaled by a random factor in [0.1, 1]."""
    if n_trials < 1:
        raise ValueError("need at least one trial")
    results = []
    attempt = 0
    while len(results) < n_trials:
        rng = np.random.default_rng((seed, 1_000_000 + attempt))
        attempt += 1
        net, x_e = _random_theorem_case(rng)
        if net is None:
            continue
        cap = 0.1 / (float(x_e @ x_e) + 1.0)
        alpha = cap * float(rng.uniform(0.1, 1.0))
        res = theorem1_check(net, x_e, alpha)
        results.append({
            "seed": attempt - 1,
            "layers": len(net.layers),
            "f_before": res.f_before,
            "f_after": res.f_after,
            "delta": res.delta,
            "closed_form_delta": res.closed_form_delta,
            "pass": res.passed,
        })
    return results, attempt


def write_theory_report(lemma_results, theorem_results, seed, path):
    """theory_report.json: per-trial records plus summary pass rates."""
    def clean(trial):
        out = {}
        for key, value in trial.items():
            if isinstance(value, bool):
                out[key] = value
            elif isinstance(value, float):
                out[key] = round9(value)
            elif value is None:
                out[key] = None
            else:
                out[key] = value
        return out

    doc = {
        "seed": seed,
        "lemma1": {
            "trials": [clean(t) for t in lemma_results],
            "pass_rate": round9(float(np.mean([t["pass"] for t in lemma_results]))),
        },
        "theorem1": {
            "trials": [clean(t) for t in theorem_results],
            "pass_rate": round9(float(np.mean([t["pass"] for t in theorem_results]))),
        },
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return doc
