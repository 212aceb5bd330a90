"""Shared oracles and fixtures.

The finite-difference helpers here are the independent gradient oracles:
they only ever evaluate the loss (never the backward pass), so agreement
with backpropagation is evidence, not circularity.
"""

import numpy as np
import pytest

from marginlab.data import LabeledDataset, SyntheticSpec, make_synthetic
from marginlab.network import (Layer, Network, TrainConfig, forward,
                               init_network, loss_value, train)


def perturbed_net(net, layer_idx, which, flat_idx, delta):
    """Copy of a network with one parameter entry nudged by delta."""
    layers = []
    for i, layer in enumerate(net.layers):
        weights = layer.weights.copy()
        biases = layer.biases.copy()
        if i == layer_idx:
            if which == "weight":
                weights.flat[flat_idx] += delta
            else:
                biases[flat_idx] += delta
        layers.append(Layer(weights=weights, biases=biases,
                            activation=layer.activation))
    return Network(layers=tuple(layers), input_dim=net.input_dim,
                   num_classes=net.num_classes, seed=net.seed)


def fd_param_gradients(net, x, target, loss, h=1e-5):
    """Central-difference loss gradients for every weight and bias entry."""
    weight_grads, bias_grads = [], []
    for li, layer in enumerate(net.layers):
        gw = np.zeros_like(layer.weights)
        for fi in range(layer.weights.size):
            up = loss_value(perturbed_net(net, li, "weight", fi, h), x, target, loss)
            dn = loss_value(perturbed_net(net, li, "weight", fi, -h), x, target, loss)
            gw.flat[fi] = (up - dn) / (2 * h)
        gb = np.zeros_like(layer.biases)
        for fi in range(layer.biases.size):
            up = loss_value(perturbed_net(net, li, "bias", fi, h), x, target, loss)
            dn = loss_value(perturbed_net(net, li, "bias", fi, -h), x, target, loss)
            gb[fi] = (up - dn) / (2 * h)
        weight_grads.append(gw)
        bias_grads.append(gb)
    return weight_grads, bias_grads


def fd_input_gradient(net, x, target, loss, h=1e-5):
    """Central-difference loss gradient w.r.t. the input vector."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.shape[0]):
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (loss_value(net, up, target, loss)
                   - loss_value(net, dn, target, loss)) / (2 * h)
    return grad


def fd_logit_gradient(net, x, index=0, h=1e-6):
    """Central-difference gradient of one output logit w.r.t. the input."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.shape[0]):
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (forward(net, up)[0][index] - forward(net, dn)[0][index]) / (2 * h)
    return grad


def random_small_net(rng, max_layers=3, max_width=8, softmax_out=True):
    """Random little network for gradient sweeps."""
    n_layers = int(rng.integers(1, max_layers + 1))
    widths = [int(rng.integers(2, max_width + 1)) for _ in range(n_layers + 1)]
    hidden_acts = ["identity", "relu", "sigmoid", "tanh"]
    layers = []
    for i in range(n_layers):
        act = ("softmax-output" if softmax_out and i == n_layers - 1
               else hidden_acts[int(rng.integers(0, len(hidden_acts)))])
        layers.append(Layer(
            weights=rng.standard_normal((widths[i + 1], widths[i])),
            biases=rng.standard_normal(widths[i + 1]),
            activation=act))
    return Network(layers=tuple(layers), input_dim=widths[0],
                   num_classes=widths[-1])


@pytest.fixture(scope="session")
def two_blobs():
    """Linearly separable 2-D two-class dataset, 100 points per class."""
    spec = SyntheticSpec(kind="gaussian-blobs", dimension=2, num_classes=2,
                         points_per_class=100, noise_sigma=0.3,
                         centers=np.array([[-1.0, 0.0], [1.0, 0.0]]),
                         value_range=(-4.0, 4.0), seed=7)
    return make_synthetic(spec)


@pytest.fixture(scope="session")
def blob_net(two_blobs):
    """Small MLP trained to separate the blobs."""
    net = init_network(2, [8], 2, seed=3)
    cfg = TrainConfig(learning_rate=0.2, epochs=50, batch_size=16, seed=3)
    trained, _ = train(net, two_blobs, cfg)
    return trained


@pytest.fixture(scope="session")
def three_rings():
    """Three concentric rings, a model with curved boundaries."""
    spec = SyntheticSpec(kind="concentric-rings", dimension=2, num_classes=3,
                         points_per_class=120, noise_sigma=0.05,
                         radii=np.array([0.8, 1.8, 2.8]),
                         value_range=(-4.0, 4.0), seed=11)
    return make_synthetic(spec)


@pytest.fixture(scope="session")
def ring_net(three_rings):
    net = init_network(2, [16, 16], 3, hidden_activation="tanh", seed=5)
    cfg = TrainConfig(learning_rate=0.2, epochs=120, batch_size=16, seed=5)
    trained, _ = train(net, three_rings, cfg)
    return trained
