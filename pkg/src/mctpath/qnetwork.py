"""Small fully-connected Q-network in plain numpy."""

from __future__ import annotations

import numpy as np


class TrainingDivergence(FloatingPointError):
    pass


def relu(x):
    return np.maximum(x, 0.0)


class QNetwork:
    """Multilayer perceptron with ReLU hidden layers and a linear head.

    Inputs are standardized with ``x_mean``/``x_std`` before the first layer.
    ``weights[i]`` has shape ``(fan_in, fan_out)``.
    """

    def __init__(self, sizes, rng=None, x_mean=None, x_std=None):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = [int(s) for s in sizes]
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights, self.biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            last = i == len(self.sizes) - 2
            limit = np.sqrt((3.0 if last else 6.0) / fan_in)
            self.weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self.x_mean = np.zeros(self.sizes[0]) if x_mean is None else np.asarray(x_mean, float)
        self.x_std = np.ones(self.sizes[0]) if x_std is None else np.asarray(x_std, float)

    @property
    def n_outputs(self):
        return self.sizes[-1]

    def params(self):
        return self.weights + self.biases

    def is_finite(self):
        return all(np.all(np.isfinite(p)) for p in self.params())

    def forward(self, X, keep=False):
        h = (np.atleast_2d(X) - self.x_mean) / self.x_std
        cache = [h]
        n = len(self.weights)
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = z if i == n - 1 else relu(z)
            if keep:
                cache.append(z)
        return (h, cache) if keep else h

    def __call__(self, X):
        return self.forward(X)

    def backward(self, cache, dout):
        """Gradients of ``sum(dout * output)`` w.r.t. weights and biases."""
        n = len(self.weights)
        gW, gb = [None] * n, [None] * n
        g = dout
        for i in range(n - 1, -1, -1):
            a_in = cache[0] if i == 0 else relu(cache[i])
            gW[i] = a_in.T @ g
            gb[i] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i].T) * (cache[i] > 0)
        return gW, gb

    def loss_and_grad(self, X, actions, targets):
        """Mean squared TD error on the taken actions, and its gradient.

        Gradients are ``None`` when the loss is not finite.
        """
        Q, cache = self.forward(X, keep=True)
        idx = np.arange(len(actions))
        err = Q[idx, actions] - targets
        with np.errstate(over="ignore", invalid="ignore"):
            loss = float(np.mean(err * err))
        if not np.isfinite(loss):
            return loss, None, None
        dQ = np.zeros_like(Q)
        dQ[idx, actions] = 2.0 * err / len(actions)
        gW, gb = self.backward(cache, dQ)
        return loss, gW, gb

    def copy(self):
        other = QNetwork.__new__(QNetwork)
        other.sizes = list(self.sizes)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        other.x_mean = self.x_mean.copy()
        other.x_std = self.x_std.copy()
        return other

    def sync_from(self, other):
        for dst, src in zip(self.params(), other.params()):
            dst[...] = src
        self.x_mean[...] = other.x_mean
        self.x_std[...] = other.x_std

    def to_dict(self):
        return {
            "sizes": self.sizes,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        net = cls.__new__(cls)
        net.sizes = [int(s) for s in data["sizes"]]
        net.weights = [np.array(w, dtype=float).reshape(a, b)
                       for w, a, b in zip(data["weights"], net.sizes[:-1], net.sizes[1:])]
        net.biases = [np.array(b, dtype=float) for b in data["biases"]]
        net.x_mean = np.array(data["x_mean"], dtype=float)
        net.x_std = np.array(data["x_std"], dtype=float)
        return net


def sgd_step(net: QNetwork, states, actions, targets, lr):
    """One gradient-descent step on the batch; returns the pre-update loss."""
    actions = np.asarray(actions, dtype=int)
    targets = np.asarray(targets, dtype=float)
    if actions.size == 0:
        raise ValueError("empty batch")
    if targets.shape != actions.shape:
        raise ValueError("targets and actions are misaligned")
    loss, gW, gb = net.loss_and_grad(states, actions, targets)
    if not np.isfinite(loss):
        raise TrainingDivergence(f"non-finite TD loss {loss}")
    for W, g in zip(net.weights, gW):
        W -= lr * g
    for b, g in zip(net.biases, gb):
        b -= lr * g
    return loss
