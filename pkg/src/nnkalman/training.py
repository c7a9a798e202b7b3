"""Profile-likelihood fitting of transition networks.

With the process-noise covariance profiled out, the maximum-likelihood
transition network minimises ``log det Q_hat`` where ``Q_hat`` is the mean
outer product of the one-step residuals ``x_t - F(x_{t-1}, u_t)``.
"""

from dataclasses import asdict, dataclass, field
import csv
import json
import math
import os
import warnings

import numpy as np

from .exceptions import ConfigError, DivergenceError
from .nn import Activation, Layer, Network, load_network, network_eval, network_vjp, save_network
from .rng import stream

LOSS_JITTER = 1e-9
OPTIMIZER_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainingConfig:
    """Optimiser and architecture settings.

    ``schedule`` is ``"exponential"`` (geometric decay from ``lr_start`` to
    ``lr_end``), ``"linear"`` or ``"constant"``.
    """

    epochs: int = 2000
    minibatch: int = 512
    lr_start: float = 1e-3
    lr_end: float = 1e-4
    schedule: str = "exponential"
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    depth: int = 2
    width: int = 32
    activation: str = "sine"
    init_frequency: float = 1.0

    def __post_init__(self):
        if self.epochs < 1 or self.minibatch < 1 or self.width < 1:
            raise ConfigError("epochs, minibatch and width must be positive")
        if self.depth < 2:
            raise ConfigError("residual transition networks need depth >= 2")
        if self.lr_start < 0 or self.lr_end < 0 or self.lr_end > self.lr_start:
            raise ConfigError("learning rates must satisfy 0 <= lr_end <= lr_start")
        if self.schedule not in ("exponential", "linear", "constant"):
            raise ConfigError(f"unknown learning-rate schedule {self.schedule!r}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        Activation(self.activation)

    def learning_rate(self, epoch):
        if self.schedule == "constant" or self.epochs == 1:
            return self.lr_start
        frac = epoch / (self.epochs - 1)
        if self.schedule == "linear":
            return self.lr_start + frac * (self.lr_end - self.lr_start)
        if self.lr_end == 0.0:
            return self.lr_start * (1.0 - frac)
        return self.lr_start * (self.lr_end / self.lr_start) ** frac


@dataclass(frozen=True, eq=False)
class TransitionData:
    """One-step pairs: ``inputs`` rows are ``(x_{t-1}, u_t)``, ``targets`` rows are ``x_t``."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        z = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        x = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if z.shape[0] != x.shape[0]:
            raise ValueError("inputs and targets need the same number of rows")
        object.__setattr__(self, "inputs", z)
        object.__setattr__(self, "targets", x)

    @classmethod
    def from_trajectory(cls, states, inputs=None):
        states = np.asarray(states, dtype=float)
        prev, nxt = states[:-1], states[1:]
        if inputs is not None:
            prev = np.hstack([prev, np.asarray(inputs, dtype=float).reshape(len(nxt), -1)])
        return cls(prev, nxt)

    def __len__(self):
        return self.targets.shape[0]

    @property
    def n_x(self):
        return self.targets.shape[1]


@dataclass(eq=False)
class TrainingReport:
    network: Network
    Q: np.ndarray
    losses: np.ndarray
    config: TrainingConfig
    optimizer_state: dict = field(repr=False, default=None)


def residuals(F, data):
    return data.targets - network_eval(data.inputs, F)


def profile_loss(F, data):
    """``(log det(Q_hat + jitter I), Q_hat)`` for the residuals of ``F`` on ``data``."""
    loss, Q, _ = _loss_from_residuals(residuals(F, data))
    return loss, Q


def _loss_from_residuals(eps):
    N, n = eps.shape
    if N < n + 1:
        warnings.warn("fewer residuals than n_x + 1; profile covariance is singular", RuntimeWarning, stacklevel=3)
    Q = eps.T @ eps / N
    if N >= n + 1 and np.linalg.eigvalsh(Q)[0] <= LOSS_JITTER:
        warnings.warn("residual covariance is numerically singular; log det floored by jitter", RuntimeWarning, stacklevel=3)
    L = np.linalg.cholesky(Q + LOSS_JITTER * np.eye(n))
    return 2.0 * float(np.sum(np.log(np.diag(L)))), Q, L


def profile_loss_grad(F, data):
    """Loss and per-layer gradients of :func:`profile_loss`."""
    eps = residuals(F, data)
    loss, _, L = _loss_from_residuals(eps)
    N = eps.shape[0]
    # d/d eps_t log det S = 2/N S^-1 eps_t; eps = x - F
    sinv_eps = np.linalg.solve(L.T, np.linalg.solve(L, eps.T)).T
    grads, _ = network_vjp(data.inputs, F, -(2.0 / N) * sinv_eps)
    return loss, grads


def residual_sine_network(n_x, n_u, config, inputs=None):
    """Initial transition network ``x -> x + W sin(A z + b)`` built from plain layers.

    The first layer carries ``width`` sine features next to an exact copy of
    the state; the last layer is an affine read-out adding the two.  Extra
    layers (depth > 2) act residually on the feature block.  ``inputs``
    (rows of ``(x, u)``) sets the feature frequencies to the data scale.
    """
    act = Activation(config.activation)
    rng = stream(config.seed, "training-init")
    n_in, w = n_x + n_u, config.width
    if inputs is not None and len(inputs) > 1:
        loc = np.mean(inputs, axis=0)
        scale = np.std(inputs, axis=0)
        scale[scale == 0.0] = 1.0
    else:
        loc, scale = np.zeros(n_in), np.ones(n_in)
    A1 = rng.standard_normal((w, n_in)) * config.init_frequency / (scale * math.sqrt(n_in))
    b1 = rng.uniform(-math.pi, math.pi, w) - A1 @ loc
    passthrough = np.hstack([np.eye(n_x), np.zeros((n_x, n_u))])
    off = act.at_zero
    layers = [
        Layer(
            np.vstack([A1, np.zeros((n_x, n_in))]),
            np.concatenate([b1, np.zeros(n_x)]),
            np.vstack([np.zeros((w, n_in)), passthrough]),
            np.concatenate([np.zeros(w), -off * np.ones(n_x)]),
        )
    ]
    m = w + n_x
    for _ in range(config.depth - 2):
        A = np.zeros((m, m))
        A[:w, :w] = rng.standard_normal((w, w)) / math.sqrt(w)
        d = np.full(m, -off)
        layers.append(Layer(A, np.zeros(m), np.eye(m), d))
    W_out = 1e-3 * rng.standard_normal((n_x, w))
    layers.append(Layer(np.zeros((n_x, m)), np.zeros(n_x), np.hstack([W_out, np.eye(n_x)]), -off * np.ones(n_x)))
    return Network(tuple(layers), act)


def _params(net):
    return [np.array(getattr(layer, name)) for layer in net.layers for name in "AbCd"]


def _network(params, activation):
    return Network(tuple(Layer(*params[4 * k : 4 * k + 4]) for k in range(len(params) // 4)), activation)


def _flat_grads(grads):
    return [getattr(g, name) for g in grads for name in "AbCd"]


def fit(config, data, network=None):
    """Minimise the profile loss with Adam (AdamW when ``weight_decay > 0``).

    Minibatches are drawn without replacement from a fresh permutation each
    epoch.  ``losses[e]`` is the full-data loss after epoch ``e``.

    Raises
    ------
    DivergenceError
        If the loss becomes non-finite; ``step`` is the epoch index.
    """
    n_x = data.n_x
    n_u = data.inputs.shape[1] - n_x
    if network is None:
        network = residual_sine_network(n_x, n_u, config, data.inputs)
    if network.input_dim != data.inputs.shape[1] or network.output_dim != n_x:
        raise ValueError("network shape does not match the transition data")
    act = network.activation
    params = _params(network)
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0
    rng = stream(config.seed, "training-batches")
    N = len(data)
    batch = min(config.minibatch, N)
    losses = np.empty(config.epochs)
    for epoch in range(config.epochs):
        lr = config.learning_rate(epoch)
        order = rng.permutation(N)
        for start in range(0, N - batch + 1, batch):
            idx = order[start : start + batch]
            sub = TransitionData(data.inputs[idx], data.targets[idx])
            loss, grads = profile_loss_grad(_network(params, act), sub)
            if not math.isfinite(loss):
                raise DivergenceError("profile loss became non-finite", epoch)
            step += 1
            c1 = 1.0 - config.beta1**step
            c2 = 1.0 - config.beta2**step
            for p, g, mk, vk in zip(params, _flat_grads(grads), m, v):
                mk *= config.beta1
                mk += (1.0 - config.beta1) * g
                vk *= config.beta2
                vk += (1.0 - config.beta2) * g * g
                if config.weight_decay:
                    p -= lr * config.weight_decay * p
                p -= lr * (mk / c1) / (np.sqrt(vk / c2) + config.adam_eps)
        loss, _ = profile_loss(_network(params, act), data)
        if not math.isfinite(loss):
            raise DivergenceError("profile loss became non-finite", epoch)
        losses[epoch] = loss
    net = _network(params, act)
    _, Q = profile_loss(net, data)
    state = {
        "format_version": OPTIMIZER_FORMAT_VERSION,
        "step": step,
        "m": [a.tolist() for a in m],
        "v": [a.tolist() for a in v],
        "config": asdict(config),
    }
    return TrainingReport(net, Q, losses, config, state)


def save_checkpoint(report, directory):
    """Write ``model.json``, ``optimizer.json``, ``noise.json`` and ``training_curve.csv``."""
    os.makedirs(directory, exist_ok=True)
    save_network(report.network, os.path.join(directory, "model.json"))
    with open(os.path.join(directory, "optimizer.json"), "w") as fh:
        json.dump(report.optimizer_state, fh)
    with open(os.path.join(directory, "noise.json"), "w") as fh:
        json.dump({"Q": report.Q.tolist()}, fh)
    with open(os.path.join(directory, "training_curve.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for e, loss in enumerate(report.losses):
            writer.writerow([e, repr(float(loss))])


def load_checkpoint(directory):
    """Return ``(network, Q, optimizer_state)`` saved by :func:`save_checkpoint`."""
    net = load_network(os.path.join(directory, "model.json"))
    with open(os.path.join(directory, "noise.json")) as fh:
        Q = np.array(json.load(fh)["Q"], dtype=float)
    with open(os.path.join(directory, "optimizer.json")) as fh:
        state = json.load(fh)
    if state.get("format_version") != OPTIMIZER_FORMAT_VERSION:
        raise ValueError("unsupported optimizer state version")
    return net, Q, state
