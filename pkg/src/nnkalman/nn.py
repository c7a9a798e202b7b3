"""Four-parameter feedforward networks.

A layer maps ``x -> sigma(A x + b) + C x + d``.  Because the linear skip
``C x + d`` is part of every layer, networks are closed under input coupling
``x -> (f1(x), f2(x))`` and identity augmentation ``x -> (x, f(x))``; both are
built here as plain networks so a single uncertainty propagation yields
input/output cross-covariances.
"""

from dataclasses import dataclass
from enum import Enum
import json

import numpy as np
import scipy.linalg
from scipy import special

MODEL_FORMAT_VERSION = 1
_SQRT_2PI = np.sqrt(2.0 * np.pi)


class Activation(str, Enum):
    SINE = "sine"
    PROBIT = "probit"

    def __call__(self, z):
        if self is Activation.SINE:
            return np.sin(z)
        return special.ndtr(z)

    def derivative(self, z):
        if self is Activation.SINE:
            return np.cos(z)
        return np.exp(-0.5 * z * z) / _SQRT_2PI

    @property
    def at_zero(self):
        """Value of the activation at 0 (offset carried by zero-weight units)."""
        return 0.0 if self is Activation.SINE else 0.5


def _array(x, ndim, name):
    a = np.array(x, dtype=float)
    if a.ndim != ndim:
        raise ValueError(f"{name} must have {ndim} dimension(s), got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Layer:
    """Layer parameters ``(A, b, C, d)`` with ``A, C`` of shape (m, n)."""

    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        A = _array(self.A, 2, "A")
        C = _array(self.C, 2, "C")
        b = _array(self.b, 1, "b")
        d = _array(self.d, 1, "d")
        if A.shape != C.shape:
            raise ValueError(f"A {A.shape} and C {C.shape} must share a shape")
        if b.shape != (A.shape[0],) or d.shape != (A.shape[0],):
            raise ValueError("b and d must have one entry per output")
        for name, value in zip("AbCd", (A, b, C, d)):
            object.__setattr__(self, name, value)

    @property
    def shape(self):
        return self.A.shape

    @property
    def is_affine(self):
        return not np.any(self.A)


@dataclass(frozen=True, eq=False)
class Network:
    """Composition of layers sharing one activation function."""

    layers: tuple
    activation: Activation = Activation.SINE

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for k in range(1, len(layers)):
            if layers[k].shape[1] != layers[k - 1].shape[0]:
                raise ValueError(
                    f"layer {k} expects {layers[k].shape[1]} inputs but layer {k - 1} emits {layers[k - 1].shape[0]}"
                )
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def input_dim(self):
        return self.layers[0].shape[1]

    @property
    def output_dim(self):
        return self.layers[-1].shape[0]

    @property
    def depth(self):
        return len(self.layers)

    def __call__(self, x):
        return network_eval(x, self)

    def __repr__(self):
        widths = [self.input_dim] + [layer.shape[0] for layer in self.layers]
        return f"Network({'-'.join(map(str, widths))}, {self.activation.value})"


def layer_eval(x, layer, activation):
    """Evaluate one layer on ``x`` of shape (n,) or (batch, n)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != layer.shape[1]:
        raise ValueError(f"input has {x.shape[-1]} coordinates, layer expects {layer.shape[1]}")
    return Activation(activation)(x @ layer.A.T + layer.b) + x @ layer.C.T + layer.d


def network_eval(x, net):
    """Evaluate ``net`` on ``x`` of shape (n,) or (batch, n)."""
    h = np.asarray(x, dtype=float)
    if h.shape[-1] != net.input_dim:
        raise ValueError(f"input has {h.shape[-1]} coordinates, network expects {net.input_dim}")
    for layer in net.layers:
        h = layer_eval(h, layer, net.activation)
    return h


def couple(f1, f2):
    """Network computing ``x -> (f1(x), f2(x))`` with the same depth as ``f1`` and ``f2``."""
    if f1.input_dim != f2.input_dim:
        raise ValueError("coupled networks must share their input dimension")
    if f1.depth != f2.depth:
        raise ValueError(f"coupled networks must have equal depth ({f1.depth} vs {f2.depth})")
    if f1.activation != f2.activation:
        raise ValueError("coupled networks must share their activation")
    first1, first2 = f1.layers[0], f2.layers[0]
    layers = [
        Layer(
            np.vstack([first1.A, first2.A]),
            np.concatenate([first1.b, first2.b]),
            np.vstack([first1.C, first2.C]),
            np.concatenate([first1.d, first2.d]),
        )
    ]
    for l1, l2 in zip(f1.layers[1:], f2.layers[1:]):
        layers.append(
            Layer(
                scipy.linalg.block_diag(l1.A, l2.A),
                np.concatenate([l1.b, l2.b]),
                scipy.linalg.block_diag(l1.C, l2.C),
                np.concatenate([l1.d, l2.d]),
            )
        )
    return Network(tuple(layers), f1.activation)


def identity_network(n, depth, activation=Activation.SINE):
    """Network of ``depth`` layers that maps every ``x`` in R^n to itself exactly.

    Each layer has ``A = 0, b = 0, C = I``; ``d`` cancels ``sigma(0)`` so the
    construction is also exact for the probit activation.
    """
    if n < 1 or depth < 1:
        raise ValueError("identity network needs n >= 1 and depth >= 1")
    activation = Activation(activation)
    offset = -activation.at_zero * np.ones(n)
    layer = Layer(np.zeros((n, n)), np.zeros(n), np.eye(n), offset)
    return Network((layer,) * depth, activation)


def augment_identity(f, lead=None):
    """Network computing ``x -> (x, f(x))``.

    With ``lead`` set, only the first ``lead`` inputs are carried through:
    ``(x, u) -> (x, f(x, u))``.  Partially applying ``u`` afterwards gives
    the same network as augmenting the partially applied ``f``.
    """
    n = f.input_dim if lead is None else int(lead)
    if not 0 < n <= f.input_dim:
        raise ValueError(f"lead must lie in [1, {f.input_dim}]")
    ident = identity_network(n, f.depth, f.activation)
    if n < f.input_dim:
        first = ident.layers[0]
        pad = np.zeros((n, f.input_dim - n))
        head = Layer(np.hstack([first.A, pad]), first.b, np.hstack([first.C, pad]), first.d)
        ident = Network((head,) + ident.layers[1:], f.activation)
    return couple(ident, f)


def affine_network(M, c=None, activation=Activation.SINE):
    """Single-layer network computing ``x -> M x + c`` exactly."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    activation = Activation(activation)
    c = np.zeros(M.shape[0]) if c is None else np.asarray(c, dtype=float)
    d = c - activation.at_zero
    return Network((Layer(np.zeros_like(M), np.zeros(M.shape[0]), M, d),), activation)


def partially_apply(f, fixed_tail):
    """Absorb the trailing inputs ``fixed_tail`` into the first layer's offsets.

    The result is a network over the leading ``input_dim - len(fixed_tail)``
    coordinates with ``g(x) == f(concat(x, fixed_tail))``.
    """
    u = np.atleast_1d(np.asarray(fixed_tail, dtype=float))
    k = u.shape[0]
    if k == 0:
        return f
    if k >= f.input_dim:
        raise ValueError(f"cannot fix {k} of {f.input_dim} inputs")
    n = f.input_dim - k
    first = f.layers[0]
    head = Layer(
        first.A[:, :n],
        first.b + first.A[:, n:] @ u,
        first.C[:, :n],
        first.d + first.C[:, n:] @ u,
    )
    return Network((head,) + f.layers[1:], f.activation)


def network_jacobian(x, net):
    """Jacobian of ``net`` at a single point ``x``."""
    h = np.asarray(x, dtype=float)
    if h.shape != (net.input_dim,):
        raise ValueError(f"expected a point of shape ({net.input_dim},), got {h.shape}")
    act = net.activation
    J = np.eye(net.input_dim)
    for layer in net.layers:
        z = layer.A @ h + layer.b
        J = (act.derivative(z)[:, None] * layer.A + layer.C) @ J
        h = act(z) + layer.C @ h + layer.d
    return J


@dataclass(frozen=True, eq=False)
class LayerGrad:
    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    d: np.ndarray


def network_vjp(x, net, cotangent):
    """Reverse-mode gradient of ``<cotangent, net(x)>``.

    ``x`` may be a single point (n,) with cotangent (m,), or a batch (N, n)
    with cotangents (N, m); batch gradients are summed over the batch.

    Returns
    -------
    grads : list of LayerGrad
        Gradients with respect to each layer's ``A, b, C, d``.
    input_grad : ndarray
        Gradient with respect to ``x`` (same shape as ``x``).
    """
    x = np.asarray(x, dtype=float)
    g = np.asarray(cotangent, dtype=float)
    single = x.ndim == 1
    if single:
        x, g = x[None, :], g[None, :]
    if x.shape[-1] != net.input_dim or g.shape != (x.shape[0], net.output_dim):
        raise ValueError("input or cotangent shape does not match the network")
    act = net.activation
    inputs, pre = [], []
    h = x
    for layer in net.layers:
        z = h @ layer.A.T + layer.b
        inputs.append(h)
        pre.append(z)
        h = act(z) + h @ layer.C.T + layer.d
    grads = [None] * net.depth
    for k in range(net.depth - 1, -1, -1):
        layer, h_in, z = net.layers[k], inputs[k], pre[k]
        s = g * act.derivative(z)
        grads[k] = LayerGrad(s.T @ h_in, s.sum(axis=0), g.T @ h_in, g.sum(axis=0))
        g = s @ layer.A + g @ layer.C
    return grads, (g[0] if single else g)


def network_to_dict(net):
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "activation": net.activation.value,
        "input_dim": net.input_dim,
        "layers": [
            {"A": layer.A.tolist(), "b": layer.b.tolist(), "C": layer.C.tolist(), "d": layer.d.tolist()}
            for layer in net.layers
        ],
    }


def network_from_dict(data):
    version = data.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version!r}")
    unknown = set(data) - {"format_version", "activation", "input_dim", "layers"}
    if unknown:
        raise ValueError(f"unknown model fields: {sorted(unknown)}")
    layers = []
    for entry in data["layers"]:
        A = np.array(entry["A"], dtype=float).reshape(len(entry["b"]), -1)
        C = np.array(entry["C"], dtype=float).reshape(A.shape)
        layers.append(Layer(A, entry["b"], C, entry["d"]))
    net = Network(tuple(layers), Activation(data["activation"]))
    if net.input_dim != data["input_dim"]:
        raise ValueError(f"declared input_dim {data['input_dim']} does not match layer shapes")
    return net


def save_network(net, path):
    with open(path, "w") as fh:
        json.dump(network_to_dict(net), fh)


def load_network(path):
    with open(path) as fh:
        return network_from_dict(json.load(fh))
