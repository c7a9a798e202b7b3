"""Gaussian uncertainty propagation through networks.

Every backend maps ``(Network, Gaussian) -> Gaussian``:

========== ==============================================================
analytic    exact single-layer moments, folded layer by layer
mean-field  as analytic, but off-diagonal covariance dropped after each layer
linearized  first-order Taylor expansion at the mean
unscented95 2n+1 sigma points, one parameter (kappa)
unscented02 scaled sigma points (alpha, beta, kappa)
mc          Monte Carlo moments (oracle; not exact for finite samples)
========== ==============================================================
"""

from dataclasses import dataclass, field
from enum import Enum
import warnings

import numpy as np
from scipy.special import ndtr

from .bvn import bvn_excess
from .exceptions import NumericalError
from .gaussian import Gaussian, psd_cholesky, sample, symmetrize_psd
from .nn import Activation, network_eval, network_jacobian
from .rng import stream

_SQRT_2PI = np.sqrt(2.0 * np.pi)


class Method(str, Enum):
    ANALYTIC = "analytic"
    MEAN_FIELD = "mean-field"
    LINEARIZED = "linearized"
    UNSCENTED95 = "unscented95"
    UNSCENTED02 = "unscented02"
    MONTE_CARLO = "mc"

    @classmethod
    def parse(cls, name):
        key = str(name).strip().lower().replace("_", "-")
        aliases = {"mean-field": "mean-field", "meanfield": "mean-field", "monte-carlo": "mc", "linear": "linearized"}
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class UnscentedConfig:
    """Sigma-point hyperparameters.

    ``variant`` is ``"v95"`` (weights kappa/(n+kappa), 1/(2(n+kappa))) or
    ``"v02"`` (scaled points with lambda = alpha^2 (n + kappa) - n).
    """

    variant: str = "v95"
    kappa: float = 0.0
    alpha: float = 1e-3
    beta: float = 2.0

    def __post_init__(self):
        if self.variant not in ("v95", "v02"):
            raise ValueError(f"unknown unscented variant {self.variant!r}")
        if self.variant == "v02" and not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")


@dataclass(frozen=True)
class PropagatorSpec:
    method: Method = Method.ANALYTIC
    unscented: UnscentedConfig = field(default=None)
    mc_samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        method = Method.parse(self.method) if not isinstance(self.method, Method) else self.method
        object.__setattr__(self, "method", method)
        variant = "v02" if method is Method.UNSCENTED02 else "v95"
        if self.unscented is None:
            object.__setattr__(self, "unscented", UnscentedConfig(variant=variant))
        elif method in (Method.UNSCENTED95, Method.UNSCENTED02) and self.unscented.variant != variant:
            raise ValueError(f"{method.value} requires unscented variant {variant!r}")
        if method is Method.MONTE_CARLO and self.mc_samples < 2:
            raise ValueError("Monte Carlo propagation needs at least 2 samples")

    @property
    def label(self):
        return self.method.value


# ---------------------------------------------------------------------------
# moment maps

def m_sin(mu, nu):
    """``E sin(U)`` for ``U ~ N(mu, nu)``."""
    return np.exp(-0.5 * np.asarray(nu)) * np.sin(mu)


def k_sin(mu1, mu2, nu11, nu22, nu12):
    """``Cov(sin U1, sin U2)`` for a bivariate normal ``(U1, U2)``."""
    base = np.exp(-0.5 * (np.asarray(nu11) + nu22))
    return 0.5 * base * (np.expm1(nu12) * np.cos(np.subtract(mu1, mu2)) - np.expm1(np.negative(nu12)) * np.cos(np.add(mu1, mu2)))


def l_sin(mu1, nu11, kappa12):
    """``Cov(sin U1, V)`` where ``Cov(U1, V) = kappa12``."""
    return np.asarray(kappa12) * np.exp(-0.5 * np.asarray(nu11)) * np.cos(mu1)


def m_probit(mu, nu):
    """``E Phi(U)`` for ``U ~ N(mu, nu)``."""
    return ndtr(np.asarray(mu) / np.sqrt(1.0 + np.asarray(nu)))


def _correlation(nu11, nu22, nu12):
    rho = np.asarray(nu12) / np.sqrt((1.0 + np.asarray(nu11)) * (1.0 + np.asarray(nu22)))
    if np.any(np.abs(rho) > 1.0):
        warnings.warn("probit correlation outside [-1, 1] after rounding; clamped", RuntimeWarning, stacklevel=3)
        rho = np.clip(rho, -1.0, 1.0)
    return rho


def k_probit(mu1, mu2, nu11, nu22, nu12):
    """``Cov(Phi U1, Phi U2)`` via the bivariate normal orthant probability."""
    s1 = np.sqrt(1.0 + np.asarray(nu11))
    s2 = np.sqrt(1.0 + np.asarray(nu22))
    return bvn_excess(np.asarray(mu1) / s1, np.asarray(mu2) / s2, _correlation(nu11, nu22, nu12))


def k_probit_hermite(mu1, mu2, nu11, nu22, nu12, nodes=64):
    """Tensor Gauss-Hermite evaluation of :func:`k_probit` (scalar arguments, cross-check)."""
    t, w = np.polynomial.hermite.hermgauss(nodes)
    z = np.sqrt(2.0) * t
    w = w / np.sqrt(np.pi)
    L = psd_cholesky(np.array([[nu11, nu12], [nu12, nu22]], dtype=float))
    z1, z2 = np.meshgrid(z, z, indexing="ij")
    u1 = mu1 + L[0, 0] * z1
    u2 = mu2 + L[1, 0] * z1 + L[1, 1] * z2
    ww = np.outer(w, w)
    return float(np.sum(ww * ndtr(u1) * ndtr(u2)) - np.sum(ww * ndtr(u1)) * np.sum(ww * ndtr(u2)))


def l_probit(mu1, nu11, kappa12):
    """``Cov(Phi U1, V)`` where ``Cov(U1, V) = kappa12``."""
    s = np.sqrt(1.0 + np.asarray(nu11))
    return np.asarray(kappa12) * np.exp(-0.5 * (np.asarray(mu1) / s) ** 2) / (_SQRT_2PI * s)


# ---------------------------------------------------------------------------
# layer-wise analytic propagation

@dataclass(frozen=True, eq=False)
class LayerMomentWorkspace:
    """Pre-activation moments of one layer: ``mu = A m + b``, ``nu = A S A'``,
    ``tau = C S C'``, ``kappa = A S C'``."""

    mu: np.ndarray
    nu: np.ndarray
    tau: np.ndarray
    kappa: np.ndarray

    @classmethod
    def build(cls, g, layer):
        AS = layer.A @ g.cov
        return cls(layer.A @ g.mean + layer.b, AS @ layer.A.T, layer.C @ g.cov @ layer.C.T, AS @ layer.C.T)


def _layer_moments(g, layer, activation, diagonal_only=False):
    if g.dim != layer.shape[1]:
        raise ValueError(f"layer expects {layer.shape[1]} inputs, belief has dimension {g.dim}")
    w = LayerMomentWorkspace.build(g, layer)
    var = np.diag(w.nu)
    if activation is Activation.SINE:
        mean_act = m_sin(w.mu, var)
        gain = np.exp(-0.5 * var) * np.cos(w.mu)
    else:
        s = np.sqrt(1.0 + var)
        mean_act = ndtr(w.mu / s)
        gain = np.exp(-0.5 * (w.mu / s) ** 2) / (_SQRT_2PI * s)
    mean = mean_act + layer.C @ g.mean + layer.d
    if diagonal_only:
        kappa_diag = np.diag(w.kappa)
        if activation is Activation.SINE:
            k_diag = k_sin(w.mu, w.mu, var, var, var)
        else:
            k_diag = k_probit(w.mu, w.mu, var, var, var)
        return mean, np.diag(k_diag + 2.0 * gain * kappa_diag + np.diag(w.tau))
    mu_i, mu_j = w.mu[:, None], w.mu[None, :]
    v_i, v_j = var[:, None], var[None, :]
    if activation is Activation.SINE:
        K = k_sin(mu_i, mu_j, v_i, v_j, w.nu)
    else:
        K = k_probit(mu_i, mu_j, v_i, v_j, w.nu)
    # L(mu_i; nu_ii, kappa_ij) = kappa_ij * E sigma'(U_i)
    Lm = gain[:, None] * w.kappa
    return mean, K + Lm + Lm.T + w.tau


def propagate_layer_analytic(g, layer, activation):
    """Exact mean and covariance of one layer applied to ``g``."""
    mean, cov = _layer_moments(g, layer, Activation(activation))
    return Gaussian(mean, symmetrize_psd(cov))


def _analytic(net, g, diagonal_only):
    for layer in net.layers:
        if layer.is_affine:
            # exact and cheaper: sigma(b) is a constant
            mean = net.activation(layer.b) + layer.C @ g.mean + layer.d
            cov = layer.C @ g.cov @ layer.C.T
            if diagonal_only:
                cov = np.diag(np.diag(cov))
        else:
            mean, cov = _layer_moments(g, layer, net.activation, diagonal_only)
        g = Gaussian(mean, symmetrize_psd(cov))
    return g


# ---------------------------------------------------------------------------
# baselines

def _linearized(net, g):
    J = network_jacobian(g.mean, net)
    return Gaussian(network_eval(g.mean, net), symmetrize_psd(J @ g.cov @ J.T))


def sigma_points(g, config):
    """Sigma points (2n+1, n) and mean/covariance weights for ``g``."""
    n = g.dim
    if config.variant == "v95":
        if n + config.kappa <= 0:
            raise ValueError("n + kappa must be positive")
        lam = config.kappa
        wm0 = config.kappa / (n + config.kappa)
        wc0 = wm0
    else:
        if n + config.kappa <= 0:
            raise ValueError("n + kappa must be positive")
        lam = config.alpha**2 * (n + config.kappa) - n
        wm0 = lam / (n + lam)
        wc0 = wm0 + 1.0 - config.alpha**2 + config.beta
    spread = n + lam
    L = psd_cholesky(spread * g.cov)
    points = np.vstack([g.mean, g.mean + L.T, g.mean - L.T])
    wi = 1.0 / (2.0 * spread)
    wm = np.full(2 * n + 1, wi)
    wc = np.full(2 * n + 1, wi)
    wm[0], wc[0] = wm0, wc0
    return points, wm, wc


def _unscented(net, g, config):
    points, wm, wc = sigma_points(g, config)
    y = network_eval(points, net)
    # weights sum to one; centring on the middle point avoids cancellation
    # when the v02 centre weight is large and negative
    mean = y[0] + wm[1:] @ (y[1:] - y[0])
    dev = y - mean
    cov = (wc[:, None] * dev).T @ dev
    return Gaussian(mean, symmetrize_psd(cov))


def _monte_carlo(net, g, samples, seed):
    draws = sample(g, stream(seed, "propagate-mc"), samples)
    y = network_eval(draws, net)
    return Gaussian(y.mean(axis=0), symmetrize_psd(np.cov(y, rowvar=False).reshape(y.shape[1], y.shape[1])))


def propagate(net, g, spec=None):
    """Gaussian approximation of ``net(X)`` for ``X ~ g`` under ``spec``.

    Raises
    ------
    NotPSDError
        If the resulting covariance is indefinite beyond the repair tolerance
        (typical for unscented'02 with small ``alpha``).
    """
    spec = PropagatorSpec() if spec is None else spec
    if g.dim != net.input_dim:
        raise ValueError(f"network expects {net.input_dim} inputs, belief has dimension {g.dim}")
    method = spec.method
    if method is Method.ANALYTIC:
        out = _analytic(net, g, diagonal_only=False)
    elif method is Method.MEAN_FIELD:
        out = _analytic(net, g, diagonal_only=True)
    elif method is Method.LINEARIZED:
        out = _linearized(net, g)
    elif method in (Method.UNSCENTED95, Method.UNSCENTED02):
        out = _unscented(net, g, spec.unscented)
    elif method is Method.MONTE_CARLO:
        out = _monte_carlo(net, g, spec.mc_samples, spec.seed)
    else:  # pragma: no cover
        raise NumericalError(f"unsupported method {method}")
    return out
