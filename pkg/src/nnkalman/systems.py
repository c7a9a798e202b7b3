"""Benchmark systems: stochastic Lorenz, Wiener LTI, network-truth models, LQR loop."""

from dataclasses import dataclass, field
import math

import numpy as np

from .estimation import DynamicModel, RunRecord, kf_predict, kf_update
from .exceptions import DivergenceError, NumericalError, StepFailure
from .gaussian import Gaussian, psd_cholesky
from .nn import Activation, Layer, Network, affine_network
from .rng import stream

# ---------------------------------------------------------------------------
# stochastic Lorenz


@dataclass(frozen=True)
class LorenzConfig:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    eta: float = 0.001
    epsilon: float = 0.1
    dt: float = 1.0
    substeps: int = 1000
    x0: tuple = (-8.0, 4.0, 27.0)

    def __post_init__(self):
        if self.dt <= 0 or self.substeps < 1:
            raise ValueError("dt must be positive and substeps at least 1")
        if self.eta < 0 or self.epsilon < 0:
            raise ValueError("noise scales must be non-negative")
        if len(self.x0) != 3:
            raise ValueError("x0 must have three coordinates")
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))


def lorenz_drift(x, config=None):
    """Lorenz vector field at ``x`` (shape (3,) or (N, 3)).

    Examples
    --------
    >>> lorenz_drift([-8.0, 4.0, 27.0]).tolist()
    [120.0, -12.0, -104.0]
    """
    c = LorenzConfig() if config is None else config
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    return np.stack([c.sigma * (x2 - x1), x1 * (c.rho - x3) - x2, x1 * x2 - c.beta * x3], axis=-1)


def simulate_lorenz(config, steps, seed, x0=None):
    """Euler-Maruyama rollout sampled every ``dt``.

    Returns
    -------
    states : ndarray, shape (steps + 1, 3)
        x_0 .. x_T.
    outputs : ndarray, shape (steps, 1)
        y_t = x^1_t + epsilon * noise for t = 1 .. T.

    Raises
    ------
    DivergenceError
        If the integration produces non-finite values.
    """
    c = config
    h = c.dt / c.substeps
    amp = c.eta * math.sqrt(h)
    state_rng = stream(seed, "lorenz-process")
    meas_rng = stream(seed, "lorenz-measurement")
    s, r, b = c.sigma, c.rho, c.beta
    x1, x2, x3 = (float(v) for v in (c.x0 if x0 is None else x0))
    states = np.empty((steps + 1, 3))
    states[0] = (x1, x2, x3)
    for t in range(1, steps + 1):
        noise = state_rng.standard_normal((c.substeps, 3)) * amp if amp > 0 else np.zeros((c.substeps, 3))
        # scalar loop: much faster than numpy for 3-vectors
        for n1, n2, n3 in noise.tolist():
            d1 = s * (x2 - x1)
            d2 = x1 * (r - x3) - x2
            d3 = x1 * x2 - b * x3
            x1, x2, x3 = x1 + h * d1 + n1, x2 + h * d2 + n2, x3 + h * d3 + n3
        if not (math.isfinite(x1) and math.isfinite(x2) and math.isfinite(x3)):
            raise DivergenceError("Lorenz integration diverged", t)
        states[t] = (x1, x2, x3)
    outputs = states[1:, :1] + c.epsilon * meas_rng.standard_normal((steps, 1))
    return states, outputs


# ---------------------------------------------------------------------------
# linear systems and LQR


def controllable_canonical(eigenvalues):
    """Companion-form ``(A, B)`` whose characteristic roots are ``eigenvalues``.

    ``A`` has ones on the superdiagonal and the negated characteristic
    polynomial coefficients in its last row; ``B`` is the last unit column.
    """
    lam = np.atleast_1d(np.asarray(eigenvalues, dtype=float))
    if lam.size == 0:
        raise ValueError("need at least one eigenvalue")
    n = lam.size
    coeffs = np.real(np.poly(lam))  # [1, a_{n-1}, ..., a_0]
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -coeffs[:0:-1]
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    return A, B


def dare_gain(A, B, tol=1e-12, max_iter=100_000):
    """LQR gain for unit state and control weights by Riccati fixed-point iteration.

    Returns ``(P, K)`` with ``K = (I + B'PB)^-1 B'PA``.

    Raises
    ------
    NumericalError
        If the iteration has not converged after ``max_iter`` steps.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n, m = B.shape
    P = np.eye(n)
    I_m = np.eye(m)
    for _ in range(max_iter):
        BtP = B.T @ P
        K = np.linalg.solve(I_m + BtP @ B, BtP @ A)
        P_new = A.T @ P @ A - A.T @ P @ B @ K + np.eye(n)
        P_new = 0.5 * (P_new + P_new.T)
        if np.max(np.abs(P_new - P)) <= tol * max(1.0, np.max(np.abs(P_new))):
            P = P_new
            break
        P = P_new
    else:
        raise NumericalError(f"Riccati iteration did not converge in {max_iter} steps")
    BtP = B.T @ P
    return P, np.linalg.solve(I_m + BtP @ B, BtP @ A)


# ---------------------------------------------------------------------------
# Wiener systems


@dataclass(frozen=True)
class WienerSystemSpec:
    """Linear state dynamics in companion form with a random probit observation network."""

    eigenvalues: tuple
    n_y: int
    n_u: int = 1
    hidden: int = 50
    first_weight_scale: float = 10.0
    first_bias_scale: float = 10.0
    q: float = 1e-3
    r: float = 1e-3
    input_frequency: float = 0.2
    controlled: bool = False

    @property
    def n_x(self):
        return len(self.eigenvalues)

    def inputs(self, T):
        """Open-loop input ``u(t) = sin(w t)`` for t = 1..T, shape (T, n_u)."""
        t = np.arange(1, T + 1, dtype=float)
        return np.repeat(np.sin(self.input_frequency * t)[:, None], self.n_u, axis=1)


def wiener_estimation_spec():
    return WienerSystemSpec(eigenvalues=(0.9, 0.7, 0.5, 0.3, 0.1), n_y=3)


def lti_regulation_spec():
    return WienerSystemSpec(
        eigenvalues=(1.0, -1.0, 0.1, -0.1), n_y=8, first_bias_scale=1.0, q=1e-2, r=1e-4, controlled=True
    )


def make_wiener_system(spec, seed):
    """Build the estimation model for ``spec``; the draw of ``H`` depends only on ``seed``."""
    A, B = controllable_canonical(spec.eigenvalues)
    n_x, n_u = spec.n_x, spec.n_u
    B = np.repeat(B, n_u, axis=1) if n_u else np.zeros((n_x, 0))
    F = affine_network(np.hstack([A, B]), activation=Activation.PROBIT)
    rng = stream(seed, "wiener-observation")
    # H reads (x, u), so the fan-in of the first layer is n_x + n_u
    fan_in = n_x + n_u
    A1 = rng.standard_normal((spec.hidden, fan_in)) * spec.first_weight_scale / math.sqrt(fan_in)
    b1 = rng.standard_normal(spec.hidden) * spec.first_bias_scale / math.sqrt(fan_in)
    W2 = rng.standard_normal((spec.n_y, spec.hidden)) / math.sqrt(spec.hidden)
    hidden = Layer(A1, b1, np.zeros_like(A1), np.zeros(spec.hidden))
    out = Layer(W2, np.zeros(spec.n_y), np.zeros_like(W2), np.zeros(spec.n_y))
    H = Network((hidden, out), Activation.PROBIT)
    init = Gaussian(np.zeros(n_x), np.zeros((n_x, n_x)))
    return DynamicModel(F, H, spec.q * np.eye(n_x), spec.r * np.eye(spec.n_y), init)


def wiener_matrices(model):
    """Recover ``(A, B)`` from an affine transition network."""
    layer = model.F.layers[0]
    if model.F.depth != 1 or not layer.is_affine:
        raise ValueError("transition network is not a single affine layer")
    return layer.C[:, : model.n_x], layer.C[:, model.n_x :]


# ---------------------------------------------------------------------------
# generic rollout


def _noise_factor(cov):
    return psd_cholesky(cov)


def simulate_model(model, inputs, T, seed):
    """Sample a trajectory of ``model``.

    Returns ``(states, outputs)`` with shapes (T + 1, n_x) and (T, n_y);
    ``states[0]`` is drawn from ``model.init``.
    """
    n_x, n_u = model.n_x, model.n_u
    us = np.zeros((T, 0)) if n_u == 0 else np.asarray(inputs, dtype=float).reshape(T, n_u)
    x0_rng = stream(seed, "init")
    q_rng = stream(seed, "process")
    r_rng = stream(seed, "measurement")
    Lq, Lr, L0 = _noise_factor(model.Q), _noise_factor(model.R), _noise_factor(model.init.cov)
    states = np.empty((T + 1, n_x))
    outputs = np.empty((T, model.n_y))
    states[0] = model.init.mean + L0 @ x0_rng.standard_normal(n_x)
    eta = q_rng.standard_normal((T, n_x)) @ Lq.T
    eps = r_rng.standard_normal((T, model.n_y)) @ Lr.T
    for t in range(T):
        xu = np.concatenate([states[t], us[t]])
        states[t + 1] = model.F(xu) + eta[t]
        outputs[t] = model.H(np.concatenate([states[t + 1], us[t]])) + eps[t]
    return states, outputs


# ---------------------------------------------------------------------------
# closed loop


@dataclass
class ClosedLoopResult:
    state_cost: float
    control_cost: float
    total_cost: float
    baseline_state_cost: float
    baseline_control_cost: float
    baseline_total_cost: float
    status: str = "ok"
    step: int = -1
    record: RunRecord = field(default=None, repr=False)

    @property
    def ratio(self):
        if not math.isfinite(self.total_cost):
            return math.inf
        return self.total_cost / self.baseline_total_cost


_DIVERGED = 1e150


def closed_loop_run(model, K, spec, T, seed, keep_record=False):
    """Regulate ``model`` with ``u_t = -K mean(X_{t-1|t-1})`` from a filter using ``spec``.

    The full-state-feedback baseline ``u_t = -K x_{t-1}`` is simulated with
    the same noise realization.  Divergence of the filter or the state is
    recorded in ``status`` with infinite cost rather than raised.
    """
    n_x, n_u = model.n_x, model.n_u
    K = np.atleast_2d(np.asarray(K, dtype=float)).reshape(n_u, n_x)
    x0_rng = stream(seed, "init")
    q_rng = stream(seed, "process")
    r_rng = stream(seed, "measurement")
    x0 = model.init.mean + _noise_factor(model.init.cov) @ x0_rng.standard_normal(n_x)
    eta = q_rng.standard_normal((T, n_x)) @ _noise_factor(model.Q).T
    eps = r_rng.standard_normal((T, model.n_y)) @ _noise_factor(model.R).T

    # baseline with true-state feedback
    x = x0.copy()
    base_state = base_ctrl = 0.0
    for t in range(T):
        u = -K @ x
        x = model.F(np.concatenate([x, u])) + eta[t]
        base_state += float(x @ x)
        base_ctrl += float(u @ u)

    x = x0.copy()
    X = model.init
    state_cost = ctrl_cost = 0.0
    status, fail_step = "ok", -1
    truth, means, covs = [], [], []
    for t in range(T):
        u = -K @ X.mean
        x = model.F(np.concatenate([x, u])) + eta[t]
        state_cost += float(x @ x)
        ctrl_cost += float(u @ u)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > _DIVERGED:
            status, fail_step = "diverged: state", t + 1
            break
        y = model.H(np.concatenate([x, u])) + eps[t]
        try:
            X = kf_update(kf_predict(X, u, model, spec), y)
        except (NumericalError, StepFailure) as exc:
            status, fail_step = f"failed: {type(exc).__name__}", t + 1
            break
        if keep_record:
            truth.append(x.copy())
            means.append(X.mean)
            covs.append(X.cov)
    if status != "ok":
        state_cost = ctrl_cost = math.inf
    record = None
    if keep_record and truth:
        truth, means, covs = np.array(truth), np.array(means), np.array(covs)
        nan = np.full_like(means, np.nan)
        record = RunRecord(truth, nan, np.full_like(covs, np.nan), means, covs)
    return ClosedLoopResult(
        state_cost,
        ctrl_cost,
        state_cost + ctrl_cost,
        base_state,
        base_ctrl,
        base_state + base_ctrl,
        status,
        fail_step,
        record,
    )


# ---------------------------------------------------------------------------
# network-truth calibration systems


def make_network_truth_system(
    n_x=2, n_y=1, width=8, nonlinearity=0.3, damping=0.7, q=0.05, r=0.05, seed=0, activation="sine"
):
    """Random residual sine-network dynamics whose exact model is known to the filter.

    ``F(x) = damping * x + W sin(A x + b)``, with ``||W|| ||A|| <= nonlinearity``
    so the map is a contraction when ``damping + nonlinearity < 1``;
    ``H`` is a fixed random linear read-out of the state.  With
    ``nonlinearity = 0`` the system is linear-Gaussian.
    """
    if n_x < 1 or n_y < 1 or width < 1:
        raise ValueError("dimensions must be positive")
    activation = Activation(activation)
    rng = stream(seed, "network-truth")
    A1 = rng.standard_normal((width, n_x))
    b1 = rng.uniform(-math.pi, math.pi, width)
    W = rng.standard_normal((n_x, width))
    scale = nonlinearity / max(np.linalg.norm(W, 2) * np.linalg.norm(A1, 2), 1e-300)
    # split the gain evenly between input and output weights
    A1 *= math.sqrt(scale)
    W *= math.sqrt(scale)
    off = activation.at_zero
    features = Layer(
        np.vstack([A1, np.zeros((n_x, n_x))]),
        np.concatenate([b1, np.zeros(n_x)]),
        np.vstack([np.zeros((width, n_x)), np.eye(n_x)]),
        np.concatenate([np.zeros(width), -off * np.ones(n_x)]),
    )
    readout = Layer(
        np.zeros((n_x, width + n_x)),
        np.zeros(n_x),
        np.hstack([W, damping * np.eye(n_x)]),
        -off * np.ones(n_x),
    )
    F = Network((features, readout), activation)
    Hm = rng.standard_normal((n_y, n_x)) / math.sqrt(n_x)
    H = affine_network(Hm, activation=activation)
    init = Gaussian(np.zeros(n_x), np.eye(n_x))
    return DynamicModel(F, H, q * np.eye(n_x), r * np.eye(n_y), init)
