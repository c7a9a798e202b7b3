"""Kalman filter and RTS smoother over a pluggable propagation backend.

For a model ``x_t = F(x_{t-1}, u_t) + eta_t``, ``y_t = H(x_t, u_t) + eps_t``
the predict step propagates the current belief through ``F`` and then
through the identity-augmented observation network ``(id, H)``, so the
state/output joint comes out of one propagation.  The smoother's predict
step does the same with ``(id, F)`` to obtain the (current, next) joint.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import NumericalError, StepFailure
from .gaussian import BlockGaussian, Gaussian, condition, solve_psd, symmetrize_psd
from .nn import augment_identity, partially_apply
from .propagation import propagate


@dataclass(frozen=True, eq=False)
class DynamicModel:
    """Transition network ``F(x, u)``, observation network ``H(x, u)``, noise
    covariances ``Q``, ``R`` and the initial belief."""

    F: object
    H: object
    Q: np.ndarray
    R: np.ndarray
    init: Gaussian

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        n_x = self.init.dim
        if self.F.output_dim != n_x:
            raise ValueError(f"F emits {self.F.output_dim} values for a {n_x}-dimensional state")
        n_u = self.F.input_dim - n_x
        if n_u < 0 or self.H.input_dim != n_x + n_u:
            raise ValueError("F and H must both take (x, u) with matching input dimension")
        if Q.shape != (n_x, n_x) or R.shape != (self.H.output_dim,) * 2:
            raise ValueError("Q or R has the wrong shape")
        object.__setattr__(self, "Q", symmetrize_psd(Q))
        object.__setattr__(self, "R", symmetrize_psd(R))

    @property
    def n_x(self):
        return self.init.dim

    @property
    def n_u(self):
        return self.F.input_dim - self.init.dim

    @property
    def n_y(self):
        return self.H.output_dim


@dataclass(frozen=True, eq=False)
class FilterStep:
    predicted_state: Gaussian
    predicted_output: Gaussian
    cross_cov: np.ndarray
    filtered_state: Gaussian


@dataclass(frozen=True, eq=False)
class SmootherStep:
    smoothed_state: Gaussian


def _input(u, n_u):
    u = np.zeros(0) if u is None else np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (n_u,):
        raise ValueError(f"input has shape {u.shape}, model expects ({n_u},)")
    return u


def _padded(block, n_x):
    n = n_x + block.shape[0]
    out = np.zeros((n, n))
    out[n_x:, n_x:] = block
    return out


def _predict(X, F_u, H_aug, model, spec):
    x_next = propagate(F_u, X, spec).with_added_cov(model.Q)
    joint = propagate(H_aug, x_next, spec)
    return BlockGaussian(joint.with_added_cov(_padded(model.R, model.n_x)), model.n_x)


def kf_predict(X, u, model, spec=None):
    """Joint Gaussian of the next state and next output given belief ``X``.

    Returns a :class:`BlockGaussian` over ``(x', y')`` split after ``n_x``.
    """
    u = _input(u, model.n_u)
    return _predict(X, partially_apply(model.F, u), augment_identity(partially_apply(model.H, u)), model, spec)


def kf_update(joint, y):
    """Condition the (state, output) joint on the measurement ``y``."""
    return condition(joint, y)


def _as_rows(values, T, width, name):
    if width == 0:
        return np.zeros((T, 0))
    arr = np.asarray(values, dtype=float).reshape(T, width)
    return arr


def filter_run(model, inputs, outputs, spec=None, update=kf_update):
    """Forward recursion; entry ``t-1`` holds the predictions and posterior for time ``t``.

    ``update`` is the measurement-update strategy ``(joint, y) -> Gaussian``;
    the default is plain Gaussian conditioning.

    Raises
    ------
    StepFailure
        Wrapping the numerical error of the first failing step (1-based).
    """
    outputs = np.asarray(outputs, dtype=float)
    T = outputs.shape[0]
    if T == 0:
        return []
    ys = outputs.reshape(T, model.n_y)
    us = _as_rows(inputs if inputs is not None else np.zeros((T, 0)), T, model.n_u, "inputs")
    X = model.init
    steps = []
    # augment once; per step only the input offsets change
    H_aug = augment_identity(model.H, model.n_x)
    for t in range(T):
        try:
            if model.n_u == 0:
                joint = _predict(X, model.F, H_aug, model, spec)
            else:
                joint = _predict(X, partially_apply(model.F, us[t]), partially_apply(H_aug, us[t]), model, spec)
            X = update(joint, ys[t])
        except NumericalError as exc:
            raise StepFailure(t + 1, exc) from exc
        steps.append(FilterStep(joint.first, joint.second, joint.cross.copy(), X))
    return steps


def rts_predict(X, u, model, spec=None):
    """Joint Gaussian of the current and next state, split after ``n_x``."""
    u = _input(u, model.n_u)
    return _rts_predict(X, augment_identity(partially_apply(model.F, u)), model, spec)


def _rts_predict(X, F_aug, model, spec):
    joint = propagate(F_aug, X, spec)
    return BlockGaussian(joint.with_added_cov(_padded(model.Q, model.n_x)), model.n_x)


def rts_update(joint, next_smoothed):
    """Backward update of the current state given the smoothed next state.

    With ``G = S_xx' S_x'x'^-1`` the result is
    ``N(mu_x + G (mu'' - mu_x'), S_xx + G (S'' - S_x'x') G')``.
    """
    k = joint.k
    S = joint.joint.cov
    mu = joint.joint.mean
    if next_smoothed.dim != mu.shape[0] - k:
        raise ValueError("smoothed next state has the wrong dimension")
    S_next = S[k:, k:]
    gain = solve_psd(S_next, S[k:, :k]).T
    mean = mu[:k] + gain @ (next_smoothed.mean - mu[k:])
    cov = S[:k, :k] + gain @ (next_smoothed.cov - S_next) @ gain.T
    return Gaussian(mean, symmetrize_psd(cov))


def smoother_run(model, inputs, outputs, spec=None, filter_steps=None, include_initial=False):
    """Backward RTS recursion seeded by :func:`filter_run`.

    Returns smoothed beliefs for t = 1..T (or t = 0..T with ``include_initial``).
    """
    outputs = np.asarray(outputs, dtype=float)
    T = outputs.shape[0]
    if filter_steps is None:
        filter_steps = filter_run(model, inputs, outputs, spec)
    if T == 0:
        return [SmootherStep(model.init)] if include_initial else []
    us = _as_rows(inputs if inputs is not None else np.zeros((T, 0)), T, model.n_u, "inputs")
    filtered = [model.init] + [s.filtered_state for s in filter_steps]
    smoothed = [None] * (T + 1)
    smoothed[T] = filtered[T]
    stop = -1 if include_initial else 0
    F_aug = augment_identity(model.F, model.n_x)
    for k in range(T - 1, stop, -1):
        try:
            joint = _rts_predict(filtered[k], partially_apply(F_aug, us[k]), model, spec)
            smoothed[k] = rts_update(joint, smoothed[k + 1])
        except NumericalError as exc:
            raise StepFailure(k, exc) from exc
    first = 0 if include_initial else 1
    return [SmootherStep(g) for g in smoothed[first:]]


@dataclass(frozen=True, eq=False)
class RunRecord:
    """Per-step ground truth with predicted, filtered and smoothed beliefs.

    Arrays have shapes (T, n) for means / truth and (T, n, n) for
    covariances.  Smoothed arrays are ``None`` when only filtering was run.
    """

    truth: np.ndarray
    pred_mean: np.ndarray
    pred_cov: np.ndarray
    filt_mean: np.ndarray
    filt_cov: np.ndarray
    smooth_mean: np.ndarray = None
    smooth_cov: np.ndarray = None

    @property
    def T(self):
        return self.truth.shape[0]

    @property
    def n_x(self):
        return self.truth.shape[1]

    def task(self, name):
        """(truth, mean, cov) for ``prediction``, ``filtering`` or ``smoothing``."""
        if name == "prediction":
            return self.truth, self.pred_mean, self.pred_cov
        if name == "filtering":
            return self.truth, self.filt_mean, self.filt_cov
        if name == "smoothing":
            if self.smooth_mean is None:
                raise KeyError("record has no smoothing results")
            return self.truth, self.smooth_mean, self.smooth_cov
        raise KeyError(name)

    @property
    def tasks(self):
        return ("prediction", "filtering") + (("smoothing",) if self.smooth_mean is not None else ())


def run_record(model, inputs, outputs, truth, spec=None, smooth=True):
    """Run filter (and smoother) and collect a :class:`RunRecord`.

    ``truth`` holds the states x_1..x_T (shape (T, n_x)); a leading x_0 row
    is dropped if present.
    """
    outputs = np.asarray(outputs, dtype=float)
    T = outputs.shape[0]
    truth = np.asarray(truth, dtype=float)
    if truth.shape[0] == T + 1:
        truth = truth[1:]
    steps = filter_run(model, inputs, outputs, spec)
    fields = dict(
        truth=truth,
        pred_mean=np.array([s.predicted_state.mean for s in steps]).reshape(T, model.n_x),
        pred_cov=np.array([s.predicted_state.cov for s in steps]).reshape(T, model.n_x, model.n_x),
        filt_mean=np.array([s.filtered_state.mean for s in steps]).reshape(T, model.n_x),
        filt_cov=np.array([s.filtered_state.cov for s in steps]).reshape(T, model.n_x, model.n_x),
    )
    if smooth:
        sm = smoother_run(model, inputs, outputs, spec, filter_steps=steps)
        fields["smooth_mean"] = np.array([s.smoothed_state.mean for s in sm]).reshape(T, model.n_x)
        fields["smooth_cov"] = np.array([s.smoothed_state.cov for s in sm]).reshape(T, model.n_x, model.n_x)
    return RunRecord(**fields)
