"""Calibration and accuracy criteria for Gaussian state estimates.

All criteria act on stacked samples ``truth`` (N, n), ``mean`` (N, n) and
``cov`` (N, n, n).  Standard errors are computed across replications:
pass ``groups`` (one label per sample) to average within each replication
first.  Without groups every sample is its own replication.
"""

from dataclasses import dataclass
import math

import numpy as np

from .gaussian import ball_volume, chi2_quantile

METRICS = ("rmse", "cross_entropy", "coverage", "coverage_volume")
TASKS = ("prediction", "filtering", "smoothing")
DEFAULT_LEVELS = (0.5, 0.8, 0.9, 0.95, 0.99)
SINGULAR_RTOL = 1e-12


@dataclass(frozen=True)
class MetricSummary:
    metric: str
    value: float
    stderr: float
    n_reps: int
    task: str = ""
    flag: str = ""


def _pair(truth, mean):
    truth = np.asarray(truth, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if truth.ndim == 1:
        truth, mean = truth[:, None], mean[:, None]
    if truth.shape[0] == 0:
        raise ValueError("no samples")
    if mean.shape != truth.shape:
        raise ValueError(f"mean shape {mean.shape} does not match truth {truth.shape}")
    return truth, mean


def _stack(truth, mean, cov):
    truth, mean = _pair(truth, mean)
    N, n = truth.shape
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 2 and cov.shape == (n, n):
        cov = np.broadcast_to(cov, (N, n, n))
    cov = cov.reshape(N, n, n)
    return truth, mean, cov


def _group_means(values, groups):
    """Per-replication means, in sorted label order."""
    if groups is None:
        return values
    groups = np.asarray(groups)
    if groups.shape != values.shape[:1]:
        raise ValueError("groups needs one label per sample")
    labels, inverse = np.unique(groups, return_inverse=True)
    sums = np.zeros((labels.size,) + values.shape[1:])
    np.add.at(sums, inverse, values)
    counts = np.bincount(inverse, minlength=labels.size).reshape((-1,) + (1,) * (values.ndim - 1))
    return sums / counts


def _mean_stderr(rep_values):
    k = rep_values.shape[0]
    value = float(np.mean(rep_values))
    if k < 2 or not np.all(np.isfinite(rep_values)):
        return value, (0.0 if k < 2 else math.inf), k
    return value, float(np.std(rep_values, ddof=1) / math.sqrt(k)), k


def mahalanobis(truth, mean, cov):
    """Squared Mahalanobis distances and log-determinants per sample.

    A covariance whose smallest eigenvalue is below ``SINGULAR_RTOL`` times
    its largest counts as singular: distance ``inf`` (0 if the error is
    exactly zero) and log-determinant ``-inf``.  No jitter is applied.
    """
    truth, mean, cov = _stack(truth, mean, cov)
    err = truth - mean
    N = err.shape[0]
    d2 = np.empty(N)
    logdet = np.empty(N)
    try:
        # fast path: every covariance positive definite
        L = np.linalg.cholesky(cov)
        logdet[:] = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
        if np.all(np.isfinite(logdet)):
            z = np.linalg.solve(L, err[..., None])[..., 0]
            d2[:] = np.einsum("ij,ij->i", z, z)
            w = np.linalg.eigvalsh(cov)
            if np.all(w[:, 0] > SINGULAR_RTOL * w[:, -1]):
                return d2, logdet
    except np.linalg.LinAlgError:
        pass
    for i in range(N):
        if not np.all(np.isfinite(cov[i])):
            d2[i] = logdet[i] = math.nan
            continue
        w, v = np.linalg.eigh(cov[i])
        if w[-1] <= 0.0 or w[0] <= SINGULAR_RTOL * w[-1]:
            d2[i] = 0.0 if not np.any(err[i]) else math.inf
            logdet[i] = -math.inf
            continue
        z = (v.T @ err[i]) / np.sqrt(w)
        d2[i] = z @ z
        logdet[i] = float(np.sum(np.log(w)))
    return d2, logdet


def rmse(truth, mean, groups=None):
    """Root-mean-square Euclidean error with a delta-method standard error.

    Examples
    --------
    >>> rmse([[3.0, 4.0]], [[0.0, 0.0]]).value
    5.0
    """
    truth, mean = _pair(truth, mean)
    sq = np.sum((truth - mean) ** 2, axis=1)
    mse, se_mse, k = _mean_stderr(_group_means(sq, groups))
    value = math.sqrt(mse)
    stderr = se_mse / (2.0 * value) if value > 0 else 0.0
    return MetricSummary("rmse", value, stderr, k, flag="single replication" if k < 2 else "")


def cross_entropy(truth, mean, cov, groups=None):
    """Mean of ``0.5 log det S + 0.5 (x - mu)' S^-1 (x - mu)``.

    Samples with a singular covariance contribute ``+inf`` and set ``flag``.
    """
    d2, logdet = mahalanobis(truth, mean, cov)
    with np.errstate(invalid="ignore"):
        per = 0.5 * logdet + 0.5 * d2
    singular = ~np.isfinite(logdet)
    per[singular] = math.inf
    flag = "singular covariance" if np.any(singular) else ""
    value, stderr, k = _mean_stderr(_group_means(per, groups))
    if not flag and k < 2:
        flag = "single replication"
    return MetricSummary("cross_entropy", value, stderr, k, flag=flag)


def _hits(truth, mean, cov, alpha):
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    truth, mean, cov = _stack(truth, mean, cov)
    d2, _ = mahalanobis(truth, mean, cov)
    return (d2 <= chi2_quantile(truth.shape[1], 1.0 - alpha)).astype(float)


def coverage(truth, mean, cov, alpha=0.05, groups=None):
    """Fraction of truths inside the ``1 - alpha`` confidence ellipsoid."""
    hits = _hits(truth, mean, cov, alpha)
    reps = _group_means(hits, groups)
    value, stderr, k = _mean_stderr(reps)
    if groups is None:
        # binomial standard error
        stderr = math.sqrt(max(value * (1.0 - value), 0.0) / hits.size)
    return MetricSummary("coverage", value, stderr, k, flag="single replication" if k < 2 else "")


def coverage_volume(cov, alpha=0.05, groups=None):
    """Mean volume of the ``1 - alpha`` confidence ellipsoid (depends on ``cov`` only)."""
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 2:
        cov = cov[None]
    n = cov.shape[-1]
    q = chi2_quantile(n, 1.0 - alpha)
    det = np.clip(np.linalg.det(cov), 0.0, None)
    vol = q ** (0.5 * n) * ball_volume(n) * np.sqrt(det)
    value, stderr, k = _mean_stderr(_group_means(vol, groups))
    return MetricSummary("coverage_volume", value, stderr, k, flag="single replication" if k < 2 else "")


def coverage_curve(truth, mean, cov, levels=DEFAULT_LEVELS):
    """Empirical coverage at each nominal confidence level.

    Returns a list of ``(level, empirical, binomial_stderr)`` tuples.
    """
    truth, mean, cov = _stack(truth, mean, cov)
    d2, _ = mahalanobis(truth, mean, cov)
    n = truth.shape[1]
    out = []
    for level in levels:
        if not 0.0 < level < 1.0:
            raise ValueError("levels must lie in (0, 1)")
        p = float(np.mean(d2 <= chi2_quantile(n, level)))
        out.append((float(level), p, math.sqrt(level * (1.0 - level) / d2.size)))
    return out


def evaluate_run(records, alpha=0.05, tasks=None):
    """All four criteria on every task present in ``records`` (one per replication).

    ``tasks`` restricts the evaluation to a subset.  Standard errors are
    taken across replications.
    """
    records = list(records)
    if not records:
        raise ValueError("need at least one replication")
    n_x = records[0].n_x
    if any(r.n_x != n_x for r in records):
        raise ValueError("replications have mixed state dimensions")
    present = [t for t in records[0].tasks if all(t in r.tasks for r in records)]
    tasks = present if tasks is None else [t for t in present if t in tasks]
    out = []
    for task in tasks:
        parts = [r.task(task) for r in records]
        truth = np.concatenate([p[0] for p in parts])
        mean = np.concatenate([p[1] for p in parts])
        cov = np.concatenate([p[2] for p in parts])
        groups = np.concatenate([np.full(p[0].shape[0], i) for i, p in enumerate(parts)])
        for summary in (
            rmse(truth, mean, groups),
            cross_entropy(truth, mean, cov, groups),
            coverage(truth, mean, cov, alpha, groups),
            coverage_volume(cov, alpha, groups),
        ):
            out.append(MetricSummary(summary.metric, summary.value, summary.stderr, summary.n_reps, task, summary.flag))
    return out
