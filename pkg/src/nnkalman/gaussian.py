"""Dense Gaussian algebra.

Beliefs are represented by :class:`Gaussian` (mean vector and covariance
matrix).  Joint beliefs over a concatenated vector carry a block boundary in
:class:`BlockGaussian`, which is what the filter and smoother condition on.
"""

from dataclasses import dataclass
import math

import numpy as np
import scipy.linalg
from scipy import special

from .exceptions import NotPSDError, NumericalError, SingularCovarianceError
from .rng import stream

PSD_TOL = 1e-8
JITTER_LEVELS = (0.0, 1e-12, 1e-9, 1e-6)


@dataclass(frozen=True, eq=False)
class Gaussian:
    """Multivariate normal belief ``N(mean, cov)``.

    The covariance is symmetrised on construction.  Positive
    semi-definiteness is enforced by the operations that produce beliefs
    (see :func:`symmetrize_psd`), not re-checked here.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1:
            raise ValueError(f"mean must be a vector, got shape {mean.shape}")
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise ValueError(f"cov shape {cov.shape} does not match mean length {n}")
        if not (np.isfinite(mean).all() and np.isfinite(cov).all()):
            raise NumericalError("non-finite entries in Gaussian moments")
        cov = 0.5 * (cov + cov.T)
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.shape[0]

    def marginal(self, index):
        """Marginal over the coordinates selected by ``index`` (slice or index array)."""
        idx = np.arange(self.dim)[index]
        return Gaussian(self.mean[idx], self.cov[np.ix_(idx, idx)])

    def with_added_cov(self, extra):
        """Return ``N(mean, cov + extra)`` (independent additive noise)."""
        return Gaussian(self.mean, self.cov + np.asarray(extra, dtype=float))

    def __repr__(self):
        return f"Gaussian(dim={self.dim}, mean={np.array2string(self.mean, precision=4)})"


@dataclass(frozen=True, eq=False)
class BlockGaussian:
    """Gaussian over ``(a, b)`` split after the first ``k`` coordinates."""

    joint: Gaussian
    k: int

    def __post_init__(self):
        if not 0 < self.k < self.joint.dim:
            raise ValueError(f"block index {self.k} must lie in (0, {self.joint.dim})")

    @property
    def first(self):
        return self.joint.marginal(slice(0, self.k))

    @property
    def second(self):
        return self.joint.marginal(slice(self.k, None))

    @property
    def cross(self):
        """Covariance block ``Cov(a, b)`` of shape (k, n - k)."""
        return self.joint.cov[: self.k, self.k :]


def symmetrize_psd(cov, tol=PSD_TOL):
    """Symmetrise ``cov`` and clip slightly negative eigenvalues to zero.

    Eigenvalues down to ``-tol * max(1, largest eigenvalue)`` are treated as
    round-off and clipped; anything more negative is an error rather than a
    silent repair.

    Raises
    ------
    NotPSDError
        If the matrix is indefinite beyond the tolerance, or non-finite.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {cov.shape}")
    cov = 0.5 * (cov + cov.T)
    if not np.isfinite(cov).all():
        raise NotPSDError("covariance has non-finite entries")
    if cov.shape[0] == 1:
        if cov[0, 0] >= 0.0:
            return cov
        if cov[0, 0] < -tol:
            raise NotPSDError(f"negative variance {cov[0, 0]:.3e}")
        return np.zeros_like(cov)
    if np.all(np.diag(cov) > 0.0):
        try:
            # positive definite: nothing to repair
            np.linalg.cholesky(cov)
            return cov
        except np.linalg.LinAlgError:
            pass
    w = np.linalg.eigvalsh(cov)
    if w[0] >= 0.0:
        return cov
    scale = max(1.0, w[-1])
    if w[0] < -tol * scale:
        raise NotPSDError(f"smallest eigenvalue {w[0]:.3e} below -{tol:g} x {scale:.3e}")
    w, v = scipy.linalg.eigh(cov, check_finite=False)
    repaired = (v * np.clip(w, 0.0, None)) @ v.T
    return 0.5 * (repaired + repaired.T)


def psd_cholesky(cov):
    """Lower-triangular ``L`` with ``L @ L.T == cov`` for PSD (possibly singular) ``cov``.

    Falls back to a pivot-dropping Cholesky when the matrix is singular, so a
    zero covariance yields a zero factor.
    """
    cov = symmetrize_psd(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    n = cov.shape[0]
    L = np.zeros_like(cov)
    tol = 1e-12 * max(float(np.max(np.diag(cov))), np.finfo(float).tiny)
    for j in range(n):
        d = cov[j, j] - L[j, :j] @ L[j, :j]
        if d <= tol:
            continue
        L[j, j] = math.sqrt(d)
        L[j + 1 :, j] = (cov[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L


def _cho_factor_jittered(S):
    n = S.shape[0]
    tr = float(np.trace(S)) / n
    scale = tr if tr > 0.0 else 1.0
    eye = np.eye(n)
    for level in JITTER_LEVELS:
        try:
            return scipy.linalg.cho_factor(S + level * scale * eye, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
    raise SingularCovarianceError(
        f"covariance block of size {n} is singular even with jitter {JITTER_LEVELS[-1]:g} x {scale:.3e}"
    )


def solve_psd(S, B):
    """Solve ``S X = B`` for symmetric PSD ``S`` by Cholesky with jitter escalation."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if not np.all(np.isfinite(S)):
        raise SingularCovarianceError("non-finite covariance block")
    return scipy.linalg.cho_solve(_cho_factor_jittered(S), B, check_finite=False)


def condition(joint, observed):
    """Condition a block Gaussian on its second block taking the value ``observed``.

    Returns the first-block posterior with mean ``mu_a + S_ab S_bb^-1 (y - mu_b)``
    and covariance ``S_aa - S_ab S_bb^-1 S_ba``.

    Examples
    --------
    >>> j = BlockGaussian(Gaussian([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]]), 1)
    >>> post = condition(j, [1.0])
    >>> float(post.mean[0]), float(post.cov[0, 0])
    (0.5, 0.75)
    """
    y = np.atleast_1d(np.asarray(observed, dtype=float))
    k = joint.k
    mu = joint.joint.mean
    S = joint.joint.cov
    if y.shape != (mu.shape[0] - k,):
        raise ValueError(f"observation has shape {y.shape}, expected ({mu.shape[0] - k},)")
    S_ab = S[:k, k:]
    gain_t = solve_psd(S[k:, k:], S_ab.T)
    mean = mu[:k] + gain_t.T @ (y - mu[k:])
    cov = S[:k, :k] - S_ab @ gain_t
    return Gaussian(mean, symmetrize_psd(cov))


def affine_map(g, M, c=None):
    """Exact image of ``g`` under ``x -> M x + c``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != g.dim:
        raise ValueError(f"matrix with {M.shape[1]} columns applied to a {g.dim}-dimensional Gaussian")
    c = np.zeros(M.shape[0]) if c is None else np.atleast_1d(np.asarray(c, dtype=float))
    if c.shape != (M.shape[0],):
        raise ValueError("offset length does not match the number of rows of M")
    return Gaussian(M @ g.mean + c, symmetrize_psd(M @ g.cov @ M.T))


def sample(g, seed, count):
    """Draw ``count`` samples from ``g``, deterministically for a given ``seed``.

    ``seed`` may be an integer or a ``numpy.random.Generator``.  The returned
    array has shape (count, dim).
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed, "sample")
    L = psd_cholesky(g.cov)
    z = rng.standard_normal((count, g.dim))
    return g.mean + z @ L.T


def chi2_quantile(dof, p):
    """Quantile of the chi-squared distribution with ``dof`` degrees of freedom."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    if dof < 1:
        raise ValueError("dof must be a positive integer")
    return 2.0 * float(special.gammaincinv(0.5 * dof, p))


def ball_volume(n):
    """Volume of the unit ball in ``n`` dimensions."""
    if n < 1:
        raise ValueError("dimension must be positive")
    return math.exp(0.5 * n * math.log(math.pi) - math.lgamma(0.5 * n + 1.0))
