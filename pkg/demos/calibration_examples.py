"""
What the calibration scores see
===============================

Four toy forecasters for a standard normal error.  Coverage alone cannot
tell an honest forecaster from one that mixes wild and overconfident
covariances; the cross entropy can.
"""

import numpy as np

from nnkalman import coverage, coverage_curve, cross_entropy

n = 100_000
rng = np.random.default_rng(0)
e = rng.standard_normal((n, 1))
z = np.zeros_like(e)

for label, var in (("too narrow (0.5)", 0.5), ("honest (1.0)", 1.0), ("too wide (2.0)", 2.0)):
    c = coverage(e, z, [[var]])
    print(f"{label:18s} 95% coverage {c.value:.4f} +- {c.stderr:.4f}")

# a 5% chance of a huge error; sigma1 is confident exactly when it should not be
heads = rng.random(n) < 0.05
e4 = np.where(heads, np.sqrt(1000.0), 1.0)[:, None] * rng.standard_normal((n, 1))
sigma1 = np.where(heads, 0.001, 1000.0)[:, None, None]
sigma2 = np.where(heads, 1000.0, 1.0)[:, None, None]
for label, cov in (("mismatched", sigma1), ("matched", sigma2)):
    c = coverage(e4, z, cov)
    ce = cross_entropy(e4, z, cov)
    print(f"{label:10s} coverage {c.value:.4f}  cross entropy {ce.value:10.3f}")

print("\ncoverage curve of the honest forecaster:")
for level, emp, se in coverage_curve(e, z, np.ones((n, 1, 1))):
    print(f"  nominal {level:.2f}  empirical {emp:.4f}  (binomial se {se:.4f})")
