"""
Filtering a Wiener system
=========================

Linear dynamics observed through a random two-layer probit network.  We run
four filters on the same simulated trajectory and compare accuracy and the
cross-entropy score (lower is better for both).
"""

import numpy as np

from nnkalman import PropagatorSpec, cross_entropy, rmse, run_record
from nnkalman.systems import make_wiener_system, simulate_model, wiener_estimation_spec

spec = wiener_estimation_spec()
T = 500
model = make_wiener_system(spec, seed=0)
inputs = spec.inputs(T)
states, outputs = simulate_model(model, inputs, T, seed=0)
print(f"state dim {model.n_x}, output dim {model.n_y}, {T} steps")

print(f"\n{'method':12s} {'filter rmse':>11s} {'smooth rmse':>11s} {'filter CE':>10s}")
for method in ("analytic", "unscented95", "unscented02", "linearized"):
    rec = run_record(model, inputs, outputs, states, PropagatorSpec(method), smooth=True)
    f = rmse(rec.truth, rec.filt_mean).value
    s = rmse(rec.truth, rec.smooth_mean).value
    ce = cross_entropy(rec.truth, rec.filt_mean, rec.filt_cov).value
    print(f"{method:12s} {f:11.3f} {s:11.3f} {ce:10.2f}")
