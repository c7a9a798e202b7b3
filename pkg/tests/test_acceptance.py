"""End-to-end acceptance checks, one test per criterion.

Each test records a ``criterion N: PASS/FAIL`` line (printed in the terminal
summary) and then asserts.  All are marked slow; run them with
``pytest tests/test_acceptance.py -v``.
"""

import math
import time

import numpy as np
import pytest

from nnkalman import (
    DynamicModel,
    Gaussian,
    Layer,
    Network,
    PropagatorSpec,
    affine_network,
    chi2_quantile,
    coverage,
    coverage_curve,
    cross_entropy,
    filter_run,
    layer_eval,
    network_eval,
    propagate,
    propagate_layer_analytic,
    rmse,
    run_record,
    smoother_run,
)
from nnkalman.experiments import (
    generate_replication,
    lorenz_training_data,
    parse_config,
    train_lorenz_surrogate,
)
from nnkalman.systems import (
    closed_loop_run,
    dare_gain,
    lti_regulation_spec,
    make_wiener_system,
    simulate_model,
    wiener_estimation_spec,
    wiener_matrices,
)

from oracles import ClassicKalman, chi2_quantile_bisect

pytestmark = pytest.mark.slow

LINEAR_METHODS = ["analytic", "linearized", "unscented95", "unscented02"]


def random_affine_model(rng):
    n_x = int(rng.integers(1, 6))
    n_u = int(rng.integers(0, 3))
    n_y = int(rng.integers(1, 4))
    A = rng.standard_normal((n_x, n_x))
    A *= 0.95 / max(1.0, np.max(np.abs(np.linalg.eigvals(A))))
    B = rng.standard_normal((n_x, n_u))
    c = rng.standard_normal(n_x)
    Cx = rng.standard_normal((n_y, n_x))
    Du = rng.standard_normal((n_y, n_u))
    e = rng.standard_normal(n_y)
    W = rng.standard_normal((n_x, n_x))
    Q = 0.1 * W @ W.T + 0.01 * np.eye(n_x)
    V = rng.standard_normal((n_y, n_y))
    R = 0.1 * V @ V.T + 0.05 * np.eye(n_y)
    m0 = rng.standard_normal(n_x)
    act = "sine" if rng.random() < 0.5 else "probit"
    model = DynamicModel(
        affine_network(np.hstack([A, B]), c, act),
        affine_network(np.hstack([Cx, Du]), e, act),
        Q,
        R,
        Gaussian(m0, np.eye(n_x)),
    )
    return model, ClassicKalman(A, B, c, Cx, Du, e, Q, R, m0, np.eye(n_x))


def simulate_linear(rng, k, T):
    n_x, n_u, n_y = k.B.shape[0], k.B.shape[1], k.Cx.shape[0]
    us = rng.standard_normal((T, n_u))
    x = k.m0 + rng.standard_normal(n_x)
    ys = np.empty((T, n_y))
    Lq, Lr = np.linalg.cholesky(k.Q), np.linalg.cholesky(k.R)
    for t in range(T):
        x = k.A @ x + k.B @ us[t] + k.c + Lq @ rng.standard_normal(n_x)
        ys[t] = k.Cx @ x + k.Du @ us[t] + k.e + Lr @ rng.standard_normal(n_y)
    return us, ys


def random_layer(rng, n, m, scale=1.0):
    return Layer(
        scale * rng.standard_normal((m, n)),
        rng.standard_normal(m),
        rng.standard_normal((m, n)) / math.sqrt(n),
        rng.standard_normal(m),
    )


def random_belief(rng, n, spread=0.5):
    W = spread * rng.standard_normal((n, n))
    return Gaussian(rng.standard_normal(n), W @ W.T)


def sample_moments(y):
    """Sample mean and covariance with componentwise standard errors."""
    n = y.shape[0]
    m = y.mean(axis=0)
    d = y - m
    prod = d[:, :, None] * d[:, None, :]
    return m, prod.mean(axis=0), y.std(axis=0) / math.sqrt(n), prod.std(axis=0) / math.sqrt(n)


def test_criterion_1_linear_oracle(criterion):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = dict.fromkeys(LINEAR_METHODS, 0.0)
    for _ in range(20):
        model, oracle = random_affine_model(rng)
        us, ys = simulate_linear(rng, oracle, 100)
        ref_f = oracle.filter(us, ys)
        ref_s = oracle.smooth(us, ys)
        for method in LINEAR_METHODS:
            spec = PropagatorSpec(method)
            steps = filter_run(model, us, ys, spec)
            errs = [worst[method]]
            for s, (mp, Pp, m, P) in zip(steps, ref_f):
                errs += [
                    np.max(np.abs(s.predicted_state.mean - mp)),
                    np.max(np.abs(s.predicted_state.cov - Pp)),
                    np.max(np.abs(s.filtered_state.mean - m)),
                    np.max(np.abs(s.filtered_state.cov - P)),
                ]
            for g, (m, P) in zip(smoother_run(model, us, ys, spec, filter_steps=steps), ref_s):
                errs += [np.max(np.abs(g.smoothed_state.mean - m)), np.max(np.abs(g.smoothed_state.cov - P))]
            worst[method] = max(errs)
    elapsed = time.perf_counter() - start
    passed = max(worst.values()) < 1e-8 and elapsed < 10.0
    detail = ", ".join(f"{m} {e:.1e}" for m, e in worst.items())
    ok = criterion(1, passed, f"max abs error {detail}; {elapsed:.1f} s")
    assert ok


def test_criterion_2_single_layer_moments(criterion):
    rng = np.random.default_rng(7)
    n_draws = 1_000_000
    start = time.perf_counter()
    worst = 0.0
    for activation, count in (("sine", 50), ("probit", 20)):
        for _ in range(count):
            n, m = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            layer = random_layer(rng, n, m)
            g = random_belief(rng, n, spread=0.8)
            x = rng.multivariate_normal(g.mean, g.cov, n_draws, method="cholesky")
            mean, cov, se_mean, se_cov = sample_moments(layer_eval(x, layer, activation))
            out = propagate_layer_analytic(g, layer, activation)
            z_mean = np.abs(out.mean - mean) / se_mean
            z_cov = np.abs(out.cov - cov) / np.maximum(se_cov, 1e-300)
            worst = max(worst, z_mean.max(), z_cov.max())
    elapsed = time.perf_counter() - start
    ok = criterion(2, worst < 5.0 and elapsed < 120.0, f"largest deviation {worst:.2f} stderr, {elapsed:.0f} s")
    assert ok


def test_criterion_3_deep_propagation(criterion):
    rng = np.random.default_rng(13)
    n_draws = 1_000_000
    widths = [3, 16, 16, 16, 16, 3]
    rel_analytic, rel_linear, mean_ok = [], [], []
    for _ in range(50):
        layers = [random_layer(rng, n, m, scale=1.0 / math.sqrt(n)) for n, m in zip(widths[:-1], widths[1:])]
        net = Network(tuple(layers), "sine")
        g = random_belief(rng, 3, spread=0.5)
        y = network_eval(rng.multivariate_normal(g.mean, g.cov, n_draws, method="cholesky"), net)
        mc_mean, mc_cov = y.mean(axis=0), np.cov(y, rowvar=False)
        scale = np.linalg.norm(mc_cov)
        a = propagate(net, g, PropagatorSpec("analytic"))
        lin = propagate(net, g, PropagatorSpec("linearized"))
        rel_analytic.append(np.linalg.norm(a.cov - mc_cov) / scale)
        rel_linear.append(np.linalg.norm(lin.cov - mc_cov) / scale)
        mean_ok.append(np.all(np.abs(a.mean - mc_mean) < 5 * np.sqrt(np.diag(mc_cov) / n_draws)))
    rel_analytic, rel_linear = np.array(rel_analytic), np.array(rel_linear)
    cov_ok = rel_analytic < 0.05
    beats = np.mean(rel_analytic <= rel_linear)
    passed = bool(np.all(cov_ok) and np.all(mean_ok) and beats >= 0.8)
    detail = (
        f"cov rel error < 5% in {cov_ok.sum()}/50 (median {np.median(rel_analytic):.3f}), "
        f"mean within 5 stderr in {sum(mean_ok)}/50, analytic <= linearized in {beats:.0%}"
    )
    ok = criterion(3, passed, detail)
    assert ok


def test_criterion_4_network_truth_calibration(criterion):
    start = time.perf_counter()
    config = parse_config(
        {"format_version": 1, "kind": "network-truth", "methods": ["analytic"], "T": 10_000, "replications": 20, "smooth": False}
    )
    truth, means, covs, groups = [], [], [], []
    for r in range(config.replications):
        rep = generate_replication(config, r)
        rec = run_record(rep.model, rep.inputs, rep.outputs, rep.states, PropagatorSpec("analytic"), smooth=False)
        truth.append(rec.truth)
        means.append(rec.filt_mean)
        covs.append(rec.filt_cov)
        groups.append(np.full(len(rec.truth), r))
    truth, means, covs, groups = map(np.concatenate, (truth, means, covs, groups))
    c95 = coverage(truth, means, covs, alpha=0.05, groups=groups)
    levels = (0.5, 0.8, 0.9, 0.95, 0.99)
    curve = coverage_curve(truth, means, covs, levels=levels)
    dev = [abs(emp - lev) / se for lev, emp, se in curve]
    elapsed = time.perf_counter() - start
    passed = 0.90 <= c95.value <= 0.99 and max(dev) <= 3.0 and elapsed < 300.0
    curve_txt = ", ".join(f"{lev}:{emp:.4f}" for lev, emp, _ in curve)
    ok = criterion(
        4,
        passed,
        f"coverage95 {c95.value:.4f}, curve {curve_txt}, worst {max(dev):.1f} binomial stderr, {elapsed:.0f} s",
    )
    assert ok


def test_criterion_5_wiener_ordering(criterion):
    spec = wiener_estimation_spec()
    T = 2000
    methods = ["analytic", "unscented95", "linearized", "unscented02"]
    res = {m: {"f_rmse": [], "s_rmse": [], "f_ce": [], "s_ce": []} for m in methods}
    for seed in range(5):
        model = make_wiener_system(spec, seed)
        us = spec.inputs(T)
        states, ys = simulate_model(model, us, T, seed)
        for m in methods:
            rec = run_record(model, us, ys, states, PropagatorSpec(m), smooth=True)
            res[m]["f_rmse"].append(rmse(rec.truth, rec.filt_mean).value)
            res[m]["s_rmse"].append(rmse(rec.truth, rec.smooth_mean).value)
            res[m]["f_ce"].append(cross_entropy(rec.truth, rec.filt_mean, rec.filt_cov).value)
            res[m]["s_ce"].append(cross_entropy(rec.truth, rec.smooth_mean, rec.smooth_cov).value)
    avg = {m: {k: float(np.mean(v)) for k, v in d.items()} for m, d in res.items()}
    order = all(avg["analytic"][k] <= avg["unscented95"][k] <= avg["linearized"][k] for k in ("f_rmse", "s_rmse"))
    best_ce = all(avg["analytic"][k] <= min(avg[m][k] for m in methods) for k in ("f_ce", "s_ce"))
    detail = "; ".join(
        f"{m} rmse {avg[m]['f_rmse']:.3f}/{avg[m]['s_rmse']:.3f} ce {avg[m]['f_ce']:.2f}/{avg[m]['s_ce']:.2f}" for m in methods
    )
    ok = criterion(5, order and best_ce, detail + " (filtering/smoothing)")
    assert ok


def test_criterion_6_mean_field_never_updates(criterion):
    spec = wiener_estimation_spec()
    model = make_wiener_system(spec, 0)
    us = spec.inputs(100)
    _, ys = simulate_model(model, us, 100, 0)
    nt = parse_config({"format_version": 1, "kind": "network-truth", "methods": ["mean-field"], "T": 500, "replications": 1})
    rep = generate_replication(nt, 0)
    identical = True
    for m, u, y in ((model, us, ys), (rep.model, rep.inputs, rep.outputs)):
        for s in filter_run(m, u, y, PropagatorSpec("mean-field")):
            identical &= np.array_equal(s.filtered_state.mean, s.predicted_state.mean)
            identical &= np.array_equal(s.filtered_state.cov, s.predicted_state.cov)
    ok = criterion(6, bool(identical), "filtered equals predicted at all 600 steps" if identical else "an update moved the belief")
    assert ok


def test_criterion_7_lqr_closed_loop(criterion):
    spec = lti_regulation_spec()
    start = time.perf_counter()
    ratios = {"analytic": [], "linearized": [], "unscented02": []}
    for seed in range(10):
        model = make_wiener_system(spec, seed)
        A, B = wiener_matrices(model)
        _, K = dare_gain(A, B)
        for m in ratios:
            ratios[m].append(closed_loop_run(model, K, PropagatorSpec(m), 5000, seed).ratio)
    elapsed = time.perf_counter() - start
    good = sum(r < 2.0 for r in ratios["analytic"])
    bad_lin = sum(r > 10.0 for r in ratios["linearized"])
    bad_ukf = sum(r > 10.0 for r in ratios["unscented02"])
    passed = good >= 9 and bad_lin >= 5 and bad_ukf >= 5 and elapsed < 600.0
    fmt = lambda v: "/".join(f"{r:.3g}" for r in v)
    detail = (
        f"analytic < 2 in {good}/10, linearized > 10 in {bad_lin}/10, unscented02 > 10 in {bad_ukf}/10; "
        f"ratios analytic {fmt(ratios['analytic'])}, linearized {fmt(ratios['linearized'])}, "
        f"unscented02 {fmt(ratios['unscented02'])}; {elapsed:.0f} s"
    )
    ok = criterion(7, passed, detail)
    assert ok


def test_criterion_8_metric_examples(criterion):
    n = 100_000
    rng = np.random.default_rng(88)
    e = rng.standard_normal(n)
    z = np.zeros(n)
    ex1 = coverage(e, z, [[0.5]])
    ex2 = coverage(e, z, [[2.0]])
    heads = rng.random(n) < 0.05
    e4 = (np.where(heads, math.sqrt(1000.0), 1.0) * rng.standard_normal(n))[:, None]
    s1 = np.where(heads, 0.001, 1000.0)[:, None, None]
    s2 = np.where(heads, 1000.0, 1.0)[:, None, None]
    ce1, ce2 = cross_entropy(e4, np.zeros_like(e4), s1), cross_entropy(e4, np.zeros_like(e4), s2)
    chi_err = max(
        abs(chi2_quantile(dof, p) - chi2_quantile_bisect(dof, p)) for dof in (1, 3, 5) for p in (0.5, 0.9, 0.95, 0.99)
    )
    passed = (
        ex1.value < 0.95 - 5 * ex1.stderr
        and ex2.value > 0.95 + 5 * ex2.stderr
        and ce2.value + 5 * (ce1.stderr + ce2.stderr) < ce1.value
        and chi_err < 1e-6
    )
    detail = (
        f"example 1 coverage {ex1.value:.4f}, example 2 {ex2.value:.4f}, "
        f"example 4 cross entropy {ce1.value:.3f} vs {ce2.value:.3f}, chi2 error {chi_err:.1e}"
    )
    ok = criterion(8, passed, detail)
    assert ok


def test_criterion_9_lorenz_surrogate(criterion):
    config = parse_config(
        {"format_version": 1, "kind": "lorenz", "methods": ["analytic"], "T": 2000, "replications": 1, "smooth": False}
    )
    start = time.perf_counter()
    train_states = lorenz_training_data(config)
    report = train_lorenz_surrogate(config, train_states)
    rep = generate_replication(config, 0, train_states, report)
    model = rep.model
    truth = rep.states[1:]
    spec = PropagatorSpec("analytic")
    steps = filter_run(model, None, rep.outputs, spec)
    mean = np.array([s.filtered_state.mean for s in steps])
    cov = np.array([s.filtered_state.cov for s in steps])
    blind = filter_run(model, None, rep.outputs, spec, update=lambda joint, y: joint.first)
    blind_mean = np.array([s.filtered_state.mean for s in blind])
    r_filter = rmse(truth, mean).value
    r_blind = rmse(truth, blind_mean).value
    cov95 = coverage(truth, mean, cov).value
    elapsed = time.perf_counter() - start
    passed = r_blind >= 2.0 * r_filter and cov95 >= 0.85
    detail = (
        f"{len(train_states) - 1} training pairs, filter rmse {r_filter:.3f} vs no-update {r_blind:.3f}, "
        f"coverage95 {cov95:.4f}, {elapsed:.0f} s"
    )
    ok = criterion(9, passed, detail)
    assert ok
