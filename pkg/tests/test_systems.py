"""Tests for the benchmark systems and the regulation loop."""

import math

import numpy as np
import pytest
import scipy.linalg
from scipy.integrate import solve_ivp

from nnkalman import DynamicModel, Gaussian, PropagatorSpec, affine_network, network_jacobian
from nnkalman.exceptions import DivergenceError, NumericalError
from nnkalman.io import system_to_dict
from nnkalman.systems import (
    LorenzConfig,
    closed_loop_run,
    controllable_canonical,
    dare_gain,
    lorenz_drift,
    lti_regulation_spec,
    make_network_truth_system,
    make_wiener_system,
    simulate_lorenz,
    simulate_model,
    wiener_estimation_spec,
    wiener_matrices,
)


class TestLorenzDrift:
    def test_origin_is_fixed(self):
        np.testing.assert_array_equal(lorenz_drift([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0])

    def test_initial_condition(self):
        np.testing.assert_allclose(lorenz_drift([-8.0, 4.0, 27.0]), [120.0, -12.0, -104.0], rtol=1e-15)

    def test_nontrivial_equilibrium(self):
        c = LorenzConfig()
        r = math.sqrt(c.beta * (c.rho - 1.0))
        np.testing.assert_allclose(lorenz_drift([r, r, c.rho - 1.0]), 0.0, atol=1e-12)

    def test_batch(self):
        x = np.random.default_rng(0).standard_normal((5, 3))
        np.testing.assert_allclose(lorenz_drift(x)[2], lorenz_drift(x[2]))


class TestSimulateLorenz:
    def test_shapes(self):
        states, ys = simulate_lorenz(LorenzConfig(dt=0.05, substeps=5), 20, seed=0)
        assert states.shape == (21, 3) and ys.shape == (20, 1)
        np.testing.assert_array_equal(states[0], [-8.0, 4.0, 27.0])

    def test_fine_euler_matches_ode_reference(self):
        c = LorenzConfig(eta=0.0, epsilon=0.0, dt=0.01, substeps=1000)
        states, _ = simulate_lorenz(c, 10, seed=0)
        ref = solve_ivp(lambda t, x: lorenz_drift(x, c), (0.0, 0.1), c.x0, t_eval=np.linspace(0.0, 0.1, 11), rtol=1e-11, atol=1e-11)
        np.testing.assert_allclose(states, ref.y.T, atol=1e-3)

    def test_coarse_deterministic_rollout_stays_finite(self):
        c = LorenzConfig(eta=0.0, epsilon=0.0, dt=0.01, substeps=1)
        states, _ = simulate_lorenz(c, 1000, seed=0)
        energy = np.sum(states**2, axis=1)
        assert np.all(np.isfinite(energy)) and energy.max() < 1e4

    def test_noise_free_state_is_seed_independent(self):
        c = LorenzConfig(eta=0.0, dt=0.05, substeps=10)
        a, ya = simulate_lorenz(c, 30, seed=1)
        b, yb = simulate_lorenz(c, 30, seed=2)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(ya, yb)

    def test_measurement_noise_scale(self):
        c = LorenzConfig(dt=0.05, substeps=5)
        states, ys = simulate_lorenz(c, 2000, seed=3)
        resid = ys[:, 0] - states[1:, 0]
        assert abs(resid.std() - c.epsilon) < 5 * c.epsilon / math.sqrt(2 * 2000)

    def test_attractor_statistics(self):
        states, _ = simulate_lorenz(LorenzConfig(), 500, seed=4)
        assert 7.0 < states[:, 0].std() < 10.0

    def test_divergence_is_typed(self):
        c = LorenzConfig(eta=0.0, dt=10.0, substeps=1)
        with pytest.raises(DivergenceError) as info:
            simulate_lorenz(c, 50, seed=0)
        assert info.value.step is not None

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LorenzConfig(dt=0.0)


class TestCanonicalForm:
    def test_scalar(self):
        A, B = controllable_canonical([0.5])
        np.testing.assert_array_equal(A, [[0.5]])
        np.testing.assert_array_equal(B, [[1.0]])

    @pytest.mark.parametrize("eigs", [(0.9, 0.7, 0.5, 0.3, 0.1), (1.0, -1.0, 0.1, -0.1)])
    def test_spectrum(self, eigs):
        A, B = controllable_canonical(eigs)
        np.testing.assert_allclose(np.sort(np.linalg.eigvals(A).real), np.sort(eigs), atol=1e-10)
        ctrb = np.hstack([np.linalg.matrix_power(A, k) @ B for k in range(len(eigs))])
        assert np.linalg.matrix_rank(ctrb) == len(eigs)

    def test_regulation_system_is_marginal(self):
        A, _ = controllable_canonical(lti_regulation_spec().eigenvalues)
        np.testing.assert_allclose(np.max(np.abs(np.linalg.eigvals(A))), 1.0, atol=1e-10)


class TestDare:
    def test_already_optimal(self):
        P, K = dare_gain([[0.0]], [[1.0]])
        np.testing.assert_allclose(P, [[1.0]])
        np.testing.assert_allclose(K, [[0.0]])

    def test_scalar_golden_ratio(self):
        P, K = dare_gain([[1.0]], [[1.0]])
        phi = (1 + math.sqrt(5)) / 2
        np.testing.assert_allclose(P, [[phi]], rtol=1e-10)
        np.testing.assert_allclose(K, [[phi / (1 + phi)]], rtol=1e-10)

    def test_against_scipy(self):
        A, B = controllable_canonical(lti_regulation_spec().eigenvalues)
        P, K = dare_gain(A, B)
        ref = scipy.linalg.solve_discrete_are(A, B, np.eye(4), np.eye(1))
        np.testing.assert_allclose(P, ref, rtol=1e-8, atol=1e-10)
        assert np.max(np.abs(np.linalg.eigvals(A - B @ K))) < 1.0

    def test_non_convergence(self):
        # uncontrollable unstable mode: P grows without bound
        with pytest.raises(NumericalError):
            dare_gain([[2.0]], [[0.0]], max_iter=200)


class TestWienerSystems:
    def test_structure(self):
        spec = wiener_estimation_spec()
        model = make_wiener_system(spec, seed=0)
        assert (model.n_x, model.n_u, model.n_y) == (5, 1, 3)
        A, B = wiener_matrices(model)
        np.testing.assert_allclose(np.sort(np.linalg.eigvals(A).real), np.sort(spec.eigenvalues), atol=1e-10)
        np.testing.assert_array_equal(B[:, 0], [0, 0, 0, 0, 1])
        assert model.H.depth == 2 and model.H.input_dim == 6

    def test_seeded(self):
        spec = wiener_estimation_spec()
        assert system_to_dict(make_wiener_system(spec, 3)) == system_to_dict(make_wiener_system(spec, 3))
        assert system_to_dict(make_wiener_system(spec, 3)) != system_to_dict(make_wiener_system(spec, 4))

    def test_observation_bounded(self):
        model = make_wiener_system(lti_regulation_spec(), seed=1)
        x = 50 * np.random.default_rng(0).standard_normal((1000, 5))
        y = model.H(x)
        assert np.all(np.isfinite(y)) and np.all((y >= 0.0) & (y <= 1.0))

    def test_inputs(self):
        u = wiener_estimation_spec().inputs(4)
        np.testing.assert_allclose(u[:, 0], np.sin(0.2 * np.arange(1, 5)))


class TestSimulateModel:
    def test_deterministic_rollout(self):
        model = make_wiener_system(wiener_estimation_spec(), seed=0)
        quiet = DynamicModel(model.F, model.H, np.zeros((5, 5)), np.zeros((3, 3)), model.init)
        u = wiener_estimation_spec().inputs(30)
        states, ys = simulate_model(quiet, u, 30, seed=0)
        A, B = wiener_matrices(model)
        x = np.zeros(5)
        for t in range(30):
            x = A @ x + B @ u[t]
            np.testing.assert_allclose(states[t + 1], x, atol=1e-12)
            np.testing.assert_allclose(ys[t], model.H(np.r_[x, u[t]]), atol=1e-12)

    def test_stable_system_stays_bounded(self):
        spec = wiener_estimation_spec()
        states, _ = simulate_model(make_wiener_system(spec, 0), spec.inputs(3000), 3000, seed=0)
        assert np.max(np.abs(states)) < 100.0

    def test_reproducible(self):
        spec = wiener_estimation_spec()
        m = make_wiener_system(spec, 0)
        a = simulate_model(m, spec.inputs(50), 50, seed=5)
        b = simulate_model(m, spec.inputs(50), 50, seed=5)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])


class TestClosedLoop:
    def test_perfect_observation_matches_state_feedback(self):
        A, B = controllable_canonical((1.0, -1.0, 0.1, -0.1))
        F = affine_network(np.hstack([A, B]), activation="probit")
        H = affine_network(np.hstack([np.eye(4), np.zeros((4, 1))]), activation="probit")
        model = DynamicModel(F, H, 1e-2 * np.eye(4), 1e-12 * np.eye(4), Gaussian(np.zeros(4), np.zeros((4, 4))))
        _, K = dare_gain(A, B)
        res = closed_loop_run(model, K, PropagatorSpec("linearized"), 2000, seed=0)
        assert res.status == "ok"
        np.testing.assert_allclose(res.ratio, 1.0, atol=1e-3)

    def test_no_update_filter_loses_control(self):
        spec = lti_regulation_spec()
        model = make_wiener_system(spec, seed=0)
        _, K = dare_gain(*wiener_matrices(model))
        res = closed_loop_run(model, K, PropagatorSpec("mean-field"), 2000, seed=0)
        assert res.ratio > 10.0

    def test_baseline_shares_noise(self):
        spec = lti_regulation_spec()
        model = make_wiener_system(spec, seed=0)
        _, K = dare_gain(*wiener_matrices(model))
        a = closed_loop_run(model, K, PropagatorSpec("linearized"), 50, seed=2)
        b = closed_loop_run(model, K, PropagatorSpec("mean-field"), 50, seed=2)
        assert a.baseline_total_cost == b.baseline_total_cost

    def test_record(self):
        spec = lti_regulation_spec()
        model = make_wiener_system(spec, seed=0)
        _, K = dare_gain(*wiener_matrices(model))
        res = closed_loop_run(model, K, PropagatorSpec("analytic"), 20, seed=0, keep_record=True)
        assert res.record.T == 20 and res.record.tasks == ("prediction", "filtering")


class TestNetworkTruth:
    def test_linear_limit(self):
        model = make_network_truth_system(nonlinearity=0.0, damping=0.6, seed=2)
        x = np.random.default_rng(0).standard_normal((10, 2))
        np.testing.assert_allclose(model.F(x), 0.6 * x, atol=1e-14)

    @pytest.mark.parametrize("activation", ["sine", "probit"])
    def test_contraction(self, activation):
        model = make_network_truth_system(nonlinearity=0.25, damping=0.7, seed=3, activation=activation)
        for x in np.random.default_rng(1).standard_normal((20, 2)) * 3:
            assert np.linalg.norm(network_jacobian(x, model.F), 2) < 0.95 + 1e-12

    def test_structure(self):
        model = make_network_truth_system(n_x=3, n_y=2, width=5, seed=0)
        assert (model.n_x, model.n_u, model.n_y) == (3, 0, 2)
        assert model.F.depth == 2
