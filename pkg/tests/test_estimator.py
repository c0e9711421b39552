import math

import numpy as np
import pytest

from advisor import driver as drv
from advisor import estimator as est
from advisor.errors import AllWeightsVanished, SingularInnovation

from conftest import random_stable_params


def arx_reference(p, phi, omega, xi3):
    """Independent direct recursion of the generalized model (the oracle):
    delta(k) = sum a_i delta(k-i) + sum b_i phi(k-i) + ... with zero initial
    conditions and zero pre-window inputs."""
    n = len(phi)
    na, nb, nc, nd = p.orders
    delta = np.zeros(n)
    for k in range(n):
        acc = 0.0
        for i in range(1, na + 1):
            if k - i >= 0:
                acc += p.a[i - 1] * delta[k - i]
        for i in range(nb + 1):
            if k - i >= 0:
                acc += p.b[i] * phi[k - i]
        for i in range(nc + 1):
            if k - i >= 0:
                acc += p.c[i] * omega[k - i]
        for i in range(nd + 1):
            if k - i >= 0:
                acc += p.d[i] * xi3[k - i]
        delta[k] = acc
    return delta


def random_state_path(rng, n, params):
    """Random smooth (xi1, xi2, xi3) path and its visual angles."""
    t = np.arange(n) * params.ts
    xi1 = rng.uniform(5.0, 45.0) + 2.0 * np.sin(2 * np.pi * t / rng.uniform(5, 12))
    xi2 = 1.5 * np.sin(2 * np.pi * t / rng.uniform(3, 9) + rng.uniform(0, 6))
    xi3 = 0.8 * np.sin(2 * np.pi * t / rng.uniform(2, 7) + rng.uniform(0, 6))
    phi = np.arctan(xi3 / xi1) + np.arctan(xi2 / params.near_dist)
    omega = np.arctan(xi3 / xi1) + np.arctan(xi2 / params.far_dist)
    return xi1, xi2, xi3, phi, omega


def run_realization(p, params, xi1, xi2, xi3):
    """Augmented-state recursion via g_functions/predicted_steering."""
    n = len(xi1)
    state = np.zeros(7)
    out = np.zeros(n)
    for k in range(n):
        state[0], state[1], state[2] = xi1[k], xi2[k], xi3[k]
        out[k] = est.predicted_steering(state, p, params)
        state[4], state[5], state[6] = est.g_functions(state, p, params)
    return out


class TestRealization:
    def test_equivalence_random_coefficients(self, params):
        rng = np.random.default_rng(2024)
        for _ in range(20):
            p = random_stable_params(rng)
            xi1, xi2, xi3, phi, omega = random_state_path(rng, 200, params)
            direct = arx_reference(p, phi, omega, xi3)
            realized = run_realization(p, params, xi1, xi2, xi3)
            assert np.max(np.abs(direct - realized)) < 1e-10

    def test_g_functions_zero_state(self, params, synth):
        state = np.array([15.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        assert est.g_functions(state, synth, params) == (0.0, 0.0, 0.0)

    def test_g_functions_unit_state_passthrough(self, params, synth):
        state = np.array([15.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0])
        g1, g2, g3 = est.g_functions(state, synth, params)
        assert (g1, g2, g3) == (0.0, 1.0, 0.0)

    def test_g_functions_scalar_oracle(self, params):
        p = drv.reference_fit()
        a1, a2 = p.a
        b0, b1, b2, b3 = p.b
        c0 = p.c[0]
        d0, d1 = p.d
        state = np.array([15.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.02])
        phi = math.atan(0.5 / 6.2)
        omega = math.atan(0.5 / 20.0)
        g1, g2, g3 = est.g_functions(state, p, params)
        assert g1 == pytest.approx(b3 * phi, rel=1e-12)
        assert g2 == pytest.approx(
            (b2 + a2 * b0) * phi + a2 * c0 * omega + a2 * 0.02, rel=1e-12
        )
        assert g3 == pytest.approx(
            (b1 + a1 * b0) * phi + a1 * c0 * omega + a1 * 0.02, rel=1e-12
        )

    def test_g_rejects_nonpositive_speed(self, params, synth):
        state = np.zeros(7)
        with pytest.raises(ValueError):
            est.g_functions(state, synth, params)

    def test_orders_validated(self, params):
        bad = drv.GeneralizedSteeringParams(a=(0.5,), b=(1.0,), c=(0.0,), d=(0.0,))
        state = np.array([15.0, 0, 0, 0, 0, 0, 0])
        with pytest.raises(ValueError):
            est.g_functions(state, bad, params)


class TestPredictedSteering:
    def test_internal_state_passthrough(self, params, synth):
        state = np.array([15.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.01])
        assert est.predicted_steering(state, synth, params) == pytest.approx(0.01)

    def test_zero_state(self, params, synth):
        state = np.array([15.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        assert est.predicted_steering(state, synth, params) == 0.0


def fd_jacobian(fun, state, h=1e-6):
    n = state.size
    probe = fun(state)
    jac = np.zeros((probe.size, n))
    for j in range(n):
        hj = h * max(1.0, abs(state[j]))
        plus, minus = state.copy(), state.copy()
        plus[j] += hj
        minus[j] -= hj
        jac[:, j] = (fun(plus) - fun(minus)) / (2.0 * hj)
    return jac


def random_augmented_state(rng):
    state = np.empty(7)
    state[0] = rng.uniform(5.0, 45.0)
    state[1] = rng.uniform(-2.0, 2.0)
    state[2] = rng.uniform(-1.5, 1.5)
    state[3] = rng.uniform(-2.0, 2.0)
    state[4:] = rng.uniform(-0.3, 0.3, size=3)
    return state


class TestJacobians:
    def test_upper_left_block_both_modes(self, params, synth):
        state = random_augmented_state(np.random.default_rng(0))
        for mode in ("paper", "exact"):
            a = est.state_jacobian(state, synth, params, mode)
            expected = np.zeros((4, 7))
            expected[0, 0] = 1.0
            expected[1, 1], expected[1, 2] = 1.0, params.ts
            expected[2, 2] = 1.0
            expected[3, 3] = 1.0
            np.testing.assert_array_equal(a[:4], expected)

    def test_exact_state_jacobian_vs_fd(self, params, synth):
        rng = np.random.default_rng(11)
        u = np.zeros(2)
        for _ in range(25):
            state = random_augmented_state(rng)
            a = est.state_jacobian(state, synth, params, "exact")
            ref = fd_jacobian(lambda s: est.f_augmented(s, u, synth, params), state)
            err = np.linalg.norm(a - ref) / np.linalg.norm(ref)
            assert err < 1e-6

    def test_exact_measurement_jacobian_vs_fd(self, params, synth):
        rng = np.random.default_rng(12)
        for _ in range(25):
            state = random_augmented_state(rng)
            c = est.measurement_jacobian(state, synth, params, "exact")
            ref = fd_jacobian(lambda s: est.h_augmented(s, synth, params), state)
            err = np.linalg.norm(c - ref) / np.linalg.norm(ref)
            assert err < 1e-6

    def test_measurement_rows_fixed_structure(self, params, synth):
        state = random_augmented_state(np.random.default_rng(1))
        for mode in ("paper", "exact"):
            c = est.measurement_jacobian(state, synth, params, mode)
            np.testing.assert_array_equal(c[0], [1, 0, 0, 0, 0, 0, 0])
            np.testing.assert_array_equal(c[1], [0, 1, 0, 1, 0, 0, 0])
            assert c[2, 6] == 1.0

    def test_paper_vs_exact_at_centered_state(self, params, synth):
        """At xi2 = xi3 = 0 the modes agree on the angle rows except the
        reference-form far-point term of row 6 (over near instead of far)."""
        a1, a2 = synth.a
        c0 = synth.c[0]
        state = np.array([15.0, 0.0, 0.0, 0.0, 0.1, -0.05, 0.02])
        ap = est.state_jacobian(state, synth, params, "paper")
        ax = est.state_jacobian(state, synth, params, "exact")
        np.testing.assert_allclose(ap[4], ax[4], atol=1e-14)
        np.testing.assert_allclose(ap[6], ax[6], atol=1e-14)
        np.testing.assert_allclose(ap[5, 2:], ax[5, 2:], atol=1e-14)
        discrepancy = a2 * c0 / params.near_dist - a2 * c0 / params.far_dist
        assert ap[5, 1] - ax[5, 1] == pytest.approx(discrepancy, rel=1e-12)
        cp = est.measurement_jacobian(state, synth, params, "paper")
        cx = est.measurement_jacobian(state, synth, params, "exact")
        np.testing.assert_allclose(cp, cx, atol=1e-14)


def make_component(rng=None, weight=1.0):
    rng = rng or np.random.default_rng(0)
    mean = random_augmented_state(rng)
    root = rng.normal(size=(7, 7)) * 0.1
    cov = root @ root.T + 0.05 * np.eye(7)
    return est.GaussianComponent(mean, cov, weight)


class TestPropagate:
    def test_zero_everything(self, params, synth):
        noise = est.NoiseConfig(Q=np.zeros((7, 7)))
        comp = est.GaussianComponent(
            np.array([15.0, 0, 0, 0, 0, 0, 0]), np.zeros((7, 7)), 1.0
        )
        out = est.propagate(comp, np.zeros(2), synth, params, noise)
        np.testing.assert_allclose(out.mean[1:], np.zeros(6), atol=1e-15)
        np.testing.assert_allclose(out.cov, np.zeros((7, 7)), atol=1e-15)

    def test_trace_monotone_in_q(self, params, synth):
        comp = make_component(np.random.default_rng(5))
        u = np.array([0.1, -0.2])
        out0 = est.propagate(comp, u, synth, params, est.NoiseConfig(Q=np.zeros((7, 7))))
        out1 = est.propagate(comp, u, synth, params, est.NoiseConfig())
        assert np.trace(out1.cov) > np.trace(out0.cov)

    def test_bias_mean_invariant_under_input(self, params, synth):
        comp = make_component(np.random.default_rng(6))
        for u in (np.zeros(2), np.array([3.0, -2.0]), np.array([-1.0, 5.0])):
            out = est.propagate(comp, u, synth, params, est.NoiseConfig())
            assert out.mean[3] == comp.mean[3]


class TestUpdate:
    def test_zero_residual_keeps_mean_contracts_cov(self, params, synth):
        comp = make_component(np.random.default_rng(7))
        z = est.h_augmented(comp.mean, synth, params)
        meas = est.Measurement(*z)
        out, residual, rho = est.update(comp, meas, synth, params, est.NoiseConfig())
        np.testing.assert_allclose(residual, np.zeros(3), atol=1e-14)
        np.testing.assert_allclose(out.mean, comp.mean, atol=1e-12)
        assert np.trace(out.cov) < np.trace(comp.cov)

    def test_uninformative_sensor_is_noop(self, params, synth):
        comp = make_component(np.random.default_rng(8))
        meas = est.Measurement(comp.mean[0] + 1.0, comp.mean[1], 0.3)
        noise = est.NoiseConfig(R=np.eye(3) * 1e12)
        out, _, _ = est.update(comp, meas, synth, params, noise)
        np.testing.assert_allclose(out.mean, comp.mean, atol=1e-6)
        np.testing.assert_allclose(out.cov, comp.cov, atol=1e-6 * np.trace(comp.cov))

    def test_scalar_reduction_matches_hand_kalman(self, params, synth):
        comp = make_component(np.random.default_rng(9))
        sigma = comp.cov[0, 0]
        r = 0.25
        noise = est.NoiseConfig(R=np.diag([r, 1.0, 1.0]))
        meas = est.Measurement(comp.mean[0] + 0.7, 0.0, 0.0)
        out, residual, rho = est.update(
            comp, meas, synth, params, noise, channels=1
        )
        gain = sigma / (sigma + r)
        assert rho[0, 0] == pytest.approx(sigma + r, rel=1e-12)
        assert out.mean[0] - comp.mean[0] == pytest.approx(gain * 0.7, rel=1e-10)

    def test_singular_innovation(self, params, synth):
        comp = est.GaussianComponent(
            np.array([15.0, 0, 0, 0, 0, 0, 0]), np.zeros((7, 7)), 1.0
        )
        noise = est.NoiseConfig(R=np.zeros((3, 3)))
        with pytest.raises(SingularInnovation):
            est.update(comp, est.Measurement(15.0, 0.0, 0.0), synth, params, noise)


class TestWeights:
    def test_symmetric_components_keep_weights(self):
        comps = [make_component(weight=0.5), make_component(weight=0.5)]
        residual = np.array([0.1, -0.2, 0.05])
        rho = np.diag([0.5, 0.3, 0.1])
        w = est.update_weights(comps, [residual, residual], [rho, rho])
        np.testing.assert_allclose(w, [0.5, 0.5])

    def test_likelihood_dominance(self):
        comps = [make_component(weight=0.5), make_component(weight=0.5)]
        rho = np.diag([0.01, 0.01, 0.01])
        w = est.update_weights(
            comps, [np.zeros(3), np.full(3, 5.0)], [rho, rho]
        )
        assert w[0] > 1.0 - 1e-9
        assert w[0] + w[1] == pytest.approx(1.0)

    def test_hand_computed_density_ratio(self):
        comps = [make_component(weight=0.5), make_component(weight=0.5)]
        rho1 = np.diag([0.2, 0.4, 0.1])
        rho2 = np.diag([0.3, 0.2, 0.5])
        r1 = np.array([0.1, -0.1, 0.2])
        r2 = np.array([0.3, 0.1, -0.2])

        def density(r, rho):
            quad = r @ np.linalg.inv(rho) @ r
            return math.exp(-0.5 * quad) / math.sqrt(
                (2 * math.pi) ** 3 * np.linalg.det(rho)
            )

        w = est.update_weights(comps, [r1, r2], [rho1, rho2])
        l1, l2 = 0.5 * density(r1, rho1), 0.5 * density(r2, rho2)
        np.testing.assert_allclose(w, [l1 / (l1 + l2), l2 / (l1 + l2)], rtol=1e-12)

    def test_huge_residuals_keep_ratio_information(self):
        """Both densities underflow in absolute terms, yet the log-space
        normalization must still favor the closer component."""
        comps = [make_component(weight=0.5), make_component(weight=0.5)]
        rho = np.diag([1e-12, 1e-12, 1e-12])
        w = est.update_weights(
            comps, [np.full(3, 0.1), np.full(3, 0.100001)], [rho, rho]
        )
        assert w[0] + w[1] == pytest.approx(1.0)
        assert w[0] > w[1]

    def test_all_vanished_on_degenerate_components(self):
        comps = [make_component(weight=0.0), make_component(weight=0.0)]
        rho = np.eye(3)
        with pytest.raises(AllWeightsVanished):
            est.update_weights(comps, [np.zeros(3), np.zeros(3)], [rho, rho])


class TestAggregate:
    def test_degenerate_weight(self):
        c1, c2 = make_component(weight=1.0), make_component(weight=0.0)
        np.testing.assert_allclose(est.aggregate([c1, c2]), c1.mean)

    def test_opposite_means_cancel(self):
        mean = np.arange(7.0)
        c1 = est.GaussianComponent(mean, np.eye(7), 0.5)
        c2 = est.GaussianComponent(-mean, np.eye(7), 0.5)
        np.testing.assert_allclose(est.aggregate([c1, c2]), np.zeros(7))

    def test_weighted_arithmetic(self):
        m1, m2 = np.zeros(7), np.zeros(7)
        m2[1] = 1.8
        c1 = est.GaussianComponent(m1, np.eye(7), 0.25)
        c2 = est.GaussianComponent(m2, np.eye(7), 0.75)
        assert est.aggregate([c1, c2])[1] == pytest.approx(1.35)


class TestInitMixture:
    def test_two_hypothesis_benchmark_case(self):
        mix = est.init_mixture([0.0, -1.8], (15.0, -0.5, 0.0))
        np.testing.assert_allclose(mix.components[0].mean[:4], [15.0, -0.5, 0.0, 0.0])
        np.testing.assert_allclose(mix.components[1].mean[:4], [15.0, 1.3, 0.0, -1.8])
        np.testing.assert_allclose(mix.weights, [0.5, 0.5])
        np.testing.assert_allclose(
            np.diag(mix.components[0].cov)[:3], np.ones(3)
        )

    def test_single_hypothesis(self):
        mix = est.init_mixture([0.0], (15.0, -0.5, 0.0))
        assert mix.components[0].weight == 1.0

    def test_zero_offset_identical_components(self):
        mix = est.init_mixture([0.0, 0.0], (15.0, -0.5, 0.0))
        np.testing.assert_array_equal(mix.components[0].mean, mix.components[1].mean)

    def test_zeta_shared(self, params, synth):
        zeta = np.array([0.01, -0.02, 0.03])
        mix = est.init_mixture([0.0, -1.8], (15.0, -0.5, 0.0), zeta)
        np.testing.assert_array_equal(mix.components[0].mean[4:], zeta)
        np.testing.assert_array_equal(mix.components[1].mean[4:], zeta)

    def test_no_hypotheses_rejected(self):
        with pytest.raises(ValueError):
            est.init_mixture([], (15.0, -0.5, 0.0))


class TestStructuralRanks:
    def test_full_rank_with_human_channel(self, params, synth):
        assert est.observability_rank(synth, params, "with_human") == 7
        assert est.observability_rank(drv.reference_fit(), params, "with_human") == 7

    def test_rank_drops_without_human(self, params, synth):
        assert est.observability_rank(synth, params, "camera_speed_only") < 7

    def test_rank_drops_with_zero_visual_gains(self, params):
        p = drv.GeneralizedSteeringParams(
            a=(1.12, -0.31), b=(0.0, 0.0, 0.0, 0.0), c=(0.0,), d=(-0.048, 0.0395)
        )
        assert est.observability_rank(p, params, "with_human") < 7

    def test_bias_uncontrollable(self, params, synth):
        assert est.controllability_rank(synth, params) < 7


class TestFilterConsistency:
    def test_converges_on_exact_model_data(self, params, synth):
        """Zero-noise data generated by the augmented model itself: the filter
        residual norm must fall below 1e-6."""
        rng = np.random.default_rng(17)
        n = 300
        truth = np.array([15.0, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0])
        tiny = est.NoiseConfig(R=np.eye(3) * 1e-12, Q=np.eye(7) * 1e-12, nu_sigma=0.0)
        start = truth.copy()
        start[1] += 0.01
        start[2] -= 0.005
        comp = est.GaussianComponent(start, np.eye(7) * 1e-2, 1.0)
        resid_norm = None
        for k in range(n):
            u = np.array(
                [0.05 * math.sin(0.05 * k), 0.3 * math.sin(0.11 * k + 0.4)]
            )
            truth = est.f_augmented(truth, u, synth, params)
            z = est.h_augmented(truth, synth, params)
            comp = est.propagate(comp, u, synth, params, tiny)
            comp, residual, _ = est.update(
                comp, est.Measurement(*z), synth, params, tiny
            )
            resid_norm = np.linalg.norm(residual)
        assert resid_norm < 1e-6

    def test_weights_and_psd_maintained(self, params, synth):
        from advisor import scenario as scn

        cfg = scn.default_scenario(seed=2)
        log = scn.run_closed_loop(cfg)
        session = scn.EstimationSession(
            synth, cfg.vehicle, cfg.noise, cfg.hypotheses, backend="python"
        )
        for k in range(0, 200):
            session.feed(log.row(k))
            if session.ekf is not None:
                mix = session.ekf.mixture
                assert sum(mix.weights) == pytest.approx(1.0, abs=1e-12)
                for comp in mix.components:
                    np.testing.assert_allclose(comp.cov, comp.cov.T, atol=1e-10)
                    assert np.min(np.linalg.eigvalsh(comp.cov)) > -1e-10


class TestSeedInternalStates:
    def test_zero_lateral_gives_zero_zeta(self, params, synth):
        zeta = est.seed_internal_states([15.0, 15.0, 15.0], [0.0, 0.0, 0.0], synth, params)
        np.testing.assert_allclose(zeta, np.zeros(3))

    def test_matches_manual_recursion(self, params, synth):
        z1 = [15.0, 15.1, 14.9]
        z2 = [-0.5, -0.45, -0.48]
        zeta = est.seed_internal_states(z1, z2, synth, params)
        state = np.zeros(7)
        for k in range(3):
            xi3 = (z2[k] - z2[k - 1]) / params.ts if k >= 1 else 0.0
            state[0], state[1], state[2] = z1[k], z2[k], xi3
            state[4], state[5], state[6] = est.g_functions(state, synth, params)
        np.testing.assert_allclose(zeta, state[4:])
