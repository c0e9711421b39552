import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advisor import driver as drv
from advisor import scenario as scn
from advisor.analysis import r_squared, whiteness_test
from advisor.dynamics import VehicleParams
from advisor.errors import RankDeficient
from advisor.logs import TrajectoryLog

from conftest import random_stable_params


class TestVisualAngles:
    def test_centered(self, params):
        va = drv.visual_angles(15.0, 0.0, 0.0, params)
        assert (va.phi, va.omega) == (0.0, 0.0)

    def test_unit_ratio(self, params):
        va = drv.visual_angles(10.0, 6.2, 0.0, params)
        assert va.phi == pytest.approx(math.atan(1.0), rel=1e-12)
        assert va.omega == pytest.approx(math.atan(6.2 / 20.0), rel=1e-12)

    def test_independent_evaluation(self, params):
        va = drv.visual_angles(10.0, 2.0, 1.0, params)
        assert va.phi == pytest.approx(math.atan(0.1) + math.atan(2.0 / 6.2), rel=1e-12)
        assert va.omega == pytest.approx(math.atan(0.1) + math.atan(0.1), rel=1e-12)

    def test_rejects_nonpositive_speed(self, params):
        with pytest.raises(ValueError):
            drv.visual_angles(0.0, 1.0, 0.0, params)

    @settings(max_examples=60, deadline=None)
    @given(
        xi1=st.floats(1.0, 45.0),
        xi2=st.floats(-5.0, 5.0),
        xi3=st.floats(-5.0, 5.0),
    )
    def test_odd_symmetry(self, xi1, xi2, xi3):
        params = VehicleParams()
        pos = drv.visual_angles(xi1, xi2, xi3, params)
        neg = drv.visual_angles(xi1, -xi2, -xi3, params)
        assert neg.phi == pytest.approx(-pos.phi, abs=1e-14)
        assert neg.omega == pytest.approx(-pos.omega, abs=1e-14)


def _history_from(deltas, phis, omegas, xi3s):
    """Newest-first sequences -> populated history (angles lead by one)."""
    hist = drv.SteeringHistory(depth=8)
    for d, p, o, x in zip(reversed(deltas), reversed(phis), reversed(omegas), reversed(xi3s)):
        hist.observe(p, o, x)
        hist.record_steer(d)
    return hist


class TestTwoPointSteer:
    def test_pure_hold(self, params):
        hist = drv.SteeringHistory()
        hist.record_steer(0.1)
        hist.observe(0.0, 0.0, 0.0)
        gains = drv.TwoPointGains(kn=-0.2, kf=0.7, ki=0.087)
        assert drv.two_point_steer(hist, gains, params) == pytest.approx(0.1)

    def test_near_point_scalar_oracle(self, params):
        hist = drv.SteeringHistory()
        hist.observe(0.01, 0.0, 0.0)
        hist.record_steer(0.0)
        hist.observe(0.01, 0.0, 0.0)
        expected = -0.2 * 0.02 + 0.087 * 0.05 * 0.01
        out = drv.two_point_steer(hist, drv.REFERENCE_TWO_POINT, params)
        assert out == pytest.approx(expected, rel=1e-12)
        assert out == pytest.approx(-0.0039565, rel=1e-6)

    def test_far_point_scalar_oracle(self, params):
        hist = drv.SteeringHistory()
        hist.observe(0.0, 0.01, 0.0)
        hist.record_steer(0.0)
        hist.observe(0.0, 0.01, 0.0)
        out = drv.two_point_steer(hist, drv.REFERENCE_TWO_POINT, params)
        assert out == pytest.approx(0.7 * 0.02, rel=1e-12)


class TestGeneralizedSteer:
    def test_zero_regressors(self, synth):
        hist = drv.SteeringHistory()
        assert drv.generalized_steer(hist, synth) == 0.0

    def test_reference_autoregressive_values(self, params):
        p = drv.reference_fit()
        hist = drv.SteeringHistory()
        hist.record_steer(0.05)
        hist.observe(0.0, 0.0, 0.0)
        hist.record_steer(0.1)
        hist.observe(0.0, 0.0, 0.0)
        assert drv.generalized_steer(hist, p) == pytest.approx(
            1.47 * 0.1 + 0.51 * 0.05, rel=1e-12
        )

    def test_two_point_embedding_matches(self, params):
        gains = drv.TwoPointGains(kn=-0.13, kf=0.42, ki=0.06)
        embedded = drv.two_point_embedding(gains, params)
        rng = np.random.default_rng(7)
        hist_a = drv.SteeringHistory()
        hist_b = drv.SteeringHistory()
        for _ in range(50):
            phi, omega, xi3 = rng.normal(size=3) * 0.1
            hist_a.observe(phi, omega, xi3)
            hist_b.observe(phi, omega, xi3)
            da = drv.two_point_steer(hist_a, gains, params)
            db = drv.generalized_steer(hist_b, embedded)
            assert abs(da - db) < 1e-15
            hist_a.record_steer(da)
            hist_b.record_steer(db)

    def test_reference_fit_ar_instability_diagnostic(self):
        assert not drv.reference_fit().is_ar_stable()
        assert drv.synthetic_default().is_ar_stable()


def _open_loop_log(p_or_gains, params, n=400, seed=0, noise=0.0):
    """Drive a steering model open loop with smooth synthetic angle inputs and
    wrap the result in a TrajectoryLog whose truth columns reproduce them.

    Straight-track geometry: phi/omega/xi3 derive from (y, v, theta), so we
    synthesize (y, theta) paths and let log_signals recover the angles.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n) * params.ts

    def ou(scale, tau=0.3):
        alpha = math.exp(-params.ts / tau)
        out = np.zeros(n)
        for k in range(1, n):
            out[k] = alpha * out[k - 1] + scale * math.sqrt(1 - alpha**2) * rng.standard_normal()
        return out

    y = 0.8 * np.sin(2 * np.pi * t / 7.0) + 0.3 * np.sin(2 * np.pi * t / 2.3 + 1.0) + ou(0.15)
    theta = 0.02 * np.sin(2 * np.pi * t / 5.0 + 0.5) + 0.01 * np.sin(2 * np.pi * t / 1.7) + ou(0.006)
    v = np.full(n, 15.0) + 2.0 * np.sin(2 * np.pi * t / 9.0) + ou(0.5, tau=1.0)
    xd = v * np.cos(theta)
    yd = v * np.sin(theta)
    phi = np.arctan(yd / xd) + np.arctan(y / params.near_dist)
    omega = np.arctan(yd / xd) + np.arctan(y / params.far_dist)
    hist = drv.SteeringHistory()
    deltas = np.zeros(n)
    for k in range(n):
        hist.observe(phi[k], omega[k], yd[k])
        if isinstance(p_or_gains, drv.TwoPointGains):
            d = drv.two_point_steer(hist, p_or_gains, params)
        else:
            d = drv.generalized_steer(hist, p_or_gains)
        d += noise * rng.standard_normal()
        hist.record_steer(d)
        deltas[k] = d
    log = TrajectoryLog()
    for k in range(n):
        log.append(
            t=t[k], x=k * 0.75, y=y[k], v=v[k], theta=theta[k],
            delta=deltas[k], accel=0.0, xddot=0.0, yddot=0.0,
            z1=v[k], z2=y[k], z3=deltas[k],
        )
    return log


class TestFitTwoPoint:
    def test_noiseless_recovery(self, params):
        gains = drv.TwoPointGains(kn=-0.18, kf=0.31, ki=0.05)
        log = _open_loop_log(gains, params)
        report = drv.fit_two_point(log, params)
        assert abs(report.gains.kn - gains.kn) < 1e-8
        assert abs(report.gains.kf - gains.kf) < 1e-8
        assert abs(report.gains.ki - gains.ki) < 1e-8
        assert report.rmse < 1e-10

    def test_no_excitation_rank_deficient(self, params):
        log = TrajectoryLog()
        for k in range(100):
            log.append(
                t=k * params.ts, x=k * 0.75, y=0.0, v=15.0, theta=0.0,
                delta=0.0, accel=0.0, xddot=0.0, yddot=0.0, z1=15.0, z2=0.0, z3=0.0,
            )
        with pytest.raises(RankDeficient):
            drv.fit_two_point(log, params)

    def test_monte_carlo_recovery_within_3_sigma(self, params):
        gains = drv.REFERENCE_TWO_POINT
        log = _open_loop_log(gains, params, n=600, seed=5, noise=1e-4)
        report = drv.fit_two_point(log, params)
        # standard errors from the OLS covariance of the same regression
        phi, omega, xi3, delta = drv.log_signals(log, params)
        rows = np.arange(1, len(delta))
        x = np.column_stack(
            [phi[rows] + phi[rows - 1], omega[rows] + omega[rows - 1], params.ts * phi[rows]]
        )
        resid = report.residuals
        sigma2 = float(resid @ resid) / (len(rows) - 3)
        se = np.sqrt(np.diag(sigma2 * np.linalg.inv(x.T @ x)))
        fitted = np.array([report.gains.kn, report.gains.kf, report.gains.ki])
        true = np.array([gains.kn, gains.kf, gains.ki])
        assert np.all(np.abs(fitted - true) < 3.0 * se)

    def test_requires_50_samples(self, params):
        log = _open_loop_log(drv.REFERENCE_TWO_POINT, params, n=30)
        with pytest.raises(ValueError):
            drv.fit_two_point(log, params)


class TestFitGeneralized:
    def test_noiseless_recovery(self, params, synth):
        log = _open_loop_log(synth, params, n=500)
        report = drv.fit_generalized(log, (2, 3, 0, 1), params)
        np.testing.assert_allclose(report.params.flat(), synth.flat(), atol=1e-6)

    def test_noiseless_closed_loop_recovery(self, params, synth):
        cfg = scn.identification_scenario(seed=11, noise_sigma=0.0)
        log = scn.run_closed_loop(cfg)
        report = drv.fit_generalized(log, (2, 3, 0, 1), params, cfg.track)
        np.testing.assert_allclose(report.params.flat(), synth.flat(), atol=1e-6)

    @pytest.mark.parametrize("orders", [(2, 4, 1, 2), (3, 3, 0, 1)])
    def test_nesting_property(self, params, synth, orders):
        log = _open_loop_log(synth, params, n=600)
        report = drv.fit_generalized(log, orders, params)
        fitted = report.params
        na, nb, nc, nd = orders
        np.testing.assert_allclose(fitted.a[:2], synth.a, atol=1e-6)
        assert all(abs(v) < 1e-6 for v in fitted.a[2:na])
        assert all(abs(v) < 1e-6 for v in fitted.b[4 : nb + 1])
        assert all(abs(v) < 1e-6 for v in fitted.c[1 : nc + 1])
        assert all(abs(v) < 1e-6 for v in fitted.d[2 : nd + 1])

    def test_noiseless_full_extension_is_degenerate(self, params, synth):
        """Extending every lag channel at once completes a shifted copy of the
        model equation: an exact dependence among the regressors of noiseless
        data, which must be reported rather than solved arbitrarily."""
        log = _open_loop_log(synth, params, n=600)
        with pytest.raises(RankDeficient):
            drv.fit_generalized(log, (3, 4, 1, 2), params)

    def test_heldout_r2(self, params, synth):
        train_cfg = scn.identification_scenario(seed=21, noise_sigma=1e-3)
        val_cfg = scn.identification_scenario(seed=22, noise_sigma=1e-3)
        train = scn.run_closed_loop(train_cfg)
        val = scn.run_closed_loop(val_cfg)
        report = drv.fit_generalized(train, (2, 3, 0, 1), params, train_cfg.track)
        phi, omega, xi3, delta = drv.log_signals(val, params, val_cfg.track)
        pred, actual = drv.predict_generalized(report.params, phi, omega, xi3, delta)
        assert r_squared(pred, actual) > 0.9

    def test_sample_count_precondition(self, params, synth):
        log = _open_loop_log(synth, params, n=60)
        with pytest.raises(ValueError):
            drv.fit_generalized(log, (2, 3, 0, 1), params)

    def test_residual_whiteness_on_model_plus_noise(self, params, ident_log, ident_cfg):
        report = drv.fit_generalized(ident_log, (2, 3, 0, 1), params, ident_cfg.track)
        assert whiteness_test(report.residuals, max_lag=20).passed


class TestSelectOrder:
    def test_small_model_recovered(self, params):
        p = drv.GeneralizedSteeringParams(a=(0.8,), b=(0.4, -0.3), c=(0.2,), d=(0.1,))
        log = _open_loop_log(p, params, n=700, seed=9, noise=1e-4)
        assert drv.select_order(log, (3, 3, 2, 2), params) == (1, 1, 0, 0)

    def test_white_noise_target_minimal(self, params):
        rng = np.random.default_rng(13)
        log = _open_loop_log(drv.synthetic_default(), params, n=500, seed=14)
        noise = TrajectoryLog()
        for k in range(len(log)):
            row = log.row(k)
            row["delta"] = float(rng.standard_normal() * 1e-3)
            row["z3"] = row["delta"]
            noise.append(**row)
        assert drv.select_order(noise, (3, 3, 3, 3), params) == (0, 0, 0, 0)

    def test_rank_deficient_propagates(self, params):
        log = TrajectoryLog()
        for k in range(200):
            log.append(
                t=k * params.ts, x=k * 0.75, y=0.0, v=15.0, theta=0.0,
                delta=0.0, accel=0.0, xddot=0.0, yddot=0.0, z1=15.0, z2=0.0, z3=0.0,
            )
        with pytest.raises(RankDeficient):
            drv.select_order(log, (2, 2, 2, 2), params)

    def test_max_order_validation(self, params, ident_log):
        with pytest.raises(ValueError):
            drv.select_order(ident_log, (7, 3, 3, 3), params)


class TestFitReportIO:
    def test_generalized_round_trip(self, tmp_path, params, synth):
        log = _open_loop_log(synth, params, n=500)
        report = drv.fit_generalized(log, (2, 3, 0, 1), params)
        path = tmp_path / "fit.json"
        report.save(path)
        loaded = drv.load_fit(path)
        assert loaded.model == "generalized"
        np.testing.assert_allclose(loaded.params.flat(), report.params.flat())
        with open(path) as fh:
            d = json.load(fh)
        assert set(d) == {"model", "orders", "rmse", "r2", "coefficients"}

    def test_two_point_round_trip(self, tmp_path, params):
        log = _open_loop_log(drv.REFERENCE_TWO_POINT, params)
        report = drv.fit_two_point(log, params)
        path = tmp_path / "tp.json"
        report.save(path)
        loaded = drv.load_fit(path)
        assert loaded.model == "two_point"
        assert loaded.gains == report.gains


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_realization_free_equivalence(seed):
    """generalized_steer driven by its own outputs equals the history-based
    recursion for arbitrary coefficient draws."""
    rng = np.random.default_rng(seed)
    p = random_stable_params(rng)
    hist = drv.SteeringHistory()
    inputs = rng.normal(size=(40, 3)) * 0.2
    prev = []
    for phi, omega, xi3 in inputs:
        hist.observe(phi, omega, xi3)
        d = drv.generalized_steer(hist, p)
        hist.record_steer(d)
        prev.append(d)
    assert np.all(np.isfinite(prev))
