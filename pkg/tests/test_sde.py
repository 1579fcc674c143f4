"""Integrator tests: noise statistics, determinism, convergence, divergence."""

import math

import numpy as np
import pytest

from srclock import SystemParams, initial_state
from srclock.cumulant import CumulantState, DivergenceError
from srclock.sde import (DEFAULT_DT, TrajectoryRecord, run_ensemble,
                         run_trajectory, step, wiener_increments)


class TestWienerIncrements:
    def test_moments(self):
        dt = 1e-9
        m = 10_000
        dws = wiener_increments(m, dt, seed=123)
        assert abs(dws.mean()) < 4.0 * math.sqrt(dt / m)
        assert dws.var() == pytest.approx(dt, rel=0.10)

    def test_streams_differ(self):
        a = wiener_increments(100, 1e-9, seed=1, stream=0)
        b = wiener_increments(100, 1e-9, seed=1, stream=1)
        assert not np.allclose(a, b)

    def test_reproducible(self):
        a = wiener_increments(100, 1e-9, seed=7, stream=3)
        b = wiener_increments(100, 1e-9, seed=7, stream=3)
        assert np.array_equal(a, b)


class TestStep:
    def test_ground_is_fixed_point(self):
        params = SystemParams(pump_rate=0.0, detection_efficiency=0.0)
        s = initial_state("ground")
        s2 = step(s, params, t=0.0, dt=1e-9, dW=0.0)
        assert s2.as_array().tolist() == s.as_array().tolist()

    def test_deterministic_when_xi_zero(self):
        params = SystemParams(detection_efficiency=0.0)
        s = initial_state("product", s22=0.3, s12=0.2)
        out1 = step(s, params, 0.0, 1e-9, dW=+5e-5)
        out2 = step(s, params, 0.0, 1e-9, dW=-5e-5)
        assert np.array_equal(out1.as_array(), out2.as_array())

    def test_noise_enters_when_xi_positive(self):
        params = SystemParams()
        s = CumulantState(ada=1.0, s22=0.5, s21s12=0.1, s22s22=0.25)
        out1 = step(s, params, 0.0, 1e-9, dW=+5e-5)
        out2 = step(s, params, 0.0, 1e-9, dW=-5e-5)
        assert not np.array_equal(out1.as_array(), out2.as_array())

    def test_divergence_aborts(self):
        params = SystemParams(n_atoms=10)
        s = CumulantState(a=1e8)
        with pytest.raises(DivergenceError):
            step(s, params, 0.0, 1e-9, 0.0)

    def test_guards(self):
        params = SystemParams()
        with pytest.raises(ValueError):
            step(initial_state("ground"), params, 0.0, -1e-9, 0.0)
        with pytest.raises(ValueError):
            step(initial_state("ground"), params, 0.0, 1e-9, float("inf"))


class TestRunTrajectory:
    def test_bit_exact_reproducibility(self, lab_params):
        a = run_trajectory(lab_params, t_end=5e-6, seed=42, record_every=10)
        b = run_trajectory(lab_params, t_end=5e-6, seed=42, record_every=10)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.dWs, b.dWs)
        assert np.array_equal(a.field_amp, b.field_amp)

    def test_record_layout(self, lab_params):
        rec = run_trajectory(lab_params, t_end=2e-6, seed=1)
        assert len(rec.states) == len(rec.times)
        assert len(rec.dWs) == len(rec.times) - 1
        dt = np.diff(rec.times)
        assert np.allclose(dt, dt[0])
        assert dt[0] == pytest.approx(DEFAULT_DT)

    def test_dt_must_resolve_fastest_rate(self, lab_params):
        with pytest.raises(ValueError, match="resolve"):
            run_trajectory(lab_params, t_end=1e-5, dt=1e-7)

    def test_superradiant_pulse_window(self, lab_params):
        # deterministic pulse peaks 20-60 us after the pump starts
        rec = run_trajectory(lab_params.with_(detection_efficiency=0.0),
                             t_end=1.2e-4, record_every=20)
        photon = rec.moment("ada").real
        t_pk = rec.times[int(np.argmax(photon))]
        assert 20e-6 < t_pk < 60e-6

    def test_divergence_reports_moment_and_time(self):
        params = SystemParams(n_atoms=4)
        bad = CumulantState(a=3.9e6)     # just below the 1e6*N abort level
        with pytest.raises(DivergenceError) as err:
            run_trajectory(params, t_end=1e-7, initial=bad)
        assert err.value.time > 0
        assert err.value.moment in ("a", "aa", "ada")


class TestRunEnsemble:
    def test_single_trajectory_equals_run_trajectory(self, lab_params):
        ens = run_ensemble(lab_params, t_end=5e-6, n_traj=1, base_seed=9,
                           record_every=10, keep_trajectories=True)
        rec = run_trajectory(lab_params, t_end=5e-6, seed=9, stream=0,
                             record_every=10)
        assert np.array_equal(ens.mean, rec.states)
        assert np.array_equal(ens.trajectories[0].states, rec.states)
        assert ens.se_real.max() == 0.0

    def test_requires_positive_count(self, lab_params):
        with pytest.raises(ValueError):
            run_ensemble(lab_params, n_traj=0)

    def test_field_means_consistent_with_zero(self, lab_params):
        ens = run_ensemble(lab_params, t_end=8e-5, n_traj=40, base_seed=21,
                           record_every=100)
        a_mean = ens.moment_mean("a")
        ok_re = np.abs(a_mean.real) <= 3.0 * ens.se_real[:, 0]
        ok_im = np.abs(a_mean.imag) <= 3.0 * ens.se_imag[:, 0]
        assert ok_re.mean() > 0.9
        assert ok_im.mean() > 0.9


def test_martingale_mean_converges_like_inverse_sqrt(lab_params):
    # RMS distance of the ensemble mean from the noise-free run shrinks
    # roughly like 1/sqrt(M); ratio between M=50 and M=200 is about 2.
    # Measured before the pulse, where the mean is statistics-dominated
    # (during the pulse a closure-induced bias common to both M dominates).
    det = run_trajectory(lab_params.with_(detection_efficiency=0.0),
                         t_end=2.5e-5, record_every=100)
    ref = det.moment("ada").real
    out = {}
    for m, seed in ((50, 5), (200, 6)):
        ens = run_ensemble(lab_params, t_end=2.5e-5, n_traj=m, base_seed=seed,
                           record_every=100)
        out[m] = math.sqrt(np.mean((ens.moment_mean("ada").real - ref) ** 2))
    ratio = out[50] / out[200]
    assert 1.0 <= ratio <= 3.0


def test_step_halving_changes_peak_time_below_half_percent(lab_params):
    params = lab_params.with_(detection_efficiency=0.0)
    peaks = []
    for dt in (DEFAULT_DT, DEFAULT_DT / 2.0):
        rec = run_trajectory(params, t_end=1.2e-4, dt=dt, record_every=1)
        photon = rec.moment("ada").real
        peaks.append(rec.times[int(np.argmax(photon))])
    assert abs(peaks[1] - peaks[0]) / peaks[1] < 0.005
