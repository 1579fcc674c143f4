"""Observable-mapping tests: ladder numbers, spin vector, pulse metrics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srclock import initial_state
from srclock.cumulant import CumulantState
from srclock.observables import (ClosureViolationWarning, ObservableRecord,
                                 dicke_numbers, observable_series,
                                 pulse_metrics, spin_vector)
from conftest import random_state_array


class TestDickeNumbers:
    def test_two_atom_ground(self):
        j, m = dicke_numbers(initial_state("ground"), 2)
        assert m == pytest.approx(-1.0)
        assert j == pytest.approx(math.sqrt(2.0))

    def test_two_atom_excited(self):
        j, m = dicke_numbers(initial_state("excited"), 2)
        assert m == pytest.approx(1.0)
        assert j == pytest.approx(math.sqrt(2.0))

    def test_single_atom(self):
        j, m = dicke_numbers(initial_state("ground"), 1)
        assert m == pytest.approx(-0.5)
        assert j == pytest.approx(math.sqrt(0.75))

    def test_small_negative_radicand_clamped_silently(self):
        # radicand slightly below zero: clamp without complaint
        n = 100
        state = CumulantState(s22=0.5, s21s12=-1e-11, s22s22=0.25 - 1e-11)
        j, _ = dicke_numbers(state, n)
        assert j == pytest.approx(math.sqrt(0.75 * n), rel=1e-3)

    def test_large_negative_radicand_warns(self):
        n = 1000
        state = CumulantState(s22=0.5, s21s12=-0.3, s22s22=0.0)
        with pytest.warns(ClosureViolationWarning):
            j, _ = dicke_numbers(state, n)
        assert j == 0.0


class TestSpinVector:
    def test_ground_south_pole(self):
        n = 50
        assert spin_vector(initial_state("ground"), n) == \
            pytest.approx((0.0, 0.0, -n / 2))

    def test_equator_x_axis(self):
        n = 8
        state = CumulantState(s12=0.5, s22=0.5)
        assert spin_vector(state, n) == pytest.approx((n / 2, 0.0, 0.0))

    def test_y_component_sign(self):
        # <s12> = -i/2 means the spin points along +y
        state = CumulantState(s12=-0.5j, s22=0.5)
        ax, ay, az = spin_vector(state, 4)
        assert (ax, ay, az) == pytest.approx((0.0, 2.0, 0.0))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 10**5))
    def test_az_equals_m_bar_identity(self, seed, n):
        rng = np.random.default_rng(seed)
        state = CumulantState.from_array(random_state_array(rng))
        _, az = spin_vector(state, n)[1:], spin_vector(state, n)[2]
        m_bar = dicke_numbers(state, n)[1]
        assert az == pytest.approx(m_bar, rel=1e-12, abs=1e-12)


class TestObservableRecord:
    def test_from_state_and_normalization(self):
        n = 200
        rec = ObservableRecord.from_state(initial_state("excited"), n, time=1.5)
        assert rec.m_bar == pytest.approx(n / 2)
        assert rec.m_bar_per_atom == pytest.approx(0.5)
        assert rec.a_z == rec.m_bar
        assert rec.spin_length == pytest.approx(n / 2)
        assert rec.time == 1.5

    def test_series_matches_scalar_path(self):
        states = np.stack([initial_state("ground").as_array(),
                           initial_state("excited").as_array(),
                           initial_state("product", s22=0.5, s12=0.5).as_array()])
        times = np.array([0.0, 1.0, 2.0])
        out = observable_series(states, times, 10)
        for i in range(3):
            rec = ObservableRecord.from_state(
                CumulantState.from_array(states[i]), 10, times[i])
            assert out["photon_number"][i] == pytest.approx(rec.photon_number)
            assert out["j_bar"][i] == pytest.approx(rec.j_bar)
            assert out["m_bar"][i] == pytest.approx(rec.m_bar)
            assert out["a_x"][i] == pytest.approx(rec.a_x)
            assert out["a_z"][i] == pytest.approx(rec.a_z)


def test_pulse_metrics_on_gaussian():
    t = np.linspace(0.0, 10.0, 2001)
    sigma = 0.7
    y = 3.0 * np.exp(-0.5 * ((t - 4.0) / sigma) ** 2)
    m = pulse_metrics(t, y)
    assert m["peak_time"] == pytest.approx(4.0, abs=0.01)
    assert m["peak_height"] == pytest.approx(3.0, rel=1e-3)
    assert m["fwhm"] == pytest.approx(2.3548 * sigma, rel=0.02)


def test_spin_inside_bloch_sphere_for_product_runs(lab_params):
    # deterministic product-state run keeps |A| <= N/2 (+ closure slack)
    from srclock.sde import run_trajectory
    params = lab_params.with_(detection_efficiency=0.0)
    rec = run_trajectory(params, t_end=1.2e-4, record_every=100)
    obs = observable_series(rec.states, rec.times, params.n_atoms)
    r = np.sqrt(obs["a_x"] ** 2 + obs["a_y"] ** 2 + obs["a_z"] ** 2)
    assert r.max() <= params.n_atoms / 2 + 1e-6 * params.n_atoms
