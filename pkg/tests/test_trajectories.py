import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmonitor.evolution import GeneratorVariant, TimeGrid, integrate
from qmonitor.models import EXCITED, GROUND, amplitude_damping_monitor, photodetector_mode, two_level_monitor
from qmonitor.trajectories import (
    CHUNK,
    derive_seed,
    ensemble_average,
    jump_size_stats,
    simulate_trajectory,
    weak_limit_sweep,
    zeno_survival,
)

PLUS = np.full((2, 2), 0.5, dtype=complex)


class TestSingleTrajectory:
    def test_same_seed_same_result(self):
        m = two_level_monitor(1.0, 0.3, 20.0)
        g = TimeGrid(0.0, 2.0, 0.1)
        a = simulate_trajectory(EXCITED, m, g, 7)
        b = simulate_trajectory(EXCITED, m, g, 7)
        assert np.array_equal(a.states, b.states)
        assert a.events == b.events

    def test_states_are_valid(self):
        m = two_level_monitor(1.0, 0.5, 10.0)
        t = simulate_trajectory(PLUS, m, TimeGrid(0.0, 3.0, 0.05), 3)
        for i in range(len(t.grid)):
            t.state(i)  # validates hermiticity, trace and positivity
        assert t.states.shape == (61, 2, 2)

    def test_zero_rate_is_unitary(self):
        m = two_level_monitor(1.0, 0.5, 0.0)
        g = TimeGrid(0.0, 2.0, 0.5)
        t = simulate_trajectory(EXCITED, m, g, 0)
        assert t.events == ()
        np.testing.assert_allclose(t.states[:, 1, 1].real, np.cos(g.times() / 2) ** 2, atol=1e-14)

    def test_photon_is_absorbed_once(self):
        m = photodetector_mode(4, 5.0)
        one = np.diag([0, 1, 0, 0]).astype(complex)
        t = simulate_trajectory(one, m, TimeGrid(0.0, 10.0, 1.0), 11)
        clicks = [e for e in t.events if e.outcome == "click"]
        assert len(clicks) == 1
        assert clicks[0].jump_size == pytest.approx(1.0)
        np.testing.assert_allclose(t.states[-1], np.diag([1, 0, 0, 0]), atol=1e-14)

    def test_projective_jumps_are_pure(self):
        m = two_level_monitor(0.0, 1.0, 5.0)
        t = simulate_trajectory(PLUS, m, TimeGrid(0.0, 2.0, 0.5), 1)
        assert t.events
        # |+x> to |e> or |g>: trace distance sqrt(1 - |<+|e>|^2) = 1/sqrt(2)
        assert t.events[0].jump_size == pytest.approx(math.sqrt(0.5), abs=1e-12)
        final = t.states[-1]
        assert np.trace(final @ final).real == pytest.approx(1.0)

    def test_jump_stats(self):
        m = two_level_monitor(1.0, 0.3, 20.0)
        t = simulate_trajectory(EXCITED, m, TimeGrid(0.0, 1.0, 0.1), 5)
        mx, mean = jump_size_stats(t)
        assert 0 <= mean <= mx <= 1
        empty = simulate_trajectory(EXCITED, two_level_monitor(1, 0.3, 0.0), TimeGrid(0, 1, 0.1), 5)
        assert jump_size_stats(empty) == (0.0, 0.0)


class TestEnsemble:
    def test_matches_master_equation(self):
        m = two_level_monitor(1.0, 0.4, 10.0)
        g = TimeGrid(0.0, 2.0, 0.1)
        res = ensemble_average(EXCITED, m, g, 2000, 99)
        me = integrate(EXCITED, m, GeneratorVariant.PREDICTIVE, TimeGrid(0.0, 2.0, 1e-3), stride=100)
        dev = np.abs(res.mean - me)
        assert np.all(dev <= 4 * res.stderr + 1e-12)

    def test_single_trajectory_ensemble(self):
        m = two_level_monitor(1.0, 0.3, 20.0)
        g = TimeGrid(0.0, 1.0, 0.1)
        res = ensemble_average(EXCITED, m, g, 1, 42)
        t = simulate_trajectory(EXCITED, m, g, derive_seed(42, 0))
        assert np.array_equal(res.mean, t.states)
        assert np.all(res.stderr == 0)

    def test_batch_independence(self):
        m = two_level_monitor(1.0, 0.3, 20.0)
        g = TimeGrid(0.0, 1.0, 0.1)
        n = CHUNK + 10
        full = ensemble_average(EXCITED, m, g, n, 5)
        manual = np.mean([simulate_trajectory(EXCITED, m, g, derive_seed(5, i)).states for i in range(n)], axis=0)
        np.testing.assert_allclose(full.mean, manual, atol=1e-14)

    def test_worker_count_irrelevant(self):
        m = two_level_monitor(1.0, 0.3, 20.0)
        g = TimeGrid(0.0, 1.0, 0.1)
        a = ensemble_average(EXCITED, m, g, 3 * CHUNK + 17, 8, workers=1)
        b = ensemble_average(EXCITED, m, g, 3 * CHUNK + 17, 8, workers=4)
        assert np.array_equal(a.mean, b.mean)
        assert np.array_equal(a.stderr, b.stderr)
        assert (a.n_events, a.mean_jump, a.max_jump) == (b.n_events, b.mean_jump, b.max_jump)

    def test_expectation(self):
        m = two_level_monitor(0.0, 0.3, 10.0)
        res = ensemble_average(EXCITED, m, TimeGrid(0.0, 1.0, 0.5), 50, 1)
        val, err = res.expectation(EXCITED)
        np.testing.assert_allclose(val, 1.0, atol=1e-12)  # sigma_z monitoring without drive keeps |e>

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            ensemble_average(EXCITED, two_level_monitor(1, 0.3, 1), TimeGrid(0, 1, 0.5), 0, 1)

    def test_amplitude_damping_monitor_decays(self):
        m = amplitude_damping_monitor(0.36, 2.0)
        res = ensemble_average(EXCITED, m, TimeGrid(0.0, 1.0, 0.25), 4000, 3)
        expected = np.exp(-2.0 * 0.36 * np.linspace(0, 1, 5))
        dev = np.abs(res.mean[:, 1, 1].real - expected)
        assert np.all(dev <= 4 * res.stderr[:, 1, 1] + 1e-12)


@settings(max_examples=15, deadline=None)
@given(master=st.integers(0, 2**32 - 1), n=st.integers(1, 40))
def test_ensemble_deterministic(master, n):
    m = two_level_monitor(1.0, 0.5, 5.0)
    g = TimeGrid(0.0, 1.0, 0.25)
    a = ensemble_average(PLUS, m, g, n, master)
    b = ensemble_average(PLUS, m, g, n, master)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.stderr, b.stderr)


def test_derive_seed_distinct():
    seeds = {derive_seed(1, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert derive_seed(1, 0) != derive_seed(2, 0)


def test_zeno_strong_measurement_freezes():
    s, se = zeno_survival(1.0, 1.0, 100.0, math.pi, 500, 17)
    assert s >= 0.9


def test_zeno_no_measurement_is_rabi():
    s, se = zeno_survival(1.0, 0.0, 20.0, math.pi, 50, 17)
    assert s == pytest.approx(0.0, abs=1e-12) and se == pytest.approx(0.0, abs=1e-12)


def test_weak_limit_small():
    sweep = weak_limit_sweep([0.4, 0.2, 0.1], 0.5, 2.0, 0.1, 300, 11)
    assert abs(sweep.slope - 1.0) <= 0.15
    assert [p.rate for p in sweep.points] == pytest.approx([6.25, 25.0, 100.0])
    assert sweep.reference[0] == 0.5
    np.testing.assert_allclose(sweep.reference, 0.5 * np.exp(-0.5 * sweep.times), atol=1e-9)
    for p in sweep.points:
        assert p.max_deviation_sigma <= 5.0


def test_identity_effects_never_jump():
    from qmonitor.evolution import MonitoringModel
    from qmonitor.models import SIGMA_X
    from qmonitor.operators import EffectSet

    g = TimeGrid(0.0, 2.0, 0.1)
    m = MonitoringModel(0.5 * SIGMA_X, EffectSet.from_operators([("1", np.eye(2))]), 10.0)
    t = simulate_trajectory(EXCITED, m, g, 4)
    ref = simulate_trajectory(EXCITED, two_level_monitor(1.0, 0.0, 0.0), g, 4)
    assert t.events and all(e.jump_size <= 1e-14 for e in t.events)
    np.testing.assert_allclose(t.states, ref.states, atol=1e-13)
    assert jump_size_stats(t)[0] <= 1e-14


def test_projective_on_eigenstate_does_not_jump():
    t = simulate_trajectory(EXCITED, two_level_monitor(0.0, 1.0, 10.0), TimeGrid(0.0, 1.0, 0.1), 2)
    assert t.events and jump_size_stats(t)[0] == 0.0


def test_cv_monitor_photon_number_follows_master_equation():
    from qmonitor.models import CvOutcomeGrid, coherent_ket, cv_monitor, number

    d = 6
    m = cv_monitor(CvOutcomeGrid(2.0, 0.5, d), 0.2, 25.0, omega=1.0)
    psi = coherent_ket(d, 1.0)
    rho0 = np.outer(psi, psi.conj())
    g = TimeGrid(0.0, 1.0, 0.25)
    res = ensemble_average(rho0, m, g, 400, 6)
    me = integrate(rho0, m, GeneratorVariant.PREDICTIVE, TimeGrid(0.0, 1.0, 1e-3), stride=250)
    n_op = number(d)
    val, err = res.expectation(n_op)
    ref = np.einsum("tab,ba->t", me, n_op).real
    assert np.all(np.abs(val - ref) <= 3 * err + 1e-12)
