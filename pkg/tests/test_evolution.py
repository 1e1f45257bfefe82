import math

import numpy as np
import pytest
from hypothesis import given, settings

from conftest import dims, random_density, random_unbiased_set, seeds
from qmonitor.errors import DimensionMismatch, InvalidOperator, NumericalGuardError
from qmonitor.evolution import (
    GeneratorVariant,
    LindbladModel,
    MonitoringModel,
    TimeGrid,
    check_step,
    generator_matrix,
    integrate,
    lindblad_rhs,
    monitoring_rhs,
    retro_rhs,
    rhs,
)
from qmonitor.models import EXCITED, GROUND, SIGMA_MINUS, SIGMA_X, decaying_atom, two_level_monitor
from qmonitor.operators import EffectSet

P = GeneratorVariant.PREDICTIVE
ADJ = GeneratorVariant.RETRO_ADJOINT
REV = GeneratorVariant.RETRO_REVERSED_ORDER


class TestRhsExamples:
    def test_decay_of_excited(self):
        np.testing.assert_allclose(lindblad_rhs(EXCITED, decaying_atom(0, 1.0)), GROUND - EXCITED, atol=1e-15)

    def test_identity_channel_is_static(self, rng):
        rho = random_density(rng, 2)
        model = MonitoringModel(np.zeros((2, 2)), EffectSet.from_operators([("1", np.eye(2))]), 3.0)
        np.testing.assert_allclose(monitoring_rhs(rho, model), 0, atol=1e-15)

    def test_adjoint_retro_keeps_identity(self):
        np.testing.assert_allclose(retro_rhs(np.eye(2), decaying_atom(0, 1.0), ADJ), 0, atol=1e-15)

    def test_reversed_order_retro_on_identity(self):
        # b^dag b - b b^dag = |e><e| - |g><g| for b = |g><e|
        np.testing.assert_allclose(retro_rhs(np.eye(2), decaying_atom(0, 1.0), REV),
                                   EXCITED - GROUND, atol=1e-15)

    @pytest.mark.parametrize("gamma", [0.3, 1.0, 2.5])
    def test_variant_difference(self, gamma, rng):
        pi = random_density(rng, 2)
        m = decaying_atom(0.7, gamma)
        comm = SIGMA_MINUS.conj().T @ SIGMA_MINUS - SIGMA_MINUS @ SIGMA_MINUS.conj().T
        expected = gamma * 0.5 * (comm @ pi + pi @ comm)
        np.testing.assert_allclose(retro_rhs(pi, m, REV) - retro_rhs(pi, m, ADJ), expected, atol=1e-14)

    def test_monitoring_retro_ignores_ordering_tag(self, rng):
        m = two_level_monitor(1.0, 0.4, 3.0)
        pi = random_density(rng, 2)
        np.testing.assert_array_equal(retro_rhs(pi, m, ADJ), retro_rhs(pi, m, REV))

    def test_retro_requires_retro_variant(self):
        with pytest.raises(ValueError):
            retro_rhs(np.eye(2), decaying_atom(0, 1), P)

    def test_dimension_checked(self):
        with pytest.raises(DimensionMismatch):
            lindblad_rhs(np.eye(3), decaying_atom(0, 1))


class TestModelValidation:
    def test_monitoring_requires_unbiased(self):
        s = EffectSet.from_operators([("a", SIGMA_MINUS)])
        with pytest.raises(Exception):
            MonitoringModel(np.zeros((2, 2)), s, 1.0)

    def test_negative_rate(self):
        with pytest.raises(InvalidOperator):
            LindbladModel(np.zeros((2, 2)), (SIGMA_MINUS,), -1.0)

    def test_non_hermitian_hamiltonian(self):
        with pytest.raises(InvalidOperator):
            LindbladModel(SIGMA_MINUS, (SIGMA_MINUS,), 1.0)


class TestGrid:
    def test_counts(self):
        g = TimeGrid(0.0, 5.0, 0.1)
        assert g.n_steps == 50 and len(g) == 51
        assert g.times()[-1] == 5.0

    def test_rejects_uneven(self):
        with pytest.raises(ValueError):
            TimeGrid(0.0, 1.0, 0.3)

    def test_rejects_backwards(self):
        with pytest.raises(ValueError):
            TimeGrid(1.0, 0.0, 0.1)


class TestGenerator:
    @pytest.mark.parametrize("variant", list(GeneratorVariant))
    def test_matches_rhs_lindblad(self, variant, rng):
        m = decaying_atom(1.3, 0.8)
        x = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        np.testing.assert_allclose(generator_matrix(m, variant) @ x.ravel(), rhs(x, m, variant).ravel(), atol=1e-13)

    @pytest.mark.parametrize("variant", list(GeneratorVariant))
    def test_matches_rhs_monitoring(self, variant, rng):
        s = random_unbiased_set(rng, 3, 3)
        h = random_density(rng, 3)
        m = MonitoringModel(h, s, 2.0)
        x = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        np.testing.assert_allclose(generator_matrix(m, variant) @ x.ravel(), rhs(x, m, variant).ravel(), atol=1e-13)

    def test_adjoint_is_hermitian_conjugate(self, rng):
        m = MonitoringModel(random_density(rng, 3), random_unbiased_set(rng, 3, 2), 1.5)
        np.testing.assert_allclose(generator_matrix(m, ADJ),
                                   generator_matrix(m, P).conj().T.reshape(3, 3, 3, 3)
                                   .transpose(1, 0, 3, 2).reshape(9, 9).conj(), atol=1e-13)


class TestIntegrate:
    @pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
    def test_spontaneous_decay(self, gamma):
        g = TimeGrid(0.0, 2.0, 1e-3)
        out = integrate(EXCITED, decaying_atom(0, gamma), P, g, stride=100)
        np.testing.assert_allclose(out[:, 1, 1].real, np.exp(-gamma * g.times()[::100]), atol=1e-9)

    def test_rabi(self):
        g = TimeGrid(0.0, 3.0, 1e-3)
        out = integrate(EXCITED, LindbladModel(0.5 * 1.2 * SIGMA_X, (), 0.0), P, g, stride=50)
        np.testing.assert_allclose(out[:, 1, 1].real, np.cos(0.6 * g.times()[::50]) ** 2, atol=1e-10)

    @pytest.mark.parametrize("eps", [0.2, 0.5, 0.9])
    def test_monitoring_coherence_decay(self, eps):
        rate = 4.0
        m = two_level_monitor(0.0, eps, rate)
        g = TimeGrid(0.0, 1.0, 1e-3)
        out = integrate(np.full((2, 2), 0.5, dtype=complex), m, P, g, stride=100)
        k = rate * (1 - math.sqrt(1 - eps ** 2))
        np.testing.assert_allclose(out[:, 0, 1].real, 0.5 * np.exp(-k * g.times()[::100]), atol=1e-9)

    def test_weak_decay_rate_close_to_quadratic(self):
        eps, rate = 0.1, 50.0
        m = two_level_monitor(0.0, eps, rate)
        out = integrate(np.full((2, 2), 0.5, dtype=complex), m, P, TimeGrid(0.0, 1.0, 1e-3))
        fitted = -math.log(2 * out[-1, 0, 1].real)
        assert abs(fitted - rate * eps ** 2 / 2) / (rate * eps ** 2 / 2) <= 0.01

    def test_identity_preserved_backwards(self):
        g = TimeGrid(0.0, 2.0, 1e-3)
        out = integrate(np.eye(2), decaying_atom(1.0, 1.0), ADJ, g)
        np.testing.assert_allclose(out, np.broadcast_to(np.eye(2), out.shape), atol=1e-12)

    def test_snapshot_order_backwards(self):
        g = TimeGrid(0.0, 1.0, 1e-2)
        out = integrate(EXCITED, decaying_atom(0, 1.0), ADJ, g)
        np.testing.assert_array_equal(out[0], EXCITED)

    def test_reverse_predictive_inverts(self):
        m = decaying_atom(0.5, 0.3)
        g = TimeGrid(0.0, 1.0, 1e-3)
        fwd = integrate(EXCITED, m, P, g)
        back = integrate(fwd[-1], m, P, g, reverse=True)
        np.testing.assert_allclose(back[-1], EXCITED, atol=1e-9)

    def test_step_guard(self):
        m = two_level_monitor(1.0, 0.5, 100.0)
        with pytest.raises(NumericalGuardError):
            check_step(m, 0.01)
        with pytest.raises(NumericalGuardError):
            integrate(EXCITED, m, P, TimeGrid(0, 1, 0.01))
        check_step(m, 0.0009)

    def test_stride_must_divide(self):
        with pytest.raises(ValueError):
            integrate(EXCITED, decaying_atom(0, 1), P, TimeGrid(0, 1, 0.01), stride=3)

    def test_empty_grid(self):
        out = integrate(EXCITED, decaying_atom(0, 1), P, TimeGrid(0.5, 0.5, 0.01))
        assert out.shape == (1, 2, 2)


@settings(max_examples=25, deadline=None)
@given(seed=seeds, d=dims)
def test_forward_preserves_trace_and_positivity(seed, d):
    rng = np.random.default_rng(seed)
    m = MonitoringModel(random_density(rng, d), random_unbiased_set(rng, d, 3), 2.0)
    out = integrate(random_density(rng, d), m, P, TimeGrid(0.0, 0.5, 1e-2))
    np.testing.assert_allclose(np.trace(out, axis1=1, axis2=2), 1.0, atol=1e-10)
    assert np.linalg.eigvalsh(out[-1]).min() >= -1e-9


@settings(max_examples=25, deadline=None)
@given(seed=seeds, d=dims)
def test_duality_conserves_overlap(seed, d):
    rng = np.random.default_rng(seed)
    m = MonitoringModel(random_density(rng, d), random_unbiased_set(rng, d, 2), 1.5)
    g = TimeGrid(0.0, 1.0, 1e-2)
    rho = integrate(random_density(rng, d), m, P, g)
    pi = integrate(random_density(rng, d), m, ADJ, g)[::-1]
    overlaps = np.einsum("tab,tba->t", rho, pi).real
    assert np.ptp(overlaps) <= 1e-10


@settings(max_examples=20, deadline=None)
@given(seed=seeds, d=dims)
def test_unbiased_monitoring_keeps_identity(seed, d):
    rng = np.random.default_rng(seed)
    m = MonitoringModel(random_density(rng, d), random_unbiased_set(rng, d, 3), 2.0)
    out = integrate(np.eye(d), m, REV, TimeGrid(0.0, 1.0, 1e-2))
    np.testing.assert_allclose(out[-1], np.eye(d), atol=1e-12)


def test_dark_state():
    np.testing.assert_array_equal(lindblad_rhs(GROUND, decaying_atom(0, 1.0)), np.zeros((2, 2)))


def test_projective_coherence_decays_at_rate_R():
    m = two_level_monitor(0.0, 1.0, 3.0)
    g = TimeGrid(0.0, 1.0, 1e-3)
    out = integrate(np.full((2, 2), 0.5, dtype=complex), m, P, g, stride=100)
    np.testing.assert_allclose(out[:, 0, 1].real, 0.5 * np.exp(-3.0 * g.times()[::100]), atol=1e-9)


@pytest.mark.parametrize("model", [
    LindbladModel(np.zeros((2, 2)), (SIGMA_MINUS,), 0.0),
    MonitoringModel(np.zeros((2, 2)), EffectSet.from_operators([("1", np.eye(2))]), 4.0),
])
def test_zero_generator_keeps_operator(model, rng):
    rho = random_density(rng, 2)
    out = integrate(rho, model, P, TimeGrid(0.0, 1.0, 0.01))
    assert all(np.array_equal(s, rho) for s in out)


def test_unitary_round_trip():
    m = LindbladModel(0.5 * SIGMA_X, (), 0.0)
    g = TimeGrid(0.0, 2.0, 1e-3)
    fwd = integrate(EXCITED, m, P, g)
    back = integrate(fwd[-1], m, P, g, reverse=True)
    np.testing.assert_allclose(back[-1], EXCITED, atol=1e-7)


def test_epsilon_zero_is_rabi_for_any_rate():
    g = TimeGrid(0.0, 2.0, 1e-3)
    for rate in (0.0, 10.0, 50.0):
        out = integrate(EXCITED, two_level_monitor(1.0, 0.0, rate), P, g, stride=100)
        np.testing.assert_allclose(out[:, 1, 1].real, np.cos(g.times()[::100] / 2) ** 2, atol=1e-9)
