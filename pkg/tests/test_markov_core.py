import numpy as np
import pytest
from scipy.integrate import simpson, trapezoid

from common.errors import NegativeRate, NegativeTime, NonPositiveLambda, NotSquare, Reducible, RowSumViolation
from common.markov_core import (
    exp0, exp0_series, laplace_exp0, matrix_exp, matrix_exp_series, potential_matrix, projector,
    spectral_gap, stationary_distribution, validate_generator,
)

TELEGRAPH_Q = [[-1.0, 1.0], [1.0, -1.0]]
ASYMMETRIC_Q = [[-2.0, 2.0], [3.0, -3.0]]


def random_generator(rng, n):
    rates = rng.exponential(1.0, size=(n, n)) * (rng.random((n, n)) < 0.7)
    # a cycle keeps every draw irreducible
    for i in range(n):
        rates[i, (i + 1) % n] += rng.uniform(0.1, 2.0)
    np.fill_diagonal(rates, 0.0)
    np.fill_diagonal(rates, -rates.sum(axis=1))
    return rates


class TestValidateGenerator:
    def test_accepts_telegraph(self):
        Q = validate_generator(TELEGRAPH_Q)
        assert Q.n == 2
        assert not Q.entries.flags.writeable

    def test_row_sum_names_row(self):
        with pytest.raises(RowSumViolation, match=r"Q\[0\]") as info:
            validate_generator([[-1.0, 2.0], [1.0, -1.0]])
        assert info.value.row == 0

    def test_negative_rate(self):
        with pytest.raises(NegativeRate, match=r"Q\[1\]"):
            validate_generator([[0.0, 0.0], [-1.0, 1.0]])

    def test_reducible(self):
        with pytest.raises(Reducible):
            validate_generator([[-1.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])

    def test_not_square(self):
        with pytest.raises(NotSquare):
            validate_generator([[-1.0, 1.0]])

    def test_single_state_rejected(self):
        with pytest.raises(NotSquare):
            validate_generator([[0.0]])


class TestStationaryDistribution:
    def test_telegraph_is_uniform(self):
        pi = stationary_distribution(validate_generator(TELEGRAPH_Q)).pi
        np.testing.assert_allclose(pi, [0.5, 0.5], atol=1e-15)

    def test_asymmetric(self):
        pi = stationary_distribution(validate_generator(ASYMMETRIC_Q)).pi
        np.testing.assert_allclose(pi, [0.6, 0.4], atol=1e-15)

    def test_stiff_rates_keep_relative_accuracy(self):
        pi = stationary_distribution(validate_generator([[-1e-8, 1e-8], [1.0, -1.0]])).pi
        assert pi[1] == pytest.approx(1e-8 / (1.0 + 1e-8), rel=1e-12)


class TestPotentialMatrix:
    def test_telegraph_closed_form(self):
        Q = validate_generator(TELEGRAPH_Q)
        Pi = projector(stationary_distribution(Q))
        R0 = potential_matrix(Q, Pi).R0
        np.testing.assert_allclose(R0, -0.5 * (np.eye(2) - Pi.Pi), atol=1e-14)

    def test_spectral_gaps(self):
        assert spectral_gap(validate_generator(TELEGRAPH_Q)).gamma == pytest.approx(2.0)
        assert spectral_gap(validate_generator(ASYMMETRIC_Q)).gamma == pytest.approx(5.0)


class TestAlgebraicIdentities:
    """Identities checked on 1000 random ergodic generators with 2 to 8 states."""

    def test_random_generators(self):
        rng = np.random.default_rng(20240611)
        for trial in range(1000):
            n = int(rng.integers(2, 9))
            Q = validate_generator(random_generator(rng, n))
            pi = stationary_distribution(Q)
            Pi = projector(pi)
            R0 = potential_matrix(Q, Pi).R0
            I = np.eye(n)

            assert np.abs(pi.pi @ Q.entries).max() <= 1e-11, trial
            assert np.abs(Pi.Pi @ Pi.Pi - Pi.Pi).max() <= 1e-11, trial
            assert np.abs(Q.entries @ R0 - (I - Pi.Pi)).max() <= 1e-9, trial
            assert np.abs(R0 @ Q.entries - (I - Pi.Pi)).max() <= 1e-9, trial
            assert np.abs(Pi.Pi @ R0).max() <= 1e-9, trial

            s, t = rng.uniform(0.0, 2.0, size=2)
            P_s, P_t, P_st = matrix_exp(Q, s), matrix_exp(Q, t), matrix_exp(Q, s + t)
            assert np.abs(P_t.sum(axis=1) - 1.0).max() <= 1e-10, trial
            assert P_t.min() >= -1e-10, trial
            assert np.abs(P_s @ P_t - P_st).max() <= 1e-9, trial


class TestMatrixExponential:
    def test_zero_time_is_identity(self):
        Q = validate_generator(ASYMMETRIC_Q)
        np.testing.assert_array_equal(matrix_exp(Q, 0.0), np.eye(2))

    def test_negative_time(self):
        with pytest.raises(NegativeTime):
            matrix_exp(validate_generator(TELEGRAPH_Q), -0.1)

    def test_series_matches_pointwise(self):
        Q = validate_generator(ASYMMETRIC_Q)
        times = [0.0, 0.1, 0.7, 3.0]
        series = matrix_exp_series(Q, times)
        for t, P in zip(times, series):
            np.testing.assert_allclose(P, matrix_exp(Q, t), atol=1e-14)

    def test_complex_spectrum_stays_real_and_stochastic(self):
        # pure 3-cycle: eigenvalues -3/2 +- i sqrt(3)/2
        Q = validate_generator([[-1.0, 1.0, 0.0], [0.0, -1.0, 1.0], [1.0, 0.0, -1.0]])
        P = matrix_exp(Q, 0.5)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


class TestExp0:
    def test_telegraph_decay(self):
        Q = validate_generator(TELEGRAPH_Q)
        I_minus_Pi = np.eye(2) - 0.5
        for tau in (0.0, 0.3, 2.0):
            np.testing.assert_allclose(exp0(Q, tau), np.exp(-2.0 * tau) * I_minus_Pi, atol=1e-14)

    def test_series(self):
        Q = validate_generator(ASYMMETRIC_Q)
        taus = np.linspace(0.0, 1.0, 5)
        series = exp0_series(Q, taus)
        for tau, value in zip(taus, series):
            np.testing.assert_allclose(value, exp0(Q, tau), atol=1e-14)

    def test_exp0_negative_tau(self):
        with pytest.raises(NegativeTime):
            exp0(validate_generator(TELEGRAPH_Q), -1.0)

    def test_laplace_telegraph(self):
        Q = validate_generator(TELEGRAPH_Q)
        for lam in (0.5, 1.0, 2.0):
            np.testing.assert_allclose(laplace_exp0(Q, lam), (np.eye(2) - 0.5) / (lam + 2.0), atol=1e-14)

    @pytest.mark.parametrize("raw", [TELEGRAPH_Q, ASYMMETRIC_Q])
    def test_laplace_small_lambda_tends_to_R0_with_sign(self, raw):
        Q = validate_generator(raw)
        Pi = projector(stationary_distribution(Q))
        R0 = potential_matrix(Q, Pi).R0
        for lam in (1e-6, 1e-7, 1e-9):
            gap = np.abs(laplace_exp0(Q, lam) + R0).max()
            assert gap <= 2.0 * lam * np.abs(R0 @ R0).max() + 1e-13, lam

    def test_laplace_rejects_non_positive(self):
        with pytest.raises(NonPositiveLambda):
            laplace_exp0(validate_generator(TELEGRAPH_Q), 0.0)


CYCLIC_Q = [[-1.0, 1.0, 0.0], [0.0, -1.0, 1.0], [1.0, 0.0, -1.0]]


@pytest.mark.parametrize("raw", [TELEGRAPH_Q, ASYMMETRIC_Q, CYCLIC_Q])
class TestLayerKernelQuadrature:
    """exp0 against its integrals on [0, 30 / gamma]."""

    def setup_kernel(self, raw, n_nodes):
        Q = validate_generator(raw)
        gamma = spectral_gap(Q).gamma
        taus = np.linspace(0.0, 30.0 / gamma, n_nodes)
        return Q, taus, exp0_series(Q, taus)

    def test_integral_is_minus_R0(self, raw):
        Q, taus, kernel = self.setup_kernel(raw, 20001)
        R0 = potential_matrix(Q, projector(stationary_distribution(Q))).R0
        integral = trapezoid(kernel, taus, axis=0)
        assert np.abs(-integral - R0).max() <= 1e-6

    def test_laplace_matches_simpson(self, raw):
        Q, taus, kernel = self.setup_kernel(raw, 6001)
        quadrature = simpson(np.exp(-taus)[:, None, None] * kernel, x=taus, axis=0)
        assert np.abs(quadrature - laplace_exp0(Q, 1.0)).max() <= 1e-8

    def test_envelope_at_tau_max(self, raw):
        Q, taus, _ = self.setup_kernel(raw, 2)
        assert np.abs(exp0(Q, taus[-1])).max() <= 1e-10
