import math

import pytest

from common.config import parse_config
from common.errors import DegenerateFit, GridMismatch, OrderUnavailable
from common.model import EvolutionModel
from engine.expansion import build_expansion
from engine.oracle import direct_solve
from engine.validation import (
    CERTIFIED, UNAVAILABLE, averaging_gap, convergence_slope, effective_gap, evaluation_mask,
    gronwall_diagnostic, layer_efficacy, remainder, resolution_certificate, run_sweep,
)
from tests.documents import telegraph_document

EPSILONS = [0.2, 0.1, 0.05, 0.025]


class TestSlopeFit:
    def test_exact_power_law(self):
        fit = convergence_slope([(eps, 3.0 * eps ** 2) for eps in EPSILONS])
        assert fit.slope == pytest.approx(2.0, abs=1e-12)
        assert fit.band_low == pytest.approx(2.0, abs=1e-9)
        assert fit.band_high == pytest.approx(2.0, abs=1e-9)
        assert fit.n_points == 4

    def test_noisy_points_widen_band(self):
        points = [(eps, eps * (1.0 + 0.1 * (-1) ** i)) for i, eps in enumerate(EPSILONS)]
        fit = convergence_slope(points)
        assert fit.band_low < fit.slope < fit.band_high
        assert fit.residual_std > 0.0

    def test_too_few_points(self):
        with pytest.raises(DegenerateFit):
            convergence_slope([(0.1, 1e-3), (0.05, 2.5e-4)])

    def test_zero_error_is_degenerate(self):
        with pytest.raises(DegenerateFit):
            convergence_slope([(0.2, 1e-3), (0.1, 0.0), (0.05, 1e-5)])


class TestRemainder:
    def test_periodic_mask_is_full(self, telegraph_model):
        assert evaluation_mask(telegraph_model, 0.5).all()

    def test_padded_mask_drops_margin(self):
        document = telegraph_document(grid={"boundary_mode": "padded", "u_min": 0.0, "u_max": 4.0,
                                            "pad": 1.5, "n_points": 241})
        model = EvolutionModel.from_config(parse_config(document))
        nodes = model.grid.nodes[evaluation_mask(model, 0.5)]
        assert nodes.min() >= 0.5 - 1e-12
        assert nodes.max() <= 3.5 + 1e-12

    def test_epsilon_must_match_solution(self, telegraph_model, telegraph_expansion):
        solution = direct_solve(telegraph_model, 0.2, [0.5], richardson=False)
        with pytest.raises(GridMismatch):
            remainder(telegraph_expansion, solution, 1, 0.1, 0.5)

    def test_grid_must_match_solution(self, telegraph_expansion, asymmetric_model):
        coarse = asymmetric_model.with_grid(asymmetric_model.grid.coarsened())
        solution = direct_solve(coarse, 0.2, [0.5], richardson=False)
        with pytest.raises(GridMismatch):
            remainder(telegraph_expansion, solution, 1, 0.2, 0.5)

    def test_leading_order_remainder_is_first_neglected_term(self, telegraph_model, telegraph_expansion):
        solution = direct_solve(telegraph_model, 0.1, [0.5])
        expected = 0.1 * math.hypot(0.25, 0.5)
        assert remainder(telegraph_expansion, solution, 0, 0.1, 0.5) == pytest.approx(expected, rel=0.3)

    def test_remainder_shrinks_with_order(self, telegraph_model, telegraph_expansion):
        solution = direct_solve(telegraph_model, 0.1, [0.5])
        errors = [remainder(telegraph_expansion, solution, N, 0.1, 0.5) for N in range(3)]
        assert errors[0] > errors[1] > errors[2]

    def test_certificate_without_next_term(self, telegraph_model, telegraph_expansion):
        solution = direct_solve(telegraph_model, 0.1, [0.5])
        certificate = resolution_certificate(telegraph_expansion, solution, 3, 0.1, 0.5)
        assert certificate.status == UNAVAILABLE
        assert not certificate.passed

    def test_certificate_for_leading_order(self, telegraph_model, telegraph_expansion):
        solution = direct_solve(telegraph_model, 0.1, [0.5])
        certificate = resolution_certificate(telegraph_expansion, solution, 0, 0.1, 0.5)
        assert certificate.status == CERTIFIED
        assert certificate.threshold > certificate.solver_error

    def test_sweep_rejects_unavailable_order(self, telegraph_model, telegraph_expansion):
        with pytest.raises(OrderUnavailable):
            run_sweep(telegraph_model, telegraph_expansion, [4], EPSILONS, 0.5)


class TestAveragingAndLayers:
    def test_averaging_gap_decreases(self, telegraph_model, telegraph_expansion):
        gaps = averaging_gap(telegraph_model, telegraph_expansion, EPSILONS, 0.5)
        assert [eps for eps, _ in gaps] == sorted(EPSILONS, reverse=True)
        values = [gap for _, gap in gaps]
        assert all(a > b for a, b in zip(values, values[1:]))
        fit = convergence_slope(gaps)
        assert fit.slope == pytest.approx(1.0, abs=0.3)

    @pytest.mark.parametrize("N", [2, 3])
    def test_layer_terms_pay_off_at_t_equal_eps(self, telegraph_model, telegraph_expansion, N):
        with_layers, without_layers, ratio = layer_efficacy(telegraph_model, telegraph_expansion, 0.05, N)
        assert with_layers < without_layers
        assert ratio >= 5.0


class TestGronwallDiagnostic:
    def test_effective_gap_is_positive(self, telegraph_model):
        gap = effective_gap(telegraph_model, 0.1)
        assert math.isfinite(gap) and gap > 0.0

    @pytest.mark.parametrize("epsilon", [0.1, 0.05])
    def test_both_sides_are_reported(self, telegraph_model, telegraph_expansion, epsilon):
        diagnostic = gronwall_diagnostic(telegraph_model, telegraph_expansion, epsilon, t=0.5)
        assert diagnostic.L == pytest.approx(2.0 / effective_gap(telegraph_model, epsilon))
        assert math.isfinite(diagnostic.remainder) and diagnostic.remainder > 0.0
        assert diagnostic.initial_remainder <= 1e-10
        assert diagnostic.theta_sup > 0.0
        assert diagnostic.theta_error <= 0.1 * diagnostic.theta_sup + 1e-6
        assert diagnostic.duhamel_holds
        assert isinstance(diagnostic.literal_holds, bool)

    def test_remainder_shrinks_when_epsilon_halves(self, telegraph_model, telegraph_expansion):
        coarse, fine = (gronwall_diagnostic(telegraph_model, telegraph_expansion, eps, t=0.5) for eps in (0.1, 0.05))
        assert fine.remainder <= coarse.remainder / 2.0

    def test_no_motion_gives_zero_on_both_sides(self):
        document = telegraph_document(velocity=["0", "0"], grid={"n_points": 64}, expansion={"order": 2})
        model = EvolutionModel.from_config(parse_config(document))
        result = build_expansion(model, order=2)
        diagnostic = gronwall_diagnostic(model, result, 0.1, t=0.5)
        assert diagnostic.remainder == pytest.approx(0.0, abs=1e-12)
        assert diagnostic.theta_sup == pytest.approx(0.0, abs=1e-10)
        assert diagnostic.literal_bound == pytest.approx(0.0, abs=1e-12)

    def test_explicit_constant_is_used(self, telegraph_model, telegraph_expansion):
        diagnostic = gronwall_diagnostic(telegraph_model, telegraph_expansion, 0.1, t=0.5, L=3.0)
        assert diagnostic.L == 3.0

    def test_needs_second_order(self, telegraph_model):
        shallow = build_expansion(telegraph_model, order=1)
        with pytest.raises(OrderUnavailable):
            gronwall_diagnostic(telegraph_model, shallow, 0.1)


@pytest.mark.slow
class TestConvergenceOrders:
    """Remainder slopes of the truncated expansion against the direct solver."""

    @pytest.fixture(scope="class")
    def report(self, sweep_model, sweep_expansion):
        return run_sweep(sweep_model, sweep_expansion, [0, 1, 2], EPSILONS, 0.5, workers=2)

    @pytest.mark.parametrize("N", [0, 1, 2])
    def test_slope_in_band(self, report, N):
        assert N + 0.6 <= report.slopes[N].slope <= N + 1.4

    @pytest.mark.parametrize("N", [0, 1])
    def test_slopes_are_certified(self, report, N):
        assert report.certified(N)

    def test_second_order_slope(self, report):
        assert report.slopes[2].slope >= 1.6

    def test_errors_are_positive_and_ordered(self, report):
        for eps in EPSILONS:
            errors = [report.errors[(N, eps)] for N in (0, 1, 2)]
            assert all(e > 0.0 and math.isfinite(e) for e in errors)
            assert errors[0] > errors[1] > errors[2]
