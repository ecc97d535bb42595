"""Remainder measurement, convergence orders and the Gronwall-type bound."""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.integrate import simpson

from common import constants
from common.errors import DegenerateFit, GridMismatch, OrderUnavailable
from common.function_space import apply_V_values, derivative_matrix, time_derivative
from common.model import EvolutionModel
from engine.expansion import ExpansionResult, interpolate_series, apply_L, evaluate_expansion
from engine.oracle import DirectSolution, direct_solve
from engine.utils import run_in_threads

logger = logging.getLogger(__name__)

CERTIFIED = "certified"
INSUFFICIENT_RESOLUTION = "InsufficientResolution"
UNAVAILABLE = "unavailable"


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    band_low: float
    band_high: float
    intercept: float
    residual_std: float
    n_points: int


@dataclass(frozen=True)
class ResolutionCertificate:
    """Solver error small enough for the remainder of order N at this eps to be trusted."""
    N: int
    epsilon: float
    solver_error: float
    threshold: float
    status: str

    @property
    def passed(self) -> bool:
        return self.status == CERTIFIED


@dataclass
class RemainderReport:
    orders: List[int]
    epsilons: List[float]
    t: float
    errors: Dict[Tuple[int, float], float] = field(default_factory=dict)
    slopes: Dict[int, Optional[SlopeFit]] = field(default_factory=dict)
    certificates: Dict[Tuple[int, float], ResolutionCertificate] = field(default_factory=dict)

    def certified(self, N: int) -> bool:
        return all(self.certificates[(N, eps)].passed for eps in self.epsilons)

    def series(self, N: int) -> List[Tuple[float, float]]:
        return [(eps, self.errors[(N, eps)]) for eps in self.epsilons]


@dataclass(frozen=True)
class BoundDiagnostic:
    epsilon: float
    t: float
    L: float
    remainder: float
    initial_remainder: float
    theta_sup: float
    theta_error: float
    literal_bound: float
    duhamel_bound: float
    margin: float

    @property
    def literal_holds(self) -> bool:
        return self.remainder <= self.literal_bound + self.margin

    @property
    def duhamel_holds(self) -> bool:
        return self.remainder <= self.duhamel_bound + self.margin


def evaluation_mask(model: EvolutionModel, t: float) -> np.ndarray:
    """Core nodes, minus a margin of width t * max|v| at each end in padded mode."""
    grid = model.grid
    if grid.periodic:
        return np.ones(grid.n_points, dtype=bool)
    margin = t * model.max_speed
    nodes = grid.nodes
    return (nodes >= grid.u_min + margin) & (nodes <= grid.u_max - margin)


def _check_grids(result: ExpansionResult, solution: DirectSolution):
    a, b = result.model.grid, solution.grid
    if (a.n_points, a.u_min, a.u_max, a.boundary_mode, a.pad) != (b.n_points, b.u_min, b.u_max, b.boundary_mode, b.pad):
        raise GridMismatch(f"expansion grid {a} differs from solver grid {b}")


def remainder(result: ExpansionResult, solution: DirectSolution, N: int, epsilon: float, t: float,
              eval_mask: np.ndarray = None, include_layers: bool = True) -> float:
    """max over the evaluation set and the states of |Phi_eps - Phi_N|."""
    _check_grids(result, solution)
    if not math.isclose(solution.epsilon, epsilon, rel_tol=1e-12):
        raise GridMismatch(f"solution was computed for eps={solution.epsilon}, not {epsilon}")
    mask = evaluation_mask(result.model, t) if eval_mask is None else eval_mask
    if not mask.any():
        raise GridMismatch("evaluation set is empty")
    expansion = evaluate_expansion(result, N, epsilon, t, include_layers=include_layers)
    return float(np.abs(solution.at(t).values - expansion.values)[:, mask].max())


def convergence_slope(points: Sequence[Tuple[float, float]], confidence: float = 0.95) -> SlopeFit:
    """Least-squares slope of log(error) against log(eps) with a t-quantile band."""
    points = sorted(points)
    if len(points) < 3:
        raise DegenerateFit(f"need at least 3 (eps, error) points, got {len(points)}")
    eps = np.array([p[0] for p in points], dtype=float)
    errors = np.array([p[1] for p in points], dtype=float)
    if np.any(~np.isfinite(errors)) or np.any(errors <= 0) or np.any(eps <= 0):
        raise DegenerateFit("errors must be positive and finite (solver noise floor reached?)")

    fit = stats.linregress(np.log(eps), np.log(errors))
    dof = len(points) - 2
    half_width = stats.t.ppf(0.5 + confidence / 2.0, dof) * fit.stderr if dof > 0 else math.inf
    residuals = np.log(errors) - (fit.intercept + fit.slope * np.log(eps))
    return SlopeFit(float(fit.slope), float(fit.slope - half_width), float(fit.slope + half_width),
                    float(fit.intercept), float(np.std(residuals)), len(points))


def resolution_certificate(result: ExpansionResult, solution: DirectSolution, N: int, epsilon: float,
                           t: float, safety: float = constants.CERTIFICATE_SAFETY) -> ResolutionCertificate:
    """Pass when the solver error is below safety * eps^(N+1) * |u_{N+1}(t) + w_{N+1}(t / eps)|."""
    if N + 1 > result.order:
        return ResolutionCertificate(N, epsilon, solution.error_estimate, float("nan"), UNAVAILABLE)
    mask = evaluation_mask(result.model, t)
    term = interpolate_series(result.times, result.regular[N + 1].values, t)
    tau = t / epsilon
    if tau <= result.layer.tau_max:
        term = term + interpolate_series(result.layer.taus, result.singular[N].values, tau)
    threshold = safety * epsilon ** (N + 1) * float(np.abs(term[:, mask]).max())
    passed = np.isfinite(solution.error_estimate) and solution.error_estimate <= threshold
    return ResolutionCertificate(N, epsilon, solution.error_estimate, threshold,
                                 CERTIFIED if passed else INSUFFICIENT_RESOLUTION)


def run_sweep(model: EvolutionModel, result: ExpansionResult, orders: Sequence[int],
              epsilons: Sequence[float], t: float, workers: int = 1,
              solver_options: dict = None) -> RemainderReport:
    """Remainders for every (N, eps), one slope per N, with resolution certificates."""
    for N in orders:
        if N > result.order:
            raise OrderUnavailable(f"order {N} requested, expansion computed to order {result.order}")
    options = solver_options or {}
    epsilons = sorted(epsilons, reverse=True)
    solutions = run_in_threads(lambda eps: direct_solve(model, eps, [t], **options), epsilons, workers)

    report = RemainderReport(list(orders), epsilons, t)
    for eps, solution in zip(epsilons, solutions):
        for N in orders:
            report.errors[(N, eps)] = remainder(result, solution, N, eps, t)
            report.certificates[(N, eps)] = resolution_certificate(result, solution, N, eps, t)
            logger.debug(f"N={N} eps={eps:g}: error {report.errors[(N, eps)]:.3e}")

    for N in orders:
        try:
            report.slopes[N] = convergence_slope(report.series(N))
        except DegenerateFit as e:
            logger.warning(f"No slope for order {N}: {e}")
            report.slopes[N] = None
            continue
        if not report.certified(N):
            logger.warning(f"Slope {report.slopes[N].slope:.3f} for order {N} is not certified")
        logger.info(f"Order {N}: slope {report.slopes[N].slope:.3f} "
                    f"[{report.slopes[N].band_low:.3f}, {report.slopes[N].band_high:.3f}]")
    return report


def averaging_gap(model: EvolutionModel, result: ExpansionResult, epsilons: Sequence[float], t: float,
                  solver_options: dict = None) -> List[Tuple[float, float]]:
    """(eps, |Phi_eps(t) - u0(t)|) for each eps, largest eps first."""
    options = {**(solver_options or {}), "richardson": False}
    mask = evaluation_mask(model, t)
    u0 = interpolate_series(result.times, result.regular[0].values, t)
    gaps = []
    for eps in sorted(epsilons, reverse=True):
        solution = direct_solve(model, eps, [t], **options)
        gaps.append((eps, float(np.abs(solution.at(t).values - u0)[:, mask].max())))
    return gaps


def layer_efficacy(model: EvolutionModel, result: ExpansionResult, epsilon: float, N: int,
                   solution: DirectSolution = None, solver_options: dict = None) -> Tuple[float, float, float]:
    """Errors at t = eps with and without the boundary-layer terms, and their ratio."""
    t = epsilon
    if solution is None:
        solution = direct_solve(model, epsilon, [t], **(solver_options or {}))
    with_layers = remainder(result, solution, N, epsilon, t)
    without_layers = remainder(result, solution, N, epsilon, t, include_layers=False)
    ratio = without_layers / with_layers if with_layers > 0 else math.inf
    logger.info(f"Layer efficacy eps={epsilon:g} N={N}: {without_layers:.3e} -> {with_layers:.3e} (x{ratio:.1f})")
    return with_layers, without_layers, ratio


# Gronwall-type bound

def effective_gap(model: EvolutionModel, epsilon: float) -> float:
    """Smallest non-zero |Re lambda| of the discretised operator Q / eps + V_h."""
    P = model.grid.n_points
    D = derivative_matrix(model.grid)
    operator = np.kron(model.Q.entries / epsilon, np.eye(P))
    for x in range(model.n_states):
        block = slice(x * P, (x + 1) * P)
        operator[block, block] += model.velocity_on_grid[x][:, None] * D
    real = np.abs(np.linalg.eigvals(operator).real)
    nonzero = real[real > 1e-10 * max(1.0, real.max())]
    return float(nonzero.min()) if nonzero.size else float("nan")


def _layer_value(series, taus, tau):
    if tau > taus[-1]:
        return np.zeros_like(series[0])
    return interpolate_series(taus, series, tau)


def gronwall_diagnostic(model: EvolutionModel, result: ExpansionResult, epsilon: float, t: float = None,
                        L: float = None, solution: DirectSolution = None,
                        solver_options: dict = None) -> BoundDiagnostic:
    """Both sides of |Phi - Phi_2|(t) <= eps |Phi - Phi_2|(0) exp(eps L |theta|).

    theta is measured by finite differences of Phi_2 (regular parts in t,
    layer parts in tau) and checked against the exact residual
    theta = eps (L u_2 - V w_2). The Duhamel bound
    |Phi - Phi_2|(0) + eps int_0^t |theta| is reported alongside.
    """
    if result.order < 2:
        raise OrderUnavailable("the bound needs the expansion to order 2")
    t = model.time_grid.t_end / 2.0 if t is None else t
    if L is None:
        L = 2.0 / effective_gap(model, epsilon)
    if solution is None:
        solution = direct_solve(model, epsilon, [0.0, t], **(solver_options or {}))

    grid = model.grid
    v = model.velocity_on_grid
    mask = evaluation_mask(model, t)
    times = result.times
    layer = result.layer
    n_nodes = int(np.searchsorted(times, t * (1.0 + 1e-12), side="right"))
    dt = times[1] - times[0]

    regular_rate = [time_derivative(result.regular[k].values, dt) for k in range(3)]
    layer_rate = [time_derivative(result.singular[k - 1].values, layer.dtau) for k in (1, 2)]
    L_u2 = apply_L(result.regular[2], model)

    measured, exact = [], []
    for j in range(n_nodes):
        s = times[j]
        tau = s / epsilon
        Phi2 = evaluate_expansion(result, 2, epsilon, s).values
        rate = (regular_rate[0][j] + epsilon * regular_rate[1][j] + epsilon ** 2 * regular_rate[2][j]
                + _layer_value(layer_rate[0], layer.taus, tau) + epsilon * _layer_value(layer_rate[1], layer.taus, tau))
        generator = (np.einsum("xy,yp->xp", model.Q.entries, Phi2) / epsilon
                     + apply_V_values(v, Phi2, grid))
        measured.append((rate - generator) / epsilon)
        w2 = _layer_value(result.singular[1].values, layer.taus, tau)
        exact.append(epsilon * (L_u2[j] - apply_V_values(v, w2, grid)))

    measured = np.stack(measured)[..., mask]
    exact = np.stack(exact)[..., mask]
    theta_norms = np.abs(measured).max(axis=(1, 2))
    theta_sup = float(theta_norms.max())
    theta_error = float(np.abs(measured - exact).max())

    remainder_t = remainder(result, solution, 2, epsilon, t, mask)
    remainder_0 = remainder(result, solution, 2, epsilon, 0.0, mask)
    exponent = epsilon * L * theta_sup
    literal = epsilon * remainder_0 * math.exp(exponent) if exponent <= 700 else math.inf
    integral = simpson(theta_norms, x=times[:n_nodes]) if n_nodes >= 3 else theta_sup * t
    duhamel = remainder_0 + epsilon * float(integral)
    margin = (solution.error_estimate if np.isfinite(solution.error_estimate) else 0.0) + epsilon * t * theta_error

    diagnostic = BoundDiagnostic(epsilon, t, L, remainder_t, remainder_0, theta_sup, theta_error,
                                 literal, duhamel, margin)
    if not diagnostic.literal_holds:
        logger.warning(f"Literal bound fails at eps={epsilon:g}: {remainder_t:.3e} > {literal:.3e}")
    logger.info(f"Gronwall eps={epsilon:g}: remainder {remainder_t:.3e}, literal {literal:.3e}, "
                f"Duhamel {duhamel:.3e}, |theta| {theta_sup:.3e} (+- {theta_error:.1e})")
    return diagnostic
