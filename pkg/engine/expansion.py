"""Asymptotic expansion of the singularly perturbed backward system.

Phi_N(t) = u0(t) + sum_{k=1..N} eps^k (u_k(t) + w_k(t / eps))

Regular terms u_k live on the slow time grid, boundary-layer terms w_k on
the fast grid tau = t / eps. Each order needs the previous one, so the
builder is a single-threaded pipeline; a finished ExpansionResult is only
read afterwards.
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import cumulative_simpson, simpson
from scipy.interpolate import CubicSpline, RectBivariateSpline

from common import constants
from common.errors import (
    ConsistencyViolation, GridMismatch, InsufficientResolution, NegativeTime, NonFiniteSource, OrderUnavailable,
    ProjectionViolation, SolvabilityViolation, TailTruncationTooCoarse, ValidationError,
)
from common.function_space import (
    GridFunction, SpatialGrid, StateField, TimeGrid, apply_V_values, apply_states,
    characteristics, differentiate, interpolate_in_space, project_values, spatial_interpolator,
    time_derivative,
)
from common.markov_core import exp0_series, laplace_exp0
from common.model import EvolutionModel
from common.table import ResultTable

logger = logging.getLogger(__name__)


def _readonly(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


def _pi_average(pi, values):
    """Scalar part sum_x pi_x f(., x) of (..., n_states, n_points) values."""
    return np.einsum("x,...xp->...p", np.asarray(getattr(pi, "pi", pi)), values)


def _sup(values) -> float:
    values = np.asarray(values)
    return float(np.abs(values).max()) if values.size else 0.0


@dataclass(frozen=True)
class BoundaryLayerGrid:
    """Uniform grid of n_tau points on [0, tau_max] for the fast time tau = t / eps."""
    tau_max: float
    n_tau: int

    def __post_init__(self):
        if self.n_tau < 16:
            raise ValidationError("layer.n_tau", f"needs at least 16 points, got {self.n_tau}")
        if not self.tau_max > 0:
            raise ValidationError("layer.tau_max_factor", "tau_max must be positive")

    @classmethod
    def for_model(cls, model: EvolutionModel) -> "BoundaryLayerGrid":
        return cls(model.tau_max_factor / model.gamma, model.n_tau)

    @property
    def dtau(self) -> float:
        return self.tau_max / (self.n_tau - 1)

    @property
    def taus(self) -> np.ndarray:
        return np.linspace(0.0, self.tau_max, self.n_tau)


@dataclass(frozen=True)
class RegularTerm:
    """u_k on the time grid, values shape (n_times, n_states, n_points)."""
    k: int
    times: np.ndarray
    values: np.ndarray
    grid: SpatialGrid

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))

    def at(self, j: int) -> StateField:
        return StateField(self.grid, self.values[j])


@dataclass(frozen=True)
class ScalarCorrection:
    """c_k on the time grid, values shape (n_times, n_points); lives in N_Q as c (x) 1."""
    k: int
    times: np.ndarray
    values: np.ndarray
    grid: SpatialGrid

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))

    def lifted(self, n_states: int) -> np.ndarray:
        return np.repeat(self.values[:, None, :], n_states, axis=1)


@dataclass(frozen=True)
class SingularTerm:
    """w_k on the layer grid, values shape (n_tau, n_states, n_points)."""
    k: int
    taus: np.ndarray
    values: np.ndarray
    grid: SpatialGrid

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))


@dataclass(frozen=True)
class LaplaceDiagnostics:
    k: int
    transforms: Dict[float, np.ndarray]
    at_zero: np.ndarray
    derivative_at_zero: np.ndarray
    closed_form_gap: Dict[float, float] = field(default_factory=dict)


@dataclass
class ExpansionResult:
    model: EvolutionModel
    order: int
    layer: BoundaryLayerGrid
    regular: List[RegularTerm]
    corrections: List[ScalarCorrection]
    singular: List[SingularTerm]
    L_terms: List[np.ndarray]
    initial_layers: List[np.ndarray]
    solvability: Dict[int, float] = field(default_factory=dict)
    range_residual: Dict[int, float] = field(default_factory=dict)
    matching: Dict[int, float] = field(default_factory=dict)
    decay: Dict[int, float] = field(default_factory=dict)
    laplace: Dict[int, LaplaceDiagnostics] = field(default_factory=dict)
    moment_gap: Dict[int, float] = field(default_factory=dict)
    printed_source_gap: Dict[int, float] = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.regular[0].times

    def u(self, k: int) -> RegularTerm:
        self._check_order(k)
        return self.regular[k]

    def c(self, k: int) -> ScalarCorrection:
        self._check_order(k)
        return self.corrections[k]

    def w(self, k: int) -> SingularTerm:
        if k < 1:
            raise OrderUnavailable("boundary-layer terms start at order 1")
        self._check_order(k)
        return self.singular[k - 1]

    def _check_order(self, k):
        if k < 0 or k > self.order:
            raise OrderUnavailable(f"order {k} requested, expansion computed to order {self.order}")


# Regular part

def leading_term(phi: GridFunction, vhat, t_grid: TimeGrid, n_states: int = 1,
                 tol: float = constants.LEADING_RESIDUAL_TOL) -> RegularTerm:
    """u0(u, t) = phi(flow(u, t)), constant across states.

    The averaged transport residual d/dt u0 - vhat d/du u0 on the core nodes
    must stay below tol * max(1, sup |phi|).
    """
    grid = phi.grid
    positions = characteristics(vhat, grid, t_grid.times)
    scalar = spatial_interpolator(phi.values, grid)(positions)
    residual = time_derivative(scalar, t_grid.dt) - vhat(grid.nodes) * differentiate(scalar, grid)
    worst = _sup(residual[:, grid.interior_mask])
    logger.debug(f"Leading-term transport residual {worst:.2e}")
    if worst > tol * max(1.0, _sup(phi.values)):
        raise InsufficientResolution(
            f"u_0 misses the averaged transport equation by {worst:.2e} (> {tol:.0e}); refine grid or time steps")
    values = np.repeat(scalar[:, None, :], n_states, axis=1)
    return RegularTerm(0, t_grid.times, values, grid)


def apply_L(term: RegularTerm, model: EvolutionModel) -> np.ndarray:
    """L u = d/dt u - V u over the whole time series.

    For u0 the time derivative is vhat d/du u0 exactly (the averaged
    transport equation); higher orders use finite differences in t.
    """
    du = differentiate(term.values, term.grid)
    if term.k == 0:
        vhat = model.pi.pi @ model.velocity_on_grid
        dt_u = vhat * du
    else:
        dt_u = time_derivative(term.values, term.times[1] - term.times[0])
    return dt_u - model.velocity_on_grid * du


def _solvability_source(L_prev: np.ndarray, model: EvolutionModel) -> np.ndarray:
    """Pi V R0 (L u_{k-1}), returned as its scalar part."""
    shifted = apply_states(model.R0.R0, L_prev)
    return _pi_average(model.pi, apply_V_values(model.velocity_on_grid, shifted, model.grid))


def source_Lk(k: int, corrections: Sequence[ScalarCorrection], model: EvolutionModel) -> np.ndarray:
    """Source of the c_k transport equation, rebuilt from c_0 .. c_{k-1}.

    u_j = R0 L u_{j-1} + c_j with c_0 = u_0, and the source is Pi V R0 L u_{k-1}.
    """
    if k < 1:
        raise ValueError(f"source is defined for k >= 1, got {k}")
    if len(corrections) < k:
        raise OrderUnavailable(f"source of order {k} needs c_0 .. c_{k - 1}")
    n = model.n_states
    term = RegularTerm(0, corrections[0].times, corrections[0].lifted(n), model.grid)
    L = apply_L(term, model)
    for j in range(1, k):
        values = apply_states(model.R0.R0, L) + corrections[j].lifted(n)
        term = RegularTerm(j, corrections[j].times, values, model.grid)
        L = apply_L(term, model)
    return _solvability_source(L, model)


def printed_source(k: int, corrections: Sequence[ScalarCorrection], model: EvolutionModel) -> np.ndarray:
    """Closed double sum over Pi V R0 V^n Pi d^m/dt^m c_i written in terms of c_0 .. c_{k-1}.

    Agrees with source_Lk for k = 1 only; kept to report the gap.
    """
    if len(corrections) < k:
        raise OrderUnavailable(f"printed source of order {k} needs c_0 .. c_{k - 1}")
    v = model.velocity_on_grid
    dt = corrections[0].times[1] - corrections[0].times[0]
    total = np.zeros_like(corrections[0].values)
    for i in range(k):
        for n in range(1, k - i + 1):
            m = k - i - n
            base = corrections[i].values if m == 0 else time_derivative(corrections[i].values, dt, m)
            f = np.repeat(base[:, None, :], model.n_states, axis=1)
            for _ in range(n):
                f = apply_V_values(v, f, model.grid)
            f = apply_V_values(v, apply_states(model.R0.R0, f), model.grid)
            total += (-1) ** k * (m + 1) * _pi_average(model.pi, f)
    return total


@lru_cache(maxsize=8)
def _simpson_weights(n: int, dx: float) -> np.ndarray:
    """Row j holds the composite Simpson weights integrating nodes 0..j."""
    weights = np.zeros((n, n))
    if n > 1:
        weights[1, :2] = 0.5 * dx
    for j in range(2, n):
        weights[j, :j + 1] = simpson(np.eye(j + 1), dx=dx, axis=-1)
    weights.setflags(write=False)
    return weights


def solve_c(k: int, source, c0: GridFunction, vhat, t_grid: TimeGrid, grid: SpatialGrid = None) -> ScalarCorrection:
    """Solve d/dt c - vhat d/du c = source with c(., 0) = c0 along characteristics.

    c(u, t) = c0(X(t)) + int_0^t source(X(s), t - s) ds with X the flow of vhat
    started at u.
    """
    grid = grid or c0.grid
    source = np.asarray(source, dtype=float)
    times = t_grid.times
    if source.shape != (times.size, grid.n_points):
        raise GridMismatch(f"source has shape {source.shape}, expected {(times.size, grid.n_points)}")
    if not np.all(np.isfinite(source)):
        raise NonFiniteSource(f"source of order {k} is not finite")

    positions = characteristics(vhat, grid, times)
    values = spatial_interpolator(c0.values, grid)(positions)

    source_spline = spatial_interpolator(source, grid)
    weights = _simpson_weights(times.size, float(t_grid.dt))
    n = times.size
    for i in range(n):
        along = source_spline(positions[i])
        values[i:] += weights[i:, i, None] * along[:n - i]

    if not np.all(np.isfinite(values)):
        raise NonFiniteSource(f"c_{k} is not finite")
    logger.debug(f"Solved c_{k}: sup {_sup(values):.3e}")
    return ScalarCorrection(k, times, values, grid)


def closed_form_c(k: int, source, c0: GridFunction, vhat, t_grid: TimeGrid,
                  grid: SpatialGrid = None, n_gauss: int = 16) -> ScalarCorrection:
    """Cross-check of solve_c through V(u) = int du / vhat(u).

    Only defined when vhat keeps one sign on the domain. The source integral
    is taken in the position variable, with 1 / vhat(y) as the Jacobian.
    """
    grid = grid or c0.grid
    source = np.asarray(source, dtype=float)
    times = t_grid.times
    samples = np.linspace(grid.lo, grid.hi, 8 * grid.n_points + 1)
    speeds = np.broadcast_to(vhat(samples), samples.shape)
    if np.min(np.abs(speeds)) <= 1e-8 * max(1.0, np.max(np.abs(speeds))) or np.ptp(np.sign(speeds)) > 0:
        raise NonFiniteSource("closed form needs an averaged velocity bounded away from zero")

    span = t_grid.t_end * np.max(np.abs(speeds)) + 4.0 * grid.h
    y = np.linspace(grid.lo - span, grid.hi + span, 8 * grid.n_points + 1)
    potential = cumulative_simpson(1.0 / np.broadcast_to(vhat(grid.wrap(y)), y.shape), x=y, initial=0.0)
    V = CubicSpline(y, potential)
    order = np.argsort(potential)
    V_inverse = CubicSpline(potential[order], y[order])

    if grid.periodic:
        nodes = np.append(grid.nodes, grid.u_max)
        closed = np.concatenate([source, source[:, :1]], axis=1)
    else:
        nodes, closed = grid.nodes, source
    surface = RectBivariateSpline(times, nodes, closed)

    def source_at(t, u):
        u = grid.wrap(u) if grid.periodic else np.clip(u, grid.lo, grid.hi)
        return surface.ev(np.clip(t, 0.0, t_grid.t_end), u)

    u = grid.nodes[None, :]
    t = times[:, None]
    V_u = V(u)
    landing = V_inverse(t + V_u)
    values = spatial_interpolator(c0.values, grid)(grid.wrap(landing) if grid.periodic else landing)

    xi, wq = leggauss(n_gauss)
    half = 0.5 * (landing - u)
    ys = u[..., None] + half[..., None] * (xi + 1.0)
    lag = t[..., None] - (V(ys) - V_u[..., None])
    integrand = source_at(lag, ys) / np.broadcast_to(vhat(grid.wrap(ys)), ys.shape)
    values = values + half * np.sum(wq * integrand, axis=-1)
    return ScalarCorrection(k, times, values, grid)


def regular_term(k: int, prev: RegularTerm, c_k: ScalarCorrection, model: EvolutionModel,
                 L_prev: np.ndarray = None, tol: float = constants.SOLVABILITY_TOL) -> RegularTerm:
    """u_k = R0 L u_{k-1} + c_k (x) 1."""
    if L_prev is None:
        L_prev = apply_L(prev, model)
    solvability = _sup(_pi_average(model.pi, L_prev))
    if solvability > tol:
        raise SolvabilityViolation(f"order {k}: |Pi L u_{k - 1}| = {solvability:.3e} exceeds {tol:.1e}")
    values = apply_states(model.R0.R0, L_prev) + c_k.lifted(model.n_states)
    return RegularTerm(k, prev.times, values, model.grid)


def initial_conditions(k: int, L_prev: np.ndarray, prev_singular: Optional[SingularTerm],
                       model: EvolutionModel, layer: BoundaryLayerGrid) -> Tuple[GridFunction, StateField]:
    """(c_k(0), a_k) with a_k = -R0 L u_{k-1}(0).

    c_1(0) = 0 and c_k(0) = Pi V int_0^inf w_{k-1} for k > 1, which makes
    u_k(0) + w_k(0) vanish.
    """
    a_k = -apply_states(model.R0.R0, L_prev[0])
    if k == 1 or prev_singular is None:
        c_k0 = np.zeros(model.grid.n_points)
    else:
        flux = apply_V_values(model.velocity_on_grid, prev_singular.values, model.grid)
        c_k0 = _pi_average(model.pi, _tail_integral(flux, layer, model.gamma)[0])
    return GridFunction(model.grid, c_k0), StateField(model.grid, a_k)


# Boundary-layer part

def _tail_integral(g: np.ndarray, layer: BoundaryLayerGrid, gamma: float) -> np.ndarray:
    """int_tau^inf g(s) ds at every layer node: Simpson down from tau_max plus g(tau_max) / gamma."""
    remainder = g[-1] / gamma
    if _sup(remainder) > constants.TAIL_TOL:
        raise TailTruncationTooCoarse(
            f"tail beyond tau_max={layer.tau_max:.4g} is {_sup(remainder):.2e}, above {constants.TAIL_TOL:.0e}")
    backwards = cumulative_simpson(g[::-1], dx=layer.dtau, axis=0, initial=0.0)
    return backwards[::-1] + remainder


def _convolve(kernel: np.ndarray, g: np.ndarray, dx: float) -> np.ndarray:
    """int_0^tau kernel(tau - s) g(s) ds on the uniform layer grid."""
    out = np.zeros_like(g)
    for i in range(1, g.shape[0]):
        products = np.einsum("jxy,jyp->jxp", kernel[i::-1], g[:i + 1])
        if i == 1:
            out[i] = 0.5 * dx * (products[0] + products[1])
        else:
            out[i] = simpson(products, dx=dx, axis=0)
    return out


def singular_first(w10: StateField, layer: BoundaryLayerGrid, model: EvolutionModel) -> SingularTerm:
    """w_1(tau) = exp0(Q tau) w_1(0)."""
    scale = max(1.0, _sup(w10.values))
    leak = _sup(project_values(model.pi, w10.values))
    if leak > constants.PROJECTION_TOL * scale:
        raise ProjectionViolation(f"|Pi w_1(0)| = {leak:.2e} is not zero")
    kernel = exp0_series(model.Q, layer.taus)
    values = np.einsum("txy,yp->txp", kernel, w10.values)
    logger.debug(f"w_1 at tau_max: {_sup(values[-1]):.2e}")
    return SingularTerm(1, layer.taus, values, model.grid)


def singular_term(k: int, w_k0: StateField, prev: SingularTerm, model: EvolutionModel,
                  layer: BoundaryLayerGrid) -> SingularTerm:
    """w_k(tau) = exp0(Q tau) a_k + int_0^tau exp0(Q(tau - s)) V w_{k-1}(s) ds - Pi int_tau^inf V w_{k-1}(s) ds."""
    if prev.values.shape[0] != layer.n_tau:
        raise GridMismatch(f"w_{k - 1} has {prev.values.shape[0]} layer points, grid has {layer.n_tau}")
    kernel = exp0_series(model.Q, layer.taus)
    flux = apply_V_values(model.velocity_on_grid, prev.values, model.grid)
    values = (np.einsum("txy,yp->txp", kernel, w_k0.values)
              + _convolve(kernel, flux, layer.dtau)
              - project_values(model.pi, _tail_integral(flux, layer, model.gamma)))
    logger.debug(f"w_{k} at tau_max: {_sup(values[-1]):.2e}")
    return SingularTerm(k, layer.taus, values, model.grid)


def _laplace_quadrature(g: np.ndarray, lam: float, layer: BoundaryLayerGrid, gamma: float,
                        moment: int = 0) -> np.ndarray:
    """int_0^inf s^moment exp(-lam s) g(s) ds: Simpson with one Richardson step, then the tail."""
    taus = layer.taus
    weight = taus ** moment * np.exp(-lam * taus)
    f = weight.reshape((-1,) + (1,) * (g.ndim - 1)) * g
    m = 4 * ((layer.n_tau - 1) // 4)
    fine = simpson(f[:m + 1], dx=layer.dtau, axis=0)
    coarse = simpson(f[:m + 1:2], dx=2.0 * layer.dtau, axis=0)
    return fine + (fine - coarse) / 15.0 + f[m] / (gamma + lam)


def laplace_singular(k: int, term: SingularTerm, lambdas: Sequence[float], model: EvolutionModel,
                     layer: BoundaryLayerGrid, w10: StateField = None) -> LaplaceDiagnostics:
    """Laplace transform of w_k at the given rates, at 0 and its derivative at 0.

    For k = 1 with w_1(0) given, each transform is compared with
    laplace_exp0(lam) w_1(0) (relative sup-norm gap).
    """
    g = term.values
    if _sup(g[-1]) / model.gamma > constants.TAIL_TOL:
        raise TailTruncationTooCoarse(f"w_{k} is {_sup(g[-1]):.2e} at tau_max={layer.tau_max:.4g}")
    transforms = {float(lam): _laplace_quadrature(g, lam, layer, model.gamma) for lam in lambdas}
    at_zero = _tail_integral(g, layer, model.gamma)[0]
    derivative = -_laplace_quadrature(g, 0.0, layer, model.gamma, moment=1)

    gaps = {}
    if k == 1 and w10 is not None:
        for lam, value in transforms.items():
            closed = apply_states(laplace_exp0(model.Q, lam), w10.values)
            norm = _sup(closed)
            gaps[lam] = _sup(value - closed) / norm if norm > 0 else _sup(value)
    return LaplaceDiagnostics(k, transforms, at_zero, derivative, gaps)


def laplace_moments(k_max: int, a_list: Sequence[np.ndarray], model: EvolutionModel,
                    m_max: int = 1) -> Dict[Tuple[int, int], np.ndarray]:
    """Taylor coefficients T[k, m] of the Laplace transform of w_k at lambda = 0.

    Range part from the resolvent series of Q, null part from the layer
    equation (Pi w_k has no exp0 component):
        T[1, m] = -R0^(m+1) a_1
        T[k, m] = Pi V T[k-1, m+1] + sum_j -R0^(m-j+1) (delta_j0 a_k + V T[k-1, j])
    T[k, 0] is int_0^inf w_k and T[k, 1] the derivative at 0.
    """
    R0 = model.R0.R0
    v = model.velocity_on_grid
    powers = [np.eye(model.n_states)]
    for _ in range(m_max + k_max + 1):
        powers.append(powers[-1] @ R0)

    moments = {}
    for k in range(1, k_max + 1):
        a_k = np.asarray(getattr(a_list[k - 1], "values", a_list[k - 1]))
        for m in range(m_max + k_max - k + 1):
            total = np.zeros_like(a_k)
            for j in range(m + 1):
                forcing = a_k if j == 0 else np.zeros_like(a_k)
                if k > 1:
                    forcing = forcing + apply_V_values(v, moments[(k - 1, j)], model.grid)
                total -= apply_states(powers[m - j + 1], forcing)
            if k > 1:
                total += project_values(model.pi, apply_V_values(v, moments[(k - 1, m + 1)], model.grid))
            moments[(k, m)] = total
    return moments


# Evaluation

def interpolate_series(nodes: np.ndarray, values: np.ndarray, x: float) -> np.ndarray:
    j = int(np.searchsorted(nodes, x))
    for candidate in (j - 1, j):
        if 0 <= candidate < nodes.size and abs(nodes[candidate] - x) <= 1e-12 * max(1.0, abs(x)):
            return values[candidate]
    return CubicSpline(nodes, values, axis=0)(x)


def evaluate_expansion(result: ExpansionResult, N: int, epsilon: float, t: float,
                       include_layers: bool = True) -> StateField:
    """Phi_N(u, x, t) = u0 + sum_{k<=N} eps^k (u_k(t) + w_k(t / eps)).

    t is interpolated cubically between time nodes; layer terms are 0
    beyond tau_max.
    """
    if N < 0 or N > result.order:
        raise OrderUnavailable(f"order {N} requested, expansion computed to order {result.order}")
    if t < 0:
        raise NegativeTime(f"evaluation time must be non-negative, got {t}")
    times = result.times
    if t > times[-1] * (1.0 + 1e-12):
        raise GridMismatch(f"t={t} lies beyond the time grid end {times[-1]}")

    tau = t / epsilon
    total = np.array(interpolate_series(times, result.regular[0].values, t))
    for k in range(1, N + 1):
        term = interpolate_series(times, result.regular[k].values, t)
        if include_layers and tau <= result.layer.tau_max:
            term = term + interpolate_series(result.layer.taus, result.singular[k - 1].values, tau)
        total = total + epsilon ** k * term
    return StateField(result.model.grid, total)


def evaluate_at(result: ExpansionResult, N: int, epsilon: float, t: float, u: float, x: int) -> float:
    field_ = evaluate_expansion(result, N, epsilon, t)
    return float(interpolate_in_space(field_.values[x], field_.grid, np.array([u]))[0])


# Builder

def build_expansion(model: EvolutionModel, order: int = constants.DEFAULT_ORDER,
                    layer: BoundaryLayerGrid = None,
                    solvability_tol: float = constants.SOLVABILITY_TOL) -> ExpansionResult:
    layer = layer or BoundaryLayerGrid.for_model(model)
    t_grid = model.time_grid
    grid = model.grid
    logger.info(f"Building expansion to order {order} ({grid.n_points} points, {t_grid.n_steps} steps, "
                f"{layer.n_tau} layer points up to tau={layer.tau_max:.4g})")

    u0 = leading_term(model.phi_on_grid, model.vhat, t_grid, model.n_states)
    regular = [u0]
    corrections = [ScalarCorrection(0, u0.times, u0.values[:, 0, :], grid)]
    singular = []
    initial_layers = []
    L_terms = [apply_L(u0, model)]
    result = ExpansionResult(model, order, layer, regular, corrections, singular, L_terms, initial_layers)
    result.solvability[0] = _sup(_pi_average(model.pi, L_terms[0]))

    for k in range(1, order + 1):
        L_prev = L_terms[k - 1]
        c_k0, w_k0 = initial_conditions(k, L_prev, singular[-1] if singular else None, model, layer)
        source = _solvability_source(L_prev, model)
        c_k = solve_c(k, source, c_k0, model.vhat, t_grid, grid)
        u_k = regular_term(k, regular[k - 1], c_k, model, L_prev, solvability_tol)
        if k == 1:
            w_k = singular_first(w_k0, layer, model)
        else:
            w_k = singular_term(k, w_k0, singular[-1], model, layer)

        corrections.append(c_k)
        regular.append(u_k)
        singular.append(w_k)
        initial_layers.append(w_k0.values)
        L_terms.append(apply_L(u_k, model))

        range_gap = apply_states(model.Q.entries, u_k.values) - (L_prev - project_values(model.pi, L_prev))
        result.range_residual[k] = _sup(range_gap)
        if result.range_residual[k] > constants.RANGE_TOL * max(1.0, _sup(L_prev)):
            raise SolvabilityViolation(
                f"order {k}: Q u_k misses (I - Pi) L u_{k - 1} by {result.range_residual[k]:.2e}")
        matching = _sup(u_k.values[0] + w_k.values[0])
        result.matching[k] = matching
        if matching > constants.MATCHING_TOL * max(1.0, _sup(u_k.values[0])):
            raise ConsistencyViolation(f"order {k}: |u_k(0) + w_k(0)| = {matching:.2e}")
        result.decay[k] = _sup(w_k.values[-1])
        result.solvability[k] = _sup(_pi_average(model.pi, L_terms[k]))
        result.printed_source_gap[k] = _sup(printed_source(k, corrections[:k], model) - source)
        result.laplace[k] = laplace_singular(k, w_k, constants.LAPLACE_LAMBDAS, model, layer,
                                             w_k0 if k == 1 else None)
        logger.info(f"Order {k}: solvability {result.solvability[k - 1]:.2e}, "
                    f"matching {matching:.2e}, layer decay {result.decay[k]:.2e}")

    if order >= 1:
        if result.solvability[order] > solvability_tol:
            raise SolvabilityViolation(
                f"order {order}: |Pi L u_{order}| = {result.solvability[order]:.3e} exceeds {solvability_tol:.1e}")
        moments = laplace_moments(order, initial_layers, model, m_max=1)
        for k in range(1, order + 1):
            diagnostics = result.laplace[k]
            result.moment_gap[k] = max(_sup(moments[(k, 0)] - diagnostics.at_zero),
                                       _sup(moments[(k, 1)] - diagnostics.derivative_at_zero))
    return result


def expansion_report(result: ExpansionResult, config_hash: str = None) -> ResultTable:
    """Per-order diagnostics of a finished expansion."""
    columns = ["k", "solvability", "range_residual", "matching", "decay_at_tau_max",
               "laplace_gap", "moment_gap", "printed_source_gap"]
    table = ResultTable(columns, config_hash=config_hash)
    nan = float("nan")
    for k in range(result.order + 1):
        laplace = result.laplace.get(k)
        laplace_gap = max(laplace.closed_form_gap.values()) if laplace and laplace.closed_form_gap else nan
        table.add_row([
            k,
            result.solvability.get(k, nan),
            result.range_residual.get(k, nan),
            result.matching.get(k, nan),
            result.decay.get(k, nan),
            laplace_gap,
            result.moment_gap.get(k, nan),
            result.printed_source_gap.get(k, nan),
        ])
    return table
