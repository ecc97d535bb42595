"""Grids, fields and the transport operators acting on them.

A field f(u, x) is stored as an array of shape (n_states, n_points); a
sequence of fields over a time or layer grid adds a leading axis. All
differential operators act on the last axis, so they apply to single
fields and to whole sequences alike.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from common.constants import FLOW_ATOL, FLOW_RTOL, PADDED, PERIODIC
from common.errors import (
    DomainEscape, NegativeTime, NonFiniteValue, TooFewSamples, ValidationError,
)

logger = logging.getLogger(__name__)

ScalarFunction = Callable[[np.ndarray], np.ndarray]

# Fourth-order first-derivative stencils, in units of 1/(12 h)
_CENTRAL = np.array([1.0, -8.0, 0.0, 8.0, -1.0])
_EDGE_0 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0])
_EDGE_1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0])


def _frozen(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform grid on the core interval [u_min, u_max].

    Periodic grids hold n_points nodes on [u_min, u_max) with spacing
    (u_max - u_min) / n_points. Padded grids extend the core by `pad` on
    both sides and hold n_points nodes including both ends.
    """
    u_min: float
    u_max: float
    n_points: int
    boundary_mode: str = PERIODIC
    pad: float = 0.0

    def __post_init__(self):
        if self.n_points < 16:
            raise ValidationError("grid.n_points", f"needs at least 16 points, got {self.n_points}")
        if not self.u_max > self.u_min:
            raise ValidationError("grid.u_max", "u_max must exceed u_min")
        if self.boundary_mode not in (PERIODIC, PADDED):
            raise ValidationError("grid.boundary_mode", f"unknown mode {self.boundary_mode!r}")
        if self.pad < 0:
            raise ValidationError("grid.pad", "pad must be non-negative")

    @property
    def periodic(self) -> bool:
        return self.boundary_mode == PERIODIC

    @property
    def lo(self) -> float:
        return self.u_min if self.periodic else self.u_min - self.pad

    @property
    def hi(self) -> float:
        return self.u_max if self.periodic else self.u_max + self.pad

    @property
    def period(self) -> float:
        return self.u_max - self.u_min

    @property
    def h(self) -> float:
        if self.periodic:
            return self.period / self.n_points
        return (self.hi - self.lo) / (self.n_points - 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.lo + self.h * np.arange(self.n_points)

    @property
    def interior_mask(self) -> np.ndarray:
        """Nodes of the core interval (every node in periodic mode)."""
        if self.periodic:
            return np.ones(self.n_points, dtype=bool)
        nodes = self.nodes
        slack = 1e-12 * (self.hi - self.lo)
        return (nodes >= self.u_min - slack) & (nodes <= self.u_max + slack)

    def coarsened(self) -> "SpatialGrid":
        """Grid with (about) twice the spacing, same domain."""
        n = self.n_points // 2 if self.periodic else (self.n_points + 1) // 2
        return SpatialGrid(self.u_min, self.u_max, max(n, 16), self.boundary_mode, self.pad)

    def wrap(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if not self.periodic:
            return points
        return self.u_min + np.mod(points - self.u_min, self.period)


@dataclass(frozen=True)
class GridFunction:
    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.shape != (self.grid.n_points,):
            raise ValueError(f"GridFunction needs {self.grid.n_points} values, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteValue("GridFunction holds non-finite values")


@dataclass(frozen=True)
class StateField:
    """f(u, x) sampled on the grid for every switching state."""
    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.n_points:
            raise ValueError(f"StateField needs shape (n_states, {self.grid.n_points}), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteValue("StateField holds non-finite values")

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    @classmethod
    def lift(cls, scalar: GridFunction, n_states: int) -> "StateField":
        """c (x) 1: the same scalar profile in every state."""
        return cls(scalar.grid, np.tile(scalar.values, (n_states, 1)))


class VelocityField:
    """Per-state velocities v(u; x), each an elementwise callable of u."""

    def __init__(self, functions: Sequence[ScalarFunction], labels: Sequence[str] = ()):
        self.functions = tuple(functions)
        self.labels = tuple(labels) or tuple(str(i) for i in range(len(self.functions)))

    @property
    def n_states(self) -> int:
        return len(self.functions)

    def evaluate(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        values = np.stack([np.broadcast_to(f(points), points.shape) for f in self.functions])
        if not np.all(np.isfinite(values)):
            raise NonFiniteValue("velocity is not finite on the requested points")
        return values

    def on_grid(self, grid: SpatialGrid) -> np.ndarray:
        return self.evaluate(grid.nodes)

    def state(self, x: int) -> ScalarFunction:
        return self.functions[x]

    def max_speed(self, grid: SpatialGrid) -> float:
        return float(np.abs(self.on_grid(grid)).max())


class AveragedVelocity:
    """v_hat(u) = sum_x pi_x v(u; x)."""

    def __init__(self, velocity: VelocityField, pi):
        self.velocity = velocity
        self.pi = np.asarray(getattr(pi, "pi", pi), dtype=float)

    def __call__(self, points):
        return self.pi @ self.velocity.evaluate(points)


@dataclass(frozen=True)
class TimeGrid:
    t_end: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 8:
            raise ValidationError("time.n_steps", f"needs at least 8 steps, got {self.n_steps}")
        if not self.t_end > 0:
            raise ValidationError("time.t_end", "t_end must be positive")

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


def sample(expr: ScalarFunction, grid: SpatialGrid) -> GridFunction:
    with np.errstate(all="ignore"):
        values = np.broadcast_to(np.asarray(expr(grid.nodes), dtype=float), grid.nodes.shape)
    bad = ~np.isfinite(values)
    if bad.any():
        where = grid.nodes[bad][0]
        raise NonFiniteValue(f"expression is not finite at u={where:.6g}")
    return GridFunction(grid, values)


def differentiate(values, grid: SpatialGrid) -> np.ndarray:
    """Fourth-order d/du along the last axis."""
    f = np.asarray(values, dtype=float)
    scale = 1.0 / (12.0 * grid.h)
    if grid.periodic:
        return scale * (np.roll(f, 2, axis=-1) - 8.0 * np.roll(f, 1, axis=-1)
                        + 8.0 * np.roll(f, -1, axis=-1) - np.roll(f, -2, axis=-1))

    out = np.empty_like(f)
    out[..., 2:-2] = (f[..., :-4] - 8.0 * f[..., 1:-3] + 8.0 * f[..., 3:-1] - f[..., 4:]) * scale
    head = f[..., :5]
    tail = f[..., -5:]
    out[..., 0] = head @ _EDGE_0 * scale
    out[..., 1] = head @ _EDGE_1 * scale
    out[..., -2] = -(tail @ _EDGE_1[::-1]) * scale
    out[..., -1] = -(tail @ _EDGE_0[::-1]) * scale
    return out


def spatial_derivative(f: GridFunction) -> GridFunction:
    return GridFunction(f.grid, differentiate(f.values, f.grid))


def derivative_matrix(grid: SpatialGrid) -> np.ndarray:
    """Dense matrix D with (D f)_i equal to differentiate(f)_i."""
    return differentiate(np.eye(grid.n_points), grid).T


def apply_V_values(velocity_on_grid, values, grid: SpatialGrid) -> np.ndarray:
    """(V f)(u, x) = v(u; x) d/du f(u, x) for arrays (..., n_states, n_points)."""
    return velocity_on_grid * differentiate(values, grid)


def apply_V(v: VelocityField, f: StateField) -> StateField:
    if v.n_states != f.n_states:
        raise ValueError(f"velocity has {v.n_states} states, field has {f.n_states}")
    return StateField(f.grid, apply_V_values(v.on_grid(f.grid), f.values, f.grid))


def project_values(pi, values) -> np.ndarray:
    """(Pi f)(u, x) = sum_y pi_y f(u, y) along the state axis (second to last)."""
    pi = np.asarray(getattr(pi, "pi", pi), dtype=float)
    mean = np.einsum("y,...yp->...p", pi, values)
    return np.broadcast_to(mean[..., None, :], np.shape(values)).copy()


def project(Pi, f: StateField) -> StateField:
    if len(Pi.pi) != f.n_states:
        raise ValueError(f"projector has {len(Pi.pi)} states, field has {f.n_states}")
    return StateField(f.grid, project_values(Pi.pi, f.values))


def apply_states(matrix, values) -> np.ndarray:
    """Apply an n x n state operator (Q, R0, exp0...) along the state axis."""
    return np.einsum("xy,...yp->...xp", np.asarray(matrix), values)


def average_velocity(v: VelocityField, pi) -> AveragedVelocity:
    return AveragedVelocity(v, pi)


def _check_domain(positions, grid):
    if grid is None or grid.periodic:
        return
    if np.any(positions < grid.lo) or np.any(positions > grid.hi):
        raise DomainEscape(f"characteristic left the padded domain [{grid.lo:.4g}, {grid.hi:.4g}]")


def flow_series(vhat: ScalarFunction, start, times, grid: SpatialGrid = None) -> np.ndarray:
    """Positions of du/dt = vhat(u) from `start` at every time in `times`.

    Returns shape (len(times),) + start.shape; `times` must be sorted and
    non-negative.
    """
    start = np.atleast_1d(np.asarray(start, dtype=float))
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise NegativeTime("flow times must be non-negative")
    if times.size == 0 or times[-1] == 0.0:
        return np.broadcast_to(start, (times.size,) + start.shape).copy()

    def rhs(_, y):
        return np.broadcast_to(vhat(y), y.shape)

    solution = solve_ivp(rhs, (0.0, float(times[-1])), start.ravel(), method="DOP853",
                         t_eval=times, rtol=FLOW_RTOL, atol=FLOW_ATOL)
    if not solution.success:
        raise DomainEscape(f"flow integration failed: {solution.message}")
    positions = solution.y.T.reshape((times.size,) + start.shape)
    _check_domain(positions, grid)
    return positions


def flow_map(vhat: ScalarFunction, u, t: float, grid: SpatialGrid = None):
    """Solve du/dt = vhat(u) from u over time t."""
    if t < 0:
        raise NegativeTime(f"flow_map needs t >= 0, got {t}")
    scalar = np.ndim(u) == 0
    positions = flow_series(vhat, u, [0.0, t], grid)[-1]
    return float(positions[0]) if scalar else positions


def characteristics(vhat: ScalarFunction, grid: SpatialGrid, times) -> np.ndarray:
    """Flow of every grid node at every time, shape (len(times), n_points).

    In padded mode only the core nodes must stay inside the padded domain;
    characteristics of pad nodes that leave it are clamped to the edge.
    """
    positions = flow_series(vhat, grid.nodes, times)
    if grid.periodic:
        return grid.wrap(positions)
    outside = (positions < grid.lo) | (positions > grid.hi)
    if np.any(outside[:, grid.interior_mask]):
        raise DomainEscape(f"a core characteristic left the padded domain [{grid.lo:.4g}, {grid.hi:.4g}]")
    return np.clip(positions, grid.lo, grid.hi)


def spatial_interpolator(values, grid: SpatialGrid) -> CubicSpline:
    """Cubic spline through node values along the last axis."""
    values = np.asarray(values, dtype=float)
    if grid.periodic:
        nodes = np.append(grid.nodes, grid.u_max)
        closed = np.concatenate([values, values[..., :1]], axis=-1)
        return CubicSpline(nodes, closed, axis=-1, bc_type="periodic")
    return CubicSpline(grid.nodes, values, axis=-1)


def interpolate_in_space(values, grid: SpatialGrid, points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    _check_domain(points, grid)
    return spatial_interpolator(values, grid)(grid.wrap(points))


def time_derivative(series, dt: float, order: int = 1) -> np.ndarray:
    """Repeated fourth-order finite differences along the leading (time) axis."""
    series = np.asarray(series, dtype=float)
    if order < 1:
        raise ValueError(f"derivative order must be >= 1, got {order}")
    if series.shape[0] < max(5, order + 4):
        raise TooFewSamples(f"order-{order} time derivative needs {max(5, order + 4)} samples, got {series.shape[0]}")

    result = series
    for _ in range(order):
        result = _time_difference(result, dt)
    return result


def _time_difference(f, dt):
    scale = 1.0 / (12.0 * dt)
    out = np.empty_like(f)
    out[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) * scale
    head = np.tensordot(_EDGE_0, f[:5], axes=(0, 0))
    out[0] = head * scale
    out[1] = np.tensordot(_EDGE_1, f[:5], axes=(0, 0)) * scale
    out[-2] = -np.tensordot(_EDGE_1[::-1], f[-5:], axes=(0, 0)) * scale
    out[-1] = -np.tensordot(_EDGE_0[::-1], f[-5:], axes=(0, 0)) * scale
    return out


def time_derivative_error(series, dt: float, order: int = 1) -> float:
    """Richardson estimate of the finite-difference error at the shared nodes."""
    series = np.asarray(series, dtype=float)
    fine = time_derivative(series, dt, order)[::2]
    coarse = time_derivative(series[::2], 2.0 * dt, order)
    n = min(len(fine), len(coarse))
    return float(np.abs(fine[:n] - coarse[:n]).max() / 15.0)
