"""Reference computations of Phi_eps used to arbitrate the expansion.

direct_solve integrates the stiff backward system
    d/dt Phi = (Q / eps + V) Phi,  Phi(0) = phi
by Strang splitting; mc_estimate averages phi over simulated switching
paths. The two share nothing beyond the model definition.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np

from common import constants
from common.errors import CflViolation, DomainEscape, GridMismatch, ValidationError
from common.function_space import (
    SpatialGrid, StateField, flow_series, interpolate_in_space, sample, spatial_interpolator,
)
from common.markov_core import matrix_exp
from common.model import EvolutionModel
from engine.utils import read_thread_count, run_in_threads

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DirectSolution:
    """Snapshots of Phi_eps, values shape (n_times, n_states, n_points)."""
    times: np.ndarray
    snapshots: np.ndarray
    grid: SpatialGrid
    epsilon: float
    dt: float
    h: float
    splitting: str = "strang"
    error_estimate: float = float("nan")

    def at(self, t: float) -> StateField:
        matches = np.nonzero(np.isclose(self.times, t, rtol=1e-12, atol=1e-14))[0]
        if matches.size == 0:
            raise GridMismatch(f"no snapshot at t={t}; available {list(self.times)}")
        return StateField(self.grid, self.snapshots[matches[0]])

    def value(self, t: float, u: float, x: int) -> float:
        return float(interpolate_in_space(self.at(t).values[x], self.grid, np.array([u]))[0])


# Direct solver

def _departures(velocity, grid: SpatialGrid, dt: float) -> np.ndarray:
    """Foot of the characteristic of du/dt = v(u) after dt, for every node."""
    points = flow_series(velocity, grid.nodes, [0.0, dt])[-1]
    if grid.periodic:
        return grid.wrap(points)
    outside = (points < grid.lo) | (points > grid.hi)
    if np.any(outside & grid.interior_mask):
        raise DomainEscape(f"transport of a core node left the padded domain [{grid.lo:.4g}, {grid.hi:.4g}]")
    return np.clip(points, grid.lo, grid.hi)


def _transport_matrices(model: EvolutionModel, grid: SpatialGrid, dt: float):
    """Dense semi-Lagrangian operators f -> f(flow_x(., dt)), one per state."""
    basis = spatial_interpolator(np.eye(grid.n_points), grid)
    return [basis(_departures(model.velocity.state(x), grid, dt)).T for x in range(model.n_states)]


def _march(model: EvolutionModel, grid: SpatialGrid, epsilon: float, times, dt_target: float):
    Phi = np.tile(sample(model.phi, grid).values, (model.n_states, 1))
    snapshots = []
    operators = {}
    t_now = 0.0
    dt_used = 0.0
    for t_next in times:
        span = t_next - t_now
        if span > 0:
            n_sub = max(1, math.ceil(span / dt_target - 1e-9))
            dt = span / n_sub
            key = round(dt, 15)
            if key not in operators:
                operators[key] = (_transport_matrices(model, grid, 0.5 * dt),
                                  matrix_exp(model.Q, dt / epsilon))
            half, coupling = operators[key]
            for _ in range(n_sub):
                Phi = np.stack([half[x] @ Phi[x] for x in range(model.n_states)])
                Phi = coupling @ Phi
                Phi = np.stack([half[x] @ Phi[x] for x in range(model.n_states)])
            dt_used = max(dt_used, dt)
        snapshots.append(Phi.copy())
        t_now = t_next
    return np.stack(snapshots), dt_used


def direct_solve(model: EvolutionModel, epsilon: float, times: Sequence[float],
                 dt_factor: float = constants.DEFAULT_DT_FACTOR, cfl: float = constants.DEFAULT_CFL,
                 dt: float = None, richardson: bool = True) -> DirectSolution:
    """Strang splitting: half transport per state, exact coupling exp(Q dt / eps), half transport.

    The error estimate combines a run at twice the step and a run on the
    half-resolution grid: |Phi_dt - Phi_2dt| / 3 + |Phi_h - Phi_2h| / 7.
    """
    if epsilon <= 0:
        raise ValidationError("epsilon", f"must be positive, got {epsilon}")
    times = np.asarray(sorted(float(t) for t in times))
    if times.size == 0 or times[0] < 0:
        raise ValidationError("times", "need at least one non-negative snapshot time")

    grid = model.grid
    vmax = model.max_speed
    cfl_limit = cfl * grid.h / vmax if vmax > 0 else math.inf
    if dt is None:
        dt = min(cfl_limit, dt_factor * epsilon)
    elif dt > cfl_limit:
        raise CflViolation(f"dt={dt:.3e} exceeds cfl*h/max|v| = {cfl_limit:.3e}")

    snapshots, dt_used = _march(model, grid, epsilon, times, dt)
    mask = grid.interior_mask

    estimate = float("nan")
    if richardson:
        coarse_time, _ = _march(model, grid, epsilon, times, 2.0 * dt)
        time_error = np.abs(snapshots - coarse_time)[..., mask].max() / 3.0
        coarse_grid = grid.coarsened()
        coarse_space, _ = _march(model, coarse_grid, epsilon, times, dt)
        back = spatial_interpolator(coarse_space, coarse_grid)(grid.nodes)
        space_error = np.abs(snapshots - back)[..., mask].max() / 7.0
        estimate = float(time_error + space_error)

    bound = np.abs(model.phi_on_grid.values).max() + 1e-6
    if grid.periodic and np.abs(snapshots).max() > bound:
        logger.warning(f"Direct solution exceeds max|phi| by {np.abs(snapshots).max() - bound + 1e-6:.2e}")

    logger.info(f"Direct solve eps={epsilon:g}: dt={dt_used:.3e}, h={grid.h:.3e}, error estimate {estimate:.2e}")
    return DirectSolution(times, snapshots, grid, epsilon, dt_used, grid.h, "strang", estimate)


# Monte Carlo

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_2 = np.uint64(0x94D049BB133111EB)
_UNIT = 2.0 ** -53


def splitmix64(z) -> np.ndarray:
    """SplitMix64 output function applied elementwise (wrapping uint64 arithmetic)."""
    with np.errstate(over="ignore"):
        z = np.atleast_1d(np.asarray(z, dtype=np.uint64)) + _GAMMA
        z = (z ^ (z >> np.uint64(30))) * _MIX_1
        z = (z ^ (z >> np.uint64(27))) * _MIX_2
        return z ^ (z >> np.uint64(31))


def path_keys(seed: int, path_indices) -> np.ndarray:
    """Stream key of every path, a function of (seed, path index) only."""
    if not 0 <= seed <= constants.MAX_SEED:
        raise ValidationError("seed", f"must be an integer in [0, 2^64 - 1], got {seed!r}")
    return splitmix64(np.uint64(seed) ^ splitmix64(np.asarray(path_indices, dtype=np.uint64)))


def _uniforms(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Draw number `counters` of each stream as a double in [0, 1)."""
    with np.errstate(over="ignore"):
        bits = splitmix64(keys + counters * _GAMMA)
    return (bits >> np.uint64(11)).astype(np.float64) * _UNIT


class PathStream:
    """Counter-based random stream of one path."""

    def __init__(self, seed: int, path_index: int):
        self.seed = seed
        self.path_index = path_index
        self.key = path_keys(seed, [path_index])

    def uniform(self, counter: int) -> float:
        return float(_uniforms(self.key, np.array([counter], dtype=np.uint64))[0])


class _Switching:
    """Jump rates and jump distribution of the chain with generator Q / eps."""

    def __init__(self, model: EvolutionModel, epsilon: float):
        Q = model.Q.entries
        self.rates = -np.diag(Q) / epsilon
        jumps = np.where(np.eye(model.n_states, dtype=bool), 0.0, Q) / (-np.diag(Q))[:, None]
        cdf = np.cumsum(jumps, axis=1)
        self.cdf = cdf / cdf[:, -1:]

    def holding(self, states, u):
        return -np.log1p(-u) / self.rates[states]

    def target(self, states, u):
        return np.argmax(u[:, None] < self.cdf[states], axis=1)


def _velocity(model: EvolutionModel, points, states):
    values = model.velocity.evaluate(model.grid.wrap(points))
    return values[states, np.arange(points.size)]


def _simulate_chunk(model: EvolutionModel, epsilon: float, t_end: float, u0: float, x0: int,
                    keys: np.ndarray, step_cap: float = constants.MC_STEP_CAP) -> np.ndarray:
    """Final positions of a batch of paths, each driven by its own stream."""
    m = keys.size
    grid = model.grid
    switching = _Switching(model, epsilon)
    positions = np.full(m, float(u0))
    states = np.full(m, int(x0))
    counters = np.zeros(m, dtype=np.uint64)
    remaining = np.full(m, float(t_end))

    hold = switching.holding(states, _uniforms(keys, counters))
    counters += np.uint64(1)

    while True:
        idx = np.nonzero(remaining > 0)[0]
        if idx.size == 0:
            break
        h = np.minimum(np.minimum(step_cap, hold[idx]), remaining[idx])
        p, x = positions[idx], states[idx]
        k1 = _velocity(model, p, x)
        k2 = _velocity(model, p + 0.5 * h * k1, x)
        k3 = _velocity(model, p + 0.5 * h * k2, x)
        k4 = _velocity(model, p + h * k3, x)
        p = p + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if grid.periodic:
            p = grid.wrap(p)
        elif np.any((p < grid.lo) | (p > grid.hi)):
            raise DomainEscape(f"a path left the padded domain [{grid.lo:.4g}, {grid.hi:.4g}]")
        positions[idx] = p
        hold[idx] -= h
        remaining[idx] -= h

        jumped = idx[(hold[idx] <= 0) & (remaining[idx] > 0)]
        if jumped.size:
            states[jumped] = switching.target(states[jumped], _uniforms(keys[jumped], counters[jumped]))
            counters[jumped] += np.uint64(1)
            hold[jumped] = switching.holding(states[jumped], _uniforms(keys[jumped], counters[jumped]))
            counters[jumped] += np.uint64(1)
    return positions


def simulate_path(model: EvolutionModel, epsilon: float, t_end: float, u0: float, x0: int,
                  stream: PathStream) -> float:
    """Final position u(t_end) of one path of du/dt = v(u; x(t / eps))."""
    if epsilon <= 0:
        raise ValidationError("epsilon", f"must be positive, got {epsilon}")
    return float(_simulate_chunk(model, epsilon, t_end, u0, x0, stream.key)[0])


def first_holding_times(model: EvolutionModel, epsilon: float, x0: int, n_paths: int, seed: int) -> np.ndarray:
    """First holding time of every path started in x0 (the draws simulate_path uses)."""
    keys = path_keys(seed, np.arange(n_paths))
    return _Switching(model, epsilon).holding(np.full(n_paths, x0), _uniforms(keys, np.zeros(n_paths, dtype=np.uint64)))


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n_paths: int
    seed: int
    t: float
    u: float
    x: int
    epsilon: float

    def as_row(self) -> Dict[str, float]:
        return {"t": self.t, "u": self.u, "state": self.x, "mean": self.mean,
                "stderr": self.stderr, "n_paths": self.n_paths, "seed": self.seed}


def mc_estimate(model: EvolutionModel, epsilon: float, t: float, u: float, x: int,
                n_paths: int = constants.DEFAULT_N_PATHS, seed: int = constants.DEFAULT_SEED,
                workers: int = None) -> McEstimate:
    """Mean of phi(u(t)) over n_paths switching paths started at (u, x).

    Paths are split into fixed chunks independent of the worker count and
    reduced in path order, so the result is bit-identical for any number
    of workers.
    """
    if n_paths < 100:
        raise ValidationError("n_paths", f"need at least 100 paths, got {n_paths}")
    if not 0 <= x < model.n_states:
        raise ValidationError("x", f"state {x} out of range for {model.n_states} states")
    workers = read_thread_count() if workers is None else workers

    keys = path_keys(seed, np.arange(n_paths))
    chunks = [keys[i:i + constants.MC_CHUNK_SIZE] for i in range(0, n_paths, constants.MC_CHUNK_SIZE)]
    finals = np.concatenate(run_in_threads(
        lambda chunk: _simulate_chunk(model, epsilon, t, u, x, chunk), chunks, workers))

    values = np.asarray(model.phi_values(finals), dtype=float)
    mean = float(np.mean(values))
    stderr = float(np.std(values, ddof=1) / math.sqrt(n_paths))
    logger.info(f"MC eps={epsilon:g} t={t:g} u={u:g} x={x}: {mean:.6f} +- {stderr:.2e} "
                f"({n_paths} paths, {workers} workers)")
    return McEstimate(mean, stderr, n_paths, seed, t, u, x, epsilon)
