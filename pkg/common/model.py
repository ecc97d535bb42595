"""The switching transport model assembled from a config."""
import logging
from dataclasses import replace
from typing import Sequence

import numpy as np

from common.config import ModelConfig
from common.expression import Expression
from common.function_space import (
    AveragedVelocity, SpatialGrid, StateField, TimeGrid, VelocityField, sample,
)
from common.markov_core import (
    GeneratorMatrix, potential_matrix, projector, spectral_gap, stationary_distribution,
    validate_generator,
)

logger = logging.getLogger(__name__)


class EvolutionModel:
    """Generator, velocities, test function and grids of one random evolution.

    Everything derived from Q (pi, Pi, R0, gamma) is computed once here and
    shared read-only by the expansion, the oracles and the validation code.
    """

    def __init__(self, Q, velocity: Sequence, phi, grid: SpatialGrid, time_grid: TimeGrid,
                 n_tau: int = 600, tau_max_factor: float = 30.0, labels: Sequence[str] = ()):
        self.Q = Q if isinstance(Q, GeneratorMatrix) else validate_generator(Q)
        self.pi = stationary_distribution(self.Q)
        self.Pi = projector(self.pi)
        self.R0 = potential_matrix(self.Q, self.Pi)
        self.gamma = spectral_gap(self.Q).gamma

        if not isinstance(velocity, VelocityField):
            velocity = VelocityField(velocity, labels)
        if velocity.n_states != self.Q.n:
            raise ValueError(f"{velocity.n_states} velocities for {self.Q.n} states")
        self.velocity = velocity
        self.vhat = AveragedVelocity(self.velocity, self.pi)
        self.phi = phi
        self.grid = grid
        self.time_grid = time_grid
        self.n_tau = n_tau
        self.tau_max_factor = tau_max_factor

        self.velocity_on_grid = self.velocity.on_grid(grid)
        self.phi_on_grid = sample(phi, grid)

    @classmethod
    def from_config(cls, config: ModelConfig) -> "EvolutionModel":
        grid = SpatialGrid(config.grid.u_min, config.grid.u_max, config.grid.n_points,
                           config.grid.boundary_mode, config.grid.pad)
        model = cls(
            config.Q,
            [Expression(source) for source in config.velocity],
            Expression(config.phi),
            grid,
            TimeGrid(config.time.t_end, config.time.n_steps),
            n_tau=config.layer.n_tau,
            tau_max_factor=config.layer.tau_max_factor,
            labels=config.states,
        )
        logger.info(f"Built {model.n_states}-state model on {grid.n_points} points, gamma={model.gamma:.4g}")
        return model

    @property
    def n_states(self) -> int:
        return self.Q.n

    @property
    def max_speed(self) -> float:
        return float(np.abs(self.velocity_on_grid).max())

    def initial_field(self) -> StateField:
        """phi lifted into every state: the data of the backward system."""
        return StateField.lift(self.phi_on_grid, self.n_states)

    def with_grid(self, grid: SpatialGrid) -> "EvolutionModel":
        return EvolutionModel(self.Q, self.velocity, self.phi, grid, self.time_grid,
                              self.n_tau, self.tau_max_factor)

    def with_time_grid(self, t_end: float = None, n_steps: int = None) -> "EvolutionModel":
        time_grid = replace(self.time_grid,
                            t_end=self.time_grid.t_end if t_end is None else t_end,
                            n_steps=self.time_grid.n_steps if n_steps is None else n_steps)
        return EvolutionModel(self.Q, self.velocity, self.phi, self.grid, time_grid,
                              self.n_tau, self.tau_max_factor)

    def phi_values(self, points) -> np.ndarray:
        """phi at arbitrary positions (wrapped into the period in periodic mode)."""
        with np.errstate(all="ignore"):
            return np.broadcast_to(self.phi(self.grid.wrap(points)), np.shape(points))

    def __repr__(self):
        return f"EvolutionModel(n_states={self.n_states}, n_points={self.grid.n_points}, gamma={self.gamma:.4g})"
