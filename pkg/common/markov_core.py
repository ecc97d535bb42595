"""Linear algebra of the finite switching chain.

Generator validation, stationary distribution, ergodic projector, potential
matrix, matrix exponentials and the boundary-layer semigroup exp0.
All functions are pure; the returned objects are immutable.
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from common.constants import EDGE_THRESHOLD, EIG_CONDITION_LIMIT, ROW_SUM_TOL
from common.errors import (
    NegativeRate, NegativeTime, NonPositiveLambda, NotSquare, Reducible,
    RowSumViolation, SingularSystem,
)

logger = logging.getLogger(__name__)


def _frozen(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class GeneratorMatrix:
    """Conservative, irreducible rate matrix Q of the switching chain (units 1/time)."""
    entries: np.ndarray

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class StationaryDistribution:
    pi: np.ndarray


@dataclass(frozen=True)
class ErgodicProjector:
    """Pi = 1 pi^T: replaces a state-indexed vector by its pi-average."""
    Pi: np.ndarray

    @property
    def pi(self) -> np.ndarray:
        return self.Pi[0]


@dataclass(frozen=True)
class PotentialMatrix:
    """R0 with Q R0 = R0 Q = I - Pi and Pi R0 = R0 Pi = 0."""
    R0: np.ndarray


@dataclass(frozen=True)
class SpectralGap:
    gamma: float


def validate_generator(raw) -> GeneratorMatrix:
    """Check a raw square matrix and return it as a GeneratorMatrix.

    Rows are re-balanced after the check so they sum to zero to rounding.
    """
    matrix = np.array(raw, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise NotSquare(f"generator must be square, got shape {matrix.shape}")
    n = matrix.shape[0]
    if n < 2:
        raise NotSquare(f"generator needs at least 2 states, got {n}")
    if not np.all(np.isfinite(matrix)):
        raise RowSumViolation("generator has non-finite entries")

    for i in range(n):
        row_sum = matrix[i].sum()
        if abs(row_sum) > ROW_SUM_TOL:
            raise RowSumViolation(f"Q[{i}] sums to {row_sum:.3e}, expected 0", row=i)
        off_diagonal = np.delete(matrix[i], i)
        if np.any(off_diagonal < 0):
            raise NegativeRate(f"Q[{i}] has a negative off-diagonal rate", row=i)

    if not _is_irreducible(matrix):
        raise Reducible("generator is reducible (more than one communicating class)")

    balanced = matrix.copy()
    np.fill_diagonal(balanced, 0.0)
    np.fill_diagonal(balanced, -balanced.sum(axis=1))
    logger.debug(f"Validated {n}-state generator")
    return GeneratorMatrix(_frozen(balanced))


def _is_irreducible(matrix) -> bool:
    n = matrix.shape[0]
    reach = matrix > EDGE_THRESHOLD
    np.fill_diagonal(reach, True)
    # Warshall closure
    for k in range(n):
        reach = reach | (reach[:, [k]] & reach[[k], :])
    return bool(reach.all())


def stationary_distribution(Q: GeneratorMatrix) -> StationaryDistribution:
    """Stationary law by state reduction (GTH elimination on the rates).

    Only sums of non-negative numbers are formed, so pi is accurate to
    rounding even for stiff rate ratios.
    """
    n = Q.n
    rates = np.array(Q.entries, dtype=float)
    np.fill_diagonal(rates, 0.0)
    exits = np.zeros(n)

    for k in range(n - 1, 0, -1):
        exits[k] = rates[k, :k].sum()
        if exits[k] <= 0.0:
            raise SingularSystem(f"state reduction broke down at state {k}")
        rates[:k, :k] += np.outer(rates[:k, k], rates[k, :k]) / exits[k]

    pi = np.zeros(n)
    pi[0] = 1.0
    for k in range(1, n):
        pi[k] = pi[:k] @ rates[:k, k] / exits[k]
    pi /= pi.sum()

    if not np.all(pi > 0.0) or not np.all(np.isfinite(pi)):
        raise SingularSystem("stationary distribution is not strictly positive")
    residual = np.abs(pi @ Q.entries).max()
    logger.debug(f"Stationary distribution residual |pi Q| = {residual:.2e}")
    return StationaryDistribution(_frozen(pi))


def projector(pi: StationaryDistribution) -> ErgodicProjector:
    return ErgodicProjector(_frozen(np.outer(np.ones_like(pi.pi), pi.pi)))


def potential_matrix(Q: GeneratorMatrix, Pi: ErgodicProjector) -> PotentialMatrix:
    """R0 = Pi - (Pi - Q)^-1, i.e. minus the deviation matrix."""
    fundamental = Pi.Pi - Q.entries
    try:
        inverse = scipy.linalg.solve(fundamental, np.eye(Q.n))
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise SingularSystem(f"Pi - Q is not invertible: {e}")
    if not np.all(np.isfinite(inverse)):
        raise SingularSystem("Pi - Q is numerically singular")
    return PotentialMatrix(_frozen(Pi.Pi - inverse))


def spectral_gap(Q: GeneratorMatrix) -> SpectralGap:
    """Smallest |Re lambda| over the non-zero eigenvalues of Q."""
    eigenvalues = np.linalg.eigvals(Q.entries)
    order = np.argsort(np.abs(eigenvalues))
    nonzero = eigenvalues[order[1:]]
    gamma = float(np.min(np.abs(nonzero.real)))
    if gamma <= 0.0:
        raise SingularSystem("generator has no spectral gap")
    return SpectralGap(gamma)


class _Spectrum:
    """Eigendecomposition of Q, kept only when it is well conditioned."""

    def __init__(self, Q: GeneratorMatrix):
        self.Q = Q
        eigenvalues, vectors = np.linalg.eig(Q.entries)
        self.diagonalizable = bool(np.linalg.cond(vectors) < EIG_CONDITION_LIMIT)
        if self.diagonalizable:
            self.eigenvalues = eigenvalues
            self.vectors = vectors
            self.inverse = np.linalg.inv(vectors)

    def exp(self, t: float) -> np.ndarray:
        if self.diagonalizable:
            scaled = self.vectors * np.exp(self.eigenvalues * t)
            return np.real(scaled @ self.inverse)
        return scipy.linalg.expm(self.Q.entries * t)


def matrix_exp(Q: GeneratorMatrix, t: float) -> np.ndarray:
    """P(t) = exp(Q t)."""
    if t < 0:
        raise NegativeTime(f"matrix_exp needs t >= 0, got {t}")
    if t == 0:
        return np.eye(Q.n)
    return _Spectrum(Q).exp(t)


def matrix_exp_series(Q: GeneratorMatrix, times) -> np.ndarray:
    """exp(Q t) for every t in `times`, shape (len(times), n, n)."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise NegativeTime("matrix_exp_series needs non-negative times")
    spectrum = _Spectrum(Q)
    return np.stack([np.eye(Q.n) if t == 0 else spectrum.exp(t) for t in times])


def exp0(Q: GeneratorMatrix, tau: float) -> np.ndarray:
    """exp0(Q tau) = exp(Q tau) - Pi."""
    if tau < 0:
        raise NegativeTime(f"exp0 needs tau >= 0, got {tau}")
    Pi = projector(stationary_distribution(Q))
    return matrix_exp(Q, tau) - Pi.Pi


def exp0_series(Q: GeneratorMatrix, taus) -> np.ndarray:
    Pi = projector(stationary_distribution(Q))
    return matrix_exp_series(Q, taus) - Pi.Pi[None, :, :]


def laplace_exp0(Q: GeneratorMatrix, lam: float) -> np.ndarray:
    """Integral of exp(-lam s) exp0(Q s) over s >= 0, i.e. (lam I - Q)^-1 - Pi/lam.

    Evaluated as (lam I - Q + Pi)^-1 (I - Pi): same value for lam > 0, and
    it tends to -R0 as lam -> 0 without cancelling two 1/lam terms.
    """
    if lam <= 0:
        raise NonPositiveLambda(f"laplace_exp0 needs lambda > 0, got {lam}")
    Pi = projector(stationary_distribution(Q)).Pi
    I = np.eye(Q.n)
    try:
        return scipy.linalg.solve(lam * I - Q.entries + Pi, I - Pi)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise SingularSystem(f"resolvent at lambda={lam} failed: {e}")
