"""Gaussian statistics of the discretized homodyne record"""

import concurrent.futures
import csv
import dataclasses
import logging
import math
import typing

from pathlib import Path

import numpy as np
import scipy.linalg

from qlidar.errors import (
    ConfigError,
    HomodyneConditionError,
    NumericalError,
    ResolutionError,
    )
from qlidar.modes import (
    MAX_PHASE_STEP,
    ModeBasis,
    TimeGrid,
    discretize_envelopes,
    position_matrix,
    )
from qlidar.state import StateSpec, duration_bandwidth


MAX_DETUNING_SPREAD = 0.1
SHARD_SIZE = 1024
JITTER_SCALE = 1e-12

logger = logging.getLogger("qlidar")


@dataclasses.dataclass(frozen=True)
class ReceiverSetup:
    """Local oscillator detunings, channel transmissivity and sampling"""

    grid: TimeGrid
    delta_omega: float = 0.0
    delta_theta: float = 0.0
    kappa: float = 1.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.delta_omega)
                and math.isfinite(self.delta_theta)):
            raise ConfigError("detunings must be finite")
        if not 0 <= self.kappa <= 1:
            raise ConfigError(f"kappa must lie in [0, 1], got {self.kappa}")

    @classmethod
    def homodyne(cls, grid: TimeGrid, kappa: float = 1.0) -> "ReceiverSetup":
        return cls(grid=grid, kappa=kappa)


@dataclasses.dataclass(frozen=True, eq=False)
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray

    def check(self, floor: float = 0.0) -> None:
        """Raise NumericalError unless sigma is symmetric and sigma - floor
        is positive semidefinite up to rounding"""
        scale = np.max(np.abs(self.sigma))
        if np.max(np.abs(self.sigma - self.sigma.T)) > 1e-12 * scale:
            raise NumericalError("covariance matrix is not symmetric")
        shifted = self.sigma - floor * np.eye(len(self.sigma))
        lowest = np.linalg.eigvalsh(shifted)[0]
        if lowest < -1e-9 * scale:
            raise NumericalError(
                f"covariance falls below the noise floor by {-lowest:.3g}")


def _sampled_envelopes(basis: ModeBasis, rx: ReceiverSetup) -> np.ndarray:
    step = rx.grid.dt * max(basis.params.sigma, abs(rx.delta_omega))
    if step > MAX_PHASE_STEP:
        raise ResolutionError(
            f"dt * max(sigma, |delta_omega|) = {step:g} exceeds "
            f"{MAX_PHASE_STEP}")
    return discretize_envelopes(basis, rx.grid) / math.sqrt(rx.grid.dt)


def mean_vector(spec: StateSpec, basis: ModeBasis,
                rx: ReceiverSetup) -> np.ndarray:
    env = _sampled_envelopes(basis, rx)
    alpha = spec.displacement_vector(basis.n_max)
    if rx.kappa == 0 or not alpha.any():
        return np.zeros(rx.grid.n_bins)
    t = rx.grid.times
    carrier = np.exp(1j * (rx.delta_omega * t + rx.delta_theta))
    return math.sqrt(2 * rx.kappa) * np.real((alpha @ env) * carrier)


def covariance_matrix(spec: StateSpec, basis: ModeBasis,
                      rx: ReceiverSetup) -> np.ndarray:
    env = _sampled_envelopes(basis, rx)
    r, phi = spec.squeezing_vectors(basis.n_max)
    t = rx.grid.times
    a = rx.delta_omega * t
    cos_a = np.cos(a)
    sin_a = np.sin(a)
    rot = np.exp(1j * a)

    excess = np.zeros((rx.grid.n_bins, rx.grid.n_bins))
    for n in np.flatnonzero(r):
        u = env[n]
        n_sq = math.sinh(r[n]) ** 2
        pair = math.sinh(r[n]) * math.cosh(r[n])
        uc = u * cos_a
        us = u * sin_a
        z = u * rot
        excess += n_sq * (np.outer(uc, uc) + np.outer(us, us))
        excess -= pair * np.real(
            np.exp(1j * (2 * rx.delta_theta + phi[n])) * np.outer(z, z))
    return np.eye(rx.grid.n_bins) / (2 * rx.grid.dt) + rx.kappa * excess


def time_bin_stats(spec: StateSpec, basis: ModeBasis,
                   rx: ReceiverSetup) -> GaussianStats:
    return GaussianStats(mean_vector(spec, basis, rx),
                         covariance_matrix(spec, basis, rx))


def ladder_weights(size: int, sigma: float
                   ) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Lowering and raising weights of (t - tau) in the mode basis"""
    n = np.arange(size)
    return np.sqrt(n) / sigma, np.sqrt(n + 1) / sigma


@dataclasses.dataclass(frozen=True, eq=False)
class ModeBasisStats:
    """Tridiagonal covariance of the mode-projected record

    `a` and `b` are the per-mode quadrature coefficients A_n, B_n;
    the matrix is (A_n + 1/2)/dt on the diagonal and
    delta_omega * coupling / dt next to it.
    """

    a: np.ndarray
    b: np.ndarray
    dt: float
    delta_omega: float
    sigma: float

    @property
    def coupling(self) -> np.ndarray:
        lower, upper = ladder_weights(len(self.a), self.sigma)
        return upper[:-1] * self.b[:-1] + lower[1:] * self.b[1:]

    @property
    def diagonal(self) -> np.ndarray:
        return (self.a + 0.5) / self.dt

    @property
    def off_diagonal(self) -> np.ndarray:
        return self.delta_omega * self.coupling / self.dt

    @property
    def sigma_tilde(self) -> np.ndarray:
        off = self.off_diagonal
        return np.diag(self.diagonal) + np.diag(off, 1) + np.diag(off, -1)


def check_homodyne_condition(spec: StateSpec, basis: ModeBasis,
                             rx: ReceiverSetup) -> None:
    if rx.delta_omega == 0:
        return
    spread = abs(rx.delta_omega) * duration_bandwidth(spec, basis)[0]
    if spread >= MAX_DETUNING_SPREAD:
        raise HomodyneConditionError(
            f"|delta_omega| * Delta_T = {spread:.3g} is not below "
            f"{MAX_DETUNING_SPREAD}")


def quadrature_coefficients(spec: StateSpec, basis: ModeBasis,
                            rx: ReceiverSetup
                            ) -> typing.Tuple[np.ndarray, np.ndarray]:
    r, phi = spec.squeezing_vectors(basis.n_max)
    s = np.sinh(r)
    c = np.cosh(r)
    psi = (2 * rx.delta_theta + 2 * rx.delta_omega * basis.params.tau
           + phi)
    return (rx.kappa * (s ** 2 - c * s * np.cos(psi)),
            rx.kappa * c * s * np.sin(psi))


def lo_overlap(basis: ModeBasis, rx: ReceiverSetup) -> np.ndarray:
    """G[m, k] = integral of envelope m times envelope k times the beat
    exp(i(delta_omega t + delta_theta)) with the local oscillator"""
    chi = rx.delta_theta + rx.delta_omega * basis.params.tau
    return np.exp(1j * chi) * scipy.linalg.expm(
        1j * rx.delta_omega * position_matrix(basis))


def mode_basis_covariance(spec: StateSpec, basis: ModeBasis,
                          rx: ReceiverSetup) -> ModeBasisStats:
    check_homodyne_condition(spec, basis, rx)
    a, b = quadrature_coefficients(spec, basis, rx)
    return ModeBasisStats(a=a, b=b, dt=rx.grid.dt,
                          delta_omega=rx.delta_omega,
                          sigma=basis.params.sigma)


def invert_mode_covariance_first_order(stats: ModeBasisStats) -> np.ndarray:
    inv_diag = 1 / (stats.a + 0.5)
    off = -stats.delta_omega * stats.coupling * inv_diag[:-1] * inv_diag[1:]
    return stats.dt * (np.diag(inv_diag) + np.diag(off, 1)
                       + np.diag(off, -1))


def factor_covariance(sigma: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, retried once with a small diagonal jitter"""
    try:
        return scipy.linalg.cholesky(sigma, lower=True)
    except scipy.linalg.LinAlgError:
        jitter = JITTER_SCALE * np.trace(sigma) / len(sigma)
        logger.warning(f"Covariance factorization failed, retrying with "
                       f"diagonal jitter {jitter:.3g}")
    try:
        return scipy.linalg.cholesky(sigma + jitter * np.eye(len(sigma)),
                                     lower=True)
    except scipy.linalg.LinAlgError:
        raise NumericalError("covariance factorization failed",
                             np.linalg.cond(sigma))


def sample_traces(stats: GaussianStats, m: int, seed: int,
                  jobs: int = 1) -> np.ndarray:
    """Draw m records; shard k of SHARD_SIZE draws uses seed (seed, k)"""
    if m < 1:
        raise ConfigError(f"need at least one repetition, got {m}")
    chol = factor_covariance(stats.sigma)
    sizes = [min(SHARD_SIZE, m - start) for start in range(0, m, SHARD_SIZE)]

    def draw(k: int) -> np.ndarray:
        rng = np.random.default_rng([seed, k])
        z = rng.standard_normal((sizes[k], len(stats.mu)))
        return stats.mu + z @ chol.T

    with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as executor:
        return np.vstack(list(executor.map(draw, range(len(sizes)))))


def export_csv(stats: GaussianStats, grid: TimeGrid, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "mean.csv").open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "t", "mu"])
        for i, (t, mu) in enumerate(zip(grid.times, stats.mu)):
            writer.writerow([i, f"{t:.17g}", f"{mu:.17g}"])
    with (directory / "cov.csv").open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["i", "j", "value"])
        for i, j in zip(*np.triu_indices(len(stats.mu))):
            writer.writerow([i, j, f"{stats.sigma[i, j]:.17g}"])
