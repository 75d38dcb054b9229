"""Hermite-Gaussian temporal modes and the target parameter map"""

import dataclasses
import logging
import math
import typing

import numpy as np

from qlidar.errors import ConfigError, ResolutionError


PARAMETERS = ("tau", "omega", "theta")
DEFAULT_OMEGA = 5.0
DEFAULT_DT = 0.2
DEFAULT_BINS = 100
DEFAULT_HALF_SPAN = 10.0
MIN_HALF_SPAN = 8.0
MAX_PHASE_STEP = 0.5
MAX_VELOCITY_RATIO = 0.01
MAX_TRANSFORM_EPS = 1e-3
TRUNCATION_BUFFER = 5
FINE_STEP = 0.01

logger = logging.getLogger("qlidar")


@dataclasses.dataclass(frozen=True)
class ModeParams:
    """Center time, carrier frequency, carrier phase and bandwidth"""

    tau: float = 0.0
    omega: float = DEFAULT_OMEGA
    theta: float = 0.0
    sigma: float = 1.0

    def __post_init__(self) -> None:
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if not math.isfinite(value):
                raise ConfigError(f"{field.name} must be finite, got {value}")
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")

    def with_(self, **changes) -> "ModeParams":
        return dataclasses.replace(self, **changes)


@dataclasses.dataclass(frozen=True)
class ModeBasis:
    params: ModeParams
    n_max: int

    def __post_init__(self) -> None:
        if self.n_max < 0:
            raise ConfigError(f"n_max must be non-negative, got {self.n_max}")

    @property
    def size(self) -> int:
        return self.n_max + 1


@dataclasses.dataclass(frozen=True)
class TimeGrid:
    """Homodyne record sampled at bin centers t_start + i * dt"""

    t_start: float
    dt: float
    n_bins: int

    def __post_init__(self) -> None:
        for value in (self.t_start, self.dt, self.n_bins):
            if isinstance(value, bool) or not isinstance(
                    value, (int, float, np.integer, np.floating)):
                raise ConfigError(
                    f"time grid values must be numbers, got {value!r}")
        if not (math.isfinite(self.t_start) and math.isfinite(self.dt)):
            raise ConfigError("time grid values must be finite")
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if int(self.n_bins) != self.n_bins or self.n_bins < 1:
            raise ConfigError(
                f"n_bins must be a positive integer, got {self.n_bins}")

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_bins)

    @property
    def t_end(self) -> float:
        return self.t_start + self.dt * (self.n_bins - 1)


def default_grid(p: ModeParams) -> TimeGrid:
    return TimeGrid(t_start=p.tau - DEFAULT_HALF_SPAN / p.sigma,
                    dt=DEFAULT_DT / p.sigma,
                    n_bins=DEFAULT_BINS)


@dataclasses.dataclass(frozen=True)
class TargetKinematics:
    distance: float = 0.0
    velocity: float = 0.0
    light_speed: float = 1.0
    theta_r: float = 0.0

    def __post_init__(self) -> None:
        if not self.light_speed > 0:
            raise ConfigError(
                f"light speed must be positive, got {self.light_speed}")
        ratio = self.velocity / self.light_speed
        if not abs(ratio) < MAX_VELOCITY_RATIO:
            raise ConfigError(
                f"|v/c| = {abs(ratio):g} is not below {MAX_VELOCITY_RATIO}")


def envelopes(n_max: int, t, p: ModeParams) -> np.ndarray:
    """Real envelopes of modes 0..n_max, shape (n_max + 1,) + shape(t)"""
    x = p.sigma * (np.asarray(t, dtype=float) - p.tau) / math.sqrt(2)
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = ((p.sigma ** 2 / 2) ** 0.25 * math.pi ** -0.25
              * np.exp(-x ** 2 / 2))
    if n_max >= 1:
        out[1] = math.sqrt(2) * x * out[0]
    for n in range(1, n_max):
        out[n + 1] = (math.sqrt(2 / (n + 1)) * x * out[n]
                      - math.sqrt(n / (n + 1)) * out[n - 1])
    return out


def envelope_value(n: int, t, p: ModeParams):
    if n < 0:
        raise ConfigError(f"mode index must be non-negative, got {n}")
    return envelopes(n, t, p)[n]


def mode_value(n: int, t, p: ModeParams):
    carrier = np.exp(-1j * (p.omega * np.asarray(t, dtype=float) + p.theta))
    return envelope_value(n, t, p) * carrier


def envelope_time_derivative(n_max: int, t, p: ModeParams) -> np.ndarray:
    env = envelopes(n_max + 1, t, p)
    out = np.empty_like(env[:-1])
    for n in range(n_max + 1):
        lower = math.sqrt(n) * env[n - 1] if n > 0 else 0.0
        out[n] = p.sigma / 2 * (lower - math.sqrt(n + 1) * env[n + 1])
    return out


class GammaCoefficients(typing.NamedTuple):
    entries: typing.Tuple[typing.Tuple[int, complex], ...]
    truncated: bool


def gamma_coeffs(alpha: str, k: int, basis: ModeBasis) -> GammaCoefficients:
    """Nonzero expansion coefficients of d(mode k)/d(alpha) in the basis"""
    if alpha not in PARAMETERS:
        raise ConfigError(f"unknown parameter {alpha!r}")
    if not 0 <= k <= basis.n_max:
        raise ConfigError(f"mode {k} outside basis 0..{basis.n_max}")

    p = basis.params
    raw = []
    if alpha == "tau":
        if k > 0:
            raw.append((k - 1, -p.sigma / 2 * math.sqrt(k)))
        raw.append((k + 1, p.sigma / 2 * math.sqrt(k + 1)))
    elif alpha == "omega":
        if k > 0:
            raw.append((k - 1, -1j * math.sqrt(k) / p.sigma))
        if p.tau != 0:
            raw.append((k, -1j * p.tau))
        raw.append((k + 1, -1j * math.sqrt(k + 1) / p.sigma))
    else:
        raw.append((k, -1j))

    entries = tuple((n, complex(g)) for n, g in raw if n <= basis.n_max)
    return GammaCoefficients(entries, len(entries) < len(raw))


def gamma_matrix(alpha: str, basis: ModeBasis) -> np.ndarray:
    """Dense Gamma[k, n] over the truncated basis"""
    out = np.zeros((basis.size, basis.size), dtype=complex)
    for k in range(basis.size):
        for n, g in gamma_coeffs(alpha, k, basis).entries:
            out[k, n] = g
    return out


def position_matrix(basis: ModeBasis) -> np.ndarray:
    """X[n, k] with (t - tau) * envelope_n = sum_k X[n, k] * envelope_k"""
    off = np.sqrt(np.arange(1, basis.size)) / basis.params.sigma
    return np.diag(off, 1) + np.diag(off, -1)


def fine_times(p: ModeParams, half_span: float
               ) -> typing.Tuple[np.ndarray, float]:
    """Quadrature grid of step 0.01/sigma over tau +/- half_span/sigma"""
    dt = FINE_STEP / p.sigma
    half = half_span / p.sigma
    return p.tau - half + dt * np.arange(int(round(2 * half / dt)) + 1), dt


def orthonormality_error(basis: ModeBasis) -> float:
    """Largest deviation of the envelope overlaps from the identity"""
    t, dt = fine_times(basis.params,
                       DEFAULT_HALF_SPAN + 2 * math.sqrt(basis.size))
    env = envelopes(basis.n_max, t, basis.params)
    gram = (env * dt) @ env.T
    return float(np.max(np.abs(gram - np.eye(basis.size))))


def discretize_envelopes(basis: ModeBasis, grid: TimeGrid) -> np.ndarray:
    p = basis.params
    half = MIN_HALF_SPAN / p.sigma
    if grid.t_start > p.tau - half or grid.t_end < p.tau + half:
        raise ResolutionError(
            f"grid [{grid.t_start:g}, {grid.t_end:g}] does not span "
            f"tau +/- {half:g}")
    if grid.dt * p.sigma > MAX_PHASE_STEP:
        raise ResolutionError(
            f"dt * sigma = {grid.dt * p.sigma:g} exceeds {MAX_PHASE_STEP}")
    return math.sqrt(grid.dt) * envelopes(basis.n_max, grid.times, p)


def apply_target(p_in: ModeParams, kin: TargetKinematics) -> ModeParams:
    return p_in.with_(
        tau=p_in.tau + 2 * kin.distance / kin.light_speed,
        omega=p_in.omega * (1 + 2 * kin.velocity / kin.light_speed),
        theta=p_in.theta + kin.theta_r)


def invert_target(p_out: ModeParams, kin: TargetKinematics) -> ModeParams:
    return p_out.with_(
        tau=p_out.tau - 2 * kin.distance / kin.light_speed,
        omega=p_out.omega / (1 + 2 * kin.velocity / kin.light_speed),
        theta=p_out.theta - kin.theta_r)


class TransformCheck(typing.NamedTuple):
    residual: float
    mixing_residual: float
    # weight of input mode m in output mode n
    coefficients: np.ndarray


def infinitesimal_transform_check(basis: ModeBasis,
                                  eps_tau: float = 0.0,
                                  eps_omega: float = 0.0,
                                  eps_theta: float = 0.0,
                                  ) -> TransformCheck:
    """Compare overlaps of shifted modes against first-order mixing

    `residual` is measured against the derivative coefficients
    (identity plus eps * Gamma), `mixing_residual` against the
    nearest-neighbour operator form with diagonal 1 + i eps_theta
    + i eps_omega tau and neighbour weights B_n.  Both are O(eps^2).
    """
    p = basis.params
    if (abs(eps_tau * p.sigma) >= MAX_TRANSFORM_EPS
            or abs(eps_omega / p.sigma) >= MAX_TRANSFORM_EPS
            or abs(eps_theta) >= MAX_TRANSFORM_EPS):
        raise ConfigError("transform check needs |eps| below "
                          f"{MAX_TRANSFORM_EPS} in units of sigma")

    t, dt = fine_times(p, DEFAULT_HALF_SPAN + 4)
    shifted = p.with_(tau=p.tau + eps_tau, omega=p.omega + eps_omega,
                      theta=p.theta + eps_theta)
    phase = np.exp(-1j * (eps_omega * t + eps_theta))
    overlap = ((envelopes(basis.n_max, t, p) * dt)
               @ (envelopes(basis.n_max, t, shifted) * phase).T)

    predicted = np.eye(basis.size, dtype=complex)
    for alpha, eps in zip(PARAMETERS, (eps_tau, eps_omega, eps_theta)):
        if eps:
            predicted += eps * gamma_matrix(alpha, basis).T
    coefficients = overlap.conj().T

    n = np.arange(basis.size)
    b = (-eps_tau * p.sigma * np.sqrt(n) / 2
         + 1j * eps_omega * np.sqrt(n) / p.sigma)
    mixing = np.diag(np.full(basis.size,
                             1 + 1j * eps_theta + 1j * eps_omega * p.tau))
    mixing += np.diag(b[1:], -1) - np.diag(b[1:].conj(), 1)

    return TransformCheck(
        residual=float(np.max(np.abs(overlap - predicted))),
        mixing_residual=float(np.max(np.abs(coefficients - mixing))),
        coefficients=coefficients)
