"""Displaced-squeezed probe states and their resource budget"""

import dataclasses
import json
import logging
import math
import typing

import numpy as np

from qlidar.errors import ConfigError, UnsupportedError
from qlidar.modes import (
    DEFAULT_HALF_SPAN,
    TRUNCATION_BUFFER,
    ModeBasis,
    envelope_time_derivative,
    envelopes,
    fine_times,
    )


R_CAP_20DB = math.log(10)
STANDARD_VARIANTS = {
    # squeezing angles of modes 0, 1, 2
    "standard": (0.0, -math.pi / 2, 0.0),
    "mirrored": (0.0, math.pi / 2, 0.0),
    # the variant label follows its common name; it flips mode 1
    "phi0_pi": (0.0, math.pi, 0.0),
    "phi1_zero": (0.0, 0.0, 0.0),
}
DISPLACEMENT_PHASE = -math.pi / 4
CENTERING_TOLERANCE = 1e-6

logger = logging.getLogger("qlidar")


@dataclasses.dataclass(frozen=True)
class ModeOccupation:
    n: int
    alpha: complex = 0j
    r: float = 0.0
    phi: float = 0.0

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 0:
            raise ConfigError(
                f"mode index must be a non-negative integer, got {self.n}")
        alpha = complex(self.alpha)
        if not (math.isfinite(alpha.real) and math.isfinite(alpha.imag)
                and math.isfinite(self.r) and math.isfinite(self.phi)):
            raise ConfigError(f"mode {self.n}: values must be finite")
        if self.r < 0:
            raise ConfigError(
                f"mode {self.n}: squeezing magnitude must be >= 0, "
                f"got {self.r}")
        object.__setattr__(self, "alpha", alpha)

    @property
    def n_coh(self) -> float:
        return abs(self.alpha) ** 2

    @property
    def n_sq(self) -> float:
        return math.sinh(self.r) ** 2


@dataclasses.dataclass(frozen=True)
class StateSpec:
    """Product of single-mode displaced squeezed states; unlisted modes
    are vacuum"""

    occupations: typing.Tuple[ModeOccupation, ...] = ()

    def __post_init__(self) -> None:
        occupations = tuple(self.occupations)
        indices = [occ.n for occ in occupations]
        if len(set(indices)) != len(indices):
            raise ConfigError(f"duplicate mode indices in {indices}")
        object.__setattr__(self, "occupations", occupations)

    @property
    def max_index(self) -> int:
        return max((occ.n for occ in self.occupations), default=0)

    @property
    def is_vacuum(self) -> bool:
        return all(occ.alpha == 0 and occ.r == 0
                   for occ in self.occupations)

    @property
    def is_coherent(self) -> bool:
        return all(occ.r == 0 for occ in self.occupations)

    def displacement_vector(self, n_max: int) -> np.ndarray:
        out = np.zeros(n_max + 1, dtype=complex)
        for occ in self._within(n_max):
            out[occ.n] = occ.alpha
        return out

    def squeezing_vectors(self, n_max: int
                          ) -> typing.Tuple[np.ndarray, np.ndarray]:
        r = np.zeros(n_max + 1)
        phi = np.zeros(n_max + 1)
        for occ in self._within(n_max):
            r[occ.n] = occ.r
            phi[occ.n] = occ.phi
        return r, phi

    def _within(self, n_max: int) -> typing.Iterator[ModeOccupation]:
        for occ in self.occupations:
            if occ.n > n_max:
                raise ConfigError(
                    f"mode {occ.n} is populated but the basis stops at "
                    f"{n_max}")
            yield occ

    def to_dict(self) -> dict:
        return {"occupations": [
            {"n": occ.n,
             "alpha_re": occ.alpha.real,
             "alpha_im": occ.alpha.imag,
             "r": occ.r,
             "phi": occ.phi}
            for occ in self.occupations]}

    @classmethod
    def from_dict(cls, data: dict) -> "StateSpec":
        try:
            return cls(tuple(
                ModeOccupation(n=entry["n"],
                               alpha=complex(entry.get("alpha_re", 0.0),
                                             entry.get("alpha_im", 0.0)),
                               r=entry.get("r", 0.0),
                               phi=entry.get("phi", 0.0))
                for entry in data["occupations"]))
        except (KeyError, TypeError) as err:
            raise ConfigError(f"malformed state description: {err}")

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "StateSpec":
        return cls.from_dict(json.loads(text))


class PhotonBudget(typing.NamedTuple):
    n_total: float
    n_coh: float
    n_sq: float


@dataclasses.dataclass(frozen=True)
class ResourceBudget:
    n_total: float
    n_coh: float
    n_sq: float
    delta_t: float
    delta_omega: float


def photon_budget(spec: StateSpec) -> PhotonBudget:
    n_coh = sum(occ.n_coh for occ in spec.occupations)
    n_sq = sum(occ.n_sq for occ in spec.occupations)
    return PhotonBudget(n_coh + n_sq, n_coh, n_sq)


def default_basis(spec: StateSpec, params) -> ModeBasis:
    return ModeBasis(params, spec.max_index + TRUNCATION_BUFFER)


def signal_grid(basis: ModeBasis) -> typing.Tuple[np.ndarray, float]:
    """Fine grid symmetric about tau for quadrature of basis signals"""
    return fine_times(basis.params,
                      DEFAULT_HALF_SPAN + 2 * math.sqrt(basis.size))


def duration_bandwidth(spec: StateSpec, basis: ModeBasis
                       ) -> typing.Tuple[float, float]:
    """RMS duration and bandwidth of the energy distribution

    Squeezed modes contribute their second moments (2/sigma^2)(n + 1/2)
    in time and (sigma^2/2)(n + 1/2) in frequency; the displacement
    signal is integrated on a fine grid.
    """
    budget = photon_budget(spec)
    if budget.n_total == 0:
        return 0.0, 0.0

    p = basis.params
    r, _ = spec.squeezing_vectors(basis.n_max)
    weight = np.sinh(r) ** 2 * (np.arange(basis.size) + 0.5)
    time_moment = 2 / p.sigma ** 2 * weight.sum()
    freq_moment = p.sigma ** 2 / 2 * weight.sum()

    if budget.n_coh > 0:
        alpha = spec.displacement_vector(basis.n_max)
        t, dt = signal_grid(basis)
        signal = alpha @ envelopes(basis.n_max, t, p)
        slope = alpha @ envelope_time_derivative(basis.n_max, t, p)
        density = np.abs(signal) ** 2
        offset = np.sum((t - p.tau) * density) * dt
        coh_time = np.sum((t - p.tau) ** 2 * density) * dt
        time_moment += coh_time
        # spread about the mean frequency of the displacement
        drift = np.sum(np.imag(np.conj(signal) * slope)) * dt
        freq_moment += (np.sum(np.abs(slope) ** 2) * dt
                        - drift ** 2 / budget.n_coh)

        spread = math.sqrt(time_moment / budget.n_total)
        if abs(offset) / budget.n_coh > CENTERING_TOLERANCE * spread:
            raise UnsupportedError(
                f"displacement signal is centered at "
                f"{p.tau + offset / budget.n_coh:.6g}, not at tau={p.tau}")

    return (math.sqrt(time_moment / budget.n_total),
            math.sqrt(freq_moment / budget.n_total))


def resource_budget(spec: StateSpec, basis: ModeBasis) -> ResourceBudget:
    budget = photon_budget(spec)
    delta_t, delta_omega = duration_bandwidth(spec, basis)
    return ResourceBudget(budget.n_total, budget.n_coh, budget.n_sq,
                          delta_t, delta_omega)


def r_from_db(db: float) -> float:
    return db * math.log(10) / 20


def db_from_r(r: float) -> float:
    return 20 * r / math.log(10)


def squeezing_for_photons(n_sq: float) -> float:
    return math.asinh(math.sqrt(n_sq))


def shifted_probe(k: int, n_photons: float, f_sq: float = 0.75,
                  r_cap: typing.Optional[float] = None,
                  variant: str = "standard") -> StateSpec:
    """Three-mode probe on modes k, k + 1, k + 2

    Equal squeezing r on all three modes carries f_sq of the photons,
    the rest displaces mode k + 1 with phase -pi/4.
    """
    if not n_photons >= 0 or not math.isfinite(n_photons):
        raise ConfigError(f"photon number must be >= 0, got {n_photons}")
    if not 0 <= f_sq <= 1:
        raise ConfigError(f"f_sq must lie in [0, 1], got {f_sq}")
    try:
        angles = STANDARD_VARIANTS[variant]
    except KeyError:
        raise ConfigError(f"unknown probe variant {variant!r}")

    r = squeezing_for_photons(f_sq * n_photons / 3)
    if r_cap is not None and r > r_cap:
        logger.info(f"Clipping squeezing r={r:.4f} to {r_cap:.4f}")
        r = r_cap
    n_coh = n_photons - 3 * math.sinh(r) ** 2
    if n_coh <= 1e-12 * n_photons:
        n_coh = 0.0

    occupations = []
    for i, phi in enumerate(angles):
        alpha = 0j
        if i == 1 and n_coh > 0:
            alpha = math.sqrt(n_coh) * complex(math.cos(DISPLACEMENT_PHASE),
                                               math.sin(DISPLACEMENT_PHASE))
        if r > 0 or alpha:
            occupations.append(ModeOccupation(k + i, alpha, r, phi))
    if k > 0:
        logger.info(f"Probe shifted to mode {k}: time-bandwidth product "
                    f"{k + 1.5} (3K/2 = {1.5 * k} underestimates it)")
    return StateSpec(tuple(occupations))


def standard_probe(n_photons: float, f_sq: float = 0.75,
                   r_cap: typing.Optional[float] = None,
                   variant: str = "standard") -> StateSpec:
    return shifted_probe(0, n_photons, f_sq, r_cap, variant)


def coherent_probe(n_photons: float, n: int = 0,
                   phase: float = 0.0) -> StateSpec:
    if not n_photons >= 0 or not math.isfinite(n_photons):
        raise ConfigError(f"photon number must be >= 0, got {n_photons}")
    if n_photons == 0:
        return StateSpec()
    alpha = math.sqrt(n_photons) * complex(math.cos(phase), math.sin(phase))
    return StateSpec((ModeOccupation(n, alpha),))
