"""Classical lidar baselines and quantum heterodyne reference points"""

import logging
import math
import typing

import numpy as np

from qlidar.errors import ConfigError
from qlidar.fim import InfoMatrix, TargetModel, crb, numeric_fim
from qlidar.modes import ModeParams, TimeGrid
from qlidar.receiver import ReceiverSetup
from qlidar.state import STANDARD_VARIANTS, standard_probe


HOMODYNE_CASES = ("matched", "quarter", "mid_pi4")
HETERODYNE_VARIANTS = ("phi0_pi", "phi1_zero")
PROBE_TIME_BANDWIDTH = 1.5
REFERENCE_TOLERANCE = 0.05
# heterodyne oracle grid in units of 1/sigma
HETERODYNE_DETUNING = 16.0
HETERODYNE_DT = 0.025
HETERODYNE_BINS = 800
HETERODYNE_HALF_SPAN = 10.0

logger = logging.getLogger("qlidar")


class Consistency(typing.NamedTuple):
    parameter: str
    printed: float
    oracle: float
    deviation: float
    flagged: bool


class Baseline(typing.NamedTuple):
    name: str
    var_tau: float
    var_omega: float
    potentially_unattainable: bool = False
    consistency: typing.Tuple[Consistency, ...] = ()

    @property
    def product(self) -> float:
        return self.var_tau * self.var_omega


def _check_resources(n_photons: float, delta_t: float,
                     delta_omega: float, kappa: float = 1.0) -> None:
    if not n_photons > 0 or not math.isfinite(n_photons):
        raise ConfigError(f"photon number must be positive, got {n_photons}")
    if not (delta_t > 0 and delta_omega > 0):
        raise ConfigError("pulse duration and bandwidth must be positive")
    if not 0 < kappa <= 1:
        raise ConfigError(f"kappa must lie in (0, 1], got {kappa}")


def cl_ultimate(n_photons: float, delta_t: float, delta_omega: float,
                kappa: float = 1.0) -> Baseline:
    """Coherent-pulse quantum Cramer-Rao bound; no known receiver
    reaches it for the joint estimate"""
    _check_resources(n_photons, delta_t, delta_omega, kappa)
    n = kappa * n_photons
    return Baseline("cl_ultimate",
                    1 / (4 * delta_omega ** 2 * n),
                    1 / (4 * delta_t ** 2 * n),
                    potentially_unattainable=True)


def cl_heterodyne(n_photons: float, delta_t: float, delta_omega: float,
                  kappa: float = 1.0) -> Baseline:
    _check_resources(n_photons, delta_t, delta_omega, kappa)
    n = kappa * n_photons
    return Baseline("cl_heterodyne",
                    1 / (2 * delta_omega ** 2 * n),
                    1 / (2 * delta_t ** 2 * n))


def cl_homodyne_fim(n_photons: float, delta_t: float, delta_omega: float,
                    tau: float = 0.0, case: str = "mid_pi4") -> InfoMatrix:
    """Coherent-pulse homodyne FIM for three phase-detuning cases

    "matched" has delta_theta = -delta_omega tau, "quarter" is pi/2
    away from it and "mid_pi4" pi/4 away.
    """
    _check_resources(n_photons, delta_t, delta_omega)
    n = n_photons
    f = np.zeros((3, 3))
    if case == "matched":
        f[0, 0] = 4 * delta_omega ** 2 * n
    elif case == "quarter":
        f[1, 1] = 4 * (delta_t ** 2 + tau ** 2) * n
        f[2, 2] = 4 * n
        f[1, 2] = f[2, 1] = 4 * n * tau
    elif case == "mid_pi4":
        f[0, 0] = 2 * delta_omega ** 2 * n
        f[1, 1] = 2 * (delta_t ** 2 + tau ** 2) * n
        f[0, 1] = f[1, 0] = n
        f[2, 2] = 2 * n
        f[1, 2] = f[2, 1] = 2 * n * tau
    else:
        raise ConfigError(f"unknown homodyne case {case!r}, expected one "
                          f"of {', '.join(HOMODYNE_CASES)}")
    return InfoMatrix(f)


def cl_homodyne(n_photons: float, delta_t: float, delta_omega: float,
                tau: float = 0.0, case: str = "mid_pi4") -> Baseline:
    bound = crb(cl_homodyne_fim(n_photons, delta_t, delta_omega, tau, case))
    name = "cl_homodyne_pi4" if case == "mid_pi4" else f"cl_homodyne_{case}"
    return Baseline(name, bound.var_tau, bound.var_omega)


def printed_heterodyne_values(variant: str, n_photons: float,
                              delta_t: float, delta_omega: float
                              ) -> typing.Tuple[float, float]:
    """Reported lossless QL heterodyne variances

    The reported frequency variances carry Delta_omega^2 in the
    denominator; they are evaluated with Delta_T^2, the only
    dimensionally consistent reading.
    """
    if variant == "phi0_pi":
        return (1 / (4 * delta_omega ** 2 * n_photons),
                1 / (0.75 * delta_t ** 2 * n_photons))
    if variant == "phi1_zero":
        return (1 / (delta_omega ** 2 * n_photons),
                1 / (3 * delta_t ** 2 * n_photons))
    raise ConfigError(f"unknown heterodyne variant {variant!r}, expected "
                      f"one of {', '.join(HETERODYNE_VARIANTS)}")


def heterodyne_receiver(sigma: float = 1.0, tau: float = 0.0,
                        delta_theta: float = 0.0,
                        kappa: float = 1.0) -> ReceiverSetup:
    """Local oscillator detuned by 16 sigma, sampled finely enough to
    resolve the beat note"""
    grid = TimeGrid(t_start=tau - HETERODYNE_HALF_SPAN / sigma,
                    dt=HETERODYNE_DT / sigma,
                    n_bins=HETERODYNE_BINS)
    return ReceiverSetup(grid, delta_omega=HETERODYNE_DETUNING * sigma,
                         delta_theta=delta_theta, kappa=kappa)


def heterodyne_model(variant: str, n_photons: float, sigma: float = 1.0,
                     delta_theta: float = 0.0,
                     kappa: float = 1.0) -> TargetModel:
    """Three-mode probe seen through a strongly detuned local oscillator"""
    if variant not in STANDARD_VARIANTS:
        raise ConfigError(f"unknown probe variant {variant!r}")
    return TargetModel.at_truth(
        standard_probe(n_photons, variant=variant), ModeParams(sigma=sigma),
        heterodyne_receiver(sigma, delta_theta=delta_theta, kappa=kappa))


def ql_heterodyne_reference(variant: str, n_photons: float, delta_t: float,
                            delta_omega: float,
                            oracle: bool = False) -> Baseline:
    """Reported QL heterodyne variances, optionally cross-checked

    With `oracle` the time-bin heterodyne FIM of the same probe is
    computed and each printed value gets a consistency entry; entries
    off by more than REFERENCE_TOLERANCE are flagged.
    """
    _check_resources(n_photons, delta_t, delta_omega)
    printed = printed_heterodyne_values(variant, n_photons, delta_t,
                                        delta_omega)
    if not oracle:
        return Baseline(f"ql_het_{variant}", *printed)

    if not math.isclose(delta_t * delta_omega, PROBE_TIME_BANDWIDTH,
                        rel_tol=1e-9):
        raise ConfigError(
            "the heterodyne oracle needs the three-mode probe with "
            f"Delta_T * Delta_omega = {PROBE_TIME_BANDWIDTH}, got "
            f"{delta_t * delta_omega:g}")
    sigma = 2 * delta_omega / math.sqrt(3)
    logger.info(f"Computing heterodyne oracle for {variant} at "
                f"N={n_photons:g}")
    bound = crb(numeric_fim(heterodyne_model(variant, n_photons, sigma),
                            check_steps=False))
    checks = []
    for name, value, numeric in zip(("tau", "omega"), printed,
                                    (bound.var_tau, bound.var_omega)):
        deviation = abs(numeric - value) / value
        flagged = deviation > REFERENCE_TOLERANCE
        if flagged:
            logger.warning(f"Reported {name} variance {value:.6g} for "
                           f"{variant} differs from the time-bin value "
                           f"{numeric:.6g} by {deviation:.1%}")
        checks.append(Consistency(name, value, numeric, deviation, flagged))
    return Baseline(f"ql_het_{variant}", *printed,
                    consistency=tuple(checks))
