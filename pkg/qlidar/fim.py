"""Classical Fisher information, Cramer-Rao bounds and MLE checks"""

import concurrent.futures
import dataclasses
import logging
import math
import typing

import numpy as np
import scipy.linalg
import scipy.optimize

from qlidar.errors import (
    ConfigError,
    HomodyneConditionError,
    NumericalError,
    QlidarError,
    )
from qlidar.modes import (
    PARAMETERS,
    TRUNCATION_BUFFER,
    ModeBasis,
    ModeParams,
    gamma_matrix,
    )
from qlidar.receiver import (
    MAX_DETUNING_SPREAD,
    GaussianStats,
    ReceiverSetup,
    check_homodyne_condition,
    lo_overlap,
    mean_vector,
    sample_traces,
    time_bin_stats,
    )
from qlidar.state import StateSpec


DEFAULT_STEP = 1e-4
SINGULAR_CONDITION = 1e12
STEP_TOLERANCE = 0.01
NULL_COMPONENT = 1e-6
START_OFFSET = 0.1
START_GRID = (-4.0, -2.0, 0.0, 2.0, 4.0)
MIN_TRIALS = 100

logger = logging.getLogger("qlidar")


class CrbResult(typing.NamedTuple):
    var_tau: float
    var_omega: float
    status: str
    flagged: typing.Tuple[str, ...] = ()

    @property
    def product(self) -> float:
        return self.var_tau * self.var_omega


@dataclasses.dataclass(frozen=True, eq=False)
class InfoMatrix:
    """Information matrix over (tau, omega, theta)"""

    entries: np.ndarray
    labels: typing.Tuple[str, ...] = PARAMETERS
    step_unstable: bool = False

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=float)
        if entries.shape != (len(self.labels), len(self.labels)):
            raise ConfigError(
                f"information matrix must be {len(self.labels)}x"
                f"{len(self.labels)}, got {entries.shape}")
        object.__setattr__(self, "entries", entries)

    def __getitem__(self, key: typing.Tuple[str, str]) -> float:
        i, j = (self.labels.index(x) for x in key)
        return float(self.entries[i, j])

    def validate(self) -> None:
        scale = np.max(np.abs(self.entries))
        if np.max(np.abs(self.entries - self.entries.T)) > 1e-10 * scale:
            raise NumericalError("information matrix is not symmetric")
        lowest = np.linalg.eigvalsh(self.entries)[0]
        if lowest < -1e-9 * scale:
            raise NumericalError(
                f"information matrix has negative eigenvalue {lowest:.3g}")

    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.entries)

    def crb(self, pseudo: bool = False) -> CrbResult:
        return crb(self, pseudo)

    def product(self) -> float:
        return self.crb().product

    def to_dict(self) -> dict:
        return {"labels": list(self.labels),
                "entries": self.entries.tolist(),
                "step_unstable": self.step_unstable}


def crb(fim: InfoMatrix, pseudo: bool = False) -> CrbResult:
    """Full inversion with theta as nuisance

    Matrices with condition number above SINGULAR_CONDITION report
    status "singular" and flag the parameters that take part in the
    zero-information directions; `pseudo` returns pseudo-inverse
    variances for those instead.
    """
    f = fim.entries
    i_tau = fim.labels.index("tau")
    i_omega = fim.labels.index("omega")
    eigval, eigvec = np.linalg.eigh(f)
    top = eigval[-1]
    null = eigval <= top / SINGULAR_CONDITION if top > 0 else eigval <= 0
    if not null.any():
        inv = np.linalg.inv(f)
        return CrbResult(float(inv[i_tau, i_tau]),
                         float(inv[i_omega, i_omega]), "ok")

    weight = np.max(np.abs(eigvec[:, null]), axis=1)
    flagged = tuple(label for label, x in zip(fim.labels, weight)
                    if x > NULL_COMPONENT)
    inv = np.linalg.pinv(f, rcond=1 / SINGULAR_CONDITION, hermitian=True)
    variances = [float(inv[i, i]) for i in (i_tau, i_omega)]
    if pseudo:
        return CrbResult(*variances, "pseudo", flagged)
    for k, label in enumerate(("tau", "omega")):
        if label in flagged:
            variances[k] = math.inf
    return CrbResult(*variances, "singular", flagged)


def gaussian_fim(dmu: np.ndarray, dsigma: np.ndarray,
                 sigma: np.ndarray) -> np.ndarray:
    """dmu^T Sigma^-1 dmu + 1/2 Tr[Sigma^-1 dSigma Sigma^-1 dSigma]"""
    try:
        factor = scipy.linalg.cho_factor(sigma, lower=True)
    except scipy.linalg.LinAlgError:
        raise NumericalError("covariance factorization failed",
                             np.linalg.cond(sigma))
    out = dmu @ scipy.linalg.cho_solve(factor, dmu.T)
    if np.any(dsigma):
        solved = np.array([scipy.linalg.cho_solve(factor, d)
                           for d in dsigma])
        out = out + 0.5 * np.einsum("aij,bji->ab", solved, solved)
    return 0.5 * (out + out.T)


@dataclasses.dataclass(frozen=True)
class TargetModel:
    """Map (tau, omega, theta) to record statistics at a fixed local
    oscillator

    `basis` holds the true return-mode parameters and `rx` the true
    detunings; moving omega or theta away from the truth changes the
    detunings by the opposite amount.
    """

    spec: StateSpec
    basis: ModeBasis
    rx: ReceiverSetup

    @classmethod
    def at_truth(cls, spec: StateSpec, params: ModeParams,
                 rx: ReceiverSetup,
                 n_max: typing.Optional[int] = None) -> "TargetModel":
        if n_max is None:
            n_max = spec.max_index + TRUNCATION_BUFFER
        return cls(spec, ModeBasis(params, n_max), rx)

    @property
    def truth(self) -> np.ndarray:
        p = self.basis.params
        return np.array([p.tau, p.omega, p.theta])

    def setup_at(self, point) -> typing.Tuple[ModeBasis, ReceiverSetup]:
        tau, omega, theta = point
        p = self.basis.params
        basis = ModeBasis(p.with_(tau=tau, omega=omega, theta=theta),
                          self.basis.n_max)
        rx = dataclasses.replace(
            self.rx,
            delta_omega=self.rx.delta_omega - (omega - p.omega),
            delta_theta=self.rx.delta_theta - (theta - p.theta))
        return basis, rx

    def mean(self, point) -> np.ndarray:
        return mean_vector(self.spec, *self.setup_at(point))

    def __call__(self, point) -> GaussianStats:
        return time_bin_stats(self.spec, *self.setup_at(point))


def default_steps(params: ModeParams) -> np.ndarray:
    return np.array([
        DEFAULT_STEP / params.sigma * max(1.0, abs(params.tau) * params.sigma),
        DEFAULT_STEP * params.sigma,
        DEFAULT_STEP,
    ])


def _central_differences(model: TargetModel, at: np.ndarray,
                         steps: np.ndarray) -> np.ndarray:
    dmu = []
    dsigma = []
    for i, h in enumerate(steps):
        shift = np.zeros(len(at))
        shift[i] = h
        plus = model(at + shift)
        minus = model(at - shift)
        dmu.append((plus.mu - minus.mu) / (2 * h))
        dsigma.append((plus.sigma - minus.sigma) / (2 * h))
    return gaussian_fim(np.array(dmu), np.array(dsigma), model(at).sigma)


def numeric_fim(model: TargetModel, at=None, steps=None,
                check_steps: bool = True) -> InfoMatrix:
    at = model.truth if at is None else np.asarray(at, dtype=float)
    if steps is None:
        steps = default_steps(model.basis.params)
    steps = np.asarray(steps, dtype=float)
    if np.any(steps <= 0):
        raise ConfigError(f"finite-difference steps must be positive: {steps}")

    entries = _central_differences(model, at, steps)
    unstable = False
    if check_steps:
        halved = _central_differences(model, at, steps / 2)
        diag = np.abs(np.diag(entries))
        scale = np.maximum(np.abs(entries),
                           1e-6 * np.sqrt(np.outer(diag, diag)))
        unstable = bool(np.any(np.abs(halved - entries)
                               > STEP_TOLERANCE * scale))
        if unstable:
            logger.warning("Fisher information changes by more than "
                           f"{STEP_TOLERANCE:.0%} when halving the "
                           "finite-difference steps")
    return InfoMatrix(entries, step_unstable=unstable)


def analytic_homodyne_fim(spec: StateSpec, basis: ModeBasis,
                          rx: ReceiverSetup) -> InfoMatrix:
    """Fisher information of the homodyne record in the mode basis

    The record is projected on the basis envelopes.  The local
    oscillator enters through its overlap matrix and the return modes
    move with the parameters through the gamma coefficients, so every
    detuning the homodyne condition admits is covered.
    """
    check_homodyne_condition(spec, basis, rx)
    p = basis.params
    alpha = spec.displacement_vector(basis.n_max)
    r, phi = spec.squeezing_vectors(basis.n_max)
    chi = rx.delta_theta + rx.delta_omega * p.tau
    if alpha.any() and abs(chi) >= MAX_DETUNING_SPREAD:
        raise HomodyneConditionError(
            f"|delta_theta + delta_omega tau| = {abs(chi):.3g} is not "
            f"below {MAX_DETUNING_SPREAD}")
    if alpha[-1] != 0 or r[-1] > 0:
        logger.warning(f"Mode {basis.n_max} is populated; neighbour "
                       "coupling beyond the basis is dropped")

    kappa = rx.kappa
    overlap = lo_overlap(basis, rx)
    n_sq = np.sinh(r) ** 2
    pair = np.sinh(r) * np.cosh(r) * np.exp(1j * phi)

    def excess(left):
        # kappa Re[left diag(n_sq) G^H - left diag(pair) G^T]
        return kappa * (np.real((left * n_sq) @ overlap.conj().T)
                        - np.real((left * pair) @ overlap.T))

    sigma = 0.5 * np.eye(basis.size) + excess(overlap)
    dmu = np.empty((3, basis.size))
    dsigma = np.empty((3, basis.size, basis.size))
    for i, name in enumerate(PARAMETERS):
        moved = overlap @ gamma_matrix(name, basis).T
        dmu[i] = math.sqrt(2 * kappa) * np.real(moved @ alpha)
        cross = excess(moved)
        dsigma[i] = cross + cross.T
    return InfoMatrix(gaussian_fim(dmu, dsigma, sigma))


def squeezing_gain(n_sq: float) -> float:
    """exp(2r) of a three-mode probe carrying n_sq squeezed photons"""
    return (2 / 3 * n_sq + 1
            + 2 * math.sqrt(n_sq / 3 * (1 + n_sq / 3)))


def displacement_dominant_crb(n_coh: float, n_sq: float, kappa: float,
                              delta_t: float,
                              delta_omega: float) -> CrbResult:
    """Bounds of a probe whose coherent photons dominate, with n_sq
    photons squeezing the three quadratures that carry the information"""
    if kappa == 0 or n_coh == 0:
        return CrbResult(math.inf, math.inf, "singular", ("tau", "omega"))
    loss = 1 - kappa + kappa / squeezing_gain(n_sq)
    return CrbResult(9 / 16 * loss / (delta_omega ** 2 * kappa * n_coh),
                     9 / 16 * loss / (delta_t ** 2 * kappa * n_coh),
                     "ok")


class MleReport(typing.NamedTuple):
    mse_tau: float
    mse_omega: float
    crb_tau: float
    crb_omega: float
    trials: int
    dropped: int
    repetitions: int = 1

    @property
    def ratio_tau(self) -> float:
        return self.mse_tau / self.crb_tau

    @property
    def ratio_omega(self) -> float:
        return self.mse_omega / self.crb_omega

    @property
    def ratio_product(self) -> float:
        return self.ratio_tau * self.ratio_omega


def negative_log_likelihood(model: TargetModel, traces: np.ndarray,
                            point) -> float:
    """Up to a constant, summed over one record or a stack of records"""
    traces = np.atleast_2d(traces)
    if model.spec.is_coherent:
        # covariance is the parameter-free shot-noise floor
        residual = traces - model.mean(point)
        return float(model.rx.grid.dt * np.sum(residual ** 2))
    stats = model(point)
    try:
        factor = scipy.linalg.cho_factor(stats.sigma, lower=True)
    except scipy.linalg.LinAlgError:
        raise NumericalError("covariance factorization failed",
                             np.linalg.cond(stats.sigma))
    residual = traces - stats.mu
    solved = scipy.linalg.cho_solve(factor, residual.T).T
    return float(len(traces) * np.sum(np.log(np.diag(factor[0])))
                 + 0.5 * np.sum(residual * solved))


def fit_trace(model: TargetModel, trace: np.ndarray, start,
              scale) -> typing.Optional[np.ndarray]:
    """Maximum-likelihood (tau, omega, theta), or None on failure

    BFGS runs from `start` and from the best node of a coarse grid of
    (tau, omega) offsets around it, in units of `scale`; the lower
    optimum wins.
    """
    start = np.asarray(start, dtype=float)
    scale = np.asarray(scale, dtype=float)

    def objective(z):
        return negative_log_likelihood(model, trace, start + scale * z)

    def node_value(z):
        try:
            return objective(z)
        except QlidarError:
            return math.inf

    origin = np.zeros(len(start))
    nodes = [np.array([x, y, 0.0]) for x in START_GRID for y in START_GRID]
    best = min(nodes, key=node_value)
    starts = [origin]
    if np.any(best != origin) and math.isfinite(node_value(best)):
        starts.append(best)

    fits = []
    for z0 in starts:
        try:
            result = scipy.optimize.minimize(objective, z0, method="BFGS")
        except QlidarError as err:
            logger.debug(f"Likelihood evaluation failed: {err}")
            continue
        # status 2 is precision loss at the optimum
        if result.status in (0, 2) and np.all(np.isfinite(result.x)):
            fits.append(result)
    if not fits:
        return None
    return start + scale * min(fits, key=lambda fit: fit.fun).x


def mle_verify(model: TargetModel, m: int, seed: int, jobs: int = 1,
               repetitions: int = 1) -> MleReport:
    """Empirical MSE of the maximum-likelihood estimate against the CRB

    Each of the m trials fits `repetitions` independent records of the
    same target jointly and is compared against the per-record bound
    divided by `repetitions`.
    """
    if m < MIN_TRIALS:
        raise ConfigError(f"need at least {MIN_TRIALS} trials, got {m}")
    if repetitions < 1:
        raise ConfigError(f"need at least one record per trial, "
                          f"got {repetitions}")
    truth = model.truth
    fim = numeric_fim(model, check_steps=False)
    bound = crb(fim)
    if bound.status != "ok":
        raise ConfigError(f"Cramer-Rao bound is {bound.status} for this "
                          "configuration")
    scale = np.sqrt(np.diag(fim.inverse()) / repetitions)
    start = truth + START_OFFSET * scale

    traces = sample_traces(model(truth), m * repetitions, seed, jobs)
    batches = traces.reshape(m, repetitions, -1)
    logger.info(f"Fitting {m} trials of {repetitions} simulated records")
    with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as executor:
        fits = list(executor.map(
            lambda batch: fit_trace(model, batch, start, scale), batches))

    kept = np.array([x for x in fits if x is not None])
    dropped = m - len(kept)
    if dropped:
        logger.warning(f"{dropped} of {m} fits did not converge")
    if len(kept) == 0:
        raise NumericalError("no maximum-likelihood fit converged")
    errors = kept - truth
    return MleReport(mse_tau=float(np.mean(errors[:, 0] ** 2)),
                     mse_omega=float(np.mean(errors[:, 1] ** 2)),
                     crb_tau=bound.var_tau / repetitions,
                     crb_omega=bound.var_omega / repetitions,
                     trials=m,
                     dropped=dropped,
                     repetitions=repetitions)
