"""Parameter sweeps, allocation optimization and result files"""

import concurrent.futures
import csv
import dataclasses
import json
import logging
import math
import sys
import typing

from pathlib import Path

import numpy as np
import scipy.optimize

from qlidar import __version__
from qlidar.benchmarks import cl_heterodyne, cl_ultimate, heterodyne_receiver
from qlidar.errors import ConfigError, NumericalError, OutputError
from qlidar.fim import (
    CrbResult,
    MleReport,
    TargetModel,
    analytic_homodyne_fim,
    crb,
    mle_verify,
    )
from qlidar.modes import (
    DEFAULT_OMEGA,
    ModeBasis,
    ModeParams,
    TimeGrid,
    default_grid,
    )
from qlidar.receiver import ReceiverSetup
from qlidar.state import (
    StateSpec,
    coherent_probe,
    default_basis,
    r_from_db,
    resource_budget,
    standard_probe,
    )


EXPERIMENTS = ("photon_sweep", "kappa_sweep", "detuning_sweep", "mle_verify")
PROBES = ("standard", "coherent_heterodyne")
DEFAULT_PHOTONS = 100.0
DEFAULT_F_SQ = 0.75
DEFAULT_R_CAP_DB = 20.0
DEFAULT_TRIALS = 2000
DEFAULT_AXES = {
    "photon_sweep": {"start": 0.1, "stop": 1e4, "num": 51, "log": True},
    "kappa_sweep": {"start": 0.1, "stop": 1.0, "num": 19, "log": False},
    "detuning_sweep": {"start": 1e-5, "stop": 0.05, "num": 19, "log": True},
}
SPLIT_POINTS = 64
SPLIT_TOLERANCE = 1e-4

logger = logging.getLogger("qlidar")


def get_toml(path: Path):
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib

    with path.open("rb") as f:
        return tomllib.load(f)


def load_config(path: Path) -> dict:
    """Read a flat configuration mapping from TOML or JSON"""
    try:
        if path.suffix == ".toml":
            data = get_toml(path)
        else:
            with path.open() as f:
                data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"configuration file {path} does not exist")
    except ValueError as err:
        raise ConfigError(f"cannot parse {path}: {err}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path} does not hold a mapping")
    return data


def expand_axis(value) -> typing.Tuple[float, ...]:
    """A list of values, or {start, stop, num, log} for a generated grid"""
    if isinstance(value, dict):
        unknown = set(value) - {"start", "stop", "num", "log"}
        if unknown:
            raise ConfigError(
                f"unknown axis keys: {', '.join(sorted(unknown))}")
        try:
            start = float(value["start"])
            stop = float(value["stop"])
            num = int(value["num"])
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigError(f"malformed axis {value!r}: {err}")
        if num < 1:
            raise ConfigError(f"axis needs at least one point, got {num}")
        if value.get("log", False):
            if start <= 0 or stop <= 0:
                raise ConfigError("log axis bounds must be positive")
            points = np.geomspace(start, stop, num)
        else:
            points = np.linspace(start, stop, num)
        return tuple(float(x) for x in points)
    if isinstance(value, (list, tuple)) and value:
        try:
            return tuple(float(x) for x in value)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"malformed axis {value!r}: {err}")
    raise ConfigError(f"axis must be a non-empty list or a mapping, "
                      f"got {value!r}")


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_integer(value) -> bool:
    return _is_number(value) and float(value).is_integer()


@dataclasses.dataclass(frozen=True)
class SweepConfig:
    experiment: str
    n_photons: float = DEFAULT_PHOTONS
    f_sq: typing.Union[float, str] = DEFAULT_F_SQ
    r_cap_db: typing.Optional[float] = None
    kappa: float = 1.0
    delta_theta: float = 0.0
    delta_omega: float = 0.0
    sigma: float = 1.0
    tau: float = 0.0
    omega: float = DEFAULT_OMEGA
    dt: typing.Optional[float] = None
    n_bins: typing.Optional[int] = None
    t_start: typing.Optional[float] = None
    axis: typing.Tuple[float, ...] = ()
    out: typing.Optional[str] = None
    seed: int = 0
    jobs: int = 1
    trials: int = DEFAULT_TRIALS
    repetitions: int = 1
    probe: str = "standard"
    physical_sigma: typing.Optional[float] = None

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}, "
                              f"expected one of {', '.join(EXPERIMENTS)}")
        for name in ("n_photons", "kappa", "delta_theta", "delta_omega",
                     "sigma", "tau", "omega"):
            value = getattr(self, name)
            if (not isinstance(value, (int, float))
                    or not math.isfinite(value)):
                raise ConfigError(f"{name} must be a finite number, "
                                  f"got {value!r}")
        for name in ("r_cap_db", "physical_sigma", "dt", "t_start"):
            value = getattr(self, name)
            if value is not None and not _is_number(value):
                raise ConfigError(f"{name} must be a number, got {value!r}")
        for name in ("n_bins", "seed", "jobs", "trials", "repetitions"):
            value = getattr(self, name)
            if value is not None and not _is_integer(value):
                raise ConfigError(f"{name} must be an integer, "
                                  f"got {value!r}")
            if value is not None:
                object.__setattr__(self, name, int(value))
        if self.n_photons <= 0:
            raise ConfigError(
                f"n_photons must be positive, got {self.n_photons}")
        if not 0 < self.kappa <= 1:
            raise ConfigError(f"kappa must lie in (0, 1], got {self.kappa}")
        if self.f_sq != "optimize" and not (
                isinstance(self.f_sq, (int, float)) and 0 <= self.f_sq <= 1):
            raise ConfigError(
                f"f_sq must lie in [0, 1] or be 'optimize', got {self.f_sq!r}")
        if self.r_cap_db is not None and not self.r_cap_db > 0:
            raise ConfigError(
                f"r_cap_db must be positive, got {self.r_cap_db}")
        if self.physical_sigma is not None and not self.physical_sigma > 0:
            raise ConfigError(
                f"physical_sigma must be positive, got {self.physical_sigma}")
        if int(self.jobs) != self.jobs or self.jobs < 1:
            raise ConfigError(f"jobs must be a positive integer, "
                              f"got {self.jobs}")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ConfigError(f"trials must be a positive integer, "
                              f"got {self.trials}")
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be a positive integer, "
                              f"got {self.repetitions}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, "
                              f"got {self.seed}")
        if self.probe not in PROBES:
            raise ConfigError(f"unknown probe {self.probe!r}, expected one "
                              f"of {', '.join(PROBES)}")

        axis = tuple(float(x) for x in self.axis)
        if not all(math.isfinite(x) for x in axis):
            raise ConfigError("axis values must be finite")
        if self.experiment == "photon_sweep" and min(axis, default=1) <= 0:
            raise ConfigError("photon numbers on the axis must be positive")
        if self.experiment == "kappa_sweep" and not all(
                0 < x <= 1 for x in axis):
            raise ConfigError("kappa values on the axis must lie in (0, 1]")
        object.__setattr__(self, "axis", axis)
        self.grid()

    @classmethod
    def from_mapping(cls, mapping: dict) -> "SweepConfig":
        known = {field.name for field in dataclasses.fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ConfigError(
                f"unknown configuration keys: {', '.join(unknown)}")
        if "experiment" not in mapping:
            raise ConfigError("configuration does not name an experiment")

        data = dict(mapping)
        experiment = data["experiment"]
        if experiment == "kappa_sweep":
            data.setdefault("r_cap_db", DEFAULT_R_CAP_DB)
            data.setdefault("f_sq", "optimize")
        if "axis" in data:
            data["axis"] = expand_axis(data["axis"])
        elif experiment in DEFAULT_AXES:
            data["axis"] = expand_axis(DEFAULT_AXES[experiment])
        return cls(**data)

    @property
    def r_cap(self) -> typing.Optional[float]:
        if self.r_cap_db is None:
            return None
        return r_from_db(self.r_cap_db)

    def mode_params(self) -> ModeParams:
        return ModeParams(tau=self.tau, omega=self.omega, sigma=self.sigma)

    def grid(self) -> TimeGrid:
        grid = default_grid(self.mode_params())
        return dataclasses.replace(
            grid,
            **{name: getattr(self, name)
               for name in ("t_start", "dt", "n_bins")
               if getattr(self, name) is not None})

    def receiver(self, kappa: typing.Optional[float] = None,
                 delta_theta: typing.Optional[float] = None
                 ) -> ReceiverSetup:
        return ReceiverSetup(
            self.grid(),
            delta_omega=self.delta_omega,
            delta_theta=(self.delta_theta if delta_theta is None
                         else delta_theta),
            kappa=self.kappa if kappa is None else kappa)

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["axis"] = list(self.axis)
        return data


class SweepRow(typing.NamedTuple):
    axis: float
    var_tau: float
    var_omega: float
    product: float
    cl_het: float
    cl_ultimate: float
    f_sq: float
    r: float
    threshold: float
    status: str


COLUMNS = SweepRow._fields


def optimize_split(objective: typing.Callable[[float], float],
                   lo: float = 0.0, hi: float = 1.0,
                   points: int = SPLIT_POINTS,
                   tolerance: float = SPLIT_TOLERANCE
                   ) -> typing.Tuple[float, float]:
    """Minimize over [lo, hi]: grid scan, then bounded Brent refinement
    between the neighbours of the best grid point"""
    grid = np.linspace(lo, hi, points)
    values = np.array([objective(float(x)) for x in grid])
    values = np.where(np.isnan(values), np.inf, values)
    if not np.isfinite(values).any():
        raise NumericalError("objective is not finite anywhere on the grid")
    i = int(np.argmin(values))
    best_x = float(grid[i])
    best = float(values[i])

    bounds = (grid[max(i - 1, 0)], grid[min(i + 1, points - 1)])
    result = scipy.optimize.minimize_scalar(
        objective, bounds=bounds, method="bounded",
        options={"xatol": tolerance})
    if result.success and result.fun < best:
        best_x = float(result.x)
        best = float(result.fun)

    if best_x - lo < tolerance or hi - best_x < tolerance:
        logger.warning(f"Optimum {best_x:.4g} lies on the boundary of "
                       f"[{lo:g}, {hi:g}]")
    return best_x, best


def ql_bound(cfg: SweepConfig, n_photons: float, f_sq: float,
             kappa: float, delta_theta: float
             ) -> typing.Tuple[CrbResult, StateSpec, ModeBasis]:
    spec = standard_probe(n_photons, f_sq, cfg.r_cap)
    basis = default_basis(spec, cfg.mode_params())
    rx = cfg.receiver(kappa, delta_theta)
    return crb(analytic_homodyne_fim(spec, basis, rx)), spec, basis


def evaluate_point(cfg: SweepConfig, axis: float, n_photons: float,
                   kappa: float, delta_theta: float) -> SweepRow:
    f_sq = cfg.f_sq
    if f_sq == "optimize":
        f_sq, _ = optimize_split(
            lambda f: ql_bound(cfg, n_photons, f, kappa,
                               delta_theta)[0].product)
    bound, spec, basis = ql_bound(cfg, n_photons, f_sq, kappa, delta_theta)
    budget = resource_budget(spec, basis)
    het = cl_heterodyne(n_photons, budget.delta_t, budget.delta_omega, kappa)
    ult = cl_ultimate(n_photons, budget.delta_t, budget.delta_omega, kappa)

    var_tau = bound.var_tau
    var_omega = bound.var_omega
    if cfg.physical_sigma is not None:
        scale = cfg.sigma / cfg.physical_sigma
        var_tau *= scale ** 2
        var_omega /= scale ** 2
    r = max((occ.r for occ in spec.occupations), default=0.0)
    return SweepRow(axis=float(axis),
                    var_tau=float(var_tau),
                    var_omega=float(var_omega),
                    product=float(var_tau * var_omega),
                    cl_het=float(het.product),
                    cl_ultimate=float(ult.product),
                    f_sq=float(f_sq),
                    r=float(r),
                    threshold=float(1 / (budget.n_sq + 1)),
                    status=bound.status)


def run_points(cfg: SweepConfig,
               point: typing.Callable[[float], SweepRow]
               ) -> typing.List[SweepRow]:
    logger.info(f"Running {cfg.experiment} over {len(cfg.axis)} points")
    with concurrent.futures.ThreadPoolExecutor(
            max_workers=cfg.jobs) as executor:
        return list(executor.map(point, cfg.axis))


def photon_sweep(cfg: SweepConfig) -> typing.List[SweepRow]:
    return run_points(cfg, lambda n: evaluate_point(
        cfg, n, n, cfg.kappa, cfg.delta_theta))


def kappa_sweep(cfg: SweepConfig) -> typing.List[SweepRow]:
    return run_points(cfg, lambda kappa: evaluate_point(
        cfg, kappa, cfg.n_photons, kappa, cfg.delta_theta))


def detuning_sweep(cfg: SweepConfig) -> typing.List[SweepRow]:
    return run_points(cfg, lambda delta_theta: evaluate_point(
        cfg, delta_theta, cfg.n_photons, cfg.kappa, delta_theta))


def mle_model(cfg: SweepConfig) -> TargetModel:
    params = cfg.mode_params()
    if cfg.probe == "coherent_heterodyne":
        return TargetModel.at_truth(
            coherent_probe(cfg.n_photons), params,
            heterodyne_receiver(cfg.sigma, cfg.tau, cfg.delta_theta,
                                cfg.kappa))
    if cfg.f_sq == "optimize":
        raise ConfigError("mle_verify needs a fixed f_sq")
    spec = standard_probe(cfg.n_photons, cfg.f_sq, cfg.r_cap)
    return TargetModel.at_truth(spec, params, cfg.receiver())


def mle_verify_job(cfg: SweepConfig) -> MleReport:
    report = mle_verify(mle_model(cfg), cfg.trials, cfg.seed, cfg.jobs,
                        cfg.repetitions)
    logger.info(f"MSE/CRB: tau {report.ratio_tau:.3f}, "
                f"omega {report.ratio_omega:.3f} "
                f"({report.dropped} of {report.trials} fits dropped)")
    return report


def metadata_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def metadata(cfg: typing.Optional[SweepConfig]) -> dict:
    return {
        "qlidar_version": __version__,
        "config": None if cfg is None else cfg.to_dict(),
        "seed": None if cfg is None else cfg.seed,
        "units": ("natural" if cfg is None or cfg.physical_sigma is None
                  else f"physical sigma {cfg.physical_sigma!r}"),
        "columns": list(COLUMNS),
        "baselines": {
            "cl_ultimate": {"potentially_unattainable": True},
            "cl_het": {"potentially_unattainable": False},
        },
    }


def _format(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _write(path: Path, writer: typing.Callable[[typing.TextIO], None],
           meta: dict) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            writer(f)
        with metadata_path(path).open("w") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as err:
        raise OutputError(f"cannot write {path}: {err.strerror or err}")


def emit(rows: typing.Iterable[SweepRow], path: Path,
         cfg: typing.Optional[SweepConfig] = None) -> None:
    """Write rows as CSV plus a JSON metadata sidecar"""
    def write_rows(f):
        writer = csv.writer(f)
        writer.writerow(COLUMNS)
        for row in rows:
            writer.writerow([_format(x) for x in row])

    _write(path, write_rows, metadata(cfg))
    logger.info(f"Wrote {path}")


def emit_report(report: MleReport, path: Path,
                cfg: typing.Optional[SweepConfig] = None) -> None:
    data = dict(report._asdict(),
                ratio_tau=report.ratio_tau,
                ratio_omega=report.ratio_omega,
                ratio_product=report.ratio_product)

    def write_report(f):
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")

    _write(path, write_report, metadata(cfg))
    logger.info(f"Wrote {path}")


def read_table(path: Path) -> typing.List[SweepRow]:
    try:
        with path.open(newline="") as f:
            lines = list(csv.reader(f))
    except OSError as err:
        raise OutputError(f"cannot read {path}: {err.strerror or err}")
    header = tuple(lines[0]) if lines else ()
    if header != COLUMNS:
        raise OutputError(f"{path} has columns {header}, expected {COLUMNS}")
    return [SweepRow(*(float(x) for x in line[:-1]), line[-1])
            for line in lines[1:]]


def _log_columns(*values) -> typing.Tuple[np.ndarray, ...]:
    with np.errstate(divide="ignore"):
        return tuple(np.log(np.array(v, dtype=float)) for v in values)


def _first_crossing(x: np.ndarray, diff: np.ndarray
                    ) -> typing.Optional[float]:
    for i in range(len(x) - 1):
        if not (np.isfinite(diff[i]) and np.isfinite(diff[i + 1])):
            continue
        if diff[i] == 0:
            return float(np.exp(x[i]))
        if diff[i] * diff[i + 1] < 0:
            frac = diff[i] / (diff[i] - diff[i + 1])
            return float(np.exp(x[i] + frac * (x[i + 1] - x[i])))
    return None


def crossing_point(rows: typing.Sequence[SweepRow], column_a: str,
                   column_b: str) -> typing.Optional[float]:
    """First axis value where two columns cross, interpolated in log-log"""
    x, a, b = _log_columns([row.axis for row in rows],
                           [getattr(row, column_a) for row in rows],
                           [getattr(row, column_b) for row in rows])
    return _first_crossing(x, a - b)


def loglog_slope(rows: typing.Sequence[SweepRow], column: str,
                 lo: float, hi: float) -> float:
    chosen = [row for row in rows if lo <= row.axis <= hi]
    if len(chosen) < 2:
        raise ConfigError(f"fewer than two rows with axis in [{lo}, {hi}]")
    x, y = _log_columns([row.axis for row in chosen],
                        [getattr(row, column) for row in chosen])
    return float(np.polyfit(x, y, 1)[0])


def departure_point(rows: typing.Sequence[SweepRow],
                    ideal_rows: typing.Sequence[SweepRow],
                    factor: float = 2.0) -> typing.Optional[float]:
    """First axis value where the product exceeds factor times the ideal"""
    if [row.axis for row in rows] != [row.axis for row in ideal_rows]:
        raise ConfigError("tables must share the same axis")
    x, y, ideal = _log_columns([row.axis for row in rows],
                               [row.product for row in rows],
                               [row.product for row in ideal_rows])
    diff = y - ideal - math.log(factor)
    if np.isfinite(diff[0]) and diff[0] >= 0:
        return rows[0].axis
    return _first_crossing(x, diff)
