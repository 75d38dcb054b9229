import argparse
import csv
import json
import logging
import sys

from pathlib import Path

from qlidar import harness
from qlidar.errors import ConfigError, NumericalError, QlidarError
from qlidar.fim import TargetModel, analytic_homodyne_fim, numeric_fim
from qlidar.modes import (
    ModeBasis,
    ModeParams,
    default_grid,
    infinitesimal_transform_check,
    orthonormality_error,
    )
from qlidar.qfim import coherent_qfim, displaced_squeezed_qfim
from qlidar.receiver import ReceiverSetup
from qlidar.state import StateSpec, default_basis, standard_probe


ORTHONORMALITY_TOLERANCE = 1e-8
TRANSFORM_EPS = 1e-4
TRANSFORM_TOLERANCE = 1e-6

logger = logging.getLogger("qlidar")


def sweep_config(args, experiment: str) -> harness.SweepConfig:
    mapping = {}
    if args.config is not None:
        mapping = harness.load_config(args.config)
    if mapping.setdefault("experiment", experiment) != experiment:
        raise ConfigError(f"{args.config} configures "
                          f"{mapping['experiment']}, not {experiment}")
    for key in ("out", "seed", "jobs"):
        value = getattr(args, key)
        if value is not None:
            mapping[key] = str(value) if key == "out" else value
    return harness.SweepConfig.from_mapping(mapping)


def write_rows(rows, cfg: harness.SweepConfig):
    if cfg.out is not None:
        harness.emit(rows, Path(cfg.out), cfg)
        return
    writer = csv.writer(sys.stdout)
    writer.writerow(harness.COLUMNS)
    for row in rows:
        writer.writerow([f"{x:.17g}" if isinstance(x, float) else x
                         for x in row])


def run_sweep(args):
    experiment = args.command.replace("-", "_")
    cfg = sweep_config(args, experiment)
    write_rows(getattr(harness, experiment)(cfg), cfg)
    return 0


photon_sweep = kappa_sweep = detuning_sweep = run_sweep


def mle_verify(args):
    cfg = sweep_config(args, "mle_verify")
    report = harness.mle_verify_job(cfg)
    if cfg.out is not None:
        harness.emit_report(report, Path(cfg.out), cfg)
    print(f"tau: mse/crb = {report.ratio_tau:.4f}")
    print(f"omega: mse/crb = {report.ratio_omega:.4f}")
    print(f"dropped: {report.dropped}/{report.trials}")
    return 0


def probe_from_args(args) -> StateSpec:
    if args.state is not None:
        try:
            return StateSpec.from_json(args.state.read_text())
        except FileNotFoundError:
            raise ConfigError(f"state file {args.state} does not exist")
        except ValueError as err:
            if isinstance(err, QlidarError):
                raise
            raise ConfigError(f"cannot parse {args.state}: {err}")
    return standard_probe(args.photons, args.f_sq, variant=args.variant)


def fim(args):
    spec = probe_from_args(args)
    params = ModeParams(sigma=args.sigma)
    rx = ReceiverSetup(default_grid(params),
                       delta_omega=args.delta_omega,
                       delta_theta=args.delta_theta,
                       kappa=args.kappa)
    if args.method == "numeric":
        info = numeric_fim(TargetModel.at_truth(spec, params, rx))
    else:
        info = analytic_homodyne_fim(spec, default_basis(spec, params), rx)
    bound = info.crb()
    print(json.dumps(dict(info.to_dict(),
                          var_tau=bound.var_tau,
                          var_omega=bound.var_omega,
                          status=bound.status,
                          flagged=list(bound.flagged)),
                     indent=2))
    return 0


def qfim(args):
    spec = probe_from_args(args)
    basis = default_basis(spec, ModeParams(sigma=args.sigma))
    if spec.is_coherent and args.kappa == 1:
        result = coherent_qfim(spec, basis)
    else:
        result = displaced_squeezed_qfim(spec, basis, args.kappa)
    bound = result.qcrb
    print(json.dumps(dict(result.info.to_dict(),
                          qcrb_tau=bound.var_tau,
                          qcrb_omega=bound.var_omega,
                          status=bound.status),
                     indent=2))
    return 0


def modes(args):
    basis = ModeBasis(ModeParams(sigma=args.sigma), args.n_max)
    ortho = orthonormality_error(basis)
    eps = TRANSFORM_EPS
    check = infinitesimal_transform_check(basis, eps / args.sigma,
                                          eps * args.sigma, eps)
    print(f"orthonormality: {ortho:.3g}")
    print(f"transform residual: {check.residual:.3g}")
    print(f"mixing residual: {check.mixing_residual:.3g}")
    failed = (ortho > ORTHONORMALITY_TOLERANCE
              or check.residual > TRANSFORM_TOLERANCE)
    return 1 if failed else 0


def add_run_args(parser):
    group = parser.add_argument_group("run options")
    group.add_argument("--config",
                       type=Path,
                       help="Configuration file (JSON, or TOML with "
                       "a .toml suffix)")
    group.add_argument("--out",
                       type=Path,
                       help="Output file (default: CSV on stdout)")
    group.add_argument("--seed",
                       type=int,
                       help="Random seed (default: from config, or 0)")
    group.add_argument("--jobs",
                       type=int,
                       help="Number of worker threads (default: from "
                       "config, or 1)")


def add_probe_args(parser):
    group = parser.add_argument_group("probe")
    group.add_argument("--state",
                       type=Path,
                       help="JSON state description (overrides the "
                       "three-mode probe options)")
    group.add_argument("--photons",
                       type=float,
                       default=100.0,
                       help="Mean photon number (default: 100)")
    group.add_argument("--f-sq",
                       type=float,
                       default=0.75,
                       help="Fraction of photons in squeezing "
                       "(default: 0.75)")
    group.add_argument("--variant",
                       default="standard",
                       help="Squeezing angle variant (default: standard)")
    group.add_argument("--sigma",
                       type=float,
                       default=1.0,
                       help="Mode bandwidth parameter (default: 1)")

    group = parser.add_argument_group("receiver")
    group.add_argument("--kappa",
                       type=float,
                       default=1.0,
                       help="Channel transmissivity (default: 1)")


def main(argv=sys.argv):
    argp = argparse.ArgumentParser(prog=argv[0])
    argp.add_argument("-q", "--quiet",
                      action="store_const",
                      dest="loglevel",
                      const=logging.WARNING,
                      default=logging.INFO,
                      help="Disable verbose progress reporting")

    subp = argp.add_subparsers(dest="command",
                               required=True)

    for name, help_text in (
            ("photon-sweep", "Sweep the photon number"),
            ("kappa-sweep", "Sweep the channel transmissivity, optimizing "
             "the squeezing fraction"),
            ("detuning-sweep", "Sweep the local oscillator phase detuning"),
            ("mle-verify", "Compare maximum-likelihood errors against the "
             "Cramer-Rao bound"),
            ):
        parser = subp.add_parser(name, help=help_text)
        add_run_args(parser)

    parser = subp.add_parser("fim",
                             help="Print the homodyne Fisher information "
                             "and Cramer-Rao bounds")
    add_probe_args(parser)
    parser.add_argument("--delta-omega",
                        type=float,
                        default=0.0,
                        help="Local oscillator frequency detuning")
    parser.add_argument("--delta-theta",
                        type=float,
                        default=0.0,
                        help="Local oscillator phase detuning")
    parser.add_argument("--method",
                        choices=("analytic", "numeric"),
                        default="analytic",
                        help="Mode-basis formula or time-bin finite "
                        "differences (default: analytic)")

    parser = subp.add_parser("qfim",
                             help="Print the quantum Fisher information and "
                             "quantum Cramer-Rao bounds")
    add_probe_args(parser)

    parser = subp.add_parser("modes",
                             help="Mode basis self-checks")
    parser.add_argument("action",
                        choices=("check",),
                        help="Check orthonormality and the infinitesimal "
                        "transform")
    parser.add_argument("--n-max",
                        type=int,
                        default=10,
                        help="Highest mode index (default: 10)")
    parser.add_argument("--sigma",
                        type=float,
                        default=1.0,
                        help="Mode bandwidth parameter (default: 1)")

    args = argp.parse_args(argv[1:])
    logging.basicConfig(format="{asctime} {name} {levelname} {message}",
                        style="{",
                        level=args.loglevel)

    func = globals()[args.command.replace("-", "_")]
    try:
        return func(args)
    except NumericalError as err:
        logger.error(f"Numerical failure: {err}")
        return 3
    except QlidarError as err:
        logger.error(str(err))
        return 2


if __name__ == "__main__":
    sys.exit(main())
