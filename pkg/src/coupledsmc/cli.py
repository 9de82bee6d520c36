"""Command line entry point.

Subcommands mirror the experiment drivers: ``simulate``, ``profile-likelihood``,
``fd-score``, ``pmmh``, ``rg-smooth`` and ``validate``.  Every run is configured
by an optional ``--config`` file ([experiment] section, key = value) plus
flags, with flags winning.
"""

from __future__ import annotations

import argparse
import sys

from .harness import (ConfigError, ExperimentConfig, run_fd_study, run_pmmh,
                      run_profile, run_rg, run_simulate, run_validate)

_RUNNERS = {
    "simulate": run_simulate,
    "profile-likelihood": run_profile,
    "fd-score": run_fd_study,
    "pmmh": run_pmmh,
    "rg-smooth": run_rg,
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="config file ([experiment] section, key = value)")
    parser.add_argument("--model", help="hidden-ar | unlikely-obs | growth | plankton")
    parser.add_argument("--d-x", dest="d_x", help="state dimension (hidden-ar)")
    parser.add_argument("--theta", help="data-generating parameter (comma separated)")
    parser.add_argument("--T", help="time horizon")
    parser.add_argument("--N", help="number of particles")
    parser.add_argument("--R", help="number of replicates")
    parser.add_argument("--scheme", help="independent | sorted | index-coupled | "
                                         "transport | transport-symmetrized")
    parser.add_argument("--epsilon-frac", dest="epsilon_frac",
                        help="transport regularization, as a fraction of median distance")
    parser.add_argument("--alpha-target", dest="alpha_target",
                        help="transport stopping rule target in (0, 1)")
    parser.add_argument("--rho", help="common-random-number correlation")
    parser.add_argument("--h", help="finite-difference perturbation(s), comma separated")
    parser.add_argument("--m", help="burn-in style truncation point")
    parser.add_argument("--p", help="geometric truncation probability")
    parser.add_argument("--iterations", help="MCMC chain length")
    parser.add_argument("--max-iterations", dest="max_iterations",
                        help="cap on coupled sweeps per smoother replicate")
    parser.add_argument("--seed", help="base seed")
    parser.add_argument("--workers", help="worker processes for replicate jobs")
    parser.add_argument("--out", help="output CSV path")
    parser.add_argument("--allow-incomplete", dest="allow_incomplete",
                        action="store_const", const="true",
                        help="tolerate smoother replicates that hit the sweep cap")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coupledsmc",
        description="Coupled particle filters: profiles, scores, correlated MCMC, "
                    "unbiased smoothing.")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="write a synthetic data set as CSV")
    _add_common(sp)

    sp = sub.add_parser("profile-likelihood",
                        help="log-likelihood estimates over a parameter grid")
    _add_common(sp)
    sp.add_argument("--theta-grid", dest="theta_grid",
                    help="grid of parameter values, comma separated")

    sp = sub.add_parser("fd-score", help="finite-difference correlation/gain table")
    _add_common(sp)
    sp.add_argument("--schemes", help="schemes to compare, comma separated")

    sp = sub.add_parser("pmmh", help="correlated particle marginal Metropolis-Hastings")
    _add_common(sp)
    sp.add_argument("--theta0", help="chain start (comma separated)")
    sp.add_argument("--proposal-sd", dest="proposal_sd", help="random-walk proposal SD")

    sp = sub.add_parser("rg-smooth", help="replicated unbiased smoothing study")
    _add_common(sp)
    sp.add_argument("--h-fn", dest="h_fn",
                    help="test function id: mean-per-time | second-moment-per-time")
    sp.add_argument("--rao-blackwell", dest="rao_blackwell", action="store_const",
                    const="true", help="use ensemble conditional expectations")
    sp.add_argument("--ancestor-sampling", dest="ancestor_sampling",
                    action="store_const", const="true",
                    help="resample the pinned slot's ancestor (needs a transition density)")

    sp = sub.add_parser("validate", help="run the exact-reference self-checks")
    _add_common(sp)
    return parser


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config") and v is not None}
    overrides["kind"] = args.command
    if args.config:
        cfg = ExperimentConfig.from_file(args.config, overrides)
    else:
        cfg = ExperimentConfig.from_mapping(overrides)
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command == "validate":
        failures = 0
        for name, ok, detail in run_validate(cfg):
            print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
            failures += not ok
        return 1 if failures else 0
    path = _RUNNERS[args.command](cfg)
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
