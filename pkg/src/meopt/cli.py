"""Command-line front end: meopt run|oracle|sweep|compare|diagnose <config.json>.

Exit codes: 0 success, 1 config error, 2 optimality-certificate failure.
Set MEOPT_THREADS to cap internal parallelism.
"""
from __future__ import annotations

import argparse
import sys

from .errors import MeoptError
from .harness import (
    ConfigError,
    EXIT_CONFIG,
    ExperimentConfig,
    SweepConfig,
    cmd_compare,
    cmd_diagnose,
    cmd_oracle,
    cmd_run,
    cmd_sweep,
)

_EPILOG = """\
config defaults (JSON keys, overridable per section):
  problem:     kind=deconv1d (deconv1d|deconv2d|relu_net|generic_scalar),
               n_f=3, lambda=0.2, signed=false, ambient_dim=20,
               data_sample_size=4000, scalar_kind=cos, seed=0,
               teacher=built-in 3-spike arrangement (deconv1d),
               single spike at (pi, pi) (deconv2d),
               {"m0": 5, "total_mass": 1.0} random atoms (relu_net)
  init:        kind=grid (grid|uniform_random), m=100, total_mass=1.0, seed=0
  optimizer:   alpha=0.01, beta=0.01, retraction=mirror (induced for relu_net),
               iters=5000, descent_guard=true, stop_tol=0, seed=0,
               batch_size=null (64 for relu_net), beta_ramp=null
  diagnostics: tau=null (half min spike separation, capped at 1),
               probe_grid_size=200, oracle_path=null, certificate_grid=2000,
               certificate_tol=1e-5, rate_window_frac=0.3, c_theta=1.0,
               rho_lipschitz=0.0
  compare:     alpha_mirror=4/L, alpha_ista=0.95/L (L = grid Gram Lipschitz),
               iters=1000
  output:      dir=out
"""


def build_parser():
    parser = argparse.ArgumentParser(
        prog="meopt",
        description="Particle and fixed-grid optimizers over measures with diagnostics.",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="JSON config file")
        p.add_argument("--out", default=None, help="output directory (default: config output.dir)")
        p.add_argument("--seed", type=int, default=None, help="override the optimizer seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers (sweep only)")

    p_run = sub.add_parser("run", help="one optimization run -> trajectory.csv + summary.json")
    common(p_run)

    p_oracle = sub.add_parser("oracle", help="fine-grid convex solve -> oracle.json")
    common(p_oracle)
    p_oracle.add_argument("--grid-size", type=int, default=2000, help="oracle grid size")
    p_oracle.add_argument("--tol", type=float, default=1e-8,
                          help="stationarity target for the grid mirror phase")

    p_sweep = sub.add_parser("sweep", help="axis sweep -> matrix.csv")
    common(p_sweep)

    p_cmp = sub.add_parser("compare", help="mirror vs ISTA mass dynamics -> compare.csv")
    common(p_cmp)

    p_diag = sub.add_parser("diagnose", help="diagnostics report -> diagnostics.json")
    common(p_diag)
    p_diag.add_argument("--checkpoint", required=True,
                        help="summary.json or {'atoms': [...]} file with the measure to diagnose")
    p_diag.add_argument("--oracle", required=True, help="oracle.json with the reference minimizer")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "sweep":
            sweep = SweepConfig.load(args.config)
            code, _ = cmd_sweep(sweep, out_dir=args.out, jobs=args.jobs)
            return code
        cfg = ExperimentConfig.load(args.config)
        if args.command == "run":
            code, _ = cmd_run(cfg, out_dir=args.out, seed_override=args.seed)
            return code
        if args.command == "oracle":
            code, _ = cmd_oracle(cfg, grid_size=args.grid_size, tol=args.tol, out_dir=args.out)
            return code
        if args.command == "compare":
            code, _ = cmd_compare(cfg, out_dir=args.out)
            return code
        if args.command == "diagnose":
            code, _ = cmd_diagnose(cfg, args.checkpoint, args.oracle, out_dir=args.out)
            return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MeoptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
