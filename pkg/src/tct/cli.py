"""Command line entry point ``tct``."""

import argparse
import json
import os
import sys

import numpy as np

from .errors import ConfigurationError, DimensionError, NumericalError
from .harness import (
    direction_vectors,
    limit_context,
    parse_config_text,
    config_from_mapping,
    rows_to_csv,
    run_matching,
    run_power,
    run_qq,
    run_spectrum,
    run_table1,
    noise_spectrum,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seed(args):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("TCT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigurationError(f"TCT_SEED must be an integer, got {env!r}") from exc
    return 0


def _emit(text, path=None):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _config(args, kind, **extra):
    mapping = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            mapping.update(parse_config_text(fh.read()))
    mapping["kind"] = kind
    for key in ("dims", "dist", "vectors", "f", "reps", "alpha", "betas", "beta0s", "output",
                "threads", "bins"):
        value = getattr(args, key, None)
        if value is not None:
            mapping[key] = value
    mapping.update(extra)
    if getattr(args, "seed", None) is not None or "seed" not in mapping:
        mapping["seed"] = _seed(args)
    return config_from_mapping(mapping)


def _ratios(args):
    if args.ratios:
        c = np.array(args.ratios, dtype=float)
        return c / c.sum()
    from .tensor_core import DimensionProfile
    return DimensionProfile(args.dims or (100, 100, 100)).ratios


# ---------------------------------------------------------------------------
# Subcommands


def cmd_lsd(args):
    from .dyson import DysonSolution, density

    sol = DysonSolution(_ratios(args))
    zeta = sol.edge
    lo, hi = args.range if args.range else (-zeta - 0.2, zeta + 0.2)
    E = np.linspace(lo, hi, args.points)
    rho = density(sol.c, E, args.eta)
    # int x^2 dnu = 1 - sum c^2 exactly; the quadrature route is slow when max c = 1/2
    m2 = 1.0 - float(np.sum(sol.c**2))
    lines = [f"# zeta={zeta:.10g} m2={m2:.10g} point_mass={sol.has_point_mass}", "E,density"]
    lines += [f"{e:.6g},{r:.6g}" for e, r in zip(E, rho)]
    _emit("\n".join(lines) + "\n", args.output)


def cmd_limits(args):
    from .contour import calibrate
    from .limit_laws import cov_function, mu_function

    prof_dims = args.dims or (100, 100, 100)
    from .tensor_core import DimensionProfile
    prof = DimensionProfile(prof_dims)
    vecs = direction_vectors(prof, args.vectors or "delocalized")
    dist = {"normal": "gaussian", "uniform": "uniform_pm_sqrt3"}.get(args.dist, args.dist)
    ctx = limit_context(prof, dist or "gaussian", vecs, args.kappa3, args.kappa4)
    ctx = ctx.replace(convention=args.convention, covariance=args.covariance)
    if args.probe:
        z = complex(*args.probe)
        print(f"z={z}")
        print(f"mu={complex(mu_function(ctx, z))}")
        print(f"C(z,conj z)={complex(cov_function(ctx, z, np.conj(z)))}")
        return
    names = args.f or ["x2"]
    rows = []
    for name in names:
        cal = calibrate(ctx, name)
        var = cal.variance(ctx.kappa4)
        rows.append(dict(f=name, xi=cal.xi(ctx.kappa3, ctx.kappa4), sigma2=var, sigma=cal.sigma(ctx.kappa4)))
    _emit(rows_to_csv(rows), args.output)


def cmd_spectrum(args):
    from .tensor_core import derive_seed

    cfg = _config(args, "spectrum")
    prof = cfg.profile
    vecs = direction_vectors(prof, cfg.vectors)
    ev = noise_spectrum(prof, cfg.dist, vecs, derive_seed(cfg.seed, "spectrum", 0), args.method)
    rows, summary = run_spectrum(cfg, draws=cfg.reps)
    eig_text = "eigenvalue\n" + "".join(f"{v:.17g}\n" for v in ev)
    hist_text = "# " + " ".join(f"{k}={v:.6g}" for k, v in summary.items()) + "\n" + rows_to_csv(rows)
    if args.output:
        _emit(eig_text, args.output + "_eigenvalues.csv")
        _emit(hist_text, args.output + "_histogram.csv")
    else:
        _emit(eig_text + "\n" + hist_text)


def cmd_simulate(args):
    cfg = _config(args, args.kind)
    if cfg.kind == "table1":
        rows = run_table1(cfg)
    elif cfg.kind == "qq":
        rows = run_qq(cfg)
    elif cfg.kind == "matching":
        rows = run_matching(cfg)
    elif cfg.kind == "power":
        rows = run_power(cfg)
    else:
        rows, _ = run_spectrum(cfg)
    _emit(rows_to_csv(rows), cfg.output)


def cmd_power(args):
    cfg = _config(args, "power")
    _emit(rows_to_csv(run_power(cfg)), cfg.output)


def _report_text(report, as_json):
    d = {k: (bool(v) if isinstance(v, (bool, np.bool_)) else v) for k, v in report.__dict__.items()}
    if as_json:
        return json.dumps(d, indent=2) + "\n"
    return "".join(f"{k}={v}\n" for k, v in d.items())


def cmd_test_align(args):
    from .tensor_core import read_tensor, read_vectors
    from .testing import alignment_test

    T = read_tensor(args.tensor)
    vecs = read_vectors(args.vectors)
    if vecs.profile.dims != T.profile.dims:
        raise DimensionError(f"vectors {vecs.profile.dims} do not match tensor {T.profile.dims}")
    _emit(_report_text(alignment_test(T, vecs, args.alpha), args.json), args.output)


def cmd_test_match(args):
    from .tensor_core import read_tensor
    from .testing import matching_test

    T0 = read_tensor(args.tensor0)
    T1 = read_tensor(args.tensor1)
    res = matching_test(T0, T1, args.alpha, args.rank)
    parts = []
    for r, rep in enumerate(res.reports):
        parts.append(f"[component {r + 1}]\n" + _report_text(rep, args.json))
    parts.append(f"[overall]\nreject={res.reject}\nrecovery_converged={res.recovery.converged}\n")
    _emit("".join(parts), args.output)


# ---------------------------------------------------------------------------
# Parser


def _common(p, experiment=True):
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--seed", type=int, help="root seed (default: $TCT_SEED or 0)")
    p.add_argument("--threads", type=int, help="replicate threads (default: all cores)")
    p.add_argument("--output", "-o", help="output path (default: stdout)")
    if experiment:
        p.add_argument("--dims", type=int, nargs="+")
        p.add_argument("--dist", choices=["gaussian", "uniform_pm_sqrt3", "normal", "uniform"])
        p.add_argument("--vectors", help="delocalized, localized or a vectors file")
        p.add_argument("--reps", type=int)


def build_parser():
    parser = _Parser(prog="tct", description="Tensor contraction tests and their spectral limits.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("lsd", help="limiting spectral density on a grid")
    p.add_argument("--dims", type=int, nargs="+")
    p.add_argument("--ratios", type=float, nargs="+")
    p.add_argument("--range", type=float, nargs=2)
    p.add_argument("--points", type=int, default=201)
    p.add_argument("--eta", type=float, default=1e-7)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_lsd)

    p = sub.add_parser("limits", help="limiting mean and variance of G_N(f)")
    _common(p)
    p.add_argument("--f", nargs="+")
    p.add_argument("--kappa3", type=float)
    p.add_argument("--kappa4", type=float)
    p.add_argument("--convention", choices=["main", "general"], default="main")
    p.add_argument("--covariance", choices=["logdet", "system"], default="logdet")
    p.add_argument("--probe", type=float, nargs=2, metavar=("RE", "IM"))
    p.set_defaults(func=cmd_limits)

    p = sub.add_parser("spectrum", help="eigenvalues and histogram of a contracted noise matrix")
    _common(p)
    p.add_argument("--bins", type=int)
    p.add_argument("--method", choices=["jacobi", "lapack"], default="jacobi")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("simulate", help="Monte Carlo experiments (table1, qq, matching)")
    _common(p)
    p.add_argument("--kind", choices=["table1", "qq", "matching", "power", "spectrum"], default="table1")
    p.add_argument("--f", nargs="+")
    p.add_argument("--alpha", type=float)
    p.add_argument("--betas", type=float, nargs="+")
    p.add_argument("--beta0s", type=float, nargs="+")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("power", help="empirical and theoretical power of the alignment test")
    _common(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--betas", type=float, nargs="+")
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("test-align", help="alignment test of a tensor against direction vectors")
    p.add_argument("--tensor", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--json", action="store_true")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_test_align)

    p = sub.add_parser("test-match", help="matching test between two tensors")
    p.add_argument("--tensor0", required=True)
    p.add_argument("--tensor1", required=True)
    p.add_argument("--rank", type=int, default=1)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--json", action="store_true")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_test_match)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError(parser.format_usage().strip())
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, DimensionError, FileNotFoundError) as exc:
        print(f"tct: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"tct: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
