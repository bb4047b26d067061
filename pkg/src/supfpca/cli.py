"""Command-line entry point: ``supfpca {simulate,fit,cv,predict,eigen,study}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from dataclasses import fields

import numpy as np

from .errors import DataError, DomainError, InitError, InvalidArgumentError, NumericalError
from .fit import FitConfig, cross_validate, fit
from .io import format_diagnostics, format_samples, load_model, read_samples, save_model
from .model import eigen_surface
from .predict import infer_scores, predict_curve
from .sim import SimTruth, StudyConfig, generate, run_study

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

_FIT_KEYS = {f.name: f for f in fields(FitConfig)}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text, n=None):
    try:
        vals = tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    except ValueError:
        raise UsageError(f"not a list of numbers: {text!r}") from None
    if n is not None and len(vals) != n:
        raise UsageError(f"expected {n} numbers, got {text!r}")
    return vals


def read_config_file(path) -> dict:
    """``key=value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for i, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}: line {i}: expected key=value")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def _coerce(key, value):
    if key not in _FIT_KEYS:
        raise UsageError(f"unknown configuration key {key!r}")
    default = _FIT_KEYS[key].default
    if key in ("lambdas",):
        return _floats(value, 4)
    if key in ("t_domain", "z_domain"):
        return _floats(value, 2)
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(default, int) or key == "n_bins":
        try:
            return int(value)
        except ValueError:
            raise UsageError(f"{key} must be an integer") from None
    try:
        return float(value)
    except ValueError:
        raise UsageError(f"{key} must be a number") from None


def build_config(args) -> FitConfig:
    values = {}
    grids = {}
    if getattr(args, "config", None):
        for k, v in read_config_file(args.config).items():
            if k in ("mean_grid", "cov_grid"):
                grids[k] = v
            else:
                values[k] = _coerce(k, v)
    for k in _FIT_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            values[k] = _coerce(k, v) if isinstance(v, str) else v
    args._grids = grids
    try:
        return FitConfig(**values)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from None


def _parse_grid(text):
    """``a:b;c:d`` pairs."""
    pairs = []
    for item in text.split(";"):
        item = item.strip()
        if not item:
            continue
        pair = _floats(item.replace(":", ","), 2)
        pairs.append(pair)
    if not pairs:
        raise UsageError("empty grid")
    return pairs


def _add_fit_flags(p):
    p.add_argument("--config", help="key=value file with fit settings")
    for name in ("r", "l", "p", "m", "q", "degree", "max_outer", "max_inner", "seed", "n_bins", "init_resolutions",
                 "cv_folds"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int)
    for name in ("rel_tol", "inner_tol", "shrink", "armijo", "initial_step"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)
    p.add_argument("--t-domain", dest="t_domain", help="lo,hi")
    p.add_argument("--z-domain", dest="z_domain", help="lo,hi")


def make_parser():
    parser = _Parser(prog="supfpca", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write simulated curves as CSV")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--m-tilde", type=int, default=51)
    p.add_argument("--sigma2", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--irregular", type=float, help="fraction of grid points kept per curve")
    p.add_argument("--no-sd", action="store_true", help="omit the sd column")
    p.add_argument("--id-offset", type=int, default=0)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("fit", help="fit a model")
    p.add_argument("data")
    p.add_argument("-o", "--output", required=True, help="model file")
    p.add_argument("--diagnostics", help="CSV of the objective trace")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--lambdas", help="t,z,t_mean,z_mean")
    g.add_argument("--cv-grid", action="store_true", help="choose lambdas by cross-validation first")
    p.add_argument("--mean-grid", help="pairs t_mean:z_mean separated by ';'")
    p.add_argument("--cov-grid", help="pairs t:z separated by ';'")
    _add_fit_flags(p)

    p = sub.add_parser("cv", help="cross-validate the smoothing parameters")
    p.add_argument("data")
    p.add_argument("--mean-grid", help="pairs t_mean:z_mean separated by ';'")
    p.add_argument("--cov-grid", help="pairs t:z separated by ';'")
    p.add_argument("-o", "--output", help="CV table CSV (default stdout)")
    _add_fit_flags(p)

    p = sub.add_parser("predict", help="predict curves from their observed points")
    p.add_argument("model")
    p.add_argument("data", help="observed points used to infer scores")
    p.add_argument("--grid", help="lo,hi,n prediction grid (default: the observed times)")
    p.add_argument("--latent", action="store_true", help="omit the noise variance")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("eigen", help="write eigenfunction surfaces")
    p.add_argument("model")
    p.add_argument("--z-grid", help="lo,hi,n (default: training range, 21 points)")
    p.add_argument("--t-grid", help="lo,hi,n (default: training range, 101 points)")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("study", help="simulation study over r = 1, 2, 3")
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--m-tilde", type=int, default=51)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--lambdas", default="1e-3,1e-3,1e-3,1e-3")
    p.add_argument("-o", "--output", required=True, help="output directory")
    return parser


def _linspace(text, default):
    if text is None:
        return np.linspace(*default)
    lo, hi, n = _floats(text, 3)
    if n < 1 or n != int(n):
        raise UsageError("grid size must be a positive integer")
    return np.linspace(lo, hi, int(n))


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def cmd_simulate(args):
    if args.n < 1 or args.m_tilde < 1:
        raise UsageError("--n and --m-tilde must be positive")
    if args.sigma2 < 0:
        raise UsageError("--sigma2 must be nonnegative")
    truth = SimTruth(n=args.n, m_tilde=args.m_tilde, sigma2=args.sigma2, seed=args.seed,
                     irregular=args.irregular, id_offset=args.id_offset)
    samples = generate(truth)
    with_sd = not args.no_sd
    if with_sd:
        if args.sigma2 <= 0:
            raise UsageError("an sd column needs --sigma2 > 0; pass --no-sd")
        sd = float(np.sqrt(args.sigma2))
        for s in samples:
            s.noise_sd = np.full(s.n_obs, sd)
    _write(args.output, format_samples(samples, with_sd))


def _grids(args, config):
    mg = args.mean_grid or args._grids.get("mean_grid")
    cg = args.cov_grid or args._grids.get("cov_grid")
    default = [(10.0 ** k, 10.0 ** k) for k in (-4, -3, -2, -1)]
    return (_parse_grid(mg) if mg else default), (_parse_grid(cg) if cg else default)


def _cv_table(table):
    lines = ["stage,lambda_t,lambda_z,lambda_t_mean,lambda_z_mean,score,folds"]
    for row in table:
        lines.append(",".join([row.stage] + [repr(v) for v in row.lambdas] + [repr(row.score), str(row.n_folds)]))
    return "\n".join(lines) + "\n"


def cmd_fit(args):
    config = build_config(args)
    if args.lambdas:
        config = _replace(config, lambdas=_floats(args.lambdas, 4))
    samples = read_samples(args.data)
    if args.cv_grid:
        mg, cg = _grids(args, config)
        best, _ = cross_validate(samples, config, mg, cg)
        config = _replace(config, lambdas=best)
    model = fit(samples, config)
    save_model(args.output, model)
    if args.diagnostics:
        _write(args.diagnostics, format_diagnostics(model))
    d = model.diagnostics
    print(f"objective={model.objective!r} outer={d.n_outer} converged={d.converged} "
          f"sigma2={model.params.sigma2!r}")


def cmd_cv(args):
    config = build_config(args)
    samples = read_samples(args.data)
    mg, cg = _grids(args, config)
    best, table = cross_validate(samples, config, mg, cg)
    _write(args.output, _cv_table(table))
    print("best lambdas " + ",".join(repr(v) for v in best), file=sys.stderr if args.output in (None, "-") else sys.stdout)


def cmd_predict(args):
    model = load_model(args.model)
    samples = read_samples(args.data)
    lines = ["id,t,mean,var"]
    for s in samples:
        post = infer_scores(model, s)
        if args.grid:
            t = _linspace(args.grid, None)
            sd = None
        else:
            t, sd = s.times, s.noise_sd
        mean, var = predict_curve(model, post, s.covariate, t, latent=args.latent, noise_sd=sd)
        for ti, mi, vi in zip(t, mean, var):
            lines.append(f"{s.id},{float(ti)!r},{float(mi)!r},{float(vi)!r}")
    _write(args.output, "\n".join(lines) + "\n")


def cmd_eigen(args):
    model = load_model(args.model)
    z = _linspace(args.z_grid, (*model.z_range, 21))
    t = _linspace(args.t_grid, (*model.t_range, 101))
    lo, hi = model.bases.z_domain
    if np.any((z < lo) | (z > hi)):
        warnings.warn("z grid extends beyond the training range; extrapolating")
    vals, funcs = eigen_surface(model.params, model.bases, z, t, outside="extrapolate")
    lines = ["z,t,j,value,eigenvalue"]
    for k, zk in enumerate(z):
        for j in range(vals.shape[1]):
            for ti, fv in zip(t, funcs[k, j]):
                lines.append(f"{float(zk)!r},{float(ti)!r},{j + 1},{float(fv)!r},{float(vals[k, j])!r}")
    _write(args.output, "\n".join(lines) + "\n")


def cmd_study(args):
    cfg = StudyConfig(n_train=args.n_train, n_test=args.n_test, m_tilde=args.m_tilde, seed=args.seed,
                      repetitions=args.repetitions, lambdas=_floats(args.lambdas, 4))
    report = run_study(cfg, args.output)
    sys.stdout.write(report.text)


def _replace(config, **kw):
    from .fit import _replace as rep
    return rep(config, **kw)


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "cv": cmd_cv, "predict": cmd_predict,
            "eigen": cmd_eigen, "study": cmd_study}


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:   # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DomainError, InvalidArgumentError, InitError, FileNotFoundError,
            IsADirectoryError, PermissionError) as exc:
        # configuration problems were already turned into UsageError
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
