"""Command-line entry point: ``ksdbayes <subcommand> ...``.

Exit codes: 0 on success, 1 on a numerical failure, 2 on configuration or
input errors, 3 when ``--strict`` is given and the run raised a numerical
fallback flag.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .calibration import beta_select
from .conjugate import conjugate_update, quadratic_coeffs
from .errors import ConfigError, KsdBayesError, UnsupportedOperationError
from .experiments import (load_config, make_weight, normal_location_data,
                          normal_location_pif, run_experiment)
from .io import emit_json, emit_table, load_csv
from .kernel import default_kernel
from .ksd import build_gram_cache, ksd_vstat
from .models import (ContaminationSpec, GaussianMixtureModel, contaminate, make_egm_model,
                     make_ising_model, make_kef_model, make_liu_model, make_normal_location)
from .sampler import ess, ksd_target, rwm_sample
from .stein import HammingKernel, indicator_weight

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_STRICT = 0, 1, 2, 3
MODELS = ("normal-location", "liu", "kef", "egm", "gmm", "ising")


def _model(args, d):
    name = args.model
    if name == "normal-location":
        return make_normal_location()
    if name == "liu":
        return make_liu_model()
    if name == "kef":
        return make_kef_model(args.p)
    if name == "egm":
        return make_egm_model(d)
    if name == "gmm":
        return GaussianMixtureModel(args.mu)
    side = int(round(math.sqrt(d)))
    if side * side != d:
        raise ConfigError("ising data must have a square number of columns")
    return make_ising_model(side)


def _kernel(args, model, x):
    if args.model == "ising":
        if args.weight == "indicator":
            return HammingKernel(model.d, indicator_weight())
        return HammingKernel(model.d)
    return default_kernel(x, make_weight(args.weight, x.shape[1]), gamma=args.gamma)


def _data(args):
    ds, _ = load_csv(args.data, whiten=args.whiten, sidecar=False)
    return ds.x


def _theta(text):
    return np.array([float(v) for v in text.split(",")])


def _print_json(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_run(args):
    cfg = load_config(args.config).with_env()
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.threads:
        cfg.threads = args.threads
    manifest = run_experiment(cfg)
    print(f"wrote {len(manifest['files'])} files to {cfg.output_dir}")
    return manifest["flags"]


def cmd_ksd_eval(args):
    x = _data(args)
    model = _model(args, x.shape[1])
    K = _kernel(args, model, x)
    val = ksd_vstat(model, K, x, _theta(args.theta), threads=args.threads)
    print(repr(float(val)))
    return []


def _prior(args, p):
    mean = np.zeros(p)
    cov = args.prior_var * np.eye(p)
    return mean, cov


def cmd_fit_conjugate(args):
    x = _data(args)
    model = _model(args, x.shape[1])
    K = _kernel(args, model, x)
    cache = build_gram_cache(K, x)
    loss = quadratic_coeffs(model, K, x, cache)
    flags = []
    if args.beta == "auto":
        cal = beta_select(model, K, x, cache=cache)
        beta, flags = cal.beta, list(cal.flags)
    else:
        beta = float(args.beta)
    mean, cov = _prior(args, loss.k)
    post = conjugate_update(loss, mean, cov, beta, truncated=args.model == "egm")
    out = post.to_dict()
    out["sd"] = post.sd.tolist()
    out["flags"] = flags
    if args.out:
        emit_json(out, args.out)
    _print_json(out)
    return flags


def cmd_fit_mcmc(args):
    x = _data(args)
    model = _model(args, x.shape[1])
    K = _kernel(args, model, x)
    cache = build_gram_cache(K, x)
    flags = []
    if args.beta == "auto":
        cal = beta_select(model, K, x, cache=cache,
                          bounds=[(1e-3, None)] if args.model == "ising" else None)
        beta, flags = cal.beta, list(cal.flags)
    else:
        beta = float(args.beta)
    p = getattr(model, "p", 1)
    if args.model == "ising":
        def log_prior(t):
            return -0.5 * float(t[0]) ** 2 / args.prior_var if t[0] > 0 else -np.inf
    elif args.model == "gmm":
        def log_prior(t):
            return 0.0 if 0.0 < t[0] < 1.0 else -np.inf
    else:
        def log_prior(t):
            return -0.5 * float(t @ t) / args.prior_var
    target = ksd_target(model, K, x, log_prior, beta, cache)
    init = _theta(args.init) if args.init else np.full(p, 0.5 if args.model == "gmm" else 1.0)
    chain = rwm_sample(target, init, args.draws, args.seed)
    out = Path(args.out)
    emit_table(chain.draws, out / "draws.csv", [f"theta_{i + 1}" for i in range(p)])
    side = {"seed": args.seed, "acceptance": chain.acceptance_rate, "ess": ess(chain),
            "beta": beta, "n": x.shape[0], "flags": flags}
    emit_json(side, out / "draws.json")
    _print_json(side)
    return flags


def cmd_pif(args):
    x = _data(args)
    beta_arg = "auto" if args.beta == "auto" else float(args.beta)
    std, ksd, beta = normal_location_pif(x, args.y, args.weight, beta_arg,
                                         (args.lo, args.hi), args.resolution)
    emit_table([[t, a, b] for t, a, b in zip(std.grid, std.values, ksd.values)], args.out,
               ["theta", "standard_bayes", "ksd_bayes"])
    emit_json({"y": args.y, "beta": beta, "n": x.shape[0], "normaliser": "quadrature"},
              str(args.out) + ".json")
    print(f"max |PIF| standard={std.max_abs!r} ksd={ksd.max_abs!r}")
    return []


def cmd_beta(args):
    x = _data(args)
    model = _model(args, x.shape[1])
    K = _kernel(args, model, x)
    cal = beta_select(model, K, x)
    _print_json(cal.to_dict())
    return list(cal.flags)


def _preprocess(x, sqrt_transform, outlier_sd, normalise):
    if sqrt_transform:
        if np.any(x < 0):
            raise ConfigError("square-root transform needs non-negative data")
        x = np.sqrt(x)
    if outlier_sd is not None:
        z = np.abs(x - x.mean(axis=0)) / x.std(axis=0, ddof=1)
        x = x[np.all(z <= outlier_sd, axis=1)]
    if normalise:
        x = x / x.std(axis=0, ddof=1)
    return x


def cmd_gen_data(args):
    rng = np.random.default_rng(args.seed)
    if args.input:
        ds, _ = load_csv(args.input, sidecar=False)
        x = _preprocess(ds.x, args.sqrt_transform, args.outlier_sd, args.normalise)
    elif args.model == "normal-location":
        x, _ = normal_location_data(args.n, args.epsilon, args.y, args.seed)
        emit_table(x, args.out)
        print(f"wrote {x.shape[0]} rows to {args.out}")
        return []
    elif args.model == "liu":
        x = make_liu_model().sample(args.n, [0.0, 0.0], rng)
    elif args.model == "gmm":
        x = GaussianMixtureModel(args.mu).sample(args.n, args.theta_value, rng)
    elif args.model == "ising":
        x = make_ising_model(args.side).gibbs_sample(args.n, args.theta_value, rng,
                                                     burn_in=args.burn_in)
    elif args.model == "egm":
        x = make_egm_model(args.d).sample(args.n, np.ones(args.d * (args.d + 1) // 2), rng)
    else:
        raise ConfigError(f"gen-data does not simulate {args.model!r}; pass --input")
    if args.epsilon > 0 and not args.input:
        mode = "replace-fixed" if args.model in ("ising", "egm") else "shift"
        x = contaminate(x, ContaminationSpec(args.epsilon, mode, args.y), args.seed + 1).x
    emit_table(x, args.out)
    print(f"wrote {x.shape[0]} rows to {args.out}")
    return []


def _add_model_args(p, beta=True):
    p.add_argument("--model", choices=MODELS, default="normal-location")
    p.add_argument("--data", required=True, help="CSV file, one observation per row")
    p.add_argument("--weight", default="identity",
                   choices=("identity", "rational", "liu", "exp", "indicator"))
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--whiten", action="store_true")
    p.add_argument("--p", type=int, default=25, help="basis size for the kef model")
    p.add_argument("--mu", type=float, default=5.0, help="separation for the gmm model")
    if beta:
        p.add_argument("--beta", default="auto", help="'auto' or a positive number")
        p.add_argument("--prior-var", type=float, default=1.0)


def build_parser():
    ap = argparse.ArgumentParser(prog="ksdbayes", description=__doc__.splitlines()[0])
    ap.add_argument("--strict", action="store_true",
                    help="exit with status 3 if any numerical fallback was used")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment from a JSON config")
    p.add_argument("config")
    p.add_argument("--output-dir")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ksd-eval", help="squared KSD at one parameter value")
    _add_model_args(p, beta=False)
    p.add_argument("--theta", required=True, help="comma-separated parameter vector")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_ksd_eval)

    p = sub.add_parser("fit-conjugate", help="closed-form Gaussian posterior")
    _add_model_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit_conjugate)

    p = sub.add_parser("fit-mcmc", help="random-walk Metropolis on the generalised posterior")
    _add_model_args(p)
    p.add_argument("--draws", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fit_mcmc)

    p = sub.add_parser("pif", help="influence curves for the normal location model")
    p.add_argument("--data", required=True)
    p.add_argument("--y", type=float, required=True)
    p.add_argument("--weight", default="rational", choices=("identity", "rational"))
    p.add_argument("--beta", default="auto")
    p.add_argument("--lo", type=float, default=-1.0)
    p.add_argument("--hi", type=float, default=3.0)
    p.add_argument("--resolution", type=int, default=2001)
    p.add_argument("--whiten", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pif)

    p = sub.add_parser("beta", help="minimum-KSD fit and calibrated beta")
    _add_model_args(p, beta=False)
    p.set_defaults(func=cmd_beta)

    p = sub.add_parser("gen-data", help="simulate or preprocess a dataset")
    p.add_argument("--model", choices=MODELS, default="normal-location")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--y", type=float, default=10.0)
    p.add_argument("--theta", dest="theta_value", type=float, default=0.5)
    p.add_argument("--mu", type=float, default=5.0)
    p.add_argument("--side", type=int, default=6)
    p.add_argument("--d", type=int, default=11)
    p.add_argument("--burn-in", type=int, default=2000)
    p.add_argument("--input", help="CSV to preprocess instead of simulating")
    p.add_argument("--sqrt-transform", action="store_true")
    p.add_argument("--outlier-sd", type=float)
    p.add_argument("--normalise", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if getattr(args, "beta", None) not in (None, "auto"):
        try:
            if not float(args.beta) > 0:
                raise ValueError
        except ValueError:
            print("error: --beta must be 'auto' or a positive number", file=sys.stderr)
            return EXIT_CONFIG
    try:
        flags = args.func(args)
    except (ValueError, UnsupportedOperationError, FileNotFoundError) as exc:
        # input-type package errors subclass ValueError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KsdBayesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if args.strict and flags:
        print(f"strict: numerical flags raised: {', '.join(flags)}", file=sys.stderr)
        return EXIT_STRICT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
