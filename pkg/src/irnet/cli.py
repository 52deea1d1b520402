"""Command-line interface.

Subcommands: simulate, fit, fit-joint, evaluate, baseline, sweep, bench,
trace, check-conditions.  Exit codes: 0 success, 1 usage error, 2 data
validation error, 3 numeric failure.  All written artifacts are
byte-deterministic for fixed inputs; timing chatter goes to stderr only.

The environment variable IRNET_THREADS sets the default worker count for
the opt-in parallel gradient reduction; --deterministic forces the
sequential single-thread path regardless.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import baselines, experiments, plots, storage
from .exceptions import IrnetError, NumericError, ValidationError
from .fit_joint import (
    align_factor_permutation,
    fit_joint,
    infer_topic_matrix,
)
from .fit_known import FitConfig, fit_known, subspace_distance
from .model import FactorPair, predict_dataset
from .objective import check_conditions, loss_factors
from .synth import SynthSpec, gen_instance

THREADS_ENV = "IRNET_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _resolve_threads(args) -> int:
    if getattr(args, "deterministic", False):
        return 1
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        threads = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV}={raw!r} is not an integer") from None
    return max(1, threads)


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _method_list(text: str) -> list:
    return [v.strip() for v in text.split(",") if v.strip()]


def _eta(text: str):
    if text == "auto":
        return None
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"eta must be 'auto' or a number, got {text!r}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="irnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset plus ground truth")
    sim.add_argument("--p", type=int, required=True)
    sim.add_argument("--K", type=int, required=True)
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--kind", choices=["real", "binary"], default="real")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True, help="output directory (dataset/ and truth/)")
    sim.add_argument("--miss-frac", type=float, default=0.10)
    sim.add_argument("--false-pos-frac", type=float, default=0.10)
    sim.add_argument("--noise-mult-range", type=float, nargs=2, default=None,
                     metavar=("LO", "HI"))
    sim.add_argument("--value-range", type=float, nargs=2, default=None,
                     metavar=("LO", "HI"))
    sim.add_argument("--topics-per-row", type=int, nargs=2, default=None,
                     metavar=("LO", "HI"))
    sim.add_argument("--topics-per-obs", type=int, nargs=2, default=None,
                     metavar=("LO", "HI"))
    sim.add_argument("--share-topics", action="store_true")
    sim.add_argument("--balance-columns", action="store_true")
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="fit factors with known topic weights")
    _add_fit_args(fit)
    fit.set_defaults(func=cmd_fit)

    fitj = sub.add_parser("fit-joint", help="fit factors and topic weights jointly")
    _add_fit_args(fitj)
    fitj.add_argument("--outer-iters", type=int, default=30)
    fitj.add_argument("--outer-tol", type=float, default=1e-8)
    fitj.add_argument("--topics-out", default=None,
                      help="optional path for the estimated topic rows")
    fitj.set_defaults(func=cmd_fit_joint)

    ev = sub.add_parser("evaluate", help="score a model on a dataset")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--truth", default=None, help="truth directory for distance metrics")
    ev.add_argument("--out", default=None, help="optional report JSON path")
    ev.set_defaults(func=cmd_evaluate)

    base = sub.add_parser("baseline", help="fit a reference model")
    base.add_argument("--data", required=True)
    base.add_argument("--method", choices=["one-matrix", "k-matrices"], required=True)
    base.add_argument("--threshold", type=int, default=None)
    base.add_argument("--iters", type=int, default=50,
                      help="outer iterations when topics must be estimated")
    base.add_argument("--out", required=True)
    base.set_defaults(func=cmd_baseline)

    sw = sub.add_parser("sweep", help="test error versus training-set size")
    sw.add_argument("--p", type=int, default=50)
    sw.add_argument("--K", type=int, default=5)
    sw.add_argument("--kind", choices=["real", "binary"], default="real")
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--n-values", type=_int_list, default=list(experiments.DEFAULT_N_VALUES))
    sw.add_argument("--replicates", type=int, default=5)
    sw.add_argument("--methods", type=_method_list, default=list(experiments.METHODS))
    sw.add_argument("--topics", choices=["known", "joint"], default="known")
    sw.add_argument("--n-test", type=int, default=None)
    sw.add_argument("--fit-iters", type=int, default=500)
    sw.add_argument("--out", required=True, help="output directory")
    sw.set_defaults(func=cmd_sweep)

    be = sub.add_parser("bench", help="per-iteration fit time over a (p, K) grid")
    be.add_argument("--p-values", type=_int_list, default=[50, 100])
    be.add_argument("--K-values", type=_int_list, default=[5, 10])
    be.add_argument("--n", type=int, default=200)
    be.add_argument("--T", type=int, default=50)
    be.add_argument("--repeats", type=int, default=3)
    be.add_argument("--seed", type=int, default=0)
    be.add_argument("--out", required=True, help="output directory")
    be.set_defaults(func=cmd_bench)

    tr = sub.add_parser("trace", help="distance-to-truth convergence trace")
    tr.add_argument("--p", type=int, default=20)
    tr.add_argument("--K", type=int, default=3)
    tr.add_argument("--n", type=int, default=50)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--noisy", action="store_true", help="keep the noise channels on")
    tr.add_argument("--relax-iters", type=int, default=80)
    tr.add_argument("--iters", type=int, default=20000)
    tr.add_argument("--out", required=True, help="output directory")
    tr.set_defaults(func=cmd_trace)

    cc = sub.add_parser("check-conditions", help="identifiability diagnostics of a truth directory")
    cc.add_argument("--truth", required=True)
    cc.add_argument("--out", default=None)
    cc.set_defaults(func=cmd_check_conditions)

    return parser


def _add_fit_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True)
    p.add_argument("--K", type=int, default=None, help="override/validate manifest K")
    p.add_argument("--s", type=int, default=None, help="entries kept per factor (default 4p)")
    p.add_argument("--lam", "--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--eta", type=_eta, default=None, help="'auto' (default) or a number")
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action="store_true",
                   help="force the sequential reduction path")
    p.add_argument("--out", required=True, help="model JSON path")


def cmd_simulate(args) -> int:
    kwargs = dict(
        p=args.p, K=args.K, n=args.n, kind=args.kind, seed=args.seed,
        miss_frac=args.miss_frac, false_pos_frac=args.false_pos_frac,
        share_topics=args.share_topics, balance_columns=args.balance_columns,
    )
    if args.noise_mult_range is not None:
        kwargs["noise_mult_range"] = tuple(args.noise_mult_range)
    if args.value_range is not None:
        kwargs["value_range"] = tuple(args.value_range)
    if args.topics_per_row is not None:
        kwargs["topics_per_row"] = tuple(args.topics_per_row)
    if args.topics_per_obs is not None:
        kwargs["topics_per_obs"] = tuple(args.topics_per_obs)
    spec = SynthSpec(**kwargs)
    inst = gen_instance(spec)
    out = Path(args.out)
    provenance = {"generator": "philox", "seed": args.seed}
    storage.save_dataset(inst.dataset, out / "dataset", seed_provenance=provenance)
    spec_dict = asdict(spec)
    spec_dict["topics_per_row"] = list(spec.topics_per_row)
    spec_dict["topics_per_obs"] = list(spec.topics_per_obs)
    spec_dict["value_range"] = list(spec.value_range)
    spec_dict["noise_mult_range"] = list(spec.noise_mult_range)
    storage.save_truth(inst.bp_star, inst.M_star, out / "truth", spec_dict=spec_dict)
    print(f"wrote {out / 'dataset'} and {out / 'truth'}")
    return 0


def _load_known_topics(args):
    ds = storage.load_dataset(args.data)
    if args.K is not None and args.K != ds.K:
        raise ValidationError(f"--K {args.K} does not match dataset K={ds.K}")
    M = ds.topic_matrix()
    if M is None:
        raise ValidationError(
            "dataset has no stored topics; use fit-joint to estimate them"
        )
    return ds, M


def _fit_config(args, ds) -> FitConfig:
    s = 4 * ds.p if args.s is None else args.s
    return FitConfig(
        s=s, eta=args.eta, lam=args.lam, max_iters=args.iters,
        tol=args.tol, seed=args.seed, threads=_resolve_threads(args),
    )


def _config_meta(cfg: FitConfig) -> dict:
    return {
        "s": cfg.s,
        "eta": "auto" if cfg.eta is None else cfg.eta,
        "lam": cfg.lam,
        "max_iters": cfg.max_iters,
        "tol": cfg.tol,
        "seed": cfg.seed,
    }


def cmd_fit(args) -> int:
    ds, M = _load_known_topics(args)
    cfg = _fit_config(args, ds)
    bp, report = fit_known(ds, M, cfg)
    meta = {
        "fit": "known-topics",
        "config": _config_meta(cfg),
        "loss": float(report.loss_trace[-1]),
        "iters_run": report.iters_run,
        "converged": report.converged,
    }
    storage.save_model(bp, args.out, meta=meta)
    print(f"wrote {args.out}")
    print(f"final objective {report.loss_trace[-1]!r} after {report.iters_run} iterations")
    print(f"fit took {report.wall_time:.2f}s", file=sys.stderr)
    return 0


def cmd_fit_joint(args) -> int:
    ds = storage.load_dataset(args.data)
    if args.K is not None and args.K != ds.K:
        raise ValidationError(f"--K {args.K} does not match dataset K={ds.K}")
    cfg = _fit_config(args, ds)
    bp, M_hat, report = fit_joint(
        ds, cfg=cfg, outer_tol=args.outer_tol, max_outer=args.outer_iters
    )
    meta = {
        "fit": "joint",
        "config": _config_meta(cfg),
        "outer_iters": report.outer_iters,
        "loss": float(report.loss_trace[-1]),
        "converged": report.converged,
        "degenerate_init": list(report.degenerate_init),
    }
    storage.save_model(bp, args.out, meta=meta)
    print(f"wrote {args.out}")
    if args.topics_out:
        storage.save_topics(M_hat, args.topics_out)
        print(f"wrote {args.topics_out}")
    print(f"final objective {report.loss_trace[-1]!r} after {report.outer_iters} rounds")
    print(f"fit took {report.wall_time:.2f}s", file=sys.stderr)
    return 0


def cmd_evaluate(args) -> int:
    model, _ = storage.load_model(args.model)
    ds = storage.load_dataset(args.data)
    report: dict = {"n": ds.n}
    if isinstance(model, FactorPair):
        M = ds.topic_matrix()
        if M is None:
            M = infer_topic_matrix(model.thetas(), ds)
            report["topics"] = "estimated"
        else:
            report["topics"] = "stored"
        preds = predict_dataset(model, ds, M)
        report["prediction_error"] = baselines.prediction_error(preds, ds)
        report["train_objective"] = loss_factors(model, ds, M)
        if args.truth:
            bp_star, _ = storage.load_truth(args.truth)
            perm = align_factor_permutation(model, bp_star)
            aligned = FactorPair(bp_star.B1[:, perm], bp_star.B2[:, perm])
            report["d2_factors"] = subspace_distance(model, aligned)
            report["permutation"] = [int(k) for k in perm]
    else:
        M = ds.topic_matrix()
        if model.variant == "k_matrices" and M is None:
            M = infer_topic_matrix(model.thetas, ds)
            report["topics"] = "estimated"
        preds = baselines.predict_baseline(model, ds, M)
        report["prediction_error"] = baselines.prediction_error(preds, ds)
        report["variant"] = model.variant
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        storage.write_json(report, args.out)
    return 0


def cmd_baseline(args) -> int:
    ds = storage.load_dataset(args.data)
    if args.method == "one-matrix":
        model = baselines.fit_one_matrix(ds, args.threshold)
    else:
        M = ds.topic_matrix()
        if M is not None:
            model = baselines.fit_k_matrices(ds, M, args.threshold)
        else:
            model = baselines.fit_k_matrices_joint(
                ds, outer_iters=args.iters, threshold_s=args.threshold
            )
    storage.save_baseline(model, args.out, meta={"method": args.method})
    print(f"wrote {args.out}")
    return 0


def cmd_sweep(args) -> int:
    spec = SynthSpec(p=args.p, K=args.K, n=max(args.n_values), kind=args.kind,
                     seed=args.seed)
    result = experiments.run_nsweep(
        spec,
        n_values=args.n_values,
        methods=args.methods,
        replicates=args.replicates,
        known_topics=args.topics == "known",
        n_test=args.n_test,
        fit_iters=args.fit_iters,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    storage.write_json(result.to_dict(), out / "sweep.json")
    storage.write_csv(result.csv_rows(), out / "sweep.csv")
    plots.plot_error_vs_n(result, out / "error_vs_n.png")
    print(f"wrote {out / 'sweep.json'}, {out / 'sweep.csv'}, {out / 'error_vs_n.png'}")
    for method, med in result.medians().items():
        print(f"{method}: " + ", ".join(f"n={n}: {m:.4g}" for n, m in zip(result.n_values, med)))
    return 0


def cmd_bench(args) -> int:
    grid = experiments.run_runtime_grid(
        p_values=args.p_values, K_values=args.K_values, n=args.n,
        T=args.T, repeats=args.repeats, seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    storage.write_json(grid.to_dict(), out / "runtime.json")
    storage.write_csv(grid.csv_rows(), out / "runtime.csv")
    plots.plot_runtime_grid(grid, out / "runtime.png")
    print(f"wrote {out / 'runtime.json'}, {out / 'runtime.csv'}, {out / 'runtime.png'}")
    for cell in grid.cells:
        print(f"p={cell.p} K={cell.K}: {cell.seconds_per_iter * 1e3:.3f} ms/iter")
    return 0


def cmd_trace(args) -> int:
    spec = SynthSpec(p=args.p, K=args.K, n=args.n, seed=args.seed)
    trace = experiments.run_convergence_trace(
        spec, noiseless_run=not args.noisy,
        relax_iters=args.relax_iters, fit_iters=args.iters,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [["iteration", "dist_sq", "objective"]]
    for t in range(trace.dist_trace.size):
        rows.append([t, repr(float(trace.dist_trace[t])), repr(float(trace.loss_trace[t]))])
    storage.write_csv(rows, out / "trace.csv")
    summary = {
        "p": trace.p, "K": trace.K, "n": trace.n, "noiseless": trace.noiseless,
        "slope": trace.slope, "r2": trace.r2, "plateau": trace.plateau,
        "stat_surrogate": trace.stat_surrogate,
    }
    storage.write_json(summary, out / "trace.json")
    plots.plot_convergence(trace, out / "trace.png")
    print(f"wrote {out / 'trace.csv'}, {out / 'trace.json'}, {out / 'trace.png'}")
    print(f"slope {trace.slope:.3e}/iter, r2 {trace.r2:.4f}, plateau {trace.plateau:.3e}")
    return 0


def cmd_check_conditions(args) -> int:
    bp_star, M_star = storage.load_truth(args.truth)
    report = check_conditions(bp_star, M_star)
    text = json.dumps(report.as_dict(), indent=2, sort_keys=True)
    print(text)
    if args.out:
        storage.write_json(report.as_dict(), args.out)
    return 0


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"irnet: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help and friends
        code = exc.code
        return 0 if code in (0, None) else 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"irnet: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"irnet: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, IrnetError) as exc:
        print(f"irnet: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
