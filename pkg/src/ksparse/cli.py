"""Command-line front end.

Every command writes its artifacts plus a ``manifest.json`` into ``--out``.
Options may also come from a ``key = value`` file given with ``--config``;
command-line flags override it.  Exit codes: 0 success, 2 usage, 3 data
validation, 4 numerical failure, 5 budget refusal.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .aesk import RemcConfig, TemperatureLadder, WhamError, run_remc, wham
from .criteria import NumericalError, PriorSpec
from .data import Dataset, DataValidationError, load_dataset
from .esk import DEFAULT_BUDGET, Binning, BudgetExceeded, exhaustive_search
from .evaluator import CriteriaConfig
from .io import (
    RunManifest,
    compare_dos,
    ensure_dir,
    ranked_records,
    read_dos_csv,
    write_aes_dos_csv,
    write_comparison_csv,
    write_dos_csv,
    write_histograms_csv,
    write_json,
    write_jsonl,
    write_path_csv,
)
from .lasso import LassoConfig, cv_errors, lambda_path, lambda_scan, prepare, choose_lambda
from .vma import MethodsConfig, VmaConfig, config_dict, run_vma_experiment, write_rows

log = logging.getLogger("ksparse")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_BUDGET = 2, 3, 4, 5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# parser


def _jobs_default() -> int:
    try:
        return max(1, int(os.environ.get("KSPARSE_JOBS", "1")))
    except ValueError:
        return 1


def _common(p: argparse.ArgumentParser, data=True, seed=True):
    p.add_argument("--config", help="key = value file mirroring the flags")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--log-level", default="WARNING")
    if data:
        p.add_argument("--data", required=True, help="CSV with columns y,sigma,x...")
        p.add_argument("--constant-sigma", type=float, help="noise level when the file has no sigma column")
        p.add_argument("--prior", default="estimated", help="estimated | uniform[:S] | fixed:S")
        p.add_argument("--folds", type=int, default=10)
        p.add_argument("--no-center", action="store_true", help="skip weighted centering of y and X")
    if seed:
        p.add_argument("--seed", type=int, required=True)
    p.add_argument("--jobs", type=int, default=_jobs_default())


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="ksparse", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("es-k", help="exhaustive search over all K-supports")
    _common(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--criterion", choices=["fe", "cve", "both"], default="both")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--bins", type=int, default=200)
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    p.add_argument("--override-budget", action="store_true")

    p = sub.add_parser("aes-k", help="replica-exchange sampling plus density-of-states reconstruction")
    _common(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--criterion", choices=["fe", "cve"], default="fe")
    p.add_argument("--sweeps", type=int, default=100_000)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--exchange-interval", type=int, default=1)
    p.add_argument("--betas", help="comma-separated inverse temperatures, descending")
    p.add_argument("--beta-min", type=float)
    p.add_argument("--beta-max", type=float)
    p.add_argument("--n-temps", type=int, default=15)
    p.add_argument("--bins", type=int, default=400)
    p.add_argument("--match-bins", help="density-of-states CSV whose bins the output should use")
    p.add_argument("--wham-tol", type=float, default=1e-10)
    p.add_argument("--wham-max-iter", type=int, default=100_000)

    p = sub.add_parser("lasso", help="LASSO path, lambda choice and lambda scan")
    _common(p)
    p.add_argument("--n-lambdas", type=int, default=100)
    p.add_argument("--lambda-min-ratio", type=float, default=1e-4)
    p.add_argument("--no-scale-x", action="store_true")
    p.add_argument("--mode", choices=["all", "optimize", "scan"], default="all",
                   help="optimize: CV choice of lambda; scan: score every path support; all: both")

    p = sub.add_parser("vma", help="synthetic planted-support experiment")
    _common(p, data=False)
    p.add_argument("--p", type=int, default=700)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--k-true", type=int, default=2)
    p.add_argument("--sigma-beta2", type=float, default=1.0)
    p.add_argument("--sigma-eps2", type=float, default=0.1)
    p.add_argument("--sigma-scale", type=float, default=1.0)
    p.add_argument("--k-max", type=int, default=7)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds starting at --seed")
    p.add_argument("--es-max-k", type=int, default=3)
    p.add_argument("--sweeps", type=int, default=100_000)
    p.add_argument("--prior", default="estimated")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--no-lasso", action="store_true")

    p = sub.add_parser("compare-dos", help="align two density-of-states files and report deviations")
    _common(p, data=False, seed=False)
    p.add_argument("reference")
    p.add_argument("other")
    p.add_argument("--min-count", type=float, default=50)

    p = sub.add_parser("dataset-check", help="validate a dataset file")
    _common(p, seed=False)

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="override the output directory")
    return ap


def _config_tokens(path: str, sub: argparse.ArgumentParser) -> list[str]:
    """Turn a key = value file into flag tokens for ``sub``."""
    actions = {a.dest: a for a in sub._actions if a.option_strings}
    tokens: list[str] = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key = value")
            key, val = (t.strip() for t in line.split("=", 1))
            val = val.strip("\"'")
            dest = key.replace("-", "_")
            if dest not in actions or dest == "config":
                raise UsageError(f"{path}:{n}: unknown option {key!r}")
            act = actions[dest]
            flag = act.option_strings[-1]
            if isinstance(act, argparse._StoreTrueAction):
                if val.lower() in ("true", "1", "yes"):
                    tokens.append(flag)
            else:
                tokens += [flag, val]
    return tokens


def _config_path(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse_args(argv: list[str]) -> argparse.Namespace:
    ap = build_parser()
    path = _config_path(argv)
    if path and argv and argv[0] in COMMANDS:
        sub = ap._subparsers._group_actions[0].choices[argv[0]]
        # file first, explicit flags after so they win
        argv = [argv[0]] + _config_tokens(path, sub) + argv[1:]
    return ap.parse_args(argv)


# ---------------------------------------------------------------------------
# commands


def _criteria(args) -> CriteriaConfig:
    try:
        prior = PriorSpec.parse(args.prior)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return CriteriaConfig(prior=prior, n_folds=args.folds, seed=args.seed, center=not args.no_center)


def _load(args) -> Dataset:
    return load_dataset(args.data, constant_sigma=args.constant_sigma)


def cmd_es_k(args, out):
    d = _load(args)
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    cc = _criteria(args)
    crits = ("fe", "cve") if args.criterion == "both" else (args.criterion,)
    res = exhaustive_search(d, args.k, cc, crits, top_t=args.top, n_bins=args.bins, jobs=args.jobs,
                            budget=args.budget, override_budget=args.override_budget)
    prepared = cc.prepare(d)
    for c in crits:
        write_jsonl(ranked_records(res, c, prepared), out / f"ranked_{c}.jsonl")
    for name in ("dos_fe", "dos_cve", "dos2d"):
        dos = getattr(res, name)
        if dos is not None:
            write_dos_csv(dos, out / f"{name}.csv")
    diag = {"n_evaluated": res.n_evaluated, "n_skipped": res.n_skipped}
    if res.n_skipped:
        reasons, counts = np.unique(res.skipped_status, return_counts=True)
        from ._kernels import STATUS_TEXT

        diag["skipped_by_reason"] = {STATUS_TEXT[int(r)]: int(c) for r, c in zip(reasons, counts)}
    return d, diag


def _ladder(args) -> TemperatureLadder:
    if args.betas:
        return TemperatureLadder(tuple(float(x) for x in args.betas.split(",")))
    if args.beta_min is not None or args.beta_max is not None:
        if args.beta_min is None or args.beta_max is None:
            raise UsageError("--beta-min and --beta-max go together")
        return TemperatureLadder.log_spaced(args.beta_min, args.beta_max, args.n_temps)
    return TemperatureLadder.default(args.criterion)


def cmd_aes_k(args, out):
    d = _load(args)
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    try:
        ladder = _ladder(args)
        cfg = RemcConfig(k=args.k, criterion=args.criterion, ladder=ladder, sweeps=args.sweeps,
                         burn_in=args.burn_in, exchange_interval=args.exchange_interval, seed=args.seed,
                         n_bins=args.bins, criteria=_criteria(args))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    trace = run_remc(d, cfg)
    try:
        est = wham(trace, tol=args.wham_tol, max_iter=args.wham_max_iter)
    except WhamError as exc:
        write_json({"residuals": exc.residuals}, out / "wham_residuals.json")
        raise
    E = trace.energies[np.isfinite(trace.energies)]
    if args.match_bins:
        edges = read_dos_csv(args.match_bins).edges
        binning = Binning(float(edges[0]), float(edges[-1]), edges.size - 1)
        if E.min() < binning.lo or E.max() > binning.hi:
            raise DataValidationError("sampled energies fall outside the bins of --match-bins")
    else:
        span = E.max() - E.min() or 1.0
        binning = Binning(float(E.min() - 0.01 * span), float(E.max() + 0.01 * span), args.bins)
    binned = est.normalized(math.comb(d.n_features, args.k)).rebin(binning)
    write_aes_dos_csv(binning.edges, binned.log_g, out / "dos.csv")
    _, H = trace.histograms(binning)
    write_histograms_csv(binning.edges, H, trace.betas, out / "histograms.csv")
    s, e = trace.best
    write_json({"support": list(s.indices), "names": s.names(d.column_names), "energy": e,
                "criterion": args.criterion, "k": args.k}, out / "best.json")
    diag = trace.diagnostics() | {"wham_iterations": est.iterations, "wham_residual": est.residual}
    write_json(diag, out / "diagnostics.json")
    return d, diag


def cmd_lasso(args, out):
    d = _load(args)
    cc = _criteria(args)
    lc = LassoConfig(n_lambdas=args.n_lambdas, lambda_min_ratio=args.lambda_min_ratio, scale_x=not args.no_scale_x)
    prob = prepare(d, lc.scale_x)
    path = lambda_path(prob.data, lc)
    names = d.column_names
    choice = scan = None
    if args.mode in ("all", "optimize"):
        choice = choose_lambda(path, cv_errors(prob, cc.folds(d), path.lambdas, lc))
        write_json({
            "lambda_min": choice.lambda_min,
            "lambda_1se": choice.lambda_1se,
            "support_min": [names[i] for i in choice.support_min],
            "support_1se": [names[i] for i in choice.support_1se],
        }, out / "lambda_choice.json")
    if args.mode in ("all", "scan"):
        scan = lambda_scan(d, path, cc)
        recs = []
        for crit in ("fe", "cve"):
            for k, e in scan.minima(crit).items():
                recs.append({"criterion": crit, "k": k, "support": list(e.support.indices),
                             "names": e.support.names(names), "fe": e.values.fe, "cve": e.values.cve,
                             "coefficients": [float(c) for c in e.coefficients], "first_lambda": e.first_lambda})
        write_jsonl(recs, out / "scan_minima.jsonl")
    write_path_csv(path, choice.cve_mean if choice else None, scan, out / "path.csv")
    return d, {"n_distinct_supports": len(path.distinct_supports), "n_skipped": len(scan.skipped) if scan else None}


def cmd_vma(args, out):
    if args.k_max < 1 or args.seeds < 1:
        raise UsageError("--k-max and --seeds must be >= 1")
    try:
        prior = PriorSpec.parse(args.prior)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    seeds = list(range(args.seed, args.seed + args.seeds))
    # seeds run concurrently when there are several; each then searches single-threaded
    inner_jobs = 1 if len(seeds) > 1 else args.jobs

    def one(seed):
        cfg = VmaConfig(n=args.n, p=args.p, k_true=args.k_true, sigma_beta2=args.sigma_beta2,
                        sigma_eps2=args.sigma_eps2, k_range=tuple(range(1, args.k_max + 1)), seed=seed,
                        sigma_scale=args.sigma_scale)
        mc = MethodsConfig(es_max_k=args.es_max_k, remc_sweeps=args.sweeps,
                           criteria=CriteriaConfig(prior=prior, n_folds=args.folds, seed=seed),
                           run_lasso=not args.no_lasso, jobs=inner_jobs)
        return run_vma_experiment(cfg, mc)

    with ThreadPoolExecutor(max_workers=min(args.jobs, len(seeds))) as pool:
        results = list(pool.map(one, seeds))
    rows = [r for res in results for r in res.rows]
    summaries = [res.summary() for res in results]
    cfg = results[-1].config
    write_rows(rows, out / "results.csv")
    write_jsonl(summaries, out / "summary.jsonl")
    return None, {"seeds": [s["seed"] for s in summaries], "vma_config": config_dict(cfg)}


def cmd_compare_dos(args, out):
    a, b = read_dos_csv(args.reference), read_dos_csv(args.other)
    cmp = compare_dos(a, b, args.min_count)
    write_comparison_csv(cmp, out / "comparison.csv")
    diag = {"offset": cmp.offset, "max_abs_deviation": cmp.max_abs_deviation, "n_bins": cmp.n_bins}
    write_json(diag, out / "comparison.json")
    print(json.dumps(diag))
    return None, diag


def cmd_dataset_check(args, out):
    d = _load(args)
    meta = d.metadata() | {"fingerprint": d.fingerprint()}
    write_json(meta, out / "dataset.json")
    print(json.dumps(meta))
    return d, meta


COMMANDS = {
    "es-k": cmd_es_k,
    "aes-k": cmd_aes_k,
    "lasso": cmd_lasso,
    "vma": cmd_vma,
    "compare-dos": cmd_compare_dos,
    "dataset-check": cmd_dataset_check,
}


def _error(code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if argv and argv[0] == "rerun":
            args = build_parser().parse_args(argv)
            m = RunManifest.read(args.manifest)
            argv = list(m.argv)
            if args.out:
                i = argv.index("--out")
                argv[i + 1] = args.out
        args = parse_args(argv)
    except UsageError as exc:
        return _error(EXIT_USAGE, exc)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, ValueError) as exc:
        return _error(EXIT_USAGE, exc)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.time()
    try:
        out = ensure_dir(args.out)
        d, diag = COMMANDS[args.command](args, out)
    except UsageError as exc:
        return _error(EXIT_USAGE, exc)
    except BudgetExceeded as exc:
        return _error(EXIT_BUDGET, exc)
    except DataValidationError as exc:
        return _error(EXIT_DATA, exc)
    except (NumericalError, WhamError, ArithmeticError) as exc:
        return _error(EXIT_NUMERIC, exc)
    except (OSError, ValueError) as exc:
        return _error(EXIT_DATA, exc)
    cfg = {k: v for k, v in vars(args).items() if k not in ("out",)}
    seeds = {"seed": cfg.get("seed")}
    RunManifest(
        command=args.command,
        argv=argv,
        config=cfg,
        seeds=seeds,
        version=__version__,
        dataset_fingerprint=d.fingerprint() if d is not None else None,
        wall_clock_s=time.time() - t0,
        diagnostics=diag,
    ).write(out / "manifest.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
