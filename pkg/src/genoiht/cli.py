"""Command-line front end: fit, cross-validate, simulate, benchmark.

All tables are tab-separated with a header row; the first line of every
output file is a ``#`` comment recording the version, a hash of the
algorithmic configuration, and the seed, so identical configurations
produce byte-identical science columns regardless of thread count.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .geno_matrix import (CovariateBlock, DenseDesign, StandardizedView,
                          set_worker_threads)
from .iht import IhtConfig, fit
from .model_select import CvPlan, cv_iht
from .plink_io import PlinkFormatError, read_plink_triple
from .simulate import (SimulationSpec, aggregate_reports, random_packed_matrix,
                       run_experiment, simulate_phenotype)


class CliError(Exception):
    """User-facing command-line failure."""


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def parse_path_spec(text: str) -> np.ndarray:
    """Parse a budget path given as ``start:stop:step`` or an explicit list."""
    try:
        if ":" in text:
            start, stop, step = (int(tok) for tok in text.split(":"))
            if step < 1 or stop < start:
                raise ValueError
            path = np.arange(start, stop + 1, step, dtype=np.int64)
        else:
            path = np.unique(np.array([int(tok) for tok in text.split(",") if tok],
                             dtype=np.int64))
    except ValueError:
        raise CliError(f"bad path specification {text!r}; use a:b:step or k1,k2,...")
    if path.size == 0 or path.min() < 1:
        raise CliError("path budgets must be integers >= 1")
    return path


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(tok) for tok in text.split(",") if tok]
    except ValueError:
        raise CliError(f"bad integer list for {flag}: {text!r}")
    if not values:
        raise CliError(f"{flag} needs at least one value")
    return values


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        values = [float(tok) for tok in text.split(",") if tok]
    except ValueError:
        raise CliError(f"bad number list for {flag}: {text!r}")
    if not values:
        raise CliError(f"{flag} needs at least one value")
    return values


def config_hash(args: argparse.Namespace) -> str:
    """Hash of the algorithmic configuration.

    Excludes the output prefix and worker thread count, which must not
    change any science column.
    """
    skip = {"out", "threads", "func", "command"}
    entries = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    blob = json.dumps(entries, default=str, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _meta_line(args: argparse.Namespace) -> str:
    return (f"# genoiht={__version__} command={args.command} "
            f"config={config_hash(args)} seed={args.seed}")


def _out_path(prefix, ext: str) -> Path:
    return Path(str(prefix) + ext)


def _write_table(path: Path, meta: str, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(meta + "\n")
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(cell) for cell in row) + "\n")


def _load_keep_pairs(path) -> set[tuple[str, str]]:
    pairs = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) < 2:
                raise CliError(f"{path}:{lineno}: keep list lines need FID and IID")
            pairs.add((fields[0], fields[1]))
    return pairs


def _load_phenotype_file(path, n: int) -> list[float | None]:
    values: list[float | None] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            token = line.strip()
            if not token:
                continue
            if token.upper() in ("-9", "NA"):
                values.append(None)
                continue
            try:
                values.append(float(token))
            except ValueError:
                raise CliError(f"{path}:{lineno}: bad phenotype value {token!r}")
    if len(values) != n:
        raise CliError(f"{path}: expected {n} phenotype lines, found {len(values)}")
    return values


def load_dataset(args: argparse.Namespace):
    """Read the file triple, apply subject filters, and assemble the view.

    Subjects are dropped when excluded by the keep list or when their
    phenotype is missing; the phenotype is optionally log-transformed and
    always centered.
    """
    matrix, variants, samples = read_plink_triple(args.bed, args.bim, args.fam)
    n = len(samples)
    keep_mask = np.ones(n, dtype=bool)
    if args.keep:
        pairs = _load_keep_pairs(args.keep)
        keep_mask &= np.array([(s.family_id, s.individual_id) in pairs for s in samples])
    if args.pheno:
        phenotypes = _load_phenotype_file(args.pheno, n)
    else:
        phenotypes = [s.phenotype for s in samples]
    present = np.array([value is not None for value in phenotypes])
    kept = np.flatnonzero(keep_mask & present)
    if kept.size < 2:
        raise CliError("fewer than two subjects remain after exclusions")

    y = np.array([phenotypes[i] for i in kept], dtype=np.float64)
    if args.transform == "log":
        if np.any(y <= 0):
            raise CliError("log transform requires strictly positive phenotypes")
        y = np.log(y)
    y = y - y.mean()

    geno = matrix.subset_rows(kept) if kept.size != n else matrix
    raw_covar = None
    if args.covar:
        raw_covar = np.loadtxt(args.covar, ndmin=2)
        if raw_covar.shape[0] != n:
            raise CliError(f"{args.covar}: expected {n} rows to match the FAM file, "
                           f"found {raw_covar.shape[0]}")
        raw_covar = raw_covar[kept]
    block = CovariateBlock.build(raw_covar, n=kept.size, add_intercept=True)
    return StandardizedView(geno, block), y, variants, kept


def _write_model_tsv(path: Path, meta: str, model, variants, cov_labels) -> None:
    rows = []
    for label, beta in zip(cov_labels, model.covar):
        rows.append((label, ".", ".", beta))
    for j, beta in zip(model.support, model.weights):
        var = variants[int(j)]
        rows.append((var.identifier, var.chromosome, var.position, beta))
    _write_table(path, meta, ["predictor_id", "chromosome", "position", "beta"], rows)


def cmd_fit(args: argparse.Namespace) -> int:
    start = time.perf_counter()
    view, y, variants, kept = load_dataset(args)
    config = IhtConfig(k=args.k, max_iter=args.max_iter, tol=args.tol)
    result = fit(view, y, config)
    seconds = time.perf_counter() - start

    meta = _meta_line(args)
    out = Path(args.out)
    _write_model_tsv(_out_path(out, ".model.tsv"), meta, result.model, variants,
                     view.covariates.labels)
    with open(_out_path(out, ".log"), "w") as fh:
        fh.write(meta + "\n")
        fh.write(f"samples\t{view.n}\nvariants\t{view.p}\ncovariates\t{view.c}\n")
        fh.write(f"k\t{args.k}\niterations\t{result.iterations}\n")
        fh.write(f"converged\t{result.converged}\nreason\t{result.reason}\n")
        fh.write(f"seconds\t{seconds:.3f}\n")
        for i, loss in enumerate(result.loss_trace):
            fh.write(f"loss\t{i}\t{_fmt(float(loss))}\n")
    print(f"fit: {result.model.nnz} of {args.k} budgeted predictors selected "
          f"({result.reason}, {result.iterations} iterations, {seconds:.2f}s)")
    return 0


def cmd_cv(args: argparse.Namespace) -> int:
    view, y, variants, kept = load_dataset(args)
    path = parse_path_spec(args.path)
    plan = CvPlan.build(view.n, args.q, path, args.seed)
    config = IhtConfig(k=int(path[-1]), max_iter=args.max_iter, tol=args.tol)
    report = cv_iht(view, y, plan, config, std_mode=args.std_mode,
                    warm_start=args.warm_start)

    meta = _meta_line(args)
    out = Path(args.out)
    cv_rows = [(int(k), f, report.mse[ki, f])
               for ki, k in enumerate(report.path) for f in range(plan.q)]
    _write_table(_out_path(out, ".cv.tsv"), meta, ["k", "fold", "mse"], cv_rows)
    summary_rows = [(int(k), report.mean_mse[ki], int(int(k) == report.k_best))
                    for ki, k in enumerate(report.path)]
    _write_table(_out_path(out, ".summary.tsv"), meta, ["k", "mean_mse", "is_best"],
                 summary_rows)
    _write_model_tsv(_out_path(out, ".model.tsv"), meta, report.final_model, variants,
                     view.covariates.labels)
    print(f"cv: selected k={report.k_best} "
          f"(mean MSE {report.mean_mse.min():.6g} over {plan.q} folds)")
    return 0


def _synthetic_matrix(args: argparse.Namespace):
    try:
        n, p = (int(tok) for tok in args.synthetic.split(","))
    except ValueError:
        raise CliError(f"bad --synthetic specification {args.synthetic!r}; use N,P")
    if n < 4 or p < 1:
        raise CliError("synthetic matrices need at least 4 samples and 1 variant")
    return random_packed_matrix(n, p, seed=args.seed, missing_rate=args.missing_rate)


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.synthetic:
        geno = _synthetic_matrix(args)
    elif args.bed and args.bim and args.fam:
        geno, _, _ = read_plink_triple(args.bed, args.bim, args.fam)
    else:
        raise CliError("simulate needs either --synthetic N,P or a --bed/--bim/--fam triple")
    block = CovariateBlock.build(None, n=geno.n, add_intercept=True)
    view = StandardizedView(geno, block)

    k_trues = _parse_int_list(args.k_true, "--k-true")
    divisors = _parse_float_list(args.snr_divisors, "--snr-divisors")
    path = parse_path_spec(args.path) if args.path else None
    config = IhtConfig(k=1, max_iter=args.max_iter, tol=args.tol)
    reports = run_experiment(view, k_trues, divisors, replicates=args.replicates,
                             q=args.q, config=config, path=path,
                             path_mode=args.path_mode, path_points=args.path_points,
                             test_fraction=args.test_fraction, seed=args.seed,
                             effect_variance=args.effect_variance,
                             noise_variance=args.noise_variance,
                             std_mode=args.std_mode, warm_start=args.warm_start)

    meta = _meta_line(args)
    out = Path(args.out)
    header = ["k_true", "snr_divisor", "replicate", "k_selected", "precision",
              "recall", "mse", "h2_true", "h2_est", "seconds"]
    rows = [(r.k_true, r.snr_divisor, r.replicate, r.k_selected, r.precision,
             r.recall, r.mse_test, r.h2_true, r.h2_est, r.seconds) for r in reports]
    _write_table(_out_path(out, ".sim.tsv"), meta, header, rows)
    agg_header = ["k_true", "snr_divisor", "replicates", "k_selected", "precision",
                  "recall", "mse", "h2_true", "h2_est", "seconds"]
    agg_rows = [tuple(row[col] for col in agg_header) for row in aggregate_reports(reports)]
    _write_table(_out_path(out, ".sim_summary.tsv"), meta, agg_header, agg_rows)
    print(f"simulate: {len(reports)} replicates over {len(k_trues) * len(divisors)} cells")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    if args.synthetic:
        geno = _synthetic_matrix(args)
        block = CovariateBlock.build(None, n=geno.n, add_intercept=True)
        view = StandardizedView(geno, block)
        spec = SimulationSpec(k_true=args.bench_k_true, seed=args.seed)
        y, _ = simulate_phenotype(view, spec)
    else:
        view, y, _, _ = load_dataset(args)
        geno = view.genotypes
    path = parse_path_spec(args.path)
    limit = min(view.p, view.n - view.c - 1)
    path = path[path <= limit]
    if path.size == 0:
        raise CliError(f"no path budgets usable: need k <= {limit}")
    modes = [mode.strip() for mode in args.mode.split(",") if mode.strip()]
    known = {"packed", "packed+mt", "dense"}
    unknown = set(modes) - known
    if unknown:
        raise CliError(f"unknown bench mode(s) {sorted(unknown)}; choose from {sorted(known)}")

    timings: dict[str, tuple[float, float]] = {}
    model_rows = []
    for mode in modes:
        if mode == "dense":
            estimate = 8 * view.n * view.p
            cap = int(args.mem_cap_gb * 2 ** 30)
            if estimate > cap:
                raise CliError(
                    f"dense mode refused: {estimate / 2 ** 30:.2f} GiB uncompressed "
                    f"exceeds the {args.mem_cap_gb} GiB cap")
            dtype = np.float32 if args.precision == "single" else np.float64
            design = DenseDesign.from_packed(geno, dtype=dtype)
            bench_view = StandardizedView(design, view.covariates)
            set_worker_threads(args.threads)
        else:
            bench_view = view
            set_worker_threads(1 if mode == "packed" else args.threads)
        durations = []
        for rep in range(args.repetitions):
            start = time.perf_counter()
            for k in path:
                result = fit(bench_view, y, IhtConfig(k=int(k), max_iter=args.max_iter,
                                                      tol=args.tol))
                if rep == 0:
                    support = ",".join(str(int(j)) for j in result.model.support)
                    model_rows.append((mode, int(k), support))
            durations.append(time.perf_counter() - start)
        mean = float(np.mean(durations))
        sd = float(np.std(durations, ddof=1)) if len(durations) > 1 else 0.0
        timings[mode] = (mean, sd)

    meta = _meta_line(args)
    out = Path(args.out)
    dense_mean = timings.get("dense", (float("nan"),))[0]
    rows = []
    for mode in modes:
        mean, sd = timings[mode]
        ratio = mean / dense_mean if "dense" in timings else float("nan")
        rows.append((mode, args.repetitions, mean, sd, ratio))
    _write_table(_out_path(out, ".bench.tsv"), meta,
                 ["mode", "repetitions", "mean_seconds", "sd_seconds", "rel_to_dense"],
                 rows)
    _write_table(_out_path(out, ".bench_models.tsv"), meta, ["mode", "k", "support"],
                 model_rows)
    for mode in modes:
        mean, sd = timings[mode]
        print(f"bench {mode}: {mean:.3f}s mean, {sd:.3f}s sd over {args.repetitions} reps")
    return 0


def _add_triple_flags(parser: argparse.ArgumentParser, required: bool) -> None:
    parser.add_argument("--bed", required=required, help="PLINK .bed file")
    parser.add_argument("--bim", required=required, help="PLINK .bim file")
    parser.add_argument("--fam", required=required, help="PLINK .fam file")


def _add_phenotype_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--pheno", help="single-column phenotype file overriding FAM column 6")
    parser.add_argument("--covar", help="whitespace table of covariates, one row per FAM line")
    parser.add_argument("--keep", help="file of FID IID pairs to retain")
    parser.add_argument("--transform", choices=["none", "log"], default="none",
                        help="phenotype transform applied before centering")


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", required=True, help="output prefix")
    parser.add_argument("--seed", type=int, default=0, help="random seed")
    parser.add_argument("--threads", type=int, default=1, help="worker thread count")
    parser.add_argument("--precision", choices=["single", "double"], default="double",
                        help="floating-point mode for dense comparisons")
    parser.add_argument("--tol", type=float, default=1e-4,
                        help="convergence tolerance on the coefficient change")
    parser.add_argument("--max-iter", type=int, default=200, help="iteration cap per fit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="genoiht",
        description="Sparse regression on packed genotypes by iterative hard thresholding")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit one model at a fixed sparsity budget")
    _add_triple_flags(p_fit, required=True)
    _add_phenotype_flags(p_fit)
    p_fit.add_argument("--k", type=int, required=True, help="sparsity budget")
    _add_common_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_cv = sub.add_parser("cv", help="cross-validate the budget over a path")
    _add_triple_flags(p_cv, required=True)
    _add_phenotype_flags(p_cv)
    p_cv.add_argument("--path", required=True, help="budget path, a:b:step or k1,k2,...")
    p_cv.add_argument("--q", type=int, required=True, help="fold count")
    p_cv.add_argument("--std-mode", choices=["train", "global"], default="train",
                      help="standardization statistics for held-out folds")
    p_cv.add_argument("--warm-start", action="store_true",
                      help="seed each budget from the previous one along the path")
    _add_common_flags(p_cv)
    p_cv.set_defaults(func=cmd_cv)

    p_sim = sub.add_parser("simulate", help="planted-model recovery experiments")
    _add_triple_flags(p_sim, required=False)
    p_sim.add_argument("--synthetic", help="generate an N,P genotype matrix instead of reading one")
    p_sim.add_argument("--missing-rate", type=float, default=0.0,
                       help="missing-genotype rate for synthetic matrices")
    p_sim.add_argument("--k-true", required=True, help="comma list of causal counts")
    p_sim.add_argument("--snr-divisors", default="1", help="comma list of effect-variance divisors")
    p_sim.add_argument("--replicates", type=int, default=1, help="replicates per cell")
    p_sim.add_argument("--q", type=int, default=5, help="fold count")
    p_sim.add_argument("--path", help="explicit budget path; default straddles each k_true")
    p_sim.add_argument("--path-mode", choices=["straddle", "dense"], default="straddle",
                       help="how to build per-cell paths when --path is absent")
    p_sim.add_argument("--path-points", type=int, default=25,
                       help="points in a straddling path")
    p_sim.add_argument("--test-fraction", type=float, default=0.05,
                       help="held-out fraction per replicate")
    p_sim.add_argument("--effect-variance", type=float, default=0.01,
                       help="base causal-effect variance")
    p_sim.add_argument("--noise-variance", type=float, default=0.01,
                       help="response noise variance")
    p_sim.add_argument("--std-mode", choices=["train", "global"], default="train")
    p_sim.add_argument("--warm-start", action="store_true")
    _add_common_flags(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_bench = sub.add_parser("bench", help="time path fits per storage mode")
    _add_triple_flags(p_bench, required=False)
    _add_phenotype_flags(p_bench)
    p_bench.add_argument("--synthetic", help="generate an N,P genotype matrix")
    p_bench.add_argument("--missing-rate", type=float, default=0.0)
    p_bench.add_argument("--bench-k-true", type=int, default=10,
                         help="planted causal count for synthetic responses")
    p_bench.add_argument("--path", default="5:100:5", help="budget path to time")
    p_bench.add_argument("--mode", default="packed,packed+mt,dense",
                         help="comma list from packed, packed+mt, dense")
    p_bench.add_argument("--repetitions", type=int, default=3, help="timing repetitions")
    p_bench.add_argument("--mem-cap-gb", type=float, default=8.0,
                         help="refuse dense mode above this uncompressed size")
    _add_common_flags(p_bench)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command != "bench":
            set_worker_threads(args.threads)
        return args.func(args)
    except (CliError, PlinkFormatError, ValueError, OSError, FloatingPointError,
            RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
