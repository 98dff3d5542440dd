"""Synthetic phenotypes and recovery metrics for desk-scale experiments.

A planted model draws causal columns uniformly without replacement, causal
effects from N(0, effect_variance / snr_divisor), and response noise from
N(0, noise_variance); the response is built with the standardized packed
operator. Recovery is scored by precision, recall, held-out MSE, and the
heritability ratio Var(X b) / Var(y).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .geno_matrix import CODE_HET, CODE_HOM_A1, CODE_HOM_A2, CODE_MISSING
from .geno_matrix import PackedGenotypeMatrix, StandardizedView, ax
from .iht import IhtConfig, SparseModel
from .model_select import CvPlan, cv_iht, predict


@dataclass(frozen=True)
class SimulationSpec:
    """Planted-model parameters; effects have variance effect_variance / snr_divisor."""

    k_true: int
    effect_variance: float = 0.01
    snr_divisor: float = 1.0
    noise_variance: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.k_true < 1:
            raise ValueError("k_true must be at least 1")
        if min(self.effect_variance, self.snr_divisor, self.noise_variance) <= 0:
            raise ValueError("variances and the divisor must be positive")


@dataclass(frozen=True)
class SimulationReport:
    """Recovery metrics for one replicate of one (k_true, snr_divisor) cell."""

    k_true: int
    snr_divisor: float
    replicate: int
    k_selected: int
    precision: float
    recall: float
    mse_test: float
    h2_true: float
    h2_est: float
    seconds: float


def random_packed_matrix(n: int, p: int, seed: int, maf_range=(0.05, 0.5),
                         missing_rate: float = 0.0) -> PackedGenotypeMatrix:
    """Synthetic genotypes: per-column allele frequencies, binomial dosages."""
    rng = np.random.default_rng(seed)
    freq = rng.uniform(maf_range[0], maf_range[1], size=p)
    dosage = rng.binomial(2, freq, size=(n, p)).astype(np.uint8)
    codes = np.array([CODE_HOM_A1, CODE_HET, CODE_HOM_A2], dtype=np.uint8)[dosage]
    if missing_rate > 0:
        codes[rng.random((n, p)) < missing_rate] = CODE_MISSING
    return PackedGenotypeMatrix.from_codes(codes)


def simulate_phenotype(view: StandardizedView, spec: SimulationSpec):
    """Planted response ``y = X_st b_true + eps``; reproducible from the seed.

    Returns ``(y, beta_true)`` with the causal support sorted ascending.
    """
    if spec.k_true > view.p:
        raise ValueError(f"k_true={spec.k_true} exceeds the variant count {view.p}")
    rng = np.random.default_rng(spec.seed)
    causal = np.sort(rng.choice(view.p, size=spec.k_true, replace=False)).astype(np.int64)
    effects = rng.normal(0.0, np.sqrt(spec.effect_variance / spec.snr_divisor),
                         size=spec.k_true)
    beta_true = SparseModel.from_parts(causal, effects, np.zeros(view.c),
                                       k=spec.k_true, p=view.p)
    noise = rng.normal(0.0, np.sqrt(spec.noise_variance), size=view.n)
    y = ax(view, beta_true) + noise
    return y, beta_true


def heritability(view: StandardizedView, model: SparseModel, y: np.ndarray) -> float:
    """Var(X_st b) / Var(y) with the n-1 variance convention; never clamped."""
    y = np.asarray(y, dtype=np.float64)
    var_y = float(np.var(y, ddof=1))
    if var_y == 0.0:
        raise ValueError("response is constant; heritability undefined")
    return float(np.var(ax(view, model), ddof=1)) / var_y


def precision_recall(selected, truth) -> tuple[float, float]:
    """Fraction of selected markers that are causal, and of causal recovered.

    An empty selection scores precision 0 by convention.
    """
    selected = {int(j) for j in selected}
    truth = {int(j) for j in truth}
    if not truth:
        raise ValueError("true support must be non-empty")
    hits = len(selected & truth)
    precision = hits / len(selected) if selected else 0.0
    return precision, hits / len(truth)


def straddling_path(k_true: int, points: int = 25, stride: int = 2) -> np.ndarray:
    """Ascending stride-`stride` path of ``points`` budgets containing k_true."""
    half = (points - 1) // 2
    start = k_true - stride * half
    if start < 1:
        start = k_true - stride * ((k_true - 1) // stride)
    return start + stride * np.arange(points, dtype=np.int64)


def dense_path(k_true: int, extra: int = 100) -> np.ndarray:
    """Every budget from 1 through k_true + extra."""
    return np.arange(1, k_true + extra + 1, dtype=np.int64)


def run_experiment(view: StandardizedView, k_true_grid, snr_divisors, *,
                   replicates: int, q: int, config: IhtConfig,
                   path=None, path_mode: str = "straddle", path_points: int = 25,
                   dense_extra: int = 100, test_fraction: float = 0.05,
                   seed: int = 0, effect_variance: float = 0.01,
                   noise_variance: float = 0.01, std_mode: str = "train",
                   warm_start: bool = False) -> list[SimulationReport]:
    """Cross-validated recovery over a (k_true, snr_divisor) grid.

    Each replicate holds out a test slice, cross-validates on the rest, and
    scores the refit model. Every replicate owns an RNG stream derived from
    (seed, cell, replicate), so results do not depend on execution order.
    """
    if replicates < 1:
        raise ValueError("need at least one replicate")
    geno = view.genotypes
    cells = [(int(kt), float(s)) for kt in k_true_grid for s in snr_divisors]
    reports = []
    for cell_index, (k_true, divisor) in enumerate(cells):
        if path is not None:
            cell_path = np.asarray(path, dtype=np.int64)
        elif path_mode == "dense":
            cell_path = dense_path(k_true, dense_extra)
        else:
            cell_path = straddling_path(k_true, path_points)
        cell_path = cell_path[cell_path <= view.p]
        for rep in range(replicates):
            master = np.random.default_rng(np.random.SeedSequence([seed, cell_index, rep]))
            sim_seed, fold_seed = (int(s) for s in master.integers(2 ** 63, size=2))
            spec = SimulationSpec(k_true=k_true, effect_variance=effect_variance,
                                  snr_divisor=divisor, noise_variance=noise_variance,
                                  seed=sim_seed)
            y, beta_true = simulate_phenotype(view, spec)

            n_test = max(1, int(round(test_fraction * view.n)))
            test_rows = np.sort(master.choice(view.n, size=n_test, replace=False))
            train_rows = np.setdiff1d(np.arange(view.n), test_rows)

            g_train = geno.subset_rows(train_rows)
            if std_mode == "global":
                g_train = g_train.with_stats(geno.u, geno.v)
            cov_train = view.covariates.subset_rows(train_rows) if view.covariates else None
            train_view = StandardizedView(g_train, cov_train)

            start = time.perf_counter()
            plan = CvPlan.build(train_rows.size, q, cell_path, fold_seed)
            report = cv_iht(train_view, y[train_rows], plan, config,
                            std_mode=std_mode, warm_start=warm_start)
            seconds = time.perf_counter() - start

            g_test = geno.subset_rows(test_rows).with_stats(g_train.u, g_train.v)
            cov_test = view.covariates.subset_rows(test_rows) if view.covariates else None
            test_view = StandardizedView(g_test, cov_test)
            errors = y[test_rows] - predict(test_view, report.final_model)
            mse_test = float(errors @ errors) / test_rows.size

            precision, recall = precision_recall(report.final_model.support,
                                                 beta_true.support)
            reports.append(SimulationReport(
                k_true=k_true, snr_divisor=divisor, replicate=rep,
                k_selected=report.k_best, precision=precision, recall=recall,
                mse_test=mse_test, h2_true=heritability(view, beta_true, y),
                h2_est=heritability(view, report.final_model, y), seconds=seconds))
    return reports


def aggregate_reports(reports) -> list[dict]:
    """Per-cell means of every metric, one row per (k_true, snr_divisor)."""
    cells: dict[tuple, list[SimulationReport]] = {}
    for rep in reports:
        cells.setdefault((rep.k_true, rep.snr_divisor), []).append(rep)
    rows = []
    for (k_true, divisor), group in cells.items():
        rows.append({
            "k_true": k_true,
            "snr_divisor": divisor,
            "replicates": len(group),
            "k_selected": float(np.mean([g.k_selected for g in group])),
            "precision": float(np.mean([g.precision for g in group])),
            "recall": float(np.mean([g.recall for g in group])),
            "mse": float(np.mean([g.mse_test for g in group])),
            "h2_true": float(np.mean([g.h2_true for g in group])),
            "h2_est": float(np.mean([g.h2_est for g in group])),
            "seconds": float(np.mean([g.seconds for g in group])),
        })
    return rows
