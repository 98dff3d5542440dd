"""Cross-validated model-size selection over a path of sparsity levels.

For each fold, the whole path of budgets is fit on the complementary
training rows and scored by held-out mean squared error; the budget with
the smallest fold-averaged MSE wins (ties go to the smaller budget) and
the final model is refit on all rows.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .geno_matrix import PackedGenotypeMatrix, StandardizedView, ax
from .iht import IhtConfig, SparseModel, fit, refit_least_squares


def make_folds(n: int, q: int, seed: int) -> np.ndarray:
    """Balanced random fold labels in [0, q); sizes differ by at most one."""
    if not 2 <= q <= n:
        raise ValueError(f"fold count must lie between 2 and the sample count {n}, got {q}")
    rng = np.random.default_rng(seed)
    labels = np.empty(n, dtype=np.int64)
    labels[rng.permutation(n)] = np.arange(n) % q
    return labels


@dataclass(frozen=True, eq=False)
class CvPlan:
    """Fold assignment plus the ascending path of sparsity budgets to score."""

    q: int
    path: np.ndarray
    fold_labels: np.ndarray
    seed: int

    def __post_init__(self):
        path = np.asarray(self.path)
        if path.size == 0 or path.min() < 1 or np.any(np.diff(path) <= 0):
            raise ValueError("path must be strictly increasing with entries >= 1")
        labels = np.asarray(self.fold_labels)
        if labels.min() < 0 or labels.max() >= self.q:
            raise ValueError("fold labels out of range")
        if np.unique(labels).size != self.q:
            raise ValueError("every fold must be non-empty")

    @classmethod
    def build(cls, n: int, q: int, path, seed: int) -> "CvPlan":
        path = np.asarray(path, dtype=np.int64)
        return cls(q=int(q), path=path, fold_labels=make_folds(n, q, seed), seed=int(seed))


@dataclass(frozen=True, eq=False)
class CvReport:
    """Held-out MSE grid, the selected budget, and the full-data refit."""

    path: np.ndarray
    mse: np.ndarray
    mean_mse: np.ndarray
    k_best: int
    final_model: SparseModel


def select_k(path: np.ndarray, mean_mse: np.ndarray) -> int:
    """Smallest budget attaining the minimum fold-averaged MSE."""
    return int(np.asarray(path)[int(np.argmin(mean_mse))])


def predict(view_test: StandardizedView, model: SparseModel) -> np.ndarray:
    """Fitted values on a view standardized with the training statistics."""
    if view_test.n == 0:
        return np.zeros(0)
    if model.p != view_test.p:
        raise ValueError("model and view disagree on the predictor count")
    if model.covar.size != view_test.c:
        raise ValueError("model and view disagree on the covariate count")
    return ax(view_test, model)


def _fold_views(view: StandardizedView, train_rows: np.ndarray, test_rows: np.ndarray,
                std_mode: str):
    geno = view.genotypes
    if not isinstance(geno, PackedGenotypeMatrix):
        raise TypeError("cross-validation expects packed genotypes")
    g_train = geno.subset_rows(train_rows)
    if std_mode == "global":
        g_train = g_train.with_stats(geno.u, geno.v)
    elif std_mode != "train":
        raise ValueError(f"unknown standardization mode {std_mode!r}")
    # Test genotypes are standardized with the training statistics.
    g_test = geno.subset_rows(test_rows).with_stats(g_train.u, g_train.v)
    cov_train = cov_test = None
    if view.covariates is not None:
        cov_train = view.covariates.subset_rows(train_rows)
        cov_test = view.covariates.subset_rows(test_rows)
    return StandardizedView(g_train, cov_train), StandardizedView(g_test, cov_test)


def cv_iht(view: StandardizedView, y: np.ndarray, plan: CvPlan, config: IhtConfig,
           std_mode: str = "train", warm_start: bool = False) -> CvReport:
    """q-fold cross-validation over the plan's path, then refit on all data.

    Within a fold the path is fit in ascending order. ``warm_start`` seeds
    each budget from the previous solution; it speeds up noisy problems but
    blurs the tiny MSE differences that rank budgets on noiseless ones, so
    it stays opt-in.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.shape != (view.n,):
        raise ValueError(f"response must have length {view.n}")
    labels = np.asarray(plan.fold_labels)
    if labels.shape != (view.n,):
        raise ValueError("fold labels must cover every sample")
    fold_sizes = np.bincount(labels, minlength=plan.q)
    min_train = view.n - fold_sizes.max()
    if plan.path.max() + view.c >= min_train:
        raise ValueError(
            f"largest budget {plan.path.max()} plus {view.c} covariate(s) must stay "
            f"below the smallest training fold ({min_train} samples)")

    mse = np.zeros((plan.path.size, plan.q))
    for f in range(plan.q):
        test_rows = np.flatnonzero(labels == f)
        train_rows = np.flatnonzero(labels != f)
        v_train, v_test = _fold_views(view, train_rows, test_rows, std_mode)
        y_train = y[train_rows]
        y_test = y[test_rows]
        warm = None
        for ki, k in enumerate(plan.path):
            try:
                result = fit(v_train, y_train, dataclasses.replace(config, k=int(k)),
                             warm=warm if warm_start else None)
            except Exception as exc:
                raise RuntimeError(f"solver failed at fold {f}, k={int(k)}: {exc}") from exc
            warm = result.model
            errors = y_test - predict(v_test, result.model)
            mse[ki, f] = float(errors @ errors) / test_rows.size

    mean_mse = mse.mean(axis=1)
    k_best = select_k(plan.path, mean_mse)
    final_fit = fit(view, y, dataclasses.replace(config, k=k_best))
    final_model = refit_least_squares(view, y, final_fit.model.support)
    return CvReport(path=plan.path.copy(), mse=mse, mean_mse=mean_mse,
                    k_best=k_best, final_model=final_model)
