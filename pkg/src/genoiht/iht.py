"""Sparsity-constrained least squares via projected gradient descent.

Minimizes f(b) = 0.5 * ||y - X_st b - C b_cov||^2 subject to at most k
nonzero genetic coefficients. Each iteration takes the step

    b+ = P_k[b - mu * grad f(b)]

where P_k keeps the k largest-magnitude genetic entries (covariates are
never thresholded) and mu is the normalized step size computed from the
gradient restricted to the active set. A step whose support changes is
accepted only while mu stays below the backtracking bound

    omega = (1 - c) * ||b+ - b||^2 / ||X (b+ - b)||^2 ;

otherwise mu is halved and the candidate recomputed. A candidate whose
support matches the restriction set mu was computed over is the exact
minimizer along that restricted gradient and is accepted outright; without
that carve-out omega equals (1 - c) * mu identically on such steps and no
step would ever pass the test.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .geno_matrix import StandardizedView, ax_parts, aty, decompress_active


class RankDeficientWarning(UserWarning):
    """The refit active set contained dependent columns; extras were dropped."""


def top_k_indices(magnitudes: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest values, ties resolved toward lower indices."""
    magnitudes = np.asarray(magnitudes)
    m = magnitudes.size
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    if k >= m:
        return np.arange(m, dtype=np.int64)
    part = np.argpartition(magnitudes, m - k)[m - k:]
    thresh = magnitudes[part].min()
    above = np.flatnonzero(magnitudes > thresh)
    need = k - above.size
    ties = np.flatnonzero(magnitudes == thresh)[:need]
    return np.sort(np.concatenate([above, ties])).astype(np.int64)


def hard_threshold(values: np.ndarray, k: int) -> np.ndarray:
    """Best k-sparse approximation: zero all but the k largest magnitudes."""
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros_like(values)
    idx = top_k_indices(np.abs(values), k)
    out[idx] = values[idx]
    return out


@dataclass(frozen=True, eq=False)
class SparseModel:
    """Sparse coefficient vector split into genetic and covariate blocks.

    ``support`` holds the sorted indices of nonzero genetic coefficients,
    ``weights`` the matching values; ``covar`` is the unpenalized covariate
    block and ``k`` the sparsity budget the model was fit under.
    """

    support: np.ndarray
    weights: np.ndarray
    covar: np.ndarray
    k: int
    p: int

    def __post_init__(self):
        if self.support.shape != self.weights.shape:
            raise ValueError("support and weights must align")
        if self.support.size and np.any(np.diff(self.support) <= 0):
            raise ValueError("support must be sorted and unique")
        if self.support.size > self.k:
            raise ValueError("support exceeds the sparsity budget")

    @classmethod
    def from_parts(cls, support, weights, covar, k: int, p: int) -> "SparseModel":
        support = np.asarray(support, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
        nz = np.flatnonzero(weights)
        order = np.argsort(support[nz])
        return cls(support=support[nz][order].copy(), weights=weights[nz][order].copy(),
                   covar=np.asarray(covar, dtype=np.float64).copy(), k=int(k), p=int(p))

    @property
    def nnz(self) -> int:
        return int(self.support.size)

    def dense_genetic(self) -> np.ndarray:
        out = np.zeros(self.p)
        out[self.support] = self.weights
        return out

    def dense_full(self) -> np.ndarray:
        return np.concatenate([self.dense_genetic(), self.covar])


def project_sparse(beta: np.ndarray, k: int, covar: np.ndarray | None = None) -> SparseModel:
    """Project a genetic coefficient vector onto the k-sparse set.

    Keeps the k largest magnitudes (ties to the lower index), zeroes the
    rest; covariate coefficients pass through untouched.
    """
    beta = np.asarray(beta, dtype=np.float64)
    thresholded = hard_threshold(beta, k)
    support = np.flatnonzero(thresholded)
    covar = np.zeros(0) if covar is None else np.asarray(covar, dtype=np.float64)
    return SparseModel(support=support.astype(np.int64), weights=beta[support].copy(),
                       covar=covar.copy(), k=int(k), p=beta.size)


@dataclass(frozen=True)
class IhtConfig:
    """Solver settings. ``tol`` bounds the sup-norm coefficient change."""

    k: int
    max_iter: int = 200
    tol: float = 1e-4
    c_omega: float = 0.01
    max_backtracks: int = 50

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("sparsity budget must be non-negative")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not 0.0 < self.c_omega < 1.0:
            raise ValueError("c_omega must lie strictly between 0 and 1")
        if self.max_backtracks < 0:
            raise ValueError("max_backtracks must be non-negative")


@dataclass(eq=False)
class IhtState:
    """Mutable per-iteration solver state."""

    k: int
    beta_gen: np.ndarray
    beta_cov: np.ndarray
    support: np.ndarray
    active_cache: np.ndarray
    residuals: np.ndarray
    loss: float
    grad_gen: np.ndarray
    grad_cov: np.ndarray
    mu: float = 0.0
    iteration: int = 0
    backtracks: int = 0
    step_inf: float = np.inf
    collapsed: bool = False

    @property
    def gradient(self) -> np.ndarray:
        return np.concatenate([self.grad_gen, self.grad_cov])

    @property
    def model(self) -> SparseModel:
        return SparseModel.from_parts(self.support, self.beta_gen[self.support],
                                      self.beta_cov, self.k, self.beta_gen.size)


@dataclass(frozen=True, eq=False)
class FitResult:
    """Solver output: final model, per-iteration loss trace, termination info."""

    model: SparseModel
    loss_trace: np.ndarray
    iterations: int
    converged: bool
    reason: str


def _refresh_state(state: IhtState, view: StandardizedView, y: np.ndarray) -> None:
    fitted = state.active_cache @ state.beta_gen[state.support]
    if view.c:
        fitted = fitted + view.covariates.values @ state.beta_cov
    state.residuals = y - fitted
    state.loss = 0.5 * float(state.residuals @ state.residuals)
    g = -aty(view, state.residuals)
    state.grad_gen = g[: view.p]
    state.grad_cov = g[view.p:]


def initial_state(view: StandardizedView, y: np.ndarray, config: IhtConfig,
                  warm: SparseModel | None = None) -> IhtState:
    """Starting state: zero genetic block, covariates fit by least squares."""
    p, c = view.p, view.c
    beta_gen = np.zeros(p)
    beta_cov = np.zeros(c)
    if warm is not None:
        if warm.p != p or warm.covar.size != c:
            raise ValueError("warm-start model does not match the view")
        beta_gen[warm.support] = warm.weights
        if warm.nnz > config.k:
            beta_gen = hard_threshold(beta_gen, config.k)
        beta_cov = warm.covar.astype(np.float64).copy()
    elif c:
        beta_cov, *_ = np.linalg.lstsq(view.covariates.values, y, rcond=None)
    support = np.flatnonzero(beta_gen).astype(np.int64)
    state = IhtState(k=config.k, beta_gen=beta_gen, beta_cov=beta_cov, support=support,
                     active_cache=decompress_active(view, support),
                     residuals=np.zeros(view.n), loss=0.0,
                     grad_gen=np.zeros(p), grad_cov=np.zeros(c))
    _refresh_state(state, view, y)
    return state


def _step_restriction(state: IhtState, view: StandardizedView):
    """Genetic indices the step size is computed over, with their columns.

    This is the active set; with an empty active set (or a vanishing
    restricted gradient) it falls back to the k steepest genetic gradient
    entries. Covariates always belong to the restriction.
    """
    idx = state.support
    cols = state.active_cache
    if idx.size == 0 or not (np.any(state.grad_gen[idx]) or np.any(state.grad_cov)):
        idx = top_k_indices(np.abs(state.grad_gen), state.k)
        cols = decompress_active(view, idx)
    return idx, cols


def _normalized_step(state: IhtState, view: StandardizedView, idx, cols) -> float:
    g_gen = state.grad_gen[idx]
    num = float(g_gen @ g_gen) + float(state.grad_cov @ state.grad_cov)
    if num == 0.0:
        raise ValueError("gradient vanishes on the restriction; nothing to step on")
    image = cols @ g_gen
    if view.c:
        image = image + view.covariates.values @ state.grad_cov
    den = float(image @ image)
    if den == 0.0 or not np.isfinite(den):
        raise ValueError("degenerate active set: restricted columns have zero image")
    return num / den


def normalized_step(state: IhtState, view: StandardizedView) -> float:
    """Step size ||g||^2 / ||X g||^2, g restricted to the active set."""
    idx, cols = _step_restriction(state, view)
    return _normalized_step(state, view, idx, cols)


def iht_step(state: IhtState, view: StandardizedView, y: np.ndarray,
             config: IhtConfig) -> IhtState:
    """One projected-gradient update with backtracking; mutates ``state``."""
    state.backtracks = 0
    grad_max = 0.0
    if state.grad_gen.size:
        grad_max = float(np.abs(state.grad_gen).max())
    if state.grad_cov.size:
        grad_max = max(grad_max, float(np.abs(state.grad_cov).max()))
    if grad_max == 0.0:
        # Fixed point: the proposal equals the iterate.
        state.step_inf = 0.0
        state.mu = 0.0
        state.iteration += 1
        return state

    restriction, cols = _step_restriction(state, view)
    if restriction.size == 0 and not (view.c and np.any(state.grad_cov)):
        # k = 0 with settled covariates: the projection pins everything
        state.step_inf = 0.0
        state.mu = 0.0
        state.iteration += 1
        return state
    mu = _normalized_step(state, view, restriction, cols)
    accepted = False
    cand_gen = cand_cov = new_support = delta_gen = delta_cov = None
    for _ in range(config.max_backtracks + 1):
        cand_gen = hard_threshold(state.beta_gen - mu * state.grad_gen, config.k)
        cand_cov = state.beta_cov - mu * state.grad_cov
        new_support = np.flatnonzero(cand_gen).astype(np.int64)
        delta_gen = cand_gen - state.beta_gen
        delta_cov = cand_cov - state.beta_cov
        dsup = np.flatnonzero(delta_gen)
        dsq = float(delta_gen[dsup] @ delta_gen[dsup]) + float(delta_cov @ delta_cov)
        if dsq == 0.0:
            accepted = True
            break
        if np.array_equal(new_support, restriction):
            # Candidate support equals the restriction mu was computed on,
            # so mu is the exact line-search step there and descends.
            accepted = True
            break
        x_delta = ax_parts(view, dsup, delta_gen[dsup], delta_cov if view.c else None)
        xdsq = float(x_delta @ x_delta)
        if xdsq == 0.0:
            accepted = True
            break
        omega = (1.0 - config.c_omega) * dsq / xdsq
        if mu < omega:
            accepted = True
            break
        mu *= 0.5
        state.backtracks += 1

    if not accepted:
        state.collapsed = True
        return state

    state.mu = mu
    step_inf = float(np.abs(delta_gen).max()) if delta_gen.size else 0.0
    if delta_cov.size:
        step_inf = max(step_inf, float(np.abs(delta_cov).max()))
    state.step_inf = step_inf
    state.beta_gen = cand_gen
    state.beta_cov = cand_cov
    if not np.array_equal(new_support, state.support):
        state.support = new_support
        state.active_cache = decompress_active(view, new_support)
    _refresh_state(state, view, y)
    state.iteration += 1
    return state


def fit(view: StandardizedView, y: np.ndarray, config: IhtConfig,
        warm: SparseModel | None = None) -> FitResult:
    """Run the solver to convergence in the sup norm of coefficient changes."""
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.shape != (view.n,):
        raise ValueError(f"response must have length {view.n}")
    if not np.all(np.isfinite(y)):
        raise ValueError("response contains non-finite values")
    if view.n < 2:
        raise ValueError("need at least two samples to fit")

    state = initial_state(view, y, config, warm)
    trace = [state.loss]
    converged = False
    reason = "max-iter"
    for _ in range(config.max_iter):
        iht_step(state, view, y, config)
        if state.collapsed:
            reason = "step-size collapse"
            break
        trace.append(state.loss)
        if not np.isfinite(state.loss):
            raise FloatingPointError("loss diverged to a non-finite value")
        if state.step_inf < config.tol:
            converged = True
            reason = "converged"
            break
    return FitResult(model=state.model, loss_trace=np.asarray(trace),
                     iterations=state.iteration, converged=converged, reason=reason)


def _independent_columns(a: np.ndarray, rel_tol: float = 1e-8) -> list[int]:
    """Greedy left-to-right choice of linearly independent columns."""
    basis: list[np.ndarray] = []
    keep: list[int] = []
    for j in range(a.shape[1]):
        col = np.array(a[:, j], dtype=np.float64)
        ref = float(np.linalg.norm(col))
        for q in basis:
            col -= (q @ col) * q
        for q in basis:  # second pass guards against cancellation
            col -= (q @ col) * q
        nrm = float(np.linalg.norm(col))
        if nrm > rel_tol * ref and nrm > 0.0:
            basis.append(col / nrm)
            keep.append(j)
    return keep


def refit_least_squares(view: StandardizedView, y: np.ndarray,
                        support: np.ndarray) -> SparseModel:
    """Exact least squares on the given genetic support plus covariates.

    Linearly dependent columns are dropped, keeping the lowest index, with
    a RankDeficientWarning; dropped predictors leave the returned support.
    """
    support = np.unique(np.asarray(support, dtype=np.int64))
    if support.size and (support.min() < 0 or support.max() >= view.p):
        raise IndexError("support index out of range")
    y = np.ascontiguousarray(y, dtype=np.float64)
    c = view.c
    if support.size + c > view.n:
        raise ValueError("active set is larger than the sample count")
    a_gen = decompress_active(view, support)
    a = np.hstack([a_gen, view.covariates.values]) if c else a_gen
    keep = _independent_columns(a)
    coef = np.zeros(a.shape[1])
    if keep:
        sol, *_ = np.linalg.lstsq(a[:, keep], y, rcond=None)
        coef[keep] = sol
    if len(keep) < a.shape[1]:
        dropped = sorted(set(range(a.shape[1])) - set(keep))
        warnings.warn(
            f"refit dropped {len(dropped)} dependent column(s) at positions {dropped}",
            RankDeficientWarning, stacklevel=2)
    return SparseModel.from_parts(support, coef[: support.size], coef[support.size:],
                                  k=int(support.size), p=view.p)
