import numpy as np
import pytest

from genoiht.geno_matrix import (CovariateBlock, DenseDesign, StandardizedView, ax,
                                 ax_parts, decompress_active)
from genoiht.iht import (IhtConfig, RankDeficientWarning, SparseModel, fit,
                         hard_threshold, iht_step, initial_state, normalized_step,
                         project_sparse, refit_least_squares, top_k_indices)

from conftest import make_view
from oracles import best_ksparse_distance, normal_equations, random_codes


def gaussian_view(rng, n, p, covar=None, intercept=False):
    design = DenseDesign.from_raw(rng.standard_normal((n, p)))
    block = None
    if intercept or covar is not None:
        block = CovariateBlock.build(covar, n=n, add_intercept=intercept)
    return StandardizedView(design, block)


def planted_response(view, support, weights, rng=None, noise_sd=0.0):
    model = SparseModel.from_parts(support, weights, np.zeros(view.c), k=len(support),
                                   p=view.p)
    y = ax(view, model)
    if noise_sd > 0:
        y = y + rng.normal(0.0, noise_sd, size=view.n)
    return y, model


# ----------------------------------------------------------------- projection

def test_project_keeps_two_largest_magnitudes():
    model = project_sparse(np.array([3.0, -1.0, 0.5, 2.0]), 2)
    np.testing.assert_array_equal(model.dense_genetic(), [3.0, 0.0, 0.0, 2.0])
    np.testing.assert_array_equal(model.support, [0, 3])


def test_project_noop_when_budget_covers_everything():
    model = project_sparse(np.array([1.0, -1.0, 1.0]), 3)
    np.testing.assert_array_equal(model.dense_genetic(), [1.0, -1.0, 1.0])


def test_project_tie_goes_to_lower_index():
    model = project_sparse(np.array([2.0, -2.0, 0.0]), 1)
    np.testing.assert_array_equal(model.dense_genetic(), [2.0, 0.0, 0.0])


def test_project_leaves_covariates_alone():
    covar = np.array([5.0, -7.0])
    model = project_sparse(np.array([1.0, 2.0, 3.0]), 1, covar=covar)
    np.testing.assert_array_equal(model.covar, covar)
    assert model.nnz == 1


def test_project_is_exhaustively_optimal(rng):
    for _ in range(200):
        p = int(rng.integers(1, 11))
        k = int(rng.integers(0, 4))
        vec = rng.standard_normal(p) * 10.0 ** float(rng.integers(-2, 3))
        proj = hard_threshold(vec, k)
        assert np.linalg.norm(vec - proj) <= best_ksparse_distance(vec, k) + 1e-12


def test_top_k_runs_in_partial_selection_time(rng):
    vec = rng.standard_normal(200_000)
    idx = top_k_indices(np.abs(vec), 10)
    assert idx.size == 10
    assert set(idx) == set(np.argsort(-np.abs(vec))[:10])


# ------------------------------------------------------------ normalized step

def orthonormal_design(rng, n, p, scale=1.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    return DenseDesign(values=np.asfortranarray(q * scale))


def state_for(view, y, support, weights, k=None):
    warm = SparseModel.from_parts(support, weights, np.zeros(view.c),
                                  k=k if k is not None else len(support), p=view.p)
    return initial_state(view, y, IhtConfig(k=warm.k), warm=warm)


def test_normalized_step_orthonormal_columns_gives_one(rng):
    view = StandardizedView(orthonormal_design(rng, 30, 6))
    y = rng.standard_normal(30)
    state = state_for(view, y, [0, 2, 5], [1.0, -2.0, 0.5])
    assert normalized_step(state, view) == pytest.approx(1.0, abs=1e-12)


def test_normalized_step_scaled_identity_gives_quarter(rng):
    view = StandardizedView(orthonormal_design(rng, 20, 4, scale=2.0))
    y = rng.standard_normal(20)
    state = state_for(view, y, [1, 3], [1.0, 1.0])
    assert normalized_step(state, view) == pytest.approx(0.25, abs=1e-12)


def test_normalized_step_matches_direct_ratio(rng):
    codes = random_codes(rng, 30, 40, missing_rate=0.05)
    view = make_view(codes, with_intercept=True)
    y = rng.standard_normal(30)
    support = np.sort(rng.choice(40, 5, replace=False))
    state = state_for(view, y, support, rng.standard_normal(5))
    mu = normalized_step(state, view)
    cols = decompress_active(view, support)
    g = state.grad_gen[support]
    image = cols @ g + view.covariates.values @ state.grad_cov
    direct = (g @ g + state.grad_cov @ state.grad_cov) / (image @ image)
    assert mu == pytest.approx(direct, rel=1e-12)


def test_normalized_step_degenerate_support_errors(rng):
    codes = random_codes(rng, 12, 3, missing_rate=0.0)
    codes[:, 1] = 2  # monomorphic: standardized column is identically zero
    view = make_view(codes)
    y = rng.standard_normal(12)
    state = state_for(view, y, [1], [1.0])
    # the restricted gradient vanishes there, so the fallback picks the
    # steepest genetic entries; force the degenerate restriction directly
    state.grad_gen = np.array([0.0, 1.0, 0.0])
    state.grad_cov = np.zeros(0)
    with pytest.raises(ValueError, match="degenerate"):
        normalized_step(state, view)


# ------------------------------------------------------------------- iht_step

def test_step_at_fixed_point_keeps_model(rng):
    view = gaussian_view(rng, 25, 8)
    y, model = planted_response(view, [1, 4], [1.0, -1.0])
    config = IhtConfig(k=2)
    state = initial_state(view, y, config, warm=model)
    loss_before = state.loss
    iht_step(state, view, y, config)
    assert state.step_inf == 0.0
    assert state.loss == pytest.approx(loss_before)
    np.testing.assert_array_equal(state.support, model.support)


def test_step_from_zero_selects_top_gradient_entry(rng):
    design = orthonormal_design(rng, 8, 3)
    view = StandardizedView(design)
    x0 = design.values[:, 0]
    y = 5.0 * x0
    config = IhtConfig(k=1)
    state = initial_state(view, y, config)
    iht_step(state, view, y, config)
    np.testing.assert_array_equal(state.support, [0])
    # with unit columns the normalized step is 1, so the new weight is x0'y
    assert state.beta_gen[0] == pytest.approx(float(x0 @ y), rel=1e-12)


def test_accepted_steps_never_increase_loss(rng):
    for trial in range(25):
        codes = random_codes(rng, 30, 60, missing_rate=0.05)
        view = make_view(codes, with_intercept=True)
        support = np.sort(rng.choice(60, 4, replace=False))
        y, _ = planted_response(view, support, rng.standard_normal(4), rng, noise_sd=0.3)
        result = fit(view, y, IhtConfig(k=int(rng.integers(1, 9))))
        diffs = np.diff(result.loss_trace)
        assert diffs.max(initial=-np.inf) <= 1e-12


def test_backtrack_limit_reports_collapse(rng):
    # warm-start on the wrong predictor so the first step must swap the
    # support; an aggressive omega constant then rejects every candidate
    design = orthonormal_design(rng, 12, 3)
    view = StandardizedView(design)
    y = 5.0 * design.values[:, 0]
    warm = SparseModel.from_parts([1], [1.0], np.zeros(0), k=1, p=3)
    result = fit(view, y, IhtConfig(k=1, c_omega=0.99, max_backtracks=0), warm=warm)
    assert result.reason == "step-size collapse"
    assert not result.converged


# ------------------------------------------------------------------------ fit

def test_fit_zero_response_converges_immediately(rng):
    view = gaussian_view(rng, 15, 6, intercept=True)
    result = fit(view, np.zeros(15), IhtConfig(k=3))
    assert result.iterations == 1
    assert result.converged
    assert result.model.nnz == 0


def test_fit_recovers_planted_support_noiseless(rng):
    view = gaussian_view(rng, 200, 500)
    support = np.sort(rng.choice(500, 5, replace=False))
    weights = np.array([1.0, -1.0, 1.5, -0.8, 1.2])
    y, _ = planted_response(view, support, weights)
    result = fit(view, y, IhtConfig(k=5))
    np.testing.assert_array_equal(result.model.support, support)


def test_fit_relaxed_budget_contains_planted_support(rng):
    view = gaussian_view(rng, 200, 500)
    support = np.sort(rng.choice(500, 5, replace=False))
    y, _ = planted_response(view, support, np.array([1.0, -1.0, 1.5, -0.8, 1.2]))
    result = fit(view, y, IhtConfig(k=10))
    assert set(support).issubset(set(result.model.support))


def test_fit_budget_saturates_when_signal_remains(rng):
    view = gaussian_view(rng, 150, 80)
    support = np.sort(rng.choice(80, 6, replace=False))
    y, _ = planted_response(view, support, np.ones(6))
    result = fit(view, y, IhtConfig(k=3))
    assert result.model.nnz == 3


def test_fit_never_exceeds_budget(rng):
    for _ in range(10):
        codes = random_codes(rng, 40, 30, missing_rate=0.1)
        view = make_view(codes, with_intercept=True)
        y = rng.standard_normal(40)
        k = int(rng.integers(0, 6))
        result = fit(view, y, IhtConfig(k=k))
        assert result.model.nnz <= k


def test_fit_loss_matches_residual_recomputation(rng):
    codes = random_codes(rng, 40, 25, missing_rate=0.1)
    view = make_view(codes, with_intercept=True)
    y = rng.standard_normal(40)
    config = IhtConfig(k=4)
    state = initial_state(view, y, config)
    for _ in range(5):
        iht_step(state, view, y, config)
    resid = y - ax_parts(view, state.support, state.beta_gen[state.support],
                         state.beta_cov)
    assert state.loss == pytest.approx(0.5 * float(resid @ resid), rel=1e-8)


def test_fit_covariates_survive_projection(rng):
    codes = random_codes(rng, 60, 30, missing_rate=0.0)
    covar = rng.standard_normal((60, 2))
    view = make_view(codes, with_intercept=True, covar=covar)
    y = 2.0 + 1.5 * view.covariates.values[:, 1] + rng.normal(0, 0.1, 60)
    result = fit(view, y, IhtConfig(k=2))
    assert result.model.covar.size == 3
    assert abs(result.model.covar[1]) > 0.5  # the informative covariate stays


def test_gradient_matches_finite_differences(rng):
    codes = random_codes(rng, 15, 20, missing_rate=0.1)
    view = make_view(codes, with_intercept=True)
    y = rng.standard_normal(15)
    config = IhtConfig(k=5)
    warm = project_sparse(rng.standard_normal(20) * 0.5, 5, covar=rng.standard_normal(1))
    state = initial_state(view, y, config, warm=warm)

    def loss_at(beta_gen, beta_cov):
        sup = np.flatnonzero(beta_gen)
        resid = y - ax_parts(view, sup, beta_gen[sup], beta_cov)
        return 0.5 * float(resid @ resid)

    h = 1e-5
    grad = state.gradient
    for idx in range(view.total):
        bg_plus, bc_plus = state.beta_gen.copy(), state.beta_cov.copy()
        bg_minus, bc_minus = state.beta_gen.copy(), state.beta_cov.copy()
        if idx < view.p:
            bg_plus[idx] += h
            bg_minus[idx] -= h
        else:
            bc_plus[idx - view.p] += h
            bc_minus[idx - view.p] -= h
        numeric = (loss_at(bg_plus, bc_plus) - loss_at(bg_minus, bc_minus)) / (2 * h)
        assert numeric == pytest.approx(grad[idx], rel=1e-5, abs=1e-7)


def test_fit_rejects_bad_response(rng):
    view = gaussian_view(rng, 10, 4)
    with pytest.raises(ValueError):
        fit(view, np.full(10, np.nan), IhtConfig(k=1))
    with pytest.raises(ValueError):
        fit(view, np.zeros(9), IhtConfig(k=1))


def test_config_validation():
    with pytest.raises(ValueError):
        IhtConfig(k=-1)
    with pytest.raises(ValueError):
        IhtConfig(k=1, tol=0.0)
    with pytest.raises(ValueError):
        IhtConfig(k=1, c_omega=1.0)


# ---------------------------------------------------------------------- refit

def test_refit_intercept_only_is_mean(rng):
    codes = random_codes(rng, 20, 5, missing_rate=0.0)
    view = make_view(codes, with_intercept=True)
    y = rng.standard_normal(20)
    model = refit_least_squares(view, y, np.array([], dtype=np.int64))
    assert model.covar[0] == pytest.approx(float(y.mean()), rel=1e-12)
    assert model.nnz == 0


def test_refit_orthonormal_columns(rng):
    design = orthonormal_design(rng, 40, 6)
    view = StandardizedView(design)
    y = rng.standard_normal(40)
    model = refit_least_squares(view, y, np.arange(3))
    expected = design.values[:, :3].T @ y
    np.testing.assert_allclose(model.dense_genetic()[:3], expected, rtol=1e-10)


def test_refit_matches_normal_equations(rng):
    codes = random_codes(rng, 50, 30, missing_rate=0.05)
    view = make_view(codes, with_intercept=True)
    y = rng.standard_normal(50)
    support = np.sort(rng.choice(30, 6, replace=False))
    model = refit_least_squares(view, y, support)
    a = np.hstack([decompress_active(view, support), view.covariates.values])
    expected = normal_equations(a, y)
    np.testing.assert_allclose(
        np.concatenate([model.dense_genetic()[support], model.covar]),
        expected, rtol=1e-8, atol=1e-10)


def test_refit_residual_orthogonal_to_active_columns(rng):
    codes = random_codes(rng, 60, 40, missing_rate=0.1)
    view = make_view(codes, with_intercept=True)
    y = rng.standard_normal(60)
    support = np.sort(rng.choice(40, 8, replace=False))
    model = refit_least_squares(view, y, support)
    resid = y - ax(view, model)
    a = np.hstack([decompress_active(view, support), view.covariates.values])
    assert np.abs(a.T @ resid).max() < 1e-8


def test_refit_drops_dependent_column_lowest_index_kept(rng):
    codes = random_codes(rng, 30, 6, missing_rate=0.0)
    codes[:, 4] = codes[:, 2]  # duplicate column in perfect correlation
    view = make_view(codes)
    y = rng.standard_normal(30)
    with pytest.warns(RankDeficientWarning):
        model = refit_least_squares(view, y, np.array([2, 4]))
    assert 2 in model.support
    assert 4 not in model.support


def test_refit_rejects_oversized_support(rng):
    codes = random_codes(rng, 10, 20, missing_rate=0.0)
    view = make_view(codes, with_intercept=True)
    with pytest.raises(ValueError, match="sample count"):
        refit_least_squares(view, np.zeros(10), np.arange(12))


def test_fit_zero_budget_without_covariates_pins_everything(rng):
    view = gaussian_view(rng, 20, 6)
    result = fit(view, rng.standard_normal(20), IhtConfig(k=0))
    assert result.converged
    assert result.model.nnz == 0
