import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from supfpca.errors import InvalidArgumentError
from supfpca.fit import (FitConfig, _pick, CVRow, cross_validate, fit, fold_indices, optimize, random_init)
from supfpca.init import bin_count_candidates
from supfpca.likelihood import objective, prepare
from supfpca.model import FunctionalSample, ModelParams
from supfpca.penalty import Lambdas, assemble
from supfpca.sim import SimTruth, generate, eigen_mise

from conftest import random_problem

SMALL = dict(l=6, p=4, m=6, q=5, t_domain=(0.0, 1.0), z_domain=(0.0, 1.0))


@pytest.fixture(scope="module")
def sim_small():
    return generate(SimTruth(n=300, m_tilde=21, seed=11))


@pytest.fixture(scope="module")
def fitted(sim_small):
    return fit(sim_small, FitConfig(r=2, **SMALL))


@pytest.mark.parametrize("kw", [dict(r=0), dict(r=7, m=6), dict(rel_tol=0), dict(direction="sgd"),
                                dict(shrink=1.0), dict(lambdas=(1, 2, 3)), dict(lambdas=(-1, 0, 0, 0)),
                                dict(init_resolutions=0)])
def test_config_validation(kw):
    with pytest.raises(InvalidArgumentError):
        FitConfig(**kw)


def test_objective_trace_monotone(fitted):
    trace = np.array(fitted.diagnostics.objective_trace)
    assert np.all(np.diff(trace) <= 1e-9 * np.abs(trace[1:]).clip(1))
    assert fitted.diagnostics.converged
    assert fitted.diagnostics.block_trace[0] == "init"
    assert set(fitted.diagnostics.block_trace[1:]) <= {"theta", "gamma", "sigma"}


@pytest.mark.parametrize("direction", ["newton", "fisher", "steepest"])
def test_every_direction_descends(direction):
    rng = np.random.default_rng(5)
    samples, bases, params = random_problem(rng, n_samples=20, max_obs=10, min_obs=3)
    data = prepare(samples, bases)
    cfg = FitConfig(r=2, max_outer=5, direction=direction, **{k: v for k, v in SMALL.items() if "domain" in k})
    pen = assemble(bases.b, bases.v, bases.a, bases.u, Lambdas(1e-3, 1e-3, 1e-3, 1e-3))
    out, diag = optimize(data, params, pen, cfg)
    trace = np.array(diag.objective_trace)
    assert trace[-1] < trace[0]
    assert np.all(np.diff(trace) <= 1e-9 * np.abs(trace[1:]).clip(1))


def test_zero_covariance_gives_penalized_gls(rng):
    samples, bases, params = random_problem(rng, n_samples=30, max_obs=8, min_obs=2)
    params = ModelParams(np.zeros_like(params.theta_mu), np.zeros_like(params.gamma), np.log(0.7))
    data = prepare(samples, bases)
    lam = Lambdas(0.0, 0.0, 0.05, 0.02)
    pen = assemble(bases.b, bases.v, bases.a, bases.u, lam)
    cfg = FitConfig(r=2, max_outer=20, rel_tol=1e-12, inner_tol=1e-12)
    out, _ = optimize(data, params, pen, cfg, blocks=("theta",))
    H = np.vstack([d.H for d in data.designs])
    y = np.concatenate([s.values for s in samples])
    # grad: -2 H^T(y - H th)/s2 + 2 S th = 0
    expected = np.linalg.solve(H.T @ H + 0.7 * pen.mean_matrix, H.T @ y)
    np.testing.assert_allclose(out.theta_mu, expected, rtol=1e-6, atol=1e-8)


def test_stationary_at_convergence(fitted, sim_small):
    cfg = fitted.config
    data = prepare(sim_small, fitted.bases)
    pen = assemble(fitted.bases.b, fitted.bases.v, fitted.bases.a, fitted.bases.u, fitted.lambdas)
    f, g = objective(data, fitted.params, pen)
    # gradient small relative to the scale of the objective
    assert np.linalg.norm(g.theta_mu) < 1e-2 * abs(f) ** 0.5
    assert abs(g.log_sigma2) < 1e-2 * abs(f) ** 0.5
    assert f == pytest.approx(fitted.objective, rel=1e-12)


def test_fit_recovers_eigenfunctions(fitted):
    assert np.all(eigen_mise(fitted)[:2] < 0.1)
    # the omitted third component (variance z, mean 0.5) is absorbed into the noise
    assert fitted.params.sigma2 == pytest.approx(0.1 + 0.5, rel=0.3)


def test_fit_is_deterministic(sim_small):
    cfg = FitConfig(r=1, init_resolutions=1, **SMALL)
    a, b = fit(sim_small, cfg), fit(sim_small, cfg)
    np.testing.assert_array_equal(a.params.gamma, b.params.gamma)
    np.testing.assert_array_equal(a.params.theta_mu, b.params.theta_mu)
    assert a.diagnostics.objective_trace == b.diagnostics.objective_trace


def test_more_resolutions_never_worse(sim_small):
    one = fit(sim_small, FitConfig(r=2, init_resolutions=1, **SMALL))
    many = fit(sim_small, FitConfig(r=2, init_resolutions=3, **SMALL))
    assert many.objective <= one.objective
    assert many.diagnostics.init_bins in bin_count_candidates(300, 3)


def test_candidates():
    assert bin_count_candidates(500, 4) == [10, 11, 9, 12]
    assert bin_count_candidates(10, 3) == [5, 6, 4]
    assert bin_count_candidates(10, 1) == [5]
    c = bin_count_candidates(10, 8)
    assert len(set(c)) == 8 and min(c) >= 2


def test_fixed_bins_and_random_start(sim_small):
    cfg = FitConfig(r=1, n_bins=6, **SMALL)
    m = fit(sim_small, cfg)
    assert m.diagnostics.init_bins == 6
    bases = m.bases
    p0 = random_init(bases, 1, np.random.default_rng(0))
    m2 = fit(sim_small, cfg, init_params=p0, bases=bases)
    assert m2.diagnostics.init_bins is None
    assert np.isfinite(m2.objective)


def test_heteroscedastic_keeps_sigma(rng):
    samples, bases, params = random_problem(rng, n_samples=40, sd=True, max_obs=10, min_obs=4)
    cfg = FitConfig(r=1, l=5, p=4, m=5, q=4, n_bins=2, min_bin_count=5, max_outer=5,
                    t_domain=(0, 1), z_domain=(0, 1))
    m = fit(samples, cfg, bases=bases)
    assert m.heteroscedastic
    assert "sigma" not in m.diagnostics.block_trace


def test_fit_needs_two_curves():
    with pytest.raises(InvalidArgumentError):
        fit([FunctionalSample(0, [0, 1], [0, 1], 0.0)])


def test_empty_covariate_range():
    s = [FunctionalSample(i, [0, 0.5, 1], [0, 1, 0], 0.3) for i in range(5)]
    with pytest.raises(InvalidArgumentError):
        fit(s)


def test_small_data_lowers_bin_minimum(sim_small, caplog):
    # 30 curves in 10 bins: the per-bin minimum drops to 3 and sparse bins are skipped
    m = fit(sim_small[:30], FitConfig(r=1, n_bins=10, min_bin_count=10, **SMALL))
    assert np.isfinite(m.objective)
    assert "dropped" in caplog.text


@given(st.integers(2, 60), st.integers(2, 7), st.integers(0, 100))
def test_folds_partition(n, k, seed):
    folds = fold_indices(n, k, seed)
    assert sorted(np.concatenate(folds).tolist()) == list(range(n))
    assert max(map(len, folds)) - min(map(len, folds)) <= 1


def test_pick_prefers_smoother_on_ties():
    rows = [CVRow("cov", (1, 1, 0, 0), 5.0, 3), CVRow("cov", (10, 10, 0, 0), 5.0, 3),
            CVRow("cov", (0.1, 0.1, 0, 0), 6.0, 3), CVRow("cov", (0, 0, 0, 0), np.nan, 3)]
    assert _pick(rows) == (10, 10, 0, 0)


def test_cross_validation_runs(sim_small):
    cfg = FitConfig(r=1, cv_folds=3, max_outer=10, **SMALL)
    best, table = cross_validate(sim_small[:150], cfg, [(1e-4, 1e-4), (10.0, 10.0)], [(1e-4, 1e-4), (1e3, 1e3)])
    assert len(table) == 4
    assert [r.stage for r in table] == ["mean", "mean", "cov", "cov"]
    assert all(np.isfinite(r.score) and r.n_folds == 3 for r in table)
    chosen = min(table[2:], key=lambda r: (r.score, -sum(r.lambdas)))
    assert best == chosen.lambdas
    assert best[2:] == min(table[:2], key=lambda r: (r.score, -sum(r.lambdas))).lambdas[2:]


def test_cross_validation_rejects_bad_grids(sim_small):
    cfg = FitConfig(r=1, cv_folds=3, **SMALL)
    with pytest.raises(InvalidArgumentError):
        cross_validate(sim_small, cfg, [], [(1, 1)])


def test_cv_choice_close_to_best_grid_point(sim_small):
    from supfpca.predict import fve
    cfg = FitConfig(r=2, cv_folds=3, **SMALL)
    mean_grid, cov_grid = [(1e-3, 1e-3), (10.0, 10.0)], [(1e-3, 1e-3), (100.0, 100.0)]
    best, _ = cross_validate(sim_small, cfg, mean_grid, cov_grid)
    test = generate(SimTruth(n=150, m_tilde=21, seed=12))
    scores = {}
    for mt, mz in mean_grid:
        for ct, cz in cov_grid:
            lams = (ct, cz, mt, mz)
            scores[lams] = fve(fit(sim_small, FitConfig(r=2, lambdas=lams, **SMALL)), test)
    assert scores[best] >= max(scores.values()) - 0.02
