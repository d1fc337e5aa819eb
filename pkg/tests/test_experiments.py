import math

import numpy as np
import pytest
from sklearn.base import clone

from shelab import experiments as ex
from shelab.correlation import Riesz, WhiteNoise
from shelab.initial_data import InitialMeasure, grid_project, j0
from shelab.kernels import LatticeGrid, semigroup_apply
from shelab.noise import coarsen, synthesize
from shelab.solver import RhoModel, exact_second_moment, run_paths
from shelab._validation import DomainError


def setup(**kw):
    base = dict(grid=LatticeGrid(1, 4.0, 64), model=WhiteNoise(1), rho=RhoModel("linear", 1.0),
                dt=4e-3, T=0.2, seed=0, replicas=128)
    base.update(kw)
    return ex.ExperimentSetup(**base)


def test_batch_ci_covers_the_mean():
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(200):
        e = ex.batch_ci(rng.normal(1.0, 2.0, 640))
        hits += e.lo <= 1.0 <= e.hi
    assert 180 <= hits <= 200


def test_proportion_ci_zero_count():
    e = ex.proportion_ci(0, 100)
    assert e.value == 0 and e.lo == 0 and 0.02 < e.hi < 0.05


def test_estimate_delta_method():
    e = ex.Estimate(4.0, 0.1, 3.8, 4.2).map(math.sqrt, lambda v: 0.5 / math.sqrt(v))
    assert e.value == 2.0 and e.se == pytest.approx(0.025)
    assert e.lo == pytest.approx(1.95) and e.hi == pytest.approx(2.05)


def test_variogram_estimator_recovers_exponent():
    h = np.array([1, 2, 4, 8.0]).reshape(-1, 1)
    est = ex.VariogramHolderEstimator().fit(h, 3.0 * h[:, 0] ** 0.8)
    assert est.exponent_ == pytest.approx(0.4)
    assert est.r2_ == pytest.approx(1.0)
    assert np.allclose(est.predict(h), 3.0 * h[:, 0] ** 0.8)
    assert clone(est).get_params() == {"min_r2": 0.95}
    with pytest.raises(ValueError):
        ex.VariogramHolderEstimator().fit(h, -h[:, 0])


def test_smallball_regressor_recovers_slope():
    reg = ex.SmallBallTailRegressor(alpha=0.5)
    eps = np.array([1e-1, 1e-2, 1e-3, 1e-4]).reshape(-1, 1)
    z = reg.transform_eps(eps)[:, 0]
    p = np.exp(-(0.1 + 0.7 * z))
    reg.fit(eps, p)
    assert reg.slope_ == pytest.approx(0.7) and reg.intercept_ == pytest.approx(0.1)
    assert reg.score(eps, p) == pytest.approx(1.0)


def test_status_precedence():
    r = ex.ExperimentResult("x", [], [], {"a": ex.PASS, "b": ex.INCONCLUSIVE})
    assert r.status == ex.INCONCLUSIVE
    r.verdicts["c"] = ex.FAIL
    assert r.status == ex.FAIL


def test_second_moment_small_run():
    res = ex.second_moment_experiment(setup(), t=0.2, refine=False)
    row = res.rows[0]
    assert row["ci_lo"] <= row["estimate"] <= row["ci_hi"]
    assert res.status == ex.PASS
    assert res.noise_hash


@pytest.mark.parametrize("model", [WhiteNoise(1), Riesz(0.5, 1)])
def test_coupled_pair_matches_coarsened_runs(model):
    s = setup(model=model, dt=0.01, replicas=40)
    fine = synthesize(model, LatticeGrid(1, 4.0, 128), 0.005, 40, 3, np.arange(40))
    pair = ex._coupled_pam_pair(s, fine, 20)
    a = run_paths(np.ones((40, 128)), fine, s.rho, 0.005, 0.2).at(0.2)
    b = run_paths(np.ones((40, 64)), coarsen(fine), s.rho, 0.01, 0.2).at(0.2)
    assert np.array_equal(pair["fine"], np.mean(a * a, axis=-1))
    assert np.array_equal(pair["coupled_base"], np.mean(b * b, axis=-1))


def test_second_moment_refinement_rows():
    s = setup(dt=0.01, replicas=64)
    res = ex.second_moment_experiment(s, t=0.2, refine=True, refine_replicas=64)
    rows = {r["level"]: r for r in res.rows}
    exact = exact_second_moment(s.grid, s.model, 1.0, 0.01, 0.2).flat[0]
    assert rows["lattice_exact_base"]["estimate"] == exact
    assert rows["fine_minus_base"]["oracle"] == pytest.approx(
        rows["lattice_exact_fine"]["estimate"] - exact)
    assert "error_decreases_under_refinement" in res.verdicts


def test_moments_zero_lambda_is_j0():
    mu = InitialMeasure.dirac()
    s = setup(rho=RhoModel("linear", 0.0), replicas=64)
    res = ex.moments_experiment(s, mu, p_list=(2,), times=(0.2,))
    row = res.rows[0]
    # one deterministic path: n steps of the lattice heat transfer
    u = grid_project(mu, s.grid).values
    for _ in range(s.steps):
        u = semigroup_apply(u, s.dt, s.grid)
    assert row["se"] == pytest.approx(0.0, abs=1e-12)
    assert row["estimate"] == pytest.approx(u[32], rel=1e-12)
    # with dt / dx^2 >= 1 the steps compose like the continuum semigroup
    s2 = setup(rho=RhoModel("linear", 0.0), replicas=64, dt=0.02)
    est = ex.moments_experiment(s2, mu, p_list=(2,), times=(0.2,)).rows[0]["estimate"]
    assert est == pytest.approx(float(j0(mu, 0.2, 0.0).value), rel=1e-6)
    assert res.status == ex.PASS


def test_moments_rejects_p():
    with pytest.raises(DomainError):
        ex.moments_experiment(setup(), InitialMeasure.dirac(), p_list=(3,))


def test_comparison_identical_measures_never_violate():
    mu = InitialMeasure.dirac()
    s = setup(scheme="jump", eps=0.02, dt=5e-3)
    res = ex.comparison_experiment(s, mu, mu, dt_ladder=(1e-2, 5e-3), count_times=(0.1, 0.2))
    assert all(r["violation_fraction"] == 0 for r in res.rows)
    assert res.verdicts["violation_final"] == ex.PASS


def test_comparison_rejects_unordered():
    with pytest.raises(DomainError):
        ex.comparison_experiment(setup(), InitialMeasure.lebesgue(2.0), InitialMeasure.lebesgue(1.0))


def test_smallball_large_eps_is_vacuous():
    res = ex.smallball_experiment(setup(), InitialMeasure.dirac(), window=((0.1, 0.2), (-1.0, 1.0)),
                                  eps_list=(1e-1,))
    assert res.rows[0]["probability"] == 1.0


def test_holder_window_collapse_is_inconclusive():
    res = ex.holder_experiment(setup(), lags=(4, 8, 16))
    assert res.status == ex.INCONCLUSIVE and res.notes
    res = ex.holder_experiment(setup(), direction="time", lags=(16, 32, 64))
    assert res.status == ex.INCONCLUSIVE


def test_holder_zero_noise_is_inconclusive():
    res = ex.holder_experiment(setup(rho=RhoModel("linear", 0.0)), lags=(2, 4))
    assert res.status == ex.INCONCLUSIVE


def test_holder_reports_fit_and_target():
    s = setup(grid=LatticeGrid(1, 4.0, 256), dt=2.5e-4, T=0.05, model=Riesz(0.5, 1))
    res = ex.holder_experiment(s, lags=(2, 4, 8))
    assert res.estimates["target"] == 0.75
    assert set(res.verdicts) == {"space_exponent", "fit_quality"}


def test_noise_ladder_zero_lambda_has_no_difference():
    res = ex.approx_noise_experiment(setup(rho=RhoModel("linear", 0.0)), eps_cells=(4, 2))
    assert all(r["max_node_l2_difference"] == 0 for r in res.rows)


def test_noise_ladder_needs_bounded_data():
    with pytest.raises(DomainError):
        ex.approx_noise_experiment(setup(), InitialMeasure.dirac())


def test_initial_ladder_zero_lambda_is_deterministic():
    res = ex.approx_initialdata_experiment(setup(rho=RhoModel("linear", 0.0), replicas=32),
                                           InitialMeasure.dirac(), eps_ladder=(0.3, 0.1))
    vals = [r["l2_difference"] for r in res.rows]
    assert vals[0] > vals[1] > 0
    assert all(r["ci_hi"] - r["ci_lo"] < 1e-12 for r in res.rows)


def test_weak_trace_rows_and_target():
    res = ex.weak_trace_experiment(setup(), InitialMeasure.dirac(), t_ladder=(0.2, 0.1))
    assert [r["t"] for r in res.rows] == [0.2, 0.1]
    assert res.rows[0]["target"] == pytest.approx(1.0)


def test_triangle_test_function():
    g = LatticeGrid(2, 2.0, 16)
    phi = ex.triangle_test_function(g, 0.0, 1.0)
    assert phi.shape == (16, 16) and phi.max() == 1.0
