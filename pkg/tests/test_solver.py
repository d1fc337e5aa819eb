import numpy as np
import pytest

from shelab.correlation import Riesz, WhiteNoise
from shelab.initial_data import InitialMeasure, grid_project
from shelab.kernels import LatticeGrid, heat_transfer, semigroup_apply
from shelab.noise import smooth_gepsilon, synthesize
from shelab.solver import (BlowUpError, RhoModel, SimulationSpec, StabilityError, exact_second_moment,
                           run_paths, simulate, step_exp_euler, step_jump_semigroup)
from shelab._validation import DomainError


def _spec(**kw):
    base = dict(grid=LatticeGrid(1, 4.0, 64), model=WhiteNoise(1), initial=InitialMeasure.lebesgue(),
                rho=RhoModel("linear", 1.0), dt=1e-2, T=0.2, seed=3, replicas=64)
    base.update(kw)
    return SimulationSpec(**base)


def test_rho_model_kinds():
    u = np.array([-2.0, 0.5, 3.0])
    assert np.allclose(RhoModel("affine", 2.0, 1.0)(u), 1 + 2 * u)
    assert np.allclose(RhoModel("clipped", 1.0, cap=1.0)(u), [-1, 0.5, 1])
    assert np.allclose(RhoModel("sine", 0.5)(u), 0.5 * np.sin(u))
    with pytest.raises(DomainError):
        RhoModel("linear", 1.0, a=1.0)
    with pytest.raises(DomainError):
        RhoModel("cubic")


def test_zero_rho_is_the_semigroup():
    g = LatticeGrid(1, 4.0, 128)
    mu = InitialMeasure.dirac()
    traj = simulate(_spec(grid=g, initial=mu, rho=RhoModel("linear", 0.0), replicas=2))
    expect = semigroup_apply(grid_project(mu, g).values, 0.2, g)
    assert np.allclose(traj.values[-1], expect, atol=1e-12)


def test_step_functions_match_run_paths():
    g = LatticeGrid(1, 4.0, 64)
    noise = synthesize(Riesz(0.5, 1), g, 1e-2, 3, seed=1, replica=[0, 1])
    rho = RhoModel("sine", 1.0)
    u0 = np.ones((2, 64))
    u = u0
    for k in range(3):
        u = step_exp_euler(u, noise.slice(k), rho, 1e-2, g)
    traj = run_paths(u0, noise, rho, 1e-2, 3e-2)
    assert np.allclose(traj.values[-1], u, atol=1e-13)
    sm = smooth_gepsilon(noise, 0.05)
    v = u0
    for k in range(3):
        v = step_jump_semigroup(v, sm.slice(k), rho, 1e-2, 0.05, g)
    traj = run_paths(u0, sm, rho, 1e-2, 3e-2, scheme="jump", eps=0.05)
    assert np.allclose(traj.values[-1], v, atol=1e-13)


def test_jump_scheme_stability_guard():
    g = LatticeGrid(1, 4.0, 64)
    with pytest.raises(StabilityError):
        step_jump_semigroup(np.ones(64), np.zeros(64), RhoModel(), 0.1, 0.05, g)


def test_same_seed_same_paths_and_replica_independence():
    a = simulate(_spec())
    b = simulate(_spec())
    assert np.array_equal(a.values[-1], b.values[-1]) and a.noise_hash == b.noise_hash
    c = simulate(_spec(replicas=80))
    assert np.array_equal(a.values[-1], c.values[-1][:64])


def test_pam_mean_is_preserved():
    traj = simulate(_spec(replicas=2000, T=0.1))
    u = traj.values[-1]
    per_rep = u.mean(axis=1)
    se = per_rep.std(ddof=1) / np.sqrt(per_rep.size)
    assert abs(per_rep.mean() - 1.0) < 5 * se


def test_exact_second_moment_against_monte_carlo():
    g = LatticeGrid(1, 4.0, 64)
    T, dt, lam = 0.1, 1e-2, 1.0
    exact = exact_second_moment(g, WhiteNoise(1), lam, dt, T)
    traj = simulate(_spec(grid=g, dt=dt, T=T, replicas=4000))
    u = traj.values[-1]
    for lag in (0, 1, 3):
        prod = u * np.roll(u, -lag, axis=1)
        # node 0 alone gives an honest standard error; the spatial mean is the estimate
        se = prod[:, 0].std(ddof=1) / np.sqrt(u.shape[0])
        assert abs(prod.mean() - exact[lag]) < 5 * se


def test_exact_second_moment_jump_reduces_to_exp_euler_shape():
    g = LatticeGrid(1, 4.0, 64)
    c = exact_second_moment(g, WhiteNoise(1), 1.0, 1e-3, 0.05, scheme="jump", eps=0.01)
    assert c[0] > 1.0 and np.all(c[0] >= c[1:])


def test_blowup_guard_freezes_replicas():
    traj = simulate(_spec(rho=RhoModel("linear", 30.0), replicas=16, blowup_guard=5.0))
    assert traj.blown.any()
    assert np.all(traj.values[-1][traj.blown] == 0)
    assert set(traj.blowup_steps) == set(np.nonzero(traj.blown)[0])


def test_infinite_guard_raises_on_overflow():
    g = LatticeGrid(1, 4.0, 16)
    noise = synthesize(WhiteNoise(1), g, 1e-2, 40, seed=0, replica=[0])
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(BlowUpError):
            run_paths(np.ones((1, 16)), noise, RhoModel("linear", 1e80), 1e-2, 0.4,
                      blowup_guard=np.inf)


def test_bad_snapshot_times():
    with pytest.raises(DomainError):
        simulate(_spec(snapshot_times=(0.015,)))
    with pytest.raises(DomainError):
        simulate(_spec(snapshot_times=(0.5,)))
