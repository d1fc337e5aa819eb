import math

import numpy as np
import pytest
from scipy import integrate

from shelab.kernels import (FieldState, KernelQuery, LatticeGrid, PoleError, delta_epsilon_apply,
                            g_weight, heat_kernel, jump_semigroup_apply, poisson_weights,
                            r_epsilon_density, semigroup_apply)
from shelab._validation import DomainError, ShapeError


def test_heat_kernel_values():
    assert heat_kernel(1.0, 0.0) == pytest.approx(0.3989423, abs=1e-7)
    assert heat_kernel(2.0, np.zeros(2), d=2) == pytest.approx(0.0795775, abs=1e-7)
    assert heat_kernel(1.0, 1.0) == pytest.approx(0.2419707, abs=1e-7)
    assert KernelQuery(1.0, 1.0).evaluate() == heat_kernel(1.0, 1.0)


def test_heat_kernel_symmetric_and_positive():
    x = np.linspace(-5, 5, 101)
    v = heat_kernel(0.7, x)
    assert np.all(v > 0)
    assert np.allclose(v, heat_kernel(0.7, -x), rtol=0, atol=0)


@pytest.mark.parametrize("t", [0.0, -1.0])
def test_heat_kernel_rejects_nonpositive_time(t):
    with pytest.raises(DomainError):
        heat_kernel(t, 0.0)


def test_grid_rejects_bad_sizes():
    for n in (6, 100, 800):
        with pytest.raises(DomainError):
            LatticeGrid(1, 4.0, n)
    g = LatticeGrid(2, 2.0, 16)
    assert g.dx == 0.25 and g.n_cells == 256 and g.shape == (16, 16)


def test_index_of_ties_go_up():
    g = LatticeGrid(1, 1.0, 128)
    x = -1.0 + 10.5 * g.dx
    assert g.index_of(x) == 11


def test_semigroup_constant_and_identity():
    g = LatticeGrid(1, 4.0, 64)
    c = np.full(g.shape, 2.5)
    assert np.allclose(semigroup_apply(c, 0.3, g), 2.5, atol=1e-13)
    rng = np.random.default_rng(1)
    u = rng.normal(size=g.shape)
    assert np.array_equal(semigroup_apply(u, 0.0, g), u)


def test_semigroup_mass_positivity_and_law():
    g = LatticeGrid(2, 3.0, 32)
    rng = np.random.default_rng(2)
    u = FieldState(g, rng.exponential(size=g.shape))
    v = semigroup_apply(u, 0.2)
    assert v.mass() == pytest.approx(u.mass(), rel=1e-12)
    assert v.values.min() >= -1e-14
    a = semigroup_apply(semigroup_apply(u, 0.1), 0.25)
    b = semigroup_apply(u, 0.35)
    assert np.allclose(a.values, b.values, rtol=0, atol=1e-12)


def test_semigroup_maps_sampled_gaussian_forward():
    g = LatticeGrid(1, 8.0, 512)
    s, t = 0.5, 0.7
    x = g.axis
    out = semigroup_apply(heat_kernel(s, x), t, g)
    exact = heat_kernel(s + t, x)
    assert np.max(np.abs(out - exact)) <= 1e-8 * exact.max()


def test_semigroup_grid_mismatch():
    g1, g2 = LatticeGrid(1, 4.0, 64), LatticeGrid(1, 4.0, 128)
    with pytest.raises(ShapeError):
        semigroup_apply(FieldState(g1, np.ones(64)), 0.1, g2)


def test_g_weight_origin_and_quadrature():
    assert float(g_weight(1.0, 0.0)) == pytest.approx(0.7978846, abs=1e-7)
    quad = integrate.quad(lambda s: heat_kernel(s, 1.0), 0, 1, epsabs=0, epsrel=1e-13)[0]
    assert float(g_weight(1.0, 1.0)) == pytest.approx(quad, abs=1e-8)


def test_g_weight_decreasing_and_2d_pole():
    r = np.linspace(0.01, 4, 300)
    assert np.all(np.diff(g_weight(1.0, r)) < 0)
    near = g_weight(1.0, 10.0 ** -np.arange(1, 7), d=2)
    assert np.all(np.diff(near) > 0)
    with pytest.raises(PoleError):
        g_weight(1.0, 0.0, d=2)


def test_r_epsilon_mass_and_zero_time():
    x = np.linspace(-12, 12, 24001)
    dens = r_epsilon_density(1.0, x, 0.1)
    mass = integrate.simpson(dens, x=x)
    assert mass == pytest.approx(1 - math.exp(-10), abs=1e-6)
    assert np.all(dens >= 0)
    assert np.all(r_epsilon_density(0.0, x, 0.1) == 0)
    with pytest.raises(DomainError):
        r_epsilon_density(1.0, x, 0.0)


def test_poisson_weights_tail():
    n, p = poisson_weights(7.0, 1e-12)
    assert 1 - p.sum() < 1e-12
    assert n[0] == 0


def test_jump_semigroup_mass():
    g = LatticeGrid(1, 4.0, 128)
    u = heat_kernel(0.05, g.axis)
    v = jump_semigroup_apply(u, 0.5, 0.1, g)
    assert v.sum() * g.dx == pytest.approx(u.sum() * g.dx, rel=1e-10)


def test_delta_eps_symbol_on_a_mode():
    g = LatticeGrid(1, 4.0, 256)
    xi = math.pi / g.L
    mode = np.cos(xi * g.axis)
    eps = 0.1
    out = delta_epsilon_apply(mode, eps, g)
    assert np.max(np.abs(out - (math.exp(-eps * xi * xi / 2) - 1) / eps * mode)) < 1e-10
    assert np.allclose(delta_epsilon_apply(np.ones(g.shape), eps, g), 0, atol=1e-12)


def test_delta_eps_tends_to_half_laplacian():
    g = LatticeGrid(1, 8.0, 1024)
    u = np.exp(-g.axis ** 2)
    lap = (np.roll(u, -1) - 2 * u + np.roll(u, 1)) / g.dx ** 2
    errs = [np.max(np.abs(delta_epsilon_apply(u, e, g) - 0.5 * lap)) for e in (0.04, 0.02, 0.01)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.15)
