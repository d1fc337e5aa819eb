import math

import numpy as np
import pytest
from scipy import linalg

from shelab.correlation import (GaussianKernel, Riesz, TabulatedSpectral, TriangleMollifier,
                                WhiteNoise, dalang_alpha, k_of_t, model_from_config,
                                mollified_correlation, riesz_constant, upsilon)
from shelab.correlation import upsilon_closed_form
from shelab.kernels import LatticeGrid
from shelab._validation import DomainError

MODELS = [WhiteNoise(1), Riesz(0.5, 1), Riesz(1.0, 2), GaussianKernel(1.0, 1), GaussianKernel(0.5, 2)]


@pytest.mark.parametrize("model", MODELS, ids=repr)
def test_k_three_ways_agree(model):
    vals = [k_of_t(model, 0.3, m) for m in ("closed", "spectral", "real")]
    assert vals[1] == pytest.approx(vals[0], rel=1e-9)
    assert vals[2] == pytest.approx(vals[0], rel=1e-9)


def test_k_known_values():
    assert k_of_t(WhiteNoise(1), 1.0) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-14)
    assert k_of_t(GaussianKernel(0.5, 2), 0.3) == pytest.approx(0.25 / 0.55, rel=1e-14)


def test_riesz_constant_one_dimension():
    # |x|^(-1/2) is its own Fourier transform up to sqrt(2 pi)
    assert riesz_constant(1, 0.5) == pytest.approx(math.sqrt(2 * math.pi), rel=1e-14)


@pytest.mark.parametrize("model", [WhiteNoise(1), Riesz(0.5, 1), Riesz(1.0, 2), Riesz(1.5, 2)], ids=repr)
@pytest.mark.parametrize("beta", [0.5, 2.0, 10.0])
def test_upsilon_closed_form_matches_quadrature(model, beta):
    assert upsilon(model, beta) == pytest.approx(upsilon_closed_form(model, beta), rel=1e-8)


def test_upsilon_white_closed():
    assert upsilon(WhiteNoise(1), 2.0, rule="closed") == pytest.approx(0.5 / math.sqrt(2.0))


def test_dalang_alpha():
    assert dalang_alpha(WhiteNoise(1)) == 0.5
    assert dalang_alpha(Riesz(0.5, 1)) == 0.75
    assert dalang_alpha(GaussianKernel(1.0, 2)) == 1.0


def test_riesz_beta_range_enforced():
    with pytest.raises((DomainError, ValueError)):
        Riesz(1.0, 1)
    with pytest.raises((DomainError, ValueError)):
        WhiteNoise(2)


def test_lattice_covariance_white_is_cell_delta():
    g = LatticeGrid(1, 4.0, 64)
    c = WhiteNoise(1).lattice_covariance(g)
    assert c[0] == pytest.approx(1 / g.dx)
    assert np.all(c[1:] == 0)


@pytest.mark.parametrize("model", [Riesz(0.5, 1), GaussianKernel(1.0, 1)], ids=repr)
def test_lattice_covariance_is_nonnegative_definite_up_to_roundoff(model):
    g = LatticeGrid(1, 4.0, 64)
    c = model.lattice_covariance(g)
    assert np.allclose(c[1:], c[1:][::-1])
    assert np.linalg.eigvalsh(linalg.circulant(c)).min() > -1e-10 * c[0]


def test_mollified_pair_sits_below_the_base_model():
    base = Riesz(0.5, 1)
    f1, f2 = mollified_correlation(base, TriangleMollifier(0.2, 1))
    assert k_of_t(f2, 0.3) < k_of_t(f1, 0.3) < k_of_t(base, 0.3)
    assert upsilon(f2, 1.0) < upsilon(base, 1.0)


def test_triangle_mollifier_normalized():
    m = TriangleMollifier(0.2, 1)
    assert m.phi(0.0) == pytest.approx(5.0)
    assert m.hat(0.0) == pytest.approx(1.0)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_tabulated_matches_gaussian(tmp_path):
    r = np.linspace(0, 8, 801)
    ref = GaussianKernel(1.0, 1)
    path = tmp_path / "spec.txt"
    np.savetxt(path, np.column_stack([r, ref.spectral_density(r)]))
    tab = TabulatedSpectral.from_file(str(path), 1)
    assert k_of_t(tab, 0.3) == pytest.approx(k_of_t(ref, 0.3), rel=1e-4)


def test_model_from_config():
    m = model_from_config({"variant": "riesz", "beta": 0.5, "dimension": 1})
    assert isinstance(m, Riesz) and m.beta == 0.5
    with pytest.raises(DomainError):
        model_from_config({"variant": "nope"})
