import numpy as np
import pytest

from shelab.correlation import GaussianKernel, Riesz, WhiteNoise
from shelab.kernels import LatticeGrid
from shelab.noise import (LANES, StackedNoise, SynthesisError, coarsen, dump, load, smooth_gepsilon,
                          spectral_weights, synthesize)


def test_replica_noise_independent_of_batch_composition():
    g = LatticeGrid(1, 4.0, 64)
    a = synthesize(Riesz(0.5, 1), g, 1e-3, 3, seed=7, replica=[5, 70, 130])
    b = synthesize(Riesz(0.5, 1), g, 1e-3, 3, seed=7, replica=[130])
    assert np.array_equal(a.slice(2)[2], b.slice(2)[0])
    assert np.array_equal(a.slice(1), a.slice(1))
    assert not np.array_equal(a.slice(0)[0], a.slice(1)[0])


def test_seed_changes_noise():
    g = LatticeGrid(1, 4.0, 32)
    a = synthesize(WhiteNoise(1), g, 1e-3, 1, seed=1).slice(0)
    b = synthesize(WhiteNoise(1), g, 1e-3, 1, seed=2).slice(0)
    assert not np.array_equal(a, b)


@pytest.mark.parametrize("model", [WhiteNoise(1), Riesz(0.5, 1), GaussianKernel(1.0, 1)], ids=repr)
def test_empirical_covariance_matches_lattice_covariance(model):
    g = LatticeGrid(1, 4.0, 32)
    dt = 1e-2
    real = synthesize(model, g, dt, 1, seed=3, replica=np.arange(20 * LANES))
    x = real.slice(0)
    emp = np.mean(x * x[:, :1], axis=0)
    c = dt * model.lattice_covariance(g)
    # 1280 samples per lag: standard error about c[0] / sqrt(1280) * sqrt(2)
    assert np.max(np.abs(emp - c)) < 5 * np.sqrt(2 / x.shape[0]) * c[0]
    assert real.per_node_variance() == pytest.approx(c[0], rel=1e-10)


def test_gaussian_2d_weights_clip_only_roundoff():
    g = LatticeGrid(2, 2.0, 16)
    w, n = spectral_weights(GaussianKernel(0.5, 2), g, 1e-3)
    assert np.all(w >= 0)
    assert n == 0


def test_clip_disallowed_raises_when_negative(monkeypatch):
    g = LatticeGrid(1, 4.0, 16)
    model = Riesz(0.5, 1)
    bad = model.lattice_covariance(g).copy()
    bad[1] = bad[0] * 2
    monkeypatch.setattr(model, "lattice_covariance", lambda grid: bad)
    with pytest.raises(SynthesisError):
        spectral_weights(model, g, 1e-3, allow_clip=False)
    assert spectral_weights(model, g, 1e-3)[1] > 0


def test_stacked_copies_share_normals():
    g = LatticeGrid(1, 4.0, 64)
    base = synthesize(Riesz(0.5, 1), g, 1e-3, 2, seed=4, replica=range(3))
    st = StackedNoise([base, smooth_gepsilon(base, 0.01)])
    s = st.slice(1)
    assert np.allclose(s[0], base.slice(1))
    assert np.allclose(s[1], smooth_gepsilon(base, 0.01).slice(1))
    assert np.var(s[1]) < np.var(s[0])


def test_coarsen_sums_time_and_averages_space():
    g = LatticeGrid(1, 4.0, 64)
    fine = synthesize(WhiteNoise(1), g, 1e-3, 4, seed=5)
    c = coarsen(fine)
    manual = (fine.slice(2) + fine.slice(3)).reshape(1, 32, 2).mean(axis=-1)
    assert np.allclose(c.slice(1), manual)
    assert c.dt == 2e-3 and c.grid.N == 32


def test_dump_and_replay_round_trip(tmp_path):
    g = LatticeGrid(1, 4.0, 32)
    real = synthesize(Riesz(0.5, 1), g, 1e-3, 5, seed=6, replica=[0, 1])
    path = tmp_path / "noise.bin"
    dump(real, path)
    rep = load(path)
    assert rep.fingerprint() == real.fingerprint()
    for a, b in zip(real.slices(), rep.slices()):
        assert np.array_equal(a, b)
