"""Heat kernel, periodic semigroup convolutions and the jump-semigroup operators.

The continuum heat kernel ``G(t, x) = (2 pi t)^(-d/2) exp(-|x|^2 / 2t)`` is the
generator of everything else in the package.  On the lattice the torus
``[-L, L)^d`` replaces R^d and convolution with ``G(t, .)`` is carried out
spectrally with the transfer function of the periodized, grid-sampled kernel.
Sampling the kernel (instead of using the bare symbol ``exp(-t|xi|^2/2)``)
keeps the discrete operator positivity preserving for every ``t``, which the
comparison experiments rely on.
"""

from dataclasses import dataclass, field
from functools import lru_cache
import math
from typing import NamedTuple

import numpy as np
from scipy import fft, special, stats

from ._validation import (
    DomainError,
    ShapeError,
    check_dimension,
    check_field,
    check_positive,
    squared_norm,
)

__all__ = [
    "LatticeGrid",
    "FieldState",
    "KernelQuery",
    "heat_kernel",
    "semigroup_apply",
    "g_weight",
    "poisson_weights",
    "r_epsilon_density",
    "jump_semigroup_apply",
    "delta_epsilon_apply",
]


class PoleError(DomainError):
    """Evaluation at a point where the function has a pole."""


@dataclass(frozen=True)
class LatticeGrid:
    """Periodic lattice on the torus ``[-L, L)^d`` with ``N`` points per axis."""

    d: int
    L: float
    N: int
    periodic: bool = field(default=True, repr=False)

    def __post_init__(self):
        check_dimension(self.d)
        check_positive(self.L, "L")
        if not isinstance(self.N, (int, np.integer)) or self.N < 8 or self.N & (self.N - 1):
            raise DomainError(f"N must be a power of two >= 8, got {self.N!r}")
        if not self.periodic:
            raise DomainError("only periodic lattices are supported")
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "N", int(self.N))

    @property
    def dx(self):
        return 2.0 * self.L / self.N

    @property
    def shape(self):
        return (self.N,) * self.d

    @property
    def cell_volume(self):
        return self.dx ** self.d

    @property
    def n_cells(self):
        return self.N ** self.d

    @property
    def axis(self):
        """Node coordinates along one axis, ``-L + j dx``."""
        return -self.L + self.dx * np.arange(self.N)

    def nodes(self):
        """Node coordinates; shape ``(N,)`` for d=1, ``(N, N, 2)`` for d=2."""
        if self.d == 1:
            return self.axis
        return np.stack(np.meshgrid(self.axis, self.axis, indexing="ij"), axis=-1)

    def offsets(self):
        """Minimum-image displacement of each node from the origin node, in FFT order."""
        j = np.arange(self.N)
        return self.dx * np.where(j < self.N // 2, j, j - self.N)

    def wavenumbers(self):
        """Angular wavenumbers ``2 pi k / 2L`` in FFT order."""
        return 2.0 * np.pi * fft.fftfreq(self.N, d=self.dx)

    def origin_index(self):
        return (self.N // 2,) * self.d

    def index_of(self, x):
        """Nearest node index along one axis, ties broken toward +infinity."""
        return int(math.floor((x + self.L) / self.dx + 0.5))

    def fft_axes(self):
        return tuple(range(-self.d, 0))

    def rfft(self, values):
        return fft.rfftn(values, axes=self.fft_axes())

    def irfft(self, spectrum):
        return fft.irfftn(spectrum, s=self.shape, axes=self.fft_axes())

    def spectral_shape(self):
        return self.shape[:-1] + (self.N // 2 + 1,)

    def radial_wavenumbers(self):
        """|xi| on the rfft half-lattice."""
        k = self.wavenumbers()
        kr = np.abs(k[: self.N // 2 + 1])
        if self.d == 1:
            return kr
        return np.sqrt(k[:, None] ** 2 + kr[None, :] ** 2)


@dataclass
class FieldState:
    """Node values on a lattice at a time index.

    ``values`` may carry leading batch axes (replicas, coupled copies); the
    trailing ``d`` axes always match the grid.
    """

    grid: LatticeGrid
    values: np.ndarray
    time_index: int = 0
    replica: object = 0

    def __post_init__(self):
        self.values = check_field(self.values, self.grid)

    def mass(self):
        axes = self.grid.fft_axes()
        return np.sum(self.values, axis=axes) * self.grid.cell_volume

    def with_values(self, values, time_index=None):
        return FieldState(self.grid, values,
                          self.time_index if time_index is None else time_index,
                          self.replica)


class KernelQuery(NamedTuple):
    t: float
    x: object
    d: int = 1

    def evaluate(self):
        return heat_kernel(self.t, self.x, self.d)


def heat_kernel(t, x, d=1):
    """Gaussian heat kernel ``(2 pi t)^(-d/2) exp(-|x|^2 / (2t))``.

    For ``d > 1`` the coordinates of ``x`` run along its last axis.
    """
    if isinstance(t, KernelQuery):
        t, x, d = t
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("heat kernel needs t > 0")
    r2 = squared_norm(x, d)
    return (2.0 * np.pi * t) ** (-d / 2.0) * np.exp(-r2 / (2.0 * t))


def _sampled_kernel_1d(grid, t):
    """Normalized periodized samples of G(t, .) along one axis, FFT order."""
    o = grid.offsets()
    period = 2.0 * grid.L
    n_img = int(math.ceil(8.0 * math.sqrt(t) / period)) + 1
    w = np.zeros(grid.N)
    for m in range(-n_img, n_img + 1):
        w += np.exp(-((o + m * period) ** 2) / (2.0 * t))
    return w / w.sum()


@lru_cache(maxsize=256)
def _transfer(grid, t):
    if t == 0.0:
        return np.ones(grid.spectral_shape())
    full = fft.fft(_sampled_kernel_1d(grid, t)).real
    half = full[: grid.N // 2 + 1]
    if grid.d == 1:
        out = half
    else:
        out = full[:, None] * half[None, :]
    out.setflags(write=False)
    return out


def heat_transfer(grid, t):
    """Spectral multiplier (rfft layout) of the lattice heat semigroup at time t."""
    return _transfer(grid, float(check_positive(t, "t", strict=False)))


def _unpack(field_or_values, grid):
    if isinstance(field_or_values, FieldState):
        if grid is not None and grid != field_or_values.grid:
            raise ShapeError("field lives on a different grid")
        return field_or_values, field_or_values.grid, field_or_values.values
    if grid is None:
        raise ShapeError("a grid is required for raw arrays")
    return None, grid, check_field(field_or_values, grid)


def _repack(state, values):
    return values if state is None else state.with_values(values)


def semigroup_apply(field, t, grid=None):
    """Convolve a lattice field with the periodized heat kernel ``G(t, .)``.

    Accepts a :class:`FieldState` or a raw array (then ``grid`` is required)
    and returns the same kind of object.  ``t = 0`` is the identity.
    """
    state, grid, u = _unpack(field, grid)
    t = check_positive(t, "t", strict=False)
    if t == 0.0:
        return _repack(state, u.copy())
    out = grid.irfft(grid.rfft(u) * _transfer(grid, t))
    return _repack(state, out)


def g_weight(t, r, d=1):
    """Time-integrated heat kernel ``g(t, r) = int_0^t G(s, r e_1) ds``.

    Uses the incomplete-gamma representation; finite at ``r = 0`` only for d=1.
    """
    t = check_positive(t, "t")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("radius must be >= 0")
    a = r * r / (2.0 * t)
    if d == 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            # Gamma(-1/2, a) = 2 (a^(-1/2) e^(-a) - sqrt(pi) erfc(sqrt(a)))
            inc = 2.0 * (np.exp(-a) / np.sqrt(a) - np.sqrt(np.pi) * special.erfc(np.sqrt(a)))
            val = r * inc / (2.0 * np.sqrt(np.pi))
        return np.where(r == 0, np.sqrt(2.0 * t / np.pi), val)
    if np.any(r == 0):
        raise PoleError(f"g(t, r) has a pole at r = 0 when d = {d}")
    if d == 2:
        return special.exp1(a) / (2.0 * np.pi)
    s = d / 2.0 - 1.0
    return r ** (2 - d) * special.gammaincc(s, a) * special.gamma(s) / (2.0 * np.pi ** (d / 2.0))


def poisson_weights(lam, tail_tol=1e-12, start=0):
    """Poisson(lam) masses ``p_start..p_n`` with ``n`` the first index whose
    cumulative mass reaches ``1 - tail_tol``."""
    n_max = max(int(stats.poisson.isf(tail_tol, lam)) + 1, start)
    n = np.arange(start, n_max + 1)
    return n, stats.poisson.pmf(n, lam)


def r_epsilon_density(t, x, eps, d=1, tail_tol=1e-12):
    """Density of the non-atomic part of the jump semigroup,
    ``R^eps(t, x) = e^(-t/eps) sum_{n>=1} (t/eps)^n / n! G(n eps, x)``."""
    eps = check_positive(eps, "eps")
    t = check_positive(t, "t", strict=False)
    r2 = squared_norm(x, d)
    if t == 0.0:
        return np.zeros_like(r2)
    n, p = poisson_weights(t / eps, tail_tol, start=1)
    s = (n * eps).reshape((-1,) + (1,) * r2.ndim)
    terms = (2.0 * np.pi * s) ** (-d / 2.0) * np.exp(-r2 / (2.0 * s))
    return np.tensordot(p, terms, axes=1)


def jump_semigroup_apply(field, t, eps, grid=None, tail_tol=1e-12):
    """Apply ``exp(t Delta^eps) = e^(-t/eps) I + R^eps(t)`` on the lattice."""
    state, grid, u = _unpack(field, grid)
    eps = check_positive(eps, "eps")
    t = check_positive(t, "t", strict=False)
    n, p = poisson_weights(t / eps, tail_tol, start=0)
    mult = sum(pk * _transfer(grid, float(nk * eps)) for nk, pk in zip(n, p))
    return _repack(state, grid.irfft(grid.rfft(u) * mult))


def delta_epsilon_apply(field, eps, grid=None):
    """Bounded jump generator ``Delta^eps u = (G(eps) u - u) / eps``."""
    state, grid, u = _unpack(field, grid)
    eps = check_positive(eps, "eps")
    smoothed = grid.irfft(grid.rfft(u) * _transfer(grid, eps))
    return _repack(state, (smoothed - u) / eps)
