"""Measure-valued initial data: finitely many atoms plus a bounded density."""

from dataclasses import dataclass, field
import math
from typing import NamedTuple

import numpy as np
from scipy import integrate, special

from ._validation import DomainError, check_dimension, check_points, check_positive, squared_norm
from .kernels import FieldState, heat_kernel

__all__ = [
    "InitialMeasure",
    "ConstantDensity",
    "BoxDensity",
    "TabulatedDensity",
    "FunctionDensity",
    "MollifiedDensity",
    "J0Result",
    "j0",
    "psi_eps",
    "truncate_mollify",
    "grid_project",
    "measure_from_config",
]

_HERMITE = {n: np.polynomial.hermite_e.hermegauss(n) for n in (48, 64)}


def _gauss_expect_2d(fun, t, x, n):
    """``E[fun(x + sqrt(t) Z)]`` for standard 2-D normal Z by tensor Gauss-Hermite."""
    z, w = _HERMITE[n]
    w = w / w.sum()
    zz = np.stack(np.meshgrid(z, z, indexing="ij"), axis=-1).reshape(-1, 2)
    ww = np.outer(w, w).ravel()
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    pts = x[:, None, :] + math.sqrt(t) * zz[None, :, :]
    return fun(pts) @ ww


class _Density:
    d = 1
    bound = math.inf

    def breakpoints(self):
        return ()

    def support(self):
        return (-math.inf, math.inf)

    def convolve(self, t, x):
        """``(rho * G(t))(x)`` and an absolute error estimate."""
        x = check_points(x, self.d)
        if self.d == 1:
            flat = np.atleast_1d(x).ravel()
            vals, errs = np.empty(flat.size), np.empty(flat.size)
            lo_s, hi_s = self.support()
            s = math.sqrt(t)
            for i, xi in enumerate(flat):
                lo, hi = max(lo_s, xi - 14 * s), min(hi_s, xi + 14 * s)
                if lo >= hi:
                    vals[i] = errs[i] = 0.0
                    continue
                pts = [p for p in self.breakpoints() if lo < p < hi]
                g = lambda y: self(y) * math.exp(-(xi - y) ** 2 / (2 * t)) / math.sqrt(2 * math.pi * t)
                vals[i], errs[i] = integrate.quad(g, lo, hi, points=pts or None, limit=200,
                                                  epsabs=1e-13, epsrel=1e-11)
            return vals.reshape(np.shape(x)), errs.reshape(np.shape(x))
        shape = np.shape(x)[:-1]
        a = _gauss_expect_2d(self, t, x, 64)
        b = _gauss_expect_2d(self, t, x, 48)
        return a.reshape(shape), np.abs(a - b).reshape(shape)

    def positive(self):
        return FunctionDensity(lambda y: np.maximum(self(y), 0.0), self.bound, self.d,
                               self.breakpoints(), self.support())

    def negative(self):
        return FunctionDensity(lambda y: np.maximum(-self(y), 0.0), self.bound, self.d,
                               self.breakpoints(), self.support())

    def absolute(self):
        return FunctionDensity(lambda y: np.abs(self(y)), self.bound, self.d,
                               self.breakpoints(), self.support())


@dataclass(frozen=True)
class ConstantDensity(_Density):
    c: float = 1.0
    d: int = 1

    def __post_init__(self):
        check_dimension(self.d)
        if not math.isfinite(self.c):
            raise DomainError("density must be bounded")

    @property
    def bound(self):
        return abs(self.c)

    def __call__(self, x):
        r2 = squared_norm(x, self.d)
        return np.full(np.shape(r2), float(self.c))

    def convolve(self, t, x):
        r2 = squared_norm(x, self.d)
        return np.full(np.shape(r2), float(self.c)), np.zeros(np.shape(r2))

    def positive(self):
        return ConstantDensity(max(self.c, 0.0), self.d)

    def negative(self):
        return ConstantDensity(max(-self.c, 0.0), self.d)

    def absolute(self):
        return ConstantDensity(abs(self.c), self.d)


@dataclass(frozen=True)
class BoxDensity(_Density):
    """``c`` times the indicator of the box ``prod [lo_i, hi_i]``."""

    c: float
    lo: tuple
    hi: tuple
    d: int = 1

    def __post_init__(self):
        check_dimension(self.d)
        lo, hi = tuple(np.atleast_1d(self.lo).astype(float)), tuple(np.atleast_1d(self.hi).astype(float))
        if len(lo) != self.d or len(hi) != self.d or any(a >= b for a, b in zip(lo, hi)):
            raise DomainError("box needs lo < hi on every axis")
        if not math.isfinite(self.c):
            raise DomainError("density must be bounded")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def bound(self):
        return abs(self.c)

    def breakpoints(self):
        return (self.lo[0], self.hi[0]) if self.d == 1 else ()

    def support(self):
        return (self.lo[0], self.hi[0]) if self.d == 1 else (-math.inf, math.inf)

    def _coords(self, x):
        x = check_points(x, self.d)
        return x[..., None] if self.d == 1 else x

    def __call__(self, x):
        xs = self._coords(x)
        inside = np.all((xs >= np.array(self.lo)) & (xs <= np.array(self.hi)), axis=-1)
        return self.c * inside.astype(float)

    def convolve(self, t, x):
        xs = self._coords(x)
        s = math.sqrt(2.0 * t)
        lo, hi = np.array(self.lo), np.array(self.hi)
        frac = 0.5 * (special.erf((hi - xs) / s) - special.erf((lo - xs) / s))
        val = self.c * np.prod(frac, axis=-1)
        return val, np.zeros_like(val)

    def positive(self):
        return BoxDensity(max(self.c, 0.0), self.lo, self.hi, self.d)

    def negative(self):
        return BoxDensity(max(-self.c, 0.0), self.lo, self.hi, self.d)

    def absolute(self):
        return BoxDensity(abs(self.c), self.lo, self.hi, self.d)


class TabulatedDensity(_Density):
    """Piecewise-linear density through ``(x_k, rho_k)`` (d = 1), zero outside the table."""

    def __init__(self, x, values):
        x, values = np.asarray(x, dtype=float), np.asarray(values, dtype=float)
        if x.ndim != 1 or x.shape != values.shape or x.size < 2 or np.any(np.diff(x) <= 0):
            raise DomainError("table needs strictly increasing x and matching values")
        if not np.all(np.isfinite(values)):
            raise DomainError("tabulated density must be bounded (finite values)")
        self.x, self.values, self.d = x, values, 1
        self.bound = float(np.max(np.abs(values)))

    @classmethod
    def from_file(cls, path):
        data = np.loadtxt(path, ndmin=2)
        return cls(data[:, 0], data[:, 1])

    def __call__(self, y):
        return np.interp(y, self.x, self.values, left=0.0, right=0.0)

    def breakpoints(self):
        return tuple(self.x) if self.x.size <= 100 else (self.x[0], self.x[-1])

    def support(self):
        return (self.x[0], self.x[-1])


class FunctionDensity(_Density):
    """A bounded density given as a vectorized callable."""

    def __init__(self, fun, bound, d=1, breakpoints=(), support=(-math.inf, math.inf)):
        self.fun, self.d = fun, check_dimension(d)
        self.bound = check_positive(bound, "bound", strict=False)
        self._bp, self._support = tuple(breakpoints), tuple(support)

    def __call__(self, y):
        return self.fun(y)

    def breakpoints(self):
        return self._bp

    def support(self):
        return self._support


def psi_eps(x, eps, d=1):
    """Cut-off ``psi_eps``: 1 on ``|x| <= 1/eps``, linear ramp to 0 on the next unit shell."""
    eps = check_positive(eps, "eps")
    r = np.sqrt(squared_norm(x, d))
    return np.clip(1.0 + 1.0 / eps - r, 0.0, 1.0)


class J0Result(NamedTuple):
    value: np.ndarray
    abs_value: np.ndarray
    error: np.ndarray


@dataclass(frozen=True)
class InitialMeasure:
    """Finite signed atoms plus an optional bounded density on R^d."""

    atoms: tuple = ()
    density: object = None
    d: int = 1

    def __post_init__(self):
        check_dimension(self.d)
        clean = []
        for loc, mass in self.atoms:
            loc = np.atleast_1d(np.asarray(loc, dtype=float))
            if loc.shape != (self.d,) or not np.all(np.isfinite(loc)) or not math.isfinite(mass):
                raise DomainError(f"bad atom ({loc!r}, {mass!r})")
            clean.append((tuple(loc), float(mass)))
        object.__setattr__(self, "atoms", tuple(clean))
        if self.density is not None:
            if self.density.d != self.d:
                raise DomainError("density dimension does not match the measure")
            if not math.isfinite(self.density.bound):
                raise DomainError("density must be bounded")

    @classmethod
    def dirac(cls, x=0.0, mass=1.0, d=1):
        return cls(((np.full(d, x) if np.ndim(x) == 0 else x, mass),), None, d)

    @classmethod
    def lebesgue(cls, c=1.0, d=1):
        return cls((), ConstantDensity(c, d), d)

    def _split(self, sign):
        atoms = tuple((x, abs(m)) for x, m in self.atoms if m * sign > 0)
        dens = None
        if self.density is not None:
            dens = self.density.positive() if sign > 0 else self.density.negative()
        return InitialMeasure(atoms, dens, self.d)

    def positive_part(self):
        return self._split(+1)

    def negative_part(self):
        return self._split(-1)

    def absolute(self):
        atoms = tuple((x, abs(m)) for x, m in self.atoms)
        dens = None if self.density is None else self.density.absolute()
        return InitialMeasure(atoms, dens, self.d)

    def is_nonnegative(self):
        if any(m < 0 for _, m in self.atoms):
            return False
        if self.density is None:
            return True
        if isinstance(self.density, (ConstantDensity, BoxDensity)):
            return self.density.c >= 0
        if isinstance(self.density, TabulatedDensity):
            return bool(np.all(self.density.values >= 0))
        if isinstance(self.density, MollifiedDensity):
            return self.density.source.is_nonnegative()
        return False


def _atoms_convolve(atoms, t, x, d, weight=None):
    x = check_points(x, d)
    total = np.zeros(np.shape(squared_norm(x, d)))
    for loc, m in atoms:
        w = 1.0 if weight is None else weight(loc)
        if w == 0.0:
            continue
        loc = np.asarray(loc) if d > 1 else loc[0]
        total = total + m * w * heat_kernel(t, x - loc, d)
    return total


def j0(mu, t, x):
    """``J_0(t, x) = (mu * G(t))(x)`` together with ``(|mu| * G(t))(x)``.

    Returns :class:`J0Result` with the quadrature error estimate of the density
    part (atoms are exact).
    """
    t = check_positive(t, "t")
    val = _atoms_convolve(mu.atoms, t, x, mu.d)
    absval = _atoms_convolve(tuple((p, abs(m)) for p, m in mu.atoms), t, x, mu.d)
    err = np.zeros_like(val)
    if mu.density is not None:
        dv, de = mu.density.convolve(t, x)
        val, err = val + dv, err + de
        if mu.is_nonnegative():
            av, ae = dv, de
        else:
            av, ae = mu.density.absolute().convolve(t, x)
        absval, err = absval + av, err + ae
    return J0Result(val, absval, err)


class MollifiedDensity(_Density):
    """Density ``x -> ((mu psi_eps) * G(eps))(x)`` of a truncated, smoothed measure."""

    def __init__(self, source, eps):
        self.source, self.eps, self.d = source, check_positive(eps, "eps"), source.d
        self._cut = _CutDensity(source.density, eps) if source.density is not None else None
        atom_mass = sum(abs(m) for _, m in source.atoms)
        dens_bound = 0.0 if source.density is None else source.density.bound
        self.bound = atom_mass * (2 * math.pi * eps) ** (-self.d / 2) + dens_bound

    def _eval(self, s, x):
        val = _atoms_convolve(self.source.atoms, s, x, self.d,
                              weight=lambda loc: float(psi_eps(np.asarray(loc) if self.d > 1 else loc[0],
                                                               self.eps, self.d)))
        err = np.zeros_like(val)
        if self._cut is not None:
            dv, de = self._cut.convolve(s, x)
            val, err = val + dv, err + de
        return val, err

    def __call__(self, x):
        return self._eval(self.eps, x)[0]

    def convolve(self, t, x):
        # the heat semigroup property: G(t) G(eps) = G(t + eps)
        return self._eval(t + self.eps, x)


class _CutDensity(_Density):
    def __init__(self, base, eps):
        self.base, self.eps, self.d = base, eps, base.d
        self.bound = base.bound
        R = 1.0 / eps
        self._bp = tuple(sorted(set(base.breakpoints()) | {-R - 1, -R, R, R + 1})) if self.d == 1 else ()
        lo, hi = base.support()
        self._support = (max(lo, -R - 1), min(hi, R + 1))

    def __call__(self, y):
        return self.base(y) * psi_eps(y, self.eps, self.d)

    def breakpoints(self):
        return self._bp

    def support(self):
        return self._support if self.d == 1 else (-math.inf, math.inf)


def truncate_mollify(mu, eps):
    """Truncate ``mu`` by ``psi_eps`` and smooth with ``G(eps)``; the result has a bounded density."""
    return InitialMeasure((), MollifiedDensity(mu, eps), mu.d)


def grid_project(mu, grid):
    """Project onto lattice nodes: atoms to the nearest node (mass / dx^d), densities sampled."""
    if grid.d != mu.d:
        raise DomainError("grid and measure dimensions differ")
    values = np.zeros(grid.shape)
    if mu.density is not None:
        nodes = grid.nodes()
        values += np.asarray(mu.density(nodes), dtype=float).reshape(grid.shape)
    for loc, m in mu.atoms:
        if any(not (-grid.L < c < grid.L) for c in loc):
            raise DomainError(f"atom at {loc} lies outside the lattice domain")
        idx = tuple(grid.index_of(c) % grid.N for c in loc)
        values[idx] += m / grid.cell_volume
    return FieldState(grid, values)


def _density_from_config(block, d):
    kind = block.get("kind", "constant")
    if kind == "constant":
        return ConstantDensity(float(block.get("c", 1.0)), d)
    if kind == "box":
        return BoxDensity(float(block.get("c", 1.0)), block["lo"], block["hi"], d)
    if kind == "table":
        if d != 1:
            raise DomainError("tabulated densities are supported in d = 1")
        return TabulatedDensity.from_file(block["path"])
    raise DomainError(f"unknown density kind {kind!r}")


def measure_from_config(block, d):
    """Build an :class:`InitialMeasure` from ``{atoms: [{x, mass}], density: {...}}``."""
    atoms = []
    for a in block.get("atoms", []) or []:
        atoms.append((np.atleast_1d(np.asarray(a["x"], dtype=float)), float(a.get("mass", 1.0))))
    dens = block.get("density")
    return InitialMeasure(tuple(atoms), None if dens is None else _density_from_config(dens, d), d)
