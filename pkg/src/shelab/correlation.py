"""Spatial correlation models ``f`` and their spectral densities ``f_hat``.

Conventions: ``f_hat(xi) = int exp(-i xi.x) f(x) dx`` and
``f(x) = (2 pi)^(-d) int exp(i xi.x) f_hat(xi) d xi``.  Every model is
isotropic, so spectral quantities are radial integrals
``int F(|xi|) d xi = |S^{d-1}| int_0^inf F(r) r^(d-1) dr``.
"""

import math

import numpy as np
from scipy import integrate, special

from ._validation import DomainError, check_dimension, check_positive
from .kernels import heat_kernel

__all__ = [
    "CorrelationModel",
    "WhiteNoise",
    "Riesz",
    "GaussianKernel",
    "TabulatedSpectral",
    "MollifiedCorrelation",
    "TriangleMollifier",
    "TabulatedMollifier",
    "riesz_constant",
    "upsilon",
    "dalang_alpha",
    "k_of_t",
    "mollified_correlation",
    "triangle_mollifier_eval",
    "model_from_config",
]

_QUAD = dict(epsabs=1e-13, epsrel=1e-11, limit=400)


def _sphere_area(d):
    return 2.0 if d == 1 else 2.0 * np.pi


class ValidationError(ValueError):
    pass


def _split_radial(fun, singular_exponent=None):
    """``int_0^inf fun(r) dr`` split at r = 1.

    When ``fun(r) ~ r^(q-1)`` near 0 with ``0 < q < 1`` the inner piece is
    computed after ``r = u^(1/q)`` which removes the singularity; the outer
    piece uses ``r = 1/v``.
    """
    if singular_exponent is not None and singular_exponent < 1:
        q = singular_exponent
        inner = integrate.quad(
            lambda u: fun(u ** (1.0 / q)) * u ** (1.0 / q - 1.0) / q, 0.0, 1.0, **_QUAD)[0]
    else:
        inner = integrate.quad(fun, 0.0, 1.0, **_QUAD)[0]
    outer = integrate.quad(lambda v: fun(1.0 / v) / (v * v) if v > 0 else 0.0,
                           0.0, 1.0, **_QUAD)[0]
    return inner + outer


class CorrelationModel:
    """Base class: an isotropic correlation f on R^d with spectral density f_hat."""

    name = "abstract"
    # (c, a) when k(t) = c t^(-a) exactly, else None
    k_power = None

    def __init__(self, d):
        self.d = check_dimension(d)

    # -- spectral side --------------------------------------------------
    def spectral_density(self, r):
        raise NotImplementedError

    def spectral_singularity(self):
        """Exponent q with ``f_hat(r) r^(d-1) ~ r^(q-1)`` at 0, or None if bounded."""
        return None

    def radial_integral(self, weight, rule="substitution"):
        """``(2 pi)^(-d) int f_hat(xi) weight(|xi|) d xi``.

        ``rule="alg"`` uses QUADPACK's algebraic-endpoint rule on [0, 1] and
        the infinite-interval rule beyond, independently of the substitution path.
        """
        d = self.d
        fun = lambda r: self.spectral_density(r) * weight(r) * r ** (d - 1)
        if rule == "substitution":
            total = _split_radial(fun, self.spectral_singularity())
        elif rule == "alg":
            q = self.spectral_singularity()
            if q is None:
                inner = integrate.quad(fun, 0.0, 1.0, **_QUAD)[0]
            else:
                smooth = lambda r: fun(r) / r ** (q - 1.0) if r > 0 else fun(1e-300) * 1e-300 ** (1.0 - q)
                inner = integrate.quad(smooth, 0.0, 1.0, weight="alg", wvar=(q - 1.0, 0.0), **_QUAD)[0]
            total = inner + integrate.quad(fun, 1.0, np.inf, **_QUAD)[0]
        else:
            raise ValueError(f"unknown rule {rule!r}")
        return _sphere_area(d) * total / (2.0 * np.pi) ** d

    # -- real side -------------------------------------------------------
    def correlation(self, x):
        raise NotImplementedError

    def correlation_radial(self, r):
        return self.correlation(r if self.d == 1 else np.stack([r, 0 * r], axis=-1))

    def params(self):
        return {"variant": self.name, "dimension": self.d}

    def __repr__(self):
        items = ", ".join(f"{k}={v!r}" for k, v in self.params().items() if k != "variant")
        return f"{type(self).__name__}({items})"

    def __eq__(self, other):
        return type(self) is type(other) and self.params() == other.params()

    def __hash__(self):
        return hash(tuple(sorted((k, str(v)) for k, v in self.params().items())))

    # -- derived functionals ---------------------------------------------
    def k(self, t):
        return k_of_t(self, t)

    def upsilon(self, beta):
        return upsilon(self, beta)

    def dalang_alpha(self):
        return dalang_alpha(self)

    def lattice_covariance(self, grid):
        """Covariance of cell averages at minimum-image lattice displacements.

        Returns an array of grid shape in FFT order (entry 0 is the variance).
        """
        raise NotImplementedError


def riesz_constant(d, beta):
    """``c_{d,beta}`` with ``F[|x|^(-beta)] = c |xi|^(beta-d)``."""
    return (2.0 ** (d - beta) * np.pi ** (d / 2.0) * special.gamma((d - beta) / 2.0)
            / special.gamma(beta / 2.0))


def _triangle_rule(n=12):
    """Gauss-Legendre nodes/weights for ``int_{-1}^{1} (1-|u|) g(u) du``, split at 0."""
    x, w = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * w * (1.0 - u)
    return np.concatenate([-u, u]), np.concatenate([wu, wu])


def _singular_triangle_rule(n=32, levels=24):
    """Triangle-weighted rule graded geometrically toward u = 0."""
    x, wl = np.polynomial.legendre.leggauss(n)
    edges = np.concatenate([[0.0], np.geomspace(1e-7, 1.0, levels)])
    us, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        s = a + (b - a) * 0.5 * (x + 1.0)
        wt = (b - a) * 0.5 * wl * (1.0 - s)
        us += [s, -s]
        ws += [wt, wt]
    return np.concatenate(us), np.concatenate(ws)


def _cell_average_1d(radial_f, offsets, dx, period, images, rule):
    u, w = rule
    out = np.zeros(offsets.shape)
    for m in range(-images, images + 1):
        z = np.abs(offsets[:, None] + m * period + dx * u[None, :])
        out += radial_f(z) @ w
    return out


def _cell_average_covariance(radial_f, grid, images, singular=False):
    """Covariance of cell averages: f averaged against a triangle of half-width dx per axis.

    ``images`` counts periodic images on each side; 0 means minimum image.
    """
    o, dx, period = grid.offsets(), grid.dx, 2.0 * grid.L
    if grid.d == 1:
        rule = _singular_triangle_rule() if singular else _triangle_rule()
        return _cell_average_1d(radial_f, o, dx, period, images, rule)
    u, w = _triangle_rule()
    out = np.zeros(grid.shape)
    shifts = [m * period for m in range(-images, images + 1)]
    for s1 in shifts:
        for s2 in shifts:
            a = o[:, None] + s1 + dx * u[None, :]
            b = o[:, None] + s2 + dx * u[None, :]
            for ua, wa in zip(a.T, w):
                r = np.sqrt(ua[:, None, None] ** 2 + b[None, :, :] ** 2)
                out += wa * (radial_f(r) @ w)
    if singular:
        us, ws = _singular_triangle_rule(16, 16)
        for i in (-1, 0, 1):
            for j in (-1, 0, 1):
                a = i * dx + dx * us
                b = j * dx + dx * us
                r = np.sqrt(a[:, None] ** 2 + b[None, :] ** 2)
                out[i, j] = ws @ radial_f(r) @ ws
    return out


class WhiteNoise(CorrelationModel):
    """``f = delta_0`` in d = 1 (space-time white noise)."""

    name = "white"
    k_power = (1.0 / np.sqrt(2.0 * np.pi), 0.5)

    def __init__(self, d=1):
        super().__init__(d)
        if self.d != 1:
            raise ValidationError("white noise only yields a random-field solution in d = 1")

    def spectral_density(self, r):
        return np.ones_like(np.asarray(r, dtype=float))

    def correlation(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x == 0, np.inf, 0.0)

    def lattice_covariance(self, grid):
        out = np.zeros(grid.N)
        out[0] = 1.0 / grid.dx
        return out


class Riesz(CorrelationModel):
    """Riesz kernel ``f(x) = |x|^(-beta)``, ``0 < beta < min(2, d)``."""

    name = "riesz"

    def __init__(self, beta, d=1):
        super().__init__(d)
        if not 0 < beta < min(2, self.d):
            raise ValidationError(f"Riesz exponent must lie in (0, {min(2, self.d)}), got {beta}")
        self.beta = float(beta)
        self.constant = riesz_constant(self.d, self.beta)
        # E|sqrt(t) Z|^(-beta) for a standard Gaussian Z in R^d
        c = 2.0 ** (-self.beta / 2.0) * special.gamma((self.d - self.beta) / 2.0) / special.gamma(self.d / 2.0)
        self.k_power = (c, self.beta / 2.0)

    def params(self):
        return {"variant": self.name, "dimension": self.d, "beta": self.beta}

    def spectral_density(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return self.constant * r ** (self.beta - self.d)

    def spectral_singularity(self):
        return self.beta

    def correlation(self, x):
        r2 = x * x if self.d == 1 else np.sum(np.asarray(x) ** 2, axis=-1)
        with np.errstate(divide="ignore"):
            return np.asarray(r2, dtype=float) ** (-self.beta / 2.0)

    def lattice_covariance(self, grid):
        # minimum image: the row sum stays finite on the torus
        f = lambda r: r ** (-self.beta)
        return _cell_average_covariance(f, grid, images=0, singular=True)


class GaussianKernel(CorrelationModel):
    """``f(x) = exp(-|x|^2 / (2 ell^2))``."""

    name = "gaussian"

    def __init__(self, ell=1.0, d=1):
        super().__init__(d)
        self.ell = check_positive(ell, "ell")

    def params(self):
        return {"variant": self.name, "dimension": self.d, "ell": self.ell}

    def spectral_density(self, r):
        r = np.asarray(r, dtype=float)
        return (2.0 * np.pi * self.ell ** 2) ** (self.d / 2.0) * np.exp(-0.5 * (self.ell * r) ** 2)

    def correlation(self, x):
        r2 = x * x if self.d == 1 else np.sum(np.asarray(x) ** 2, axis=-1)
        return np.exp(-np.asarray(r2, dtype=float) / (2.0 * self.ell ** 2))

    def lattice_covariance(self, grid):
        images = int(math.ceil(8.0 * self.ell / (2.0 * grid.L)))
        f = lambda r: np.exp(-r * r / (2.0 * self.ell ** 2))
        # separable: product of one-axis averages
        c1 = _cell_average_1d(f, grid.offsets(), grid.dx, 2.0 * grid.L, images, _triangle_rule())
        return c1 if grid.d == 1 else c1[:, None] * c1[None, :]


class TabulatedSpectral(CorrelationModel):
    """Spectral density given as a table ``(xi, f_hat)`` of radial values.

    Interpolation is linear in log-log coordinates; beyond the last node a
    power tail fitted to the last quarter of the table is used, and below the
    first node the density is held constant.
    """

    name = "tabulated"

    def __init__(self, xi, fhat, d=1, table_path=None):
        super().__init__(d)
        xi = np.asarray(xi, dtype=float)
        fhat = np.asarray(fhat, dtype=float)
        if xi.ndim != 1 or xi.shape != fhat.shape or xi.size < 4:
            raise ValidationError("table needs at least four (xi, f_hat) rows")
        if np.any(np.diff(xi) <= 0) or xi[0] < 0:
            raise ValidationError("xi must be nonnegative and strictly increasing")
        if np.any(fhat <= 0) or not np.all(np.isfinite(fhat)):
            raise ValidationError("tabulated f_hat must be positive and finite")
        self.xi, self.fhat = xi, fhat
        self.table_path = table_path
        pos = xi > 0
        self._lx = np.log(xi[pos])
        self._lf = np.log(fhat[pos])
        k = max(2, len(self._lx) // 4)
        slope, icept = np.polyfit(self._lx[-k:], self._lf[-k:], 1)
        self.tail_exponent = -slope
        self._tail = (slope, icept)

    @classmethod
    def from_file(cls, path, d=1):
        data = np.loadtxt(path, ndmin=2)
        if data.shape[1] != 2:
            raise ValidationError(f"{path}: expected two columns (xi, fhat)")
        return cls(data[:, 0], data[:, 1], d=d, table_path=str(path))

    def params(self):
        p = {"variant": self.name, "dimension": self.d}
        if self.table_path:
            p["table_path"] = self.table_path
        else:
            p["table"] = [self.xi.tolist(), self.fhat.tolist()]
        return p

    def spectral_density(self, r):
        r = np.asarray(r, dtype=float)
        lr = np.log(np.clip(r, self.xi[self.xi > 0][0], None))
        inside = np.exp(np.interp(lr, self._lx, self._lf))
        slope, icept = self._tail
        with np.errstate(over="ignore"):
            tail = np.exp(icept + slope * np.log(np.maximum(r, 1e-300)))
        return np.where(r > self.xi[-1], tail, inside)

    def correlation(self, x):
        x = np.abs(np.atleast_1d(np.asarray(x, dtype=float)))
        if self.d != 1:
            raise NotImplementedError("real-space tabulated correlation is available in d = 1")
        out = [integrate.quad(self.spectral_density, 0, np.inf, weight="cos", wvar=xv)[0] / np.pi
               if xv > 0 else self.radial_integral(lambda r: 1.0) for xv in x]
        return np.array(out)

    def lattice_covariance(self, grid):
        return _spectral_lattice_covariance(self, grid)


def _spectral_lattice_covariance(model, grid, aliases=8):
    """Cell-averaged lattice covariance built from the spectral density.

    Circulant eigenvalue at lattice mode ``xi_k`` is
    ``dx^-d sum_m f_hat(xi_k + 2 pi m / dx) prod sinc^2``; the row follows by FFT.
    """
    k = grid.wavenumbers()
    shifts = 2.0 * np.pi / grid.dx * np.arange(-aliases, aliases + 1)
    if grid.d == 1:
        kk = k[:, None] + shifts[None, :]
        sinc2 = np.sinc(kk * grid.dx / (2.0 * np.pi)) ** 2
        lam = np.sum(model.spectral_density(np.abs(kk)) * sinc2, axis=1) / grid.dx
        return np.fft.ifft(lam).real
    k1 = k[:, None] + shifts[None, :]
    s1 = np.sinc(k1 * grid.dx / (2.0 * np.pi)) ** 2
    r = np.sqrt(k1[:, None, :, None] ** 2 + k1[None, :, None, :] ** 2)
    vals = model.spectral_density(r) * s1[:, None, :, None] * s1[None, :, None, :]
    lam = vals.sum(axis=(2, 3)) / grid.dx ** 2
    return np.fft.ifft2(lam).real


class MollifiedCorrelation(CorrelationModel):
    """Correlation ``phi_eps^{*power} * f`` with spectral density ``f_hat phi_hat_eps^power``."""

    name = "mollified"

    def __init__(self, base, mollifier, power=2):
        super().__init__(base.d)
        if mollifier.d != base.d:
            raise ValidationError("mollifier and model dimensions differ")
        self.base, self.mollifier, self.power = base, mollifier, int(power)

    def params(self):
        return {"variant": self.name, "base": self.base.params(),
                "mollifier": self.mollifier.params(), "power": self.power}

    def spectral_density(self, r):
        r = np.asarray(r, dtype=float)
        return self.base.spectral_density(r) * self.mollifier.radial_hat(r) ** self.power

    def spectral_singularity(self):
        return self.base.spectral_singularity()

    def radial_integral(self, weight, rule="substitution"):
        if self.d == 1 or not isinstance(self.mollifier, TriangleMollifier):
            return super().radial_integral(weight, rule)
        # product-form mollifier is not isotropic: average phi_hat over angles
        th, wth = np.polynomial.legendre.leggauss(64)
        th = 0.25 * np.pi * (th + 1.0)
        wth = 0.25 * np.pi * wth
        def angular(r):
            xi = np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)
            return 4.0 * (wth @ self.mollifier.hat(xi) ** self.power)
        fun = lambda r: self.base.spectral_density(r) * weight(r) * r * angular(r)
        total = _split_radial(fun, self.spectral_singularity())
        return total / (2.0 * np.pi) ** 2

    def lattice_covariance(self, grid):
        raise NotImplementedError("mollified noise is produced from a base realization")


class TriangleMollifier:
    """``phi(x) = prod (1 - |x_i|)_+`` rescaled as ``phi_eps(x) = eps^-d phi(x / eps)``."""

    def __init__(self, eps, d=1):
        self.eps = check_positive(eps, "eps")
        self.d = check_dimension(d)

    def params(self):
        return {"shape": "triangle", "eps": self.eps, "dimension": self.d}

    def phi(self, x):
        return triangle_mollifier_eval(np.asarray(x) / self.eps, None, self.d)[0] / self.eps ** self.d

    def hat(self, xi):
        """phi_hat_eps(xi) = phi_hat(eps xi); for d > 1 the last axis holds the components."""
        return triangle_mollifier_eval(None, np.asarray(xi) * self.eps, self.d)[1]

    def radial_hat(self, r):
        # along a coordinate axis; used for radial spectral integrals in d = 1
        r = np.asarray(r, dtype=float)
        if self.d == 1:
            return self.hat(r)
        return self.hat(np.stack([r, np.zeros_like(r)], axis=-1))

    def lattice_hat(self, grid):
        """phi_hat_eps on the rfft half-lattice of ``grid`` (product form)."""
        k = grid.wavenumbers()
        h1 = triangle_mollifier_eval(None, k * self.eps, 1)[1]
        if grid.d == 1:
            return h1[: grid.N // 2 + 1]
        return h1[:, None] * h1[None, : grid.N // 2 + 1]


class TabulatedMollifier:
    """Mollifier given through a tabulated, radially interpolated ``phi_hat``."""

    def __init__(self, xi, phi_hat, eps, d=1):
        self.eps = check_positive(eps, "eps")
        self.d = check_dimension(d)
        xi = np.asarray(xi, dtype=float)
        phi_hat = np.asarray(phi_hat, dtype=float)
        if np.any(phi_hat < 0):
            raise ValidationError("mollifier is not nonnegative definite: phi_hat < 0")
        if xi[0] != 0 or not np.isclose(phi_hat[0], 1.0):
            raise ValidationError("phi_hat(0) must equal 1 (unit mass)")
        self.xi, self.phi_hat = xi, phi_hat

    def params(self):
        return {"shape": "tabulated", "eps": self.eps, "dimension": self.d}

    def radial_hat(self, r):
        return np.interp(np.asarray(r) * self.eps, self.xi, self.phi_hat, right=0.0)

    def lattice_hat(self, grid):
        return self.radial_hat(grid.radial_wavenumbers())


def triangle_mollifier_eval(x, xi, d=1):
    """Triangle mollifier ``phi(x)`` and its transform ``phi_hat(xi)``.

    ``phi_hat(xi) = prod 2 (1 - cos xi_j) / xi_j^2`` with the removable
    singularity filled in, so ``phi_hat(0) = 1``.  Either argument may be None.
    """
    phi = phi_hat = None
    if x is not None:
        x = np.asarray(x, dtype=float)
        one = np.clip(1.0 - np.abs(x), 0.0, None)
        phi = one if d == 1 else np.prod(one, axis=-1)
    if xi is not None:
        xi = np.asarray(xi, dtype=float)
        # 2(1 - cos u)/u^2 = sinc(u / 2 pi)^2 with numpy's normalized sinc
        one = np.sinc(xi / (2.0 * np.pi)) ** 2
        phi_hat = one if d == 1 else np.prod(one, axis=-1)
    return phi, phi_hat


def upsilon(model, beta, rule="substitution"):
    """``Upsilon(beta) = (2 pi)^-d int f_hat(xi) / (beta + |xi|^2) d xi``."""
    beta = check_positive(beta, "beta")
    if isinstance(model, WhiteNoise) and rule == "closed":
        return upsilon_closed_form(model, beta)
    return model.radial_integral(lambda r: 1.0 / (beta + r * r), rule)


def upsilon_closed_form(model, beta):
    """Closed form of Upsilon for the power-law families (white, Riesz)."""
    if isinstance(model, WhiteNoise):
        return 0.5 / np.sqrt(beta)
    if isinstance(model, Riesz):
        d, b = model.d, model.beta
        # int_0^inf r^(b-1) / (beta + r^2) dr = beta^(b/2 - 1) pi / (2 sin(pi b / 2))
        radial = beta ** (b / 2.0 - 1.0) * np.pi / (2.0 * np.sin(np.pi * b / 2.0))
        return _sphere_area(d) * model.constant * radial / (2.0 * np.pi) ** d
    raise NotImplementedError(type(model).__name__)


def dalang_alpha(model):
    """Supremal ``alpha`` in (0, 1] with ``int (1+|xi|^2)^(alpha-1) f_hat < inf``."""
    if isinstance(model, WhiteNoise):
        return 0.5
    if isinstance(model, Riesz):
        return 1.0 - model.beta / 2.0
    if isinstance(model, GaussianKernel):
        return 1.0
    if isinstance(model, TabulatedSpectral):
        # f_hat ~ r^(-q): finite iff 2(alpha - 1) - q + d < 0
        alpha = 1.0 - (model.d - model.tail_exponent) / 2.0
        return float(np.clip(alpha, np.finfo(float).tiny, 1.0))
    if isinstance(model, MollifiedCorrelation):
        return 1.0
    raise NotImplementedError(type(model).__name__)


def k_of_t(model, t, method="auto"):
    """``k(t) = int f(z) G(t, z) dz = (2 pi)^-d int f_hat(xi) exp(-t |xi|^2 / 2) d xi``.

    ``method`` selects ``"closed"`` (power-law and Gaussian families),
    ``"spectral"`` or ``"real"`` quadrature; ``"auto"`` prefers closed forms.
    """
    t = check_positive(t, "t")
    if method == "auto":
        method = "closed" if isinstance(model, (WhiteNoise, Riesz, GaussianKernel)) else "spectral"
    if method == "closed":
        if model.k_power is not None:
            c, a = model.k_power
            return c * t ** (-a)
        if isinstance(model, GaussianKernel):
            l2 = model.ell ** 2
            return (l2 / (t + l2)) ** (model.d / 2.0)
        raise NotImplementedError(f"no closed form of k for {model!r}")
    if method == "spectral":
        return model.radial_integral(lambda r: np.exp(-0.5 * t * r * r))
    if method == "real":
        return _k_real_space(model, t)
    raise ValueError(f"unknown method {method!r}")


def _k_real_space(model, t):
    d = model.d
    if isinstance(model, WhiteNoise):
        return float(heat_kernel(t, 0.0, 1))
    g = lambda r: model.correlation_radial(np.atleast_1d(r))[0] * float(
        heat_kernel(t, r if d == 1 else np.array([r, 0.0]), d)) * r ** (d - 1)
    sing = d - model.beta if isinstance(model, Riesz) else None
    scale = np.sqrt(t)
    total = _split_radial(lambda s: g(s * scale) * scale, sing)
    return _sphere_area(d) * total


def mollified_correlation(model, mollifier):
    """The pair ``(f^eps, f^{eps,eps})`` as correlation models with spectral
    densities ``f_hat phi_hat_eps`` and ``f_hat phi_hat_eps^2``."""
    if isinstance(mollifier, TabulatedMollifier) and np.any(mollifier.phi_hat < 0):
        raise ValidationError("mollifier is not nonnegative definite")
    return MollifiedCorrelation(model, mollifier, 1), MollifiedCorrelation(model, mollifier, 2)


def model_from_config(block):
    """Build a model from a config mapping (keys: variant, beta, ell, table_path, dimension)."""
    variant = block["variant"]
    d = int(block.get("dimension", 1))
    if variant == "white":
        return WhiteNoise(d)
    if variant == "riesz":
        return Riesz(block["beta"], d)
    if variant == "gaussian":
        return GaussianKernel(block.get("ell", 1.0), d)
    if variant == "tabulated":
        return TabulatedSpectral.from_file(block["table_path"], d)
    raise DomainError(f"unknown correlation variant {variant!r}")
