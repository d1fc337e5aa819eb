"""Numerical checks of the heat-kernel inequalities the solver relies on.

Each check sweeps a parameter family, evaluates both sides and, where the
inequality only holds up to an unnamed constant, fits that constant as the
worst ratio seen.  A fitted constant is called stable when it moves by at most
20% between consecutive refinement levels of its sweep.  ``kernels_check``
runs everything and returns rows ``(lemma_id, sweep_point, lhs, rhs,
fitted_C, pass)``.
"""

from dataclasses import dataclass, astuple
import math

import numpy as np
from scipy import integrate, stats

from .correlation import GaussianKernel, WhiteNoise
from .kernels import g_weight, heat_kernel, r_epsilon_density

__all__ = [
    "LemmaRow",
    "kernels_check",
    "summarize",
    "factorization_check",
    "spatial_increment_check",
    "temporal_increment_check",
    "convolution_inequality_check",
    "jump_l1_check",
    "time_shift_l1_check",
    "g_weight_check",
    "double_smoothing_check",
    "COLUMNS",
]

COLUMNS = ["lemma_id", "sweep_point", "lhs", "rhs", "fitted_C", "pass"]
STABILITY = 0.20


@dataclass
class LemmaRow:
    lemma_id: str
    sweep_point: str
    lhs: float
    rhs: float
    fitted_C: float
    passed: bool

    def as_dict(self):
        return dict(zip(COLUMNS, astuple(self)))


def _stable(values, tol=STABILITY):
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        return False
    return bool(np.all(np.abs(v[1:] / v[:-1] - 1.0) <= tol))


def _log_g(t, r2, d):
    return -0.5 * d * np.log(2.0 * np.pi * t) - r2 / (2.0 * t)


def _sq(v):
    return np.sum(v * v, axis=-1)


# -- product identity for two heat kernels ---------------------------------------------

def factorization_check(n=1000, seed=0, rtol=1e-12):
    """``G(s, x) G(t-s, y) = G(s(t-s)/t, (s y - (t-s) x)/t) G(t, x+y)`` on random tuples.

    Both sides are compared in log form, so the relative error is
    ``expm1(|log lhs - log rhs|)`` even where the values underflow.  The
    exponents reach ``|x|^2 / (2s) ~ 1e5`` for small s, which costs five
    digits in double precision; the logs are formed in extended precision.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for d in (1, 2):
        t = rng.uniform(0.0, 4.0, n)
        t = np.where(t == 0, 4.0, t)
        s = t * rng.uniform(0.0, 1.0, n)
        s = np.where(s == 0, 0.5 * t, s)
        x = rng.uniform(-3.0, 3.0, (n, d))
        y = rng.uniform(-3.0, 3.0, (n, d))
        t, s, x, y = (np.asarray(v, dtype=np.longdouble) for v in (t, s, x, y))
        left = _log_g(s, _sq(x), d) + _log_g(t - s, _sq(y), d)
        z = (s[:, None] * y - (t - s)[:, None] * x) / t[:, None]
        right = _log_g(s * (t - s) / t, _sq(z), d) + _log_g(t, _sq(x + y), d)
        rel = np.abs(np.expm1((left - right).astype(float)))
        worst = float(rel.max())
        rows.append(LemmaRow("factorization", f"d={d},tuples={n}", worst, rtol, math.nan,
                             worst <= rtol))
    return rows


# -- spatial and temporal increments ---------------------------------------------------

def _spatial_pairs(d, radius, n):
    if d == 1:
        g = np.linspace(-radius, radius, n)
        x, y = np.meshgrid(g, g, indexing="ij")
        return x.ravel(), y.ravel()
    # rotation invariance: x on the first axis, y anywhere in the upper half plane
    r = np.linspace(0.0, radius, n)
    th = np.linspace(0.0, np.pi, n)
    r1, r2, a = np.meshgrid(r, r, th, indexing="ij")
    x = np.stack([r1.ravel(), 0 * r1.ravel()], axis=1)
    y = np.stack([r2.ravel() * np.cos(a.ravel()), r2.ravel() * np.sin(a.ravel())], axis=1)
    return x, y


def spatial_increment_check(alphas=(0.25, 0.5, 1.0), times=(0.25, 1.0, 4.0),
                            levels=((4.0, 101), (6.0, 201), (8.0, 401)), dims=(1, 2)):
    """Worst ratio ``|G(t,x) - G(t,y)| t^(a/2) / ([G(2t,x) + G(2t,y)] |x-y|^a)``.

    The sample radius and density grow together with the level (radius in
    units of ``sqrt(t)``).  In d = 2 the grid has ``n/5`` points per axis.
    """
    rows = []
    for d in dims:
        for a in alphas:
            for t in times:
                fitted = []
                for radius, n in levels:
                    m = n if d == 1 else max(21, n // 5)
                    x, y = _spatial_pairs(d, radius * math.sqrt(t), m)
                    dist = np.abs(x - y) if d == 1 else np.sqrt(_sq(x - y))
                    keep = dist > 0
                    x, y, dist = x[keep], y[keep], dist[keep]
                    lhs = np.abs(heat_kernel(t, x, d) - heat_kernel(t, y, d))
                    den = (heat_kernel(2 * t, x, d) + heat_kernel(2 * t, y, d)) * dist ** a
                    ratio = lhs * t ** (a / 2) / den
                    k = int(np.argmax(ratio))
                    fitted.append(float(ratio[k]))
                    rows.append(LemmaRow("spatial_increment",
                                         f"d={d},alpha={a},t={t},radius={radius},n={m}",
                                         float(lhs[k]), float(den[k] * t ** (-a / 2)), fitted[-1], True))
                ok = _stable(fitted)
                for r in rows[-len(levels):]:
                    r.passed = ok
    return rows


def temporal_increment_check(alphas=(0.25, 0.5, 1.0), dims=(1, 2), t_prime=2.0,
                             decades=(2, 3, 4), n_x=2001, rescaled=False):
    """Worst ratio ``|G(t,x) - G(t',x)| t^(a/2) / (G(4t',x) (t'-t)^(a/2))`` over ``0 < t < t'``.

    Refinement level k samples ``t/t'`` log-uniformly on ``[10^-k, 1)``, so a
    constant that is uniform in ``t`` shows up as a stable sup.  With
    ``rescaled=True`` the right side carries the extra factor ``(t'/t)^(d/2)``.
    """
    rows = []
    lemma = "temporal_increment_rescaled" if rescaled else "temporal_increment"
    for d in dims:
        for a in alphas:
            fitted = []
            for k in decades:
                q = np.logspace(-k, 0, 40 * k, endpoint=False)
                t = t_prime * q[:, None]
                r = np.linspace(0.0, 8.0 * math.sqrt(t_prime), n_x)[None, :]
                x = r if d == 1 else np.stack([r, 0 * r], axis=-1)
                lhs = np.abs(heat_kernel(t, x, d) - heat_kernel(t_prime, x, d))
                rhs = t ** (-a / 2) * heat_kernel(4 * t_prime, x, d) * (t_prime - t) ** (a / 2)
                if rescaled:
                    rhs = rhs * (t_prime / t) ** (d / 2)
                ratio = lhs / rhs
                i = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
                fitted.append(float(ratio[i]))
                rows.append(LemmaRow(lemma, f"d={d},alpha={a},t_min/t'=1e-{k}",
                                     float(lhs[i]), float(rhs[i]), fitted[-1], True))
            ok = _stable(fitted)
            for row in rows[-len(decades):]:
                row.passed = ok
    return rows


# -- the convolution inequality with exp(-2 beta s (t-s)/t) ------------------------------

_TEST_FUNCTIONS = {
    "s": (lambda s: s, True),
    "sqrt(s)": (np.sqrt, True),
    "exp(s)": (np.exp, True),
    "1/sqrt(s+0.01)": (lambda s: 1.0 / np.sqrt(s + 0.01), False),
}


def convolution_inequality_check(betas=(0.5, 1.0, 4.0), times=(0.5, 1.0, 2.0), rtol=1e-9):
    """``int_0^t g(s) e^(-2 b s(t-s)/t) ds <= 2 int_0^t g(s) e^(-b(t-s)) ds`` (``e^(-b s)`` if g decreases).

    The symmetric form with ``g(t-s)`` is checked to quadrature accuracy on the
    same sweep; ``fitted_C`` is the ratio to the integral without the factor 2.
    """
    rows = []
    for name, (g, increasing) in _TEST_FUNCTIONS.items():
        for b in betas:
            for t in times:
                w = lambda s: math.exp(-2.0 * b * s * (t - s) / t)
                lhs = integrate.quad(lambda s: g(s) * w(s), 0.0, t, epsabs=0, epsrel=1e-12)[0]
                mirror = integrate.quad(lambda s: g(t - s) * w(s), 0.0, t, epsabs=0, epsrel=1e-12)[0]
                if increasing:
                    base = integrate.quad(lambda s: g(s) * math.exp(-b * (t - s)), 0.0, t,
                                          epsabs=0, epsrel=1e-12)[0]
                else:
                    base = integrate.quad(lambda s: g(s) * math.exp(-b * s), 0.0, t,
                                          epsabs=0, epsrel=1e-12)[0]
                rhs = 2.0 * base
                ok = lhs <= rhs * (1 + rtol) and abs(mirror - lhs) <= rtol * abs(lhs)
                rows.append(LemmaRow("convolution_inequality", f"g={name},beta={b},t={t}",
                                     lhs, rhs, lhs / base, ok))
    return rows


# -- jump semigroup versus heat kernel in L1 ----------------------------------------------

def _l1_on_line(fun, t, n=40001, width=12.0):
    x = np.linspace(-width * math.sqrt(t), width * math.sqrt(t), n)
    return float(integrate.simpson(np.abs(fun(x)), x=x))


def jump_l1_check(times=(0.5, 1.0), epss=(0.2, 0.1, 0.05)):
    """``int |R^eps(t,.) - G(t,.)| dx <= e^(-t/eps) + C sqrt(eps/t)`` in d = 1.

    ``C`` is fitted separately on each t slice of the sweep as the largest
    ``(lhs - e^(-t/eps)) / sqrt(eps/t)``; the slices must agree within 20%,
    and every point must then satisfy the bound with the overall constant.
    """
    pts, per_t = [], []
    for t in times:
        cs = []
        for e in epss:
            lhs = _l1_on_line(lambda x: r_epsilon_density(t, x, e) - heat_kernel(t, x), t + e)
            cs.append((lhs - math.exp(-t / e)) / math.sqrt(e / t))
            pts.append((t, e, lhs))
        per_t.append(max(cs))
    C = max(per_t)
    ok = min(per_t) >= (1 - STABILITY) * C
    rows = []
    for t, e, lhs in pts:
        rhs = math.exp(-t / e) + C * math.sqrt(e / t)
        rows.append(LemmaRow("jump_l1_distance", f"t={t},eps={e}", lhs, rhs,
                             per_t[times.index(t)], ok and lhs <= rhs * (1 + 1e-12)))
    return rows


def gaussian_l1_shift(t, eps, d=1):
    """Exact ``int |G(t+eps, x) - G(t, x)| dx`` (the densities cross once in |x|)."""
    if eps == 0:
        return 0.0
    r0 = math.sqrt(d * t * (t + eps) / eps * math.log1p(eps / t))
    chi = stats.chi(d)
    return float(2.0 * (chi.cdf(r0 / math.sqrt(t)) - chi.cdf(r0 / math.sqrt(t + eps))))


def time_shift_l1_check(times=(0.1, 0.5, 1.0, 2.0), decades=(1, 2, 3), dims=(1, 2)):
    """``int |G(t+eps) - G(t)| dx <= C log(1 + eps/t)``; level k adds ``eps/t`` down to ``10^-k``.

    In d = 1 the closed form is cross-checked against quadrature.
    """
    rows = []
    for d in dims:
        fitted = []
        for k in decades:
            ratios = np.logspace(-k, 1, 6 * (k + 1))
            best, where = -1.0, None
            for t in times:
                for q in ratios:
                    e = q * t
                    lhs = gaussian_l1_shift(t, e, d)
                    c = lhs / math.log1p(q)
                    if c > best:
                        best, where = c, (t, e, lhs)
            fitted.append(best)
            t, e, lhs = where
            rows.append(LemmaRow("time_shift_l1", f"d={d},eps/t_min=1e-{k},worst=(t={t:.3g},eps={e:.3g})",
                                 lhs, best * math.log1p(e / t), best, True))
        ok = _stable(fitted)
        for r in rows[-len(decades):]:
            r.passed = ok
    # closed form versus quadrature
    for t, e in ((0.5, 0.05), (1.0, 0.5)):
        x0 = math.sqrt(t * (t + e) / e * math.log1p(e / t))
        f = lambda x: abs(float(heat_kernel(t + e, x) - heat_kernel(t, x)))
        quad = 2.0 * sum(integrate.quad(f, a, b, epsabs=1e-14, epsrel=1e-12, limit=200)[0]
                         for a, b in ((0.0, x0), (x0, 40.0 * math.sqrt(t + e))))
        exact = gaussian_l1_shift(t, e, 1)
        rows.append(LemmaRow("time_shift_l1", f"closed_form_vs_quadrature,t={t},eps={e}",
                             exact, quad, math.nan, abs(exact - quad) <= 1e-8))
    return rows


# -- the time-integrated kernel g(t, r) ------------------------------------------------

def _g_quad(t, r, d):
    f = lambda s: (2 * math.pi * s) ** (-d / 2) * math.exp(-r * r / (2 * s))
    return integrate.quad(f, 0.0, t, epsabs=0, epsrel=1e-13, limit=200)[0]


def g_weight_check(t=1.0):
    rows = []
    v = float(g_weight(t, 0.0, 1))
    rows.append(LemmaRow("g_weight", "d=1,r=0", v, math.sqrt(2 * t / math.pi), math.nan,
                         abs(v - math.sqrt(2 * t / math.pi)) <= 1e-12))
    for d in (1, 2):
        for r in (0.1, 0.5, 1.0, 2.0):
            a, b = float(g_weight(t, r, d)), _g_quad(t, r, d)
            rows.append(LemmaRow("g_weight", f"d={d},r={r},formula_vs_quadrature", a, b, math.nan,
                                 abs(a - b) <= 1e-8 * max(1.0, abs(b))))
        r = np.linspace(1e-3, 6.0, 2000)
        gv = g_weight(t, r, d)
        rows.append(LemmaRow("g_weight", f"d={d},strictly_decreasing", float(np.max(np.diff(gv))), 0.0,
                             math.nan, bool(np.all(np.diff(gv) < 0))))
        if d == 1:
            rows.append(LemmaRow("g_weight", "d=1,bounded_by_origin", float(gv.max()),
                                 math.sqrt(2 * t / math.pi), math.nan,
                                 bool(gv.max() <= math.sqrt(2 * t / math.pi))))
    near = g_weight(t, 10.0 ** -np.arange(1, 7), 2)
    rows.append(LemmaRow("g_weight", "d=2,r=1e-1..1e-6,increasing", float(near[-1]), float(near[0]),
                         math.nan, bool(np.all(np.diff(near) > 0))))
    # integrability of g^theta: the radial integral settles as the cutoff grows
    area = {1: 2.0, 2: 2.0 * math.pi}
    for d in (1, 2):
        for theta in (1.0, 2.0, 4.0):
            f = lambda r: area[d] * r ** (d - 1) * float(g_weight(t, r, d)) ** theta
            pts = [0.0, 1e-8, 1e-4, 1e-2, 1.0]
            vals = []
            for cut in (10.0, 20.0):
                vals.append(sum(integrate.quad(f, a, b, limit=200, epsrel=1e-11)[0]
                                for a, b in zip(pts + [2.0], pts[1:] + [2.0, cut])))
            rows.append(LemmaRow("g_weight", f"d={d},theta={theta},integral", vals[1], vals[0],
                                 math.nan, bool(np.isfinite(vals[1]) and abs(vals[1] - vals[0])
                                                <= 1e-8 * vals[1])))
    return rows


# -- the doubly smoothed jump kernel against the correlation ---------------------------

def _smoothed_symbol(tau, eps, r):
    """Fourier transform of ``R^eps(tau) * G(eps)`` at ``|xi| = r`` (closed Poisson sum)."""
    q = np.exp(-0.5 * eps * r * r)
    return (np.exp(-tau * (1.0 - q) / eps) - math.exp(-tau / eps)) * q


def double_smoothing_check(models=None, epss=(0.1, 0.02, 0.004, 0.0008), taus=(0.05, 0.2, 1.0)):
    """``int int f(y1 - y2) (R^eps(tau)*G(eps))(x-y1) (R^eps(tau)*G(eps))(x-y2) <= C``.

    Evaluated on the spectral side.  When ``int f_hat < inf`` (the case the
    bound is claimed for) the right side is ``(2pi)^-d int f_hat (1 - e^(-2 tau/eps))``,
    the proof's bound.  ``fitted_C`` is the running sup of lhs over
    ``(2pi)^-d int f_hat`` as eps decreases; it must settle (20% between the
    last levels).  For white noise ``int f_hat`` diverges, the bound is void,
    and the rows only record how the left side grows.
    """
    models = models or [WhiteNoise(1), GaussianKernel(1.0, 1)]
    rows = []
    for m in models:
        finite = not isinstance(m, WhiteNoise)
        mass = m.radial_integral(lambda r: 1.0) if finite else math.inf
        sups, worst, mrows = [], 0.0, []
        for e in epss:
            for tau in taus:
                lhs = m.radial_integral(lambda r: _smoothed_symbol(tau, e, r) ** 2)
                rhs = mass * -math.expm1(-2.0 * tau / e)
                worst = max(worst, lhs / mass if finite else lhs)
                mrows.append(LemmaRow("double_smoothing", f"model={m.name},eps={e},tau={tau}",
                                      lhs, rhs, math.nan, lhs <= rhs * (1 + 1e-9)))
            sups.append(worst)
        ok = _stable(sups[-2:]) if finite else True
        for r in mrows:
            r.fitted_C = sups[-1]
            r.passed = r.passed and ok
        label = "sup_by_level" if finite else "sup_by_level,bound_void"
        mrows.append(LemmaRow("double_smoothing", f"model={m.name},{label}", sups[-1], mass,
                              sups[-1], ok))
        rows.extend(mrows)
    return rows


# -- driver ---------------------------------------------------------------------------

def kernels_check():
    """Run every check; returns a list of :class:`LemmaRow`."""
    rows = []
    for fn in (factorization_check, spatial_increment_check, temporal_increment_check,
               convolution_inequality_check, jump_l1_check, time_shift_l1_check,
               g_weight_check, double_smoothing_check):
        rows.extend(fn())
    rows.extend(temporal_increment_check(rescaled=True))
    return rows


def summarize(rows):
    """``{lemma_id: all rows pass}``."""
    out = {}
    for r in rows:
        out[r.lemma_id] = out.get(r.lemma_id, True) and bool(r.passed)
    return out
