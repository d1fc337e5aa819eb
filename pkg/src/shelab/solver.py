"""Path-wise time stepping of the stochastic heat equation on a periodic lattice.

Two schemes are available.  Exponential Euler on the mild form,
``u+ = G(dt) * (u + rho(u) dM)``, and the explicit jump-semigroup scheme
``u+ = u + dt Delta^eps u + rho(u) dM^eps`` driven by ``G(eps)``-smoothed noise.
Fields carry leading batch axes ``(copies, replicas)``; all copies of a
replica see the same noise slice, which is how coupled runs are made.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from ._validation import DomainError, check_field, check_positive
from .kernels import FieldState, heat_transfer, LatticeGrid
from .initial_data import grid_project, truncate_mollify
from .noise import smooth_gepsilon, synthesize

__all__ = [
    "RhoModel",
    "BlowUpError",
    "StabilityError",
    "step_exp_euler",
    "step_jump_semigroup",
    "SimulationSpec",
    "Trajectory",
    "run_paths",
    "simulate",
    "exact_second_moment",
]

_KINDS = ("linear", "affine", "clipped", "sine")


class BlowUpError(ArithmeticError):
    def __init__(self, step, replica=None):
        where = "" if replica is None else f" (replica {replica})"
        super().__init__(f"non-finite values at step {step}{where}")
        self.step, self.replica = step, replica


class StabilityError(DomainError):
    pass


@dataclass(frozen=True)
class RhoModel:
    """Globally Lipschitz diffusion coefficient.

    ``linear``: lam*u; ``affine``: a + lam*u; ``clipped``: lam*clip(u, -cap, cap);
    ``sine``: lam*sin(u).
    """

    kind: str = "linear"
    lam: float = 1.0
    a: float = 0.0
    cap: float = math.inf

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise DomainError(f"unknown rho kind {self.kind!r}; expected one of {_KINDS}")
        if not math.isfinite(self.lam) or not math.isfinite(self.a):
            raise DomainError("rho parameters must be finite")
        if self.kind == "clipped" and not self.cap > 0:
            raise DomainError("clipped rho needs cap > 0")
        if self.kind != "affine" and self.a != 0.0:
            raise DomainError("only the affine rho has an intercept")

    @property
    def lip(self):
        return abs(self.lam)

    @property
    def rho0(self):
        return self.a

    def __call__(self, u):
        if self.kind == "linear":
            return self.lam * u
        if self.kind == "affine":
            return self.a + self.lam * u
        if self.kind == "clipped":
            return self.lam * np.clip(u, -self.cap, self.cap)
        return self.lam * np.sin(u)

    def is_zero(self):
        return self.lam == 0.0 and self.a == 0.0


def _values(u, grid):
    if isinstance(u, FieldState):
        return u, u.grid, u.values
    if grid is None:
        raise DomainError("a grid is required for raw arrays")
    return None, grid, check_field(u, grid)


def _finish(state, values, step):
    if not np.all(np.isfinite(values)):
        raise BlowUpError(step)
    if state is None:
        return values
    return FieldState(state.grid, values, state.time_index + 1, state.replica)


def step_exp_euler(u, dM, rho, dt, grid=None):
    """One exponential-Euler step ``G(dt) * (u + rho(u) dM)``."""
    state, grid, v = _values(u, grid)
    dt = check_positive(dt, "dt")
    w = v + rho(v) * dM
    out = grid.irfft(grid.rfft(w) * heat_transfer(grid, dt))
    return _finish(state, out, getattr(state, "time_index", 0))


def step_jump_semigroup(u, dM_eps, rho, dt, eps, grid=None):
    """One explicit step of ``du = Delta^eps u dt + rho(u) dM^eps``; needs ``dt <= eps``."""
    state, grid, v = _values(u, grid)
    dt, eps = check_positive(dt, "dt"), check_positive(eps, "eps")
    if dt > eps:
        raise StabilityError(f"jump scheme needs dt <= eps (dt={dt}, eps={eps})")
    mult = 1.0 + (dt / eps) * (heat_transfer(grid, eps) - 1.0)
    out = grid.irfft(grid.rfft(v) * mult) + rho(v) * dM_eps
    return _finish(state, out, getattr(state, "time_index", 0))


def _snapshot_steps(times, dt, T):
    steps = []
    for t in times:
        if not 0 < t <= T * (1 + 1e-12):
            raise DomainError(f"snapshot time {t} outside (0, T={T}]")
        k = int(round(t / dt))
        if abs(k * dt - t) > 1e-9 * max(1.0, t):
            raise DomainError(f"snapshot time {t} is not a multiple of dt={dt}")
        steps.append(k)
    return steps


@dataclass
class Trajectory:
    """Snapshots ``values[i]`` of shape ``(copies?, replicas, *grid)`` at ``times[i]``."""

    grid: LatticeGrid
    times: np.ndarray
    values: list
    replicas: np.ndarray
    blown: np.ndarray
    noise_hash: str = ""
    blowup_steps: dict = field(default_factory=dict)

    def at(self, t):
        i = int(np.argmin(np.abs(self.times - t)))
        return self.values[i]

    def healthy(self):
        return ~self.blown


def run_paths(u0, noise, rho, dt, T, scheme="exp_euler", eps=None, snapshot_times=(),
              blowup_guard=1e12, on_step=None):
    """Advance the batch ``u0`` (shape ``(..., replicas, *grid)``) to time T.

    ``noise`` yields one slice of shape ``(replicas, *grid)`` per step; for the
    jump scheme it must already be the ``G(eps)``-smoothed realization.  A
    replica whose ``max |u|`` exceeds ``blowup_guard`` is frozen at zero and
    flagged in ``blown``.
    """
    grid = noise.grid
    u = np.array(check_field(u0, grid), dtype=float, copy=True)
    n_rep = noise.n_replicas
    if u.ndim < grid.d + 1 or u.shape[u.ndim - grid.d - 1] != n_rep:
        raise DomainError(f"initial batch {u.shape} does not carry {n_rep} replicas")
    if abs(noise.dt - dt) > 1e-12 * dt:
        raise DomainError("noise time step does not match dt")
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise DomainError(f"T={T} is not a multiple of dt={dt}")
    if n_steps > noise.steps:
        raise DomainError("noise realization is shorter than the run")
    if scheme == "jump":
        if eps is None:
            raise DomainError("jump scheme needs eps")
        if dt > eps:
            raise StabilityError(f"jump scheme needs dt <= eps (dt={dt}, eps={eps})")
        mult = 1.0 + (dt / eps) * (heat_transfer(grid, eps) - 1.0)
    elif scheme == "exp_euler":
        mult = heat_transfer(grid, dt)
    else:
        raise DomainError(f"unknown scheme {scheme!r}")
    snap_steps = _snapshot_steps(snapshot_times, dt, T)
    snaps = {}
    spatial = tuple(range(u.ndim - grid.d, u.ndim))
    rep_axis = u.ndim - grid.d - 1
    blown = np.zeros(n_rep, dtype=bool)
    blow_steps = {}
    for k, dM in enumerate(noise.slices()):
        if k >= n_steps:
            break
        if scheme == "exp_euler":
            u = grid.irfft(grid.rfft(u + rho(u) * dM) * mult)
        else:
            u = grid.irfft(grid.rfft(u) * mult) + rho(u) * dM
        amax = np.max(np.abs(u), axis=spatial)
        amax = amax.reshape(-1, n_rep).max(axis=0) if amax.ndim > 1 else amax
        bad = ~(amax <= blowup_guard)
        if np.any(bad & ~blown):
            new = np.nonzero(bad & ~blown)[0]
            if not math.isfinite(blowup_guard) or blowup_guard <= 0:
                raise BlowUpError(k + 1, int(noise.replicas[new[0]]))
            for r in new:
                blow_steps[int(noise.replicas[r])] = k + 1
            blown |= bad
            idx = [slice(None)] * u.ndim
            idx[rep_axis] = blown
            u[tuple(idx)] = 0.0
        if on_step is not None:
            on_step(k + 1, u)
        if k + 1 in snap_steps:
            snaps[k + 1] = u.copy()
    values = [snaps[s] for s in snap_steps]
    if not snap_steps:
        values = [u]
        snapshot_times = (n_steps * dt,)
    return Trajectory(grid, np.asarray(snapshot_times, dtype=float), values,
                      noise.replicas, blown, "", blow_steps)


@dataclass
class SimulationSpec:
    grid: LatticeGrid
    model: object
    initial: object
    rho: RhoModel
    dt: float
    T: float
    scheme: str = "exp_euler"
    eps: float = None
    snapshot_times: tuple = ()
    seed: int = 0
    replicas: int = 1
    blowup_guard: float = 1e12


def simulate(spec):
    """Run a full ensemble from a :class:`SimulationSpec`; returns a :class:`Trajectory`."""
    check_positive(spec.T, "T")
    n_steps = int(round(spec.T / spec.dt))
    base = synthesize(spec.model, spec.grid, spec.dt, n_steps, spec.seed, np.arange(spec.replicas))
    mu = spec.initial
    noise = base
    if spec.scheme == "jump":
        if spec.eps is None:
            raise DomainError("jump scheme needs eps")
        noise = smooth_gepsilon(base, spec.eps)
        u0 = grid_project(mu, spec.grid).values
        u0 = spec.grid.irfft(spec.grid.rfft(u0) * heat_transfer(spec.grid, spec.eps))
    else:
        u0 = grid_project(mu, spec.grid).values
    u0 = np.broadcast_to(u0, (spec.replicas,) + spec.grid.shape)
    traj = run_paths(u0, noise, spec.rho, spec.dt, spec.T, spec.scheme, spec.eps,
                     spec.snapshot_times, spec.blowup_guard)
    traj.noise_hash = noise.fingerprint()
    return traj


def exact_second_moment(grid, model, lam, dt, T, scheme="exp_euler", eps=None):
    """Exact ``E[u(T, x) u(T, x + z)]`` of the lattice scheme for PAM with flat unit data.

    Linearity and the independence of increments give the deterministic
    recursion ``C+ = K^2 * (C (1 + lam^2 dt c))`` (``c`` the lattice covariance
    row, ``K`` the scheme's transfer).  Returns the row in FFT order.
    """
    c = model.lattice_covariance(grid)
    n = int(round(T / dt))
    C = np.ones(grid.shape)
    if scheme == "exp_euler":
        tf2 = heat_transfer(grid, dt) ** 2
        for _ in range(n):
            C = grid.irfft(grid.rfft(C * (1.0 + lam * lam * dt * c)) * tf2)
        return C
    # jump scheme: u+ = A u + lam u dM^eps, with dM^eps = G(eps) dM
    A = 1.0 + (dt / eps) * (heat_transfer(grid, eps) - 1.0)
    ce = grid.irfft(grid.rfft(c) * heat_transfer(grid, eps) ** 2)
    C = np.ones(grid.shape)
    for _ in range(n):
        C = grid.irfft(grid.rfft(C) * A * A) + lam * lam * dt * ce * C
    return C
