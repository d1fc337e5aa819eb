"""Seeded lattice increments of a noise that is white in time and f-correlated in space.

Each increment slice is ``Delta M = irfft(sqrt(lambda) * rfft(Z))`` with ``Z``
i.i.d. standard normal on the lattice and ``lambda = dt * FFT(c)``, where
``c`` is the lattice covariance row of the correlation model.  Replicas are
grouped in lanes of 64 that share one Philox stream per (seed, lane block,
step), so a replica's noise depends only on ``(seed, replica)`` and the slice
index.  Smoothed variants are spectral multipliers applied to the same ``Z``,
which couples them to the base realization.
"""

import hashlib
import json
import struct

import numpy as np

from ._validation import DomainError, check_positive
from .kernels import LatticeGrid, heat_transfer

__all__ = [
    "SynthesisError",
    "NoiseRealization",
    "CoarsenedNoise",
    "StackedNoise",
    "ReplayNoise",
    "spectral_weights",
    "synthesize",
    "mollify_phi",
    "smooth_gepsilon",
    "coarsen",
    "dump",
    "load",
    "LANES",
]

LANES = 64
_MAGIC = b"SHENOISE1\n"


class SynthesisError(ArithmeticError):
    """A discrete spectral weight is negative and clipping was not allowed."""


def spectral_weights(model, grid, dt, allow_clip=True):
    """Eigenvalues of the circulant increment covariance, rfft layout.

    Round-off negatives (below ``1e-12`` of the largest weight) are zeroed
    silently; larger ones are clipped to zero when ``allow_clip`` holds
    (the nearest nonnegative circulant) and raise otherwise.
    Returns ``(weights, n_clipped)``.
    """
    c = model.lattice_covariance(grid)
    lam = dt * np.real(np.fft.rfftn(c, axes=grid.fft_axes()))
    top = float(np.max(lam))
    neg = lam < -1e-12 * top
    if np.any(neg) and not allow_clip:
        raise SynthesisError(f"{int(neg.sum())} negative spectral weights (min {lam.min():.3g})")
    n_clipped = int(neg.sum())
    return np.maximum(lam, 0.0), n_clipped


def _block_key(seed, block):
    return np.random.SeedSequence([int(seed), int(block)]).generate_state(2, np.uint64)


def _standard_normals(seed, replicas, step, shape):
    """i.i.d. N(0,1) of shape (len(replicas), *shape) for one time step."""
    replicas = np.asarray(replicas)
    out = np.empty((replicas.size,) + tuple(shape))
    blocks = replicas // LANES
    for b in np.unique(blocks):
        idx = np.nonzero(blocks == b)[0]
        bitgen = np.random.Philox(key=_block_key(seed, b), counter=[0, 0, 0, int(step)])
        lanes = np.random.Generator(bitgen).standard_normal((LANES,) + tuple(shape))
        out[idx] = lanes[replicas[idx] % LANES]
    return out


class NoiseRealization:
    """Lazily generated increments ``Delta M_k(x_j)`` for a set of replicas.

    Immutable; iterating :meth:`slices` twice yields bit-identical arrays.
    ``multiplier`` is an optional rfft-layout array applied to every slice
    (spatial smoothing of the same underlying noise).
    """

    def __init__(self, model, grid, dt, steps, seed, replicas=(0,), allow_clip=True,
                 multiplier=None, label="base", _weights=None):
        self.model, self.grid = model, grid
        self.dt = check_positive(dt, "dt")
        if int(steps) != steps or steps < 1:
            raise DomainError("steps must be a positive integer")
        self.steps, self.seed = int(steps), int(seed)
        reps = np.atleast_1d(np.asarray(replicas, dtype=np.int64))
        if reps.ndim != 1 or np.any(reps < 0):
            raise DomainError("replica indices must be nonnegative integers")
        self.replicas = reps
        if _weights is None:
            _weights = spectral_weights(model, grid, self.dt, allow_clip)
        self.weights, self.n_clipped = _weights
        self.multiplier = multiplier
        self.label = label
        amp = np.sqrt(self.weights)
        if multiplier is not None:
            amp = amp * multiplier
        self._amp = amp
        # a flat spectrum (white noise) makes the synthesis a plain rescaling
        self._scalar = None
        if multiplier is None and np.ptp(self.weights) <= 1e-12 * np.max(self.weights):
            self._scalar = float(np.sqrt(np.mean(self.weights)))

    @property
    def n_replicas(self):
        return self.replicas.size

    def with_multiplier(self, mult, label):
        base = mult if self.multiplier is None else self.multiplier * mult
        return NoiseRealization(self.model, self.grid, self.dt, self.steps, self.seed,
                                self.replicas, multiplier=base, label=label,
                                _weights=(self.weights, self.n_clipped))

    def subset(self, replicas):
        return NoiseRealization(self.model, self.grid, self.dt, self.steps, self.seed, replicas,
                                multiplier=self.multiplier, label=self.label,
                                _weights=(self.weights, self.n_clipped))

    def slice(self, k):
        if not 0 <= k < self.steps:
            raise IndexError(k)
        z = _standard_normals(self.seed, self.replicas, k, self.grid.shape)
        if self._scalar is not None:
            return self._scalar * z
        return self.grid.irfft(self.grid.rfft(z) * self._amp)

    def slices(self, start=0):
        for k in range(start, self.steps):
            yield self.slice(k)

    def __iter__(self):
        return self.slices()

    def per_node_variance(self):
        """Exact per-node variance of one increment."""
        w = self._amp ** 2
        if self.grid.d == 1:
            full = w.sum() * 2 - w[0] - (w[-1] if self.grid.N % 2 == 0 else 0)
        else:
            mult = np.full(w.shape[-1], 2.0)
            mult[0] = 1.0
            mult[-1] = 1.0
            full = np.sum(w * mult)
        return float(full / self.grid.n_cells)

    def fingerprint(self):
        """sha256 over the parameters and the first slice of the first replica."""
        h = hashlib.sha256()
        h.update(json.dumps({
            "model": repr(self.model), "grid": [self.grid.d, self.grid.L, self.grid.N],
            "dt": self.dt, "steps": self.steps, "seed": self.seed, "label": self.label,
            "replicas": [int(self.replicas[0]), int(self.replicas[-1]), int(self.replicas.size)],
        }, sort_keys=True).encode())
        first = self.subset(self.replicas[:1]).slice(0)
        h.update(np.ascontiguousarray(first, dtype="<f8").tobytes())
        return h.hexdigest()


def synthesize(model, grid, dt, steps, seed, replica=0, allow_clip=True):
    """Noise realization for one replica index or an iterable of them."""
    if model.d != grid.d:
        raise DomainError("model and grid dimensions differ")
    return NoiseRealization(model, grid, dt, steps, seed, replica, allow_clip)


def mollify_phi(real, mollifier):
    """Convolve every slice with ``phi_eps`` (multiplication by ``phi_hat_eps``)."""
    return real.with_multiplier(mollifier.lattice_hat(real.grid), f"phi(eps={mollifier.eps:g})")


def smooth_gepsilon(real, eps):
    """Convolve every slice with the lattice heat kernel ``G(eps)``."""
    eps = check_positive(eps, "eps")
    return real.with_multiplier(heat_transfer(real.grid, eps), f"G(eps={eps:g})")


class StackedNoise:
    """Several smoothings of one base realization, stacked on a leading copy axis.

    ``slice(k)`` has shape ``(copies, replicas, *grid)`` and draws the
    underlying normals once, so every copy sees exactly coupled noise.
    """

    def __init__(self, members):
        members = list(members)
        first = members[0]
        for m in members[1:]:
            if (m.seed, m.dt, m.steps, m.grid) != (first.seed, first.dt, first.steps, first.grid) \
                    or not np.array_equal(m.replicas, first.replicas):
                raise DomainError("stacked realizations must share their base noise")
        self.members, self.grid, self.dt, self.steps = members, first.grid, first.dt, first.steps
        self.seed, self.replicas = first.seed, first.replicas
        self.label = "+".join(m.label for m in members)

    @property
    def n_replicas(self):
        return self.replicas.size

    def slice(self, k):
        z = _standard_normals(self.seed, self.replicas, k, self.grid.shape)
        zh = self.grid.rfft(z)
        return np.stack([m._scalar * z if m._scalar is not None else self.grid.irfft(zh * m._amp)
                         for m in self.members])

    def slices(self, start=0):
        for k in range(start, self.steps):
            yield self.slice(k)

    def __iter__(self):
        return self.slices()

    def fingerprint(self):
        return hashlib.sha256("".join(m.fingerprint() for m in self.members).encode()).hexdigest()


class CoarsenedNoise:
    """Fine increments summed over ``time_factor`` steps and averaged over
    ``space_factor`` adjacent cells per axis (the coarse cell at node j covers
    fine nodes ``space_factor*j .. space_factor*j + space_factor - 1``)."""

    def __init__(self, fine, time_factor=2, space_factor=2):
        if fine.steps % time_factor or fine.grid.N % space_factor:
            raise DomainError("fine realization does not divide evenly")
        self.fine, self.tf, self.sf = fine, int(time_factor), int(space_factor)
        self.grid = LatticeGrid(fine.grid.d, fine.grid.L, fine.grid.N // space_factor)
        self.dt, self.steps = fine.dt * time_factor, fine.steps // time_factor
        self.seed, self.replicas, self.label = fine.seed, fine.replicas, f"coarse({fine.label})"

    @property
    def n_replicas(self):
        return self.replicas.size

    def _restrict(self, x):
        s, n = self.sf, self.grid.N
        lead = x.shape[: x.ndim - self.grid.d]
        if self.grid.d == 1:
            return x.reshape(lead + (n, s)).mean(axis=-1)
        return x.reshape(lead + (n, s, n, s)).mean(axis=(-3, -1))

    def slice(self, k):
        acc = sum(self.fine.slice(self.tf * k + i) for i in range(self.tf))
        return self._restrict(acc)

    def slices(self, start=0):
        for k in range(start, self.steps):
            yield self.slice(k)

    def __iter__(self):
        return self.slices()

    def fingerprint(self):
        return hashlib.sha256((self.fine.fingerprint() + f"/{self.tf}x{self.sf}").encode()).hexdigest()


def coarsen(real, time_factor=2, space_factor=2):
    return CoarsenedNoise(real, time_factor, space_factor)


class ReplayNoise:
    """Increments read back from a binary dump (memory-mapped)."""

    def __init__(self, header, data):
        self.header = header
        g = header["grid"]
        self.grid = LatticeGrid(g["d"], g["L"], g["N"])
        self.dt, self.steps, self.seed = header["dt"], header["steps"], header["seed"]
        self.replicas = np.asarray(header["replicas"], dtype=np.int64)
        self.label = header.get("label", "replay")
        self._data = data

    @property
    def n_replicas(self):
        return self.replicas.size

    def slice(self, k):
        return np.array(self._data[k], dtype=float)

    def slices(self, start=0):
        for k in range(start, self.steps):
            yield self.slice(k)

    def __iter__(self):
        return self.slices()

    def fingerprint(self):
        return self.header["fingerprint"]


def dump(real, path):
    """Write a realization: magic line, 4-byte header length, JSON header, then
    row-major little-endian float64 slices of shape (replicas, *grid)."""
    header = {
        "grid": {"d": real.grid.d, "L": real.grid.L, "N": real.grid.N},
        "model": repr(getattr(real, "model", None)),
        "model_hash": hashlib.sha256(repr(getattr(real, "model", None)).encode()).hexdigest(),
        "seed": real.seed, "dt": real.dt, "steps": real.steps,
        "replicas": [int(r) for r in real.replicas], "label": real.label,
        "fingerprint": real.fingerprint(),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for sl in real.slices():
            fh.write(np.ascontiguousarray(sl, dtype="<f8").tobytes())
    return header


def load(path):
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise DomainError(f"{path} is not a noise dump")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n))
        offset = fh.tell()
    g = header["grid"]
    shape = (header["steps"], len(header["replicas"])) + (g["N"],) * g["d"]
    data = np.memmap(path, dtype="<f8", mode="r", offset=offset, shape=shape)
    return ReplayNoise(header, data)
