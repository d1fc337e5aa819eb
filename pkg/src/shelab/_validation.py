"""Input validation helpers shared across modules."""

import numbers

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the domain of the mathematical operation."""


class ShapeError(ValueError):
    """A field does not live on the lattice it was paired with."""


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise DomainError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise DomainError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise DomainError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_dimension(d):
    if d not in (1, 2):
        raise DomainError(f"dimension must be 1 or 2, got {d!r}")
    return int(d)


def check_field(values, grid):
    """Return ``values`` as a float array whose trailing axes match ``grid``."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim < grid.d or arr.shape[arr.ndim - grid.d:] != grid.shape:
        raise ShapeError(
            f"field of shape {arr.shape} does not end with grid shape {grid.shape}")
    return arr


def check_points(x, d):
    """Coerce ``x`` to an array of points in R^d (last axis of length d for d > 1)."""
    x = np.asarray(x, dtype=float)
    if d > 1 and (x.ndim == 0 or x.shape[-1] != d):
        raise ShapeError(f"points in R^{d} need a trailing axis of length {d}")
    return x


def squared_norm(x, d):
    x = check_points(x, d)
    if d == 1:
        return x * x
    return np.sum(x * x, axis=-1)
