"""Numerical laboratory for the stochastic heat equation ``du = 1/2 u'' dt + rho(u) dM``
with spatially homogeneous Gaussian noise and rough initial measures."""

__version__ = "0.1.0"

from .kernels import LatticeGrid, heat_kernel, semigroup_apply  # noqa: E402
from .correlation import GaussianKernel, Riesz, WhiteNoise  # noqa: E402
from .initial_data import InitialMeasure  # noqa: E402
from .solver import RhoModel, SimulationSpec, simulate  # noqa: E402

__all__ = ["__version__", "LatticeGrid", "heat_kernel", "semigroup_apply", "WhiteNoise", "Riesz",
           "GaussianKernel", "InitialMeasure", "RhoModel", "SimulationSpec", "simulate"]
