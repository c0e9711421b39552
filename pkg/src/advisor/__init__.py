"""Driver-in-the-loop lane state estimation workbench.

Simulates a kinematic bicycle with a steering-model driver, fits two-point
and generalized steering models to logged trajectories, and runs a
Gaussian-mixture EKF that uses the human steering channel to disambiguate
biased lane markings.
"""
from ._backend import HAVE_COMPILED, default_backend

__version__ = "0.1.0"

__all__ = ["HAVE_COMPILED", "default_backend", "__version__"]
