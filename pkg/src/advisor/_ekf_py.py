"""Pure-Python GMM-EKF step: the import-time fallback for the compiled kernel.

Composes the estimator module's propagate/update/update_weights operations;
the compiled backend must agree with this path to tight tolerance (see
tests/test_backend.py and benchmarks/bench_backends.py).
"""
from __future__ import annotations

import numpy as np

from . import estimator as est


def gmm_step_py(
    means: np.ndarray,
    covs: np.ndarray,
    weights: np.ndarray,
    p,
    params,
    noise,
    u: np.ndarray,
    z: est.Measurement,
    use_human: bool,
    jacobian_mode: str,
) -> None:
    """Advance all components in place by one propagate + update cycle."""
    channels = 3 if use_human else 2
    comps = [
        est.GaussianComponent(means[i], covs[i], float(weights[i]))
        for i in range(means.shape[0])
    ]
    residuals = []
    rhos = []
    updated = []
    for comp in comps:
        comp = est.propagate(comp, u, p, params, noise, mode=jacobian_mode)
        comp, residual, rho = est.update(
            comp, z, p, params, noise, mode=jacobian_mode, channels=channels
        )
        updated.append(comp)
        residuals.append(residual)
        rhos.append(rho)
    new_weights = est.update_weights(updated, residuals, rhos)
    for i, comp in enumerate(updated):
        means[i] = comp.mean
        covs[i] = comp.cov
        weights[i] = new_weights[i]
