"""The 7-state augmented closed-loop model and the Gaussian-mixture EKF.

State layout (index -> meaning):
    0: xi1  longitudinal velocity xdot
    1: xi2  lateral position y
    2: xi3  lateral velocity ydot
    3: xi4  camera bias b (constant in truth)
    4-6: xi5..xi7  observer-canonical realization states of the fitted
         (2,3,0,1) steering model; the model output (expected human steering)
         is xi7 + b0*phi + c0*Omega + d0*xi3.

The realization update
    xi5+ = b3 phi
    xi6+ = (b2 + a2 b0) phi + a2 c0 Omega + a2 d0 xi3 + xi5 + a2 xi7
    xi7+ = (b1 + a1 b0) phi + a1 c0 Omega + (d1 + a1 d0) xi3 + xi6 + a1 xi7
reproduces the direct ARX recursion exactly (zero initial conditions), and
its partial derivatives reproduce the reference linearization tables.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .driver import GeneralizedSteeringParams
from .dynamics import VehicleParams, discrete_matrices
from .errors import (
    AllWeightsVanished,
    CovarianceNotPSD,
    SingularInnovation,
)

WEIGHT_FLOOR = 1e-12
PSD_TOL = 1e-10
N_STATES = 7
N_CHANNELS = 3


@dataclass
class GaussianComponent:
    """One lane hypothesis: mean, covariance, and mixture weight."""

    mean: np.ndarray
    cov: np.ndarray
    weight: float

    def copy(self) -> "GaussianComponent":
        return GaussianComponent(self.mean.copy(), self.cov.copy(), self.weight)


@dataclass
class MixtureEstimate:
    components: list[GaussianComponent]

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def aggregate_mean(self) -> np.ndarray:
        return aggregate(self.components)


@dataclass(frozen=True)
class NoiseConfig:
    """Measurement covariance R (speedometer, camera, steering), process
    covariance Q, and the controller-noise level added to the (xddot, yddot)
    inputs during estimation."""

    R: np.ndarray = field(
        default_factory=lambda: np.diag([0.1**2, 0.05**2, 0.001**2])
    )
    Q: np.ndarray = field(
        default_factory=lambda: np.diag([1e-4, 1e-4, 1e-4, 1e-8, 1e-6, 1e-6, 1e-6])
    )
    nu_sigma: float = 1e-3

    def __post_init__(self) -> None:
        r = np.asarray(self.R, dtype=float)
        q = np.asarray(self.Q, dtype=float)
        if r.shape != (3, 3) or q.shape != (7, 7):
            raise ValueError("R must be 3x3 and Q 7x7")
        for name, m in (("R", r), ("Q", q)):
            if not np.allclose(m, m.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.min(np.linalg.eigvalsh(m)) < -PSD_TOL:
                raise ValueError(f"{name} must be PSD")
        object.__setattr__(self, "R", r)
        object.__setattr__(self, "Q", q)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NoiseConfig):
            return NotImplemented
        return (
            np.array_equal(self.R, other.R)
            and np.array_equal(self.Q, other.Q)
            and self.nu_sigma == other.nu_sigma
        )

    def to_dict(self) -> dict:
        def compact(m: np.ndarray) -> list:
            if np.allclose(m, np.diag(np.diag(m)), atol=0.0):
                return np.diag(m).tolist()
            return m.tolist()

        return {
            "R": compact(self.R),
            "Q": compact(self.Q),
            "nu_sigma": self.nu_sigma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseConfig":
        kwargs: dict = {}
        if "R" in d:
            r = np.asarray(d["R"], dtype=float)
            kwargs["R"] = np.diag(r) if r.ndim == 1 else r
        if "Q" in d:
            q = np.asarray(d["Q"], dtype=float)
            kwargs["Q"] = np.diag(q) if q.ndim == 1 else q
        if "nu_sigma" in d:
            kwargs["nu_sigma"] = float(d["nu_sigma"])
        return cls(**kwargs)


@dataclass(frozen=True)
class Measurement:
    z1: float
    z2: float
    z3: float

    def as_array(self, channels: int = 3) -> np.ndarray:
        return np.array([self.z1, self.z2, self.z3])[:channels]


def _coeffs(p: GeneralizedSteeringParams) -> tuple[float, ...]:
    if p.orders != (2, 3, 0, 1):
        raise ValueError(
            f"the augmented realization requires orders (2,3,0,1), got {p.orders}"
        )
    return (*p.a, *p.b, *p.c, *p.d)


def _angles(state: np.ndarray, params: VehicleParams) -> tuple[float, float]:
    if state[0] <= 0.0:
        raise ValueError("xi1 must be positive")
    x1 = max(state[0], params.v_min_invert)
    heading = math.atan(state[2] / x1)
    phi = heading + math.atan(state[1] / params.near_dist)
    omega = heading + math.atan(state[1] / params.far_dist)
    return phi, omega


def g_functions(
    state: np.ndarray, p: GeneralizedSteeringParams, params: VehicleParams
) -> tuple[float, float, float]:
    """Realization-state updates (next xi5, xi6, xi7) at the current state."""
    a1, a2, b0, b1, b2, b3, c0, d0, d1 = _coeffs(p)
    phi, omega = _angles(state, params)
    xi3, xi5, xi6, xi7 = state[2], state[4], state[5], state[6]
    g1 = b3 * phi
    g2 = (b2 + a2 * b0) * phi + a2 * c0 * omega + a2 * d0 * xi3 + xi5 + a2 * xi7
    g3 = (b1 + a1 * b0) * phi + a1 * c0 * omega + (d1 + a1 * d0) * xi3 + xi6 + a1 * xi7
    return g1, g2, g3


def predicted_steering(
    state: np.ndarray, p: GeneralizedSteeringParams, params: VehicleParams
) -> float:
    """Expected human steering measurement at the current state."""
    a1, a2, b0, b1, b2, b3, c0, d0, d1 = _coeffs(p)
    phi, omega = _angles(state, params)
    return state[6] + b0 * phi + c0 * omega + d0 * state[2]


def f_augmented(
    state: np.ndarray,
    u: np.ndarray,
    p: GeneralizedSteeringParams,
    params: VehicleParams,
) -> np.ndarray:
    """One step of the augmented closed-loop model with input (xddot, yddot)."""
    ts = params.ts
    out = np.empty(N_STATES)
    out[0] = state[0] + ts * u[0]
    out[1] = state[1] + ts * state[2] + 0.5 * ts * ts * u[1]
    out[2] = state[2] + ts * u[1]
    out[3] = state[3]
    out[4], out[5], out[6] = g_functions(state, p, params)
    return out


def h_augmented(
    state: np.ndarray, p: GeneralizedSteeringParams, params: VehicleParams
) -> np.ndarray:
    """Three-channel sensor model: speedometer, biased camera, human steering."""
    return np.array(
        [state[0], state[1] + state[3], predicted_steering(state, p, params)]
    )


def _angle_gradients(
    state: np.ndarray, params: VehicleParams
) -> tuple[np.ndarray, np.ndarray]:
    x1 = max(state[0], params.v_min_invert)
    x2, x3 = state[1], state[2]
    den = x1 * x1 + x3 * x3
    near, far = params.near_dist, params.far_dist
    dphi = np.array([-x3 / den, near / (near * near + x2 * x2), x1 / den])
    domega = np.array([-x3 / den, far / (far * far + x2 * x2), x1 / den])
    return dphi, domega


def state_jacobian(
    state: np.ndarray,
    p: GeneralizedSteeringParams,
    params: VehicleParams,
    mode: str = "exact",
) -> np.ndarray:
    """7x7 Jacobian of f_augmented.

    mode "paper" reproduces the reference linearization exactly as
    tabulated in the original derivation (small-angle partials 1/near,
    1/far, 1/xi1; zero column 1 in the angle rows; the far-point term of
    row 6 tabulated over the near distance).  mode "exact" returns the
    analytic partials of the implemented nonlinear map.
    """
    a1, a2, b0, b1, b2, b3, c0, d0, d1 = _coeffs(p)
    if state[0] <= 0.0:
        raise ValueError("xi1 must be positive")
    x1 = max(state[0], params.v_min_invert)
    near, far = params.near_dist, params.far_dist
    a = np.zeros((N_STATES, N_STATES))
    a[0, 0] = 1.0
    a[1, 1], a[1, 2] = 1.0, params.ts
    a[2, 2] = 1.0
    a[3, 3] = 1.0
    k5, k6, k7 = b3, b2 + a2 * b0, b1 + a1 * b0
    if mode == "paper":
        a[4, 1] = k5 / near
        a[4, 2] = k5 / x1
        a[5, 1] = k6 / near + a2 * c0 / near  # reference form uses the near distance
        a[5, 2] = (k6 + a2 * c0) / x1 + a2 * d0
        a[6, 1] = k7 / near + a1 * c0 / far
        a[6, 2] = (k7 + a1 * c0) / x1 + d1 + a1 * d0
    elif mode == "exact":
        dphi, domega = _angle_gradients(state, params)
        a[4, :3] = k5 * dphi
        a[5, :3] = k6 * dphi + a2 * c0 * domega
        a[5, 2] += a2 * d0
        a[6, :3] = k7 * dphi + a1 * c0 * domega
        a[6, 2] += d1 + a1 * d0
    else:
        raise ValueError(f"unknown jacobian mode {mode!r}")
    a[5, 4] = 1.0
    a[5, 6] = a2
    a[6, 5] = 1.0
    a[6, 6] = a1
    return a


def measurement_jacobian(
    state: np.ndarray,
    p: GeneralizedSteeringParams,
    params: VehicleParams,
    mode: str = "exact",
) -> np.ndarray:
    """3x7 Jacobian of h_augmented (same mode semantics as state_jacobian)."""
    a1, a2, b0, b1, b2, b3, c0, d0, d1 = _coeffs(p)
    if state[0] <= 0.0:
        raise ValueError("xi1 must be positive")
    x1 = max(state[0], params.v_min_invert)
    c = np.zeros((N_CHANNELS, N_STATES))
    c[0, 0] = 1.0
    c[1, 1], c[1, 3] = 1.0, 1.0
    if mode == "paper":
        c[2, 1] = b0 / params.near_dist + c0 / params.far_dist
        c[2, 2] = (b0 + c0) / x1 + d0
    elif mode == "exact":
        dphi, domega = _angle_gradients(state, params)
        c[2, :3] = b0 * dphi + c0 * domega
        c[2, 2] += d0
    else:
        raise ValueError(f"unknown jacobian mode {mode!r}")
    c[2, 6] = 1.0
    return c


def _check_psd(cov: np.ndarray) -> None:
    scale = max(float(np.trace(cov)) / N_STATES, 1.0)
    try:
        np.linalg.cholesky(cov + PSD_TOL * scale * np.eye(N_STATES))
    except np.linalg.LinAlgError:
        raise CovarianceNotPSD("covariance lost positive semi-definiteness")


def propagate(
    comp: GaussianComponent,
    u: np.ndarray,
    p: GeneralizedSteeringParams,
    params: VehicleParams,
    noise: NoiseConfig,
    mode: str = "exact",
) -> GaussianComponent:
    """Time update: mean through the nonlinear map, covariance through the
    Jacobian, then re-symmetrization and a PSD check."""
    a = state_jacobian(comp.mean, p, params, mode)
    mean = f_augmented(comp.mean, u, p, params)
    cov = a @ comp.cov @ a.T + noise.Q
    cov = 0.5 * (cov + cov.T)
    _check_psd(cov)
    return GaussianComponent(mean, cov, comp.weight)


def update(
    comp: GaussianComponent,
    meas: Measurement,
    p: GeneralizedSteeringParams,
    params: VehicleParams,
    noise: NoiseConfig,
    mode: str = "exact",
    channels: int = 3,
) -> tuple[GaussianComponent, np.ndarray, np.ndarray]:
    """Measurement update (Joseph form); returns the updated component, the
    pre-update residual, and the innovation covariance."""
    c = measurement_jacobian(comp.mean, p, params, mode)[:channels]
    r = noise.R[:channels, :channels]
    zhat = h_augmented(comp.mean, p, params)[:channels]
    residual = meas.as_array(channels) - zhat
    rho = c @ comp.cov @ c.T + r
    try:
        chol = np.linalg.cholesky(rho)
    except np.linalg.LinAlgError:
        raise SingularInnovation("innovation covariance is not positive definite")
    rho_inv = np.linalg.solve(chol.T, np.linalg.solve(chol, np.eye(channels)))
    gain = comp.cov @ c.T @ rho_inv
    mean = comp.mean + gain @ residual
    ikc = np.eye(N_STATES) - gain @ c
    cov = ikc @ comp.cov @ ikc.T + gain @ r @ gain.T
    cov = 0.5 * (cov + cov.T)
    _check_psd(cov)
    return GaussianComponent(mean, cov, comp.weight), residual, rho


def log_gaussian_density(residual: np.ndarray, rho: np.ndarray) -> float:
    """Log of the proper multivariate normal density of the residual under
    N(0, rho)."""
    m = residual.size
    try:
        chol = np.linalg.cholesky(rho)
    except np.linalg.LinAlgError:
        raise SingularInnovation("innovation covariance is not positive definite")
    half = np.linalg.solve(chol, residual)
    quad = float(half @ half)
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return -0.5 * (quad + log_det + m * math.log(2.0 * math.pi))


def gaussian_density(residual: np.ndarray, rho: np.ndarray) -> float:
    """Proper multivariate normal density of the residual under N(0, rho)."""
    return math.exp(log_gaussian_density(residual, rho))


def update_weights(
    components: Sequence[GaussianComponent],
    residuals: Sequence[np.ndarray],
    innovation_covs: Sequence[np.ndarray],
) -> np.ndarray:
    """Bayesian weight update with a 1e-12 floor applied before normalization.

    Evaluated in log space so that likelihood ratios survive even when every
    absolute density underflows (a live driver far off-model must not kill
    the mixture); only fully degenerate likelihoods abort.
    """
    log_liks = np.array(
        [
            (math.log(comp.weight) if comp.weight > 0.0 else -math.inf)
            + log_gaussian_density(res, rho)
            for comp, res, rho in zip(components, residuals, innovation_covs)
        ]
    )
    peak = float(np.max(log_liks))
    if not math.isfinite(peak):
        raise AllWeightsVanished("every component likelihood is degenerate")
    shifted = np.exp(log_liks - peak)
    shifted = np.maximum(shifted, WEIGHT_FLOOR)
    return shifted / shifted.sum()


def aggregate(components: Sequence[GaussianComponent]) -> np.ndarray:
    """Weighted mean of the component means."""
    out = np.zeros(N_STATES)
    for comp in components:
        out += comp.weight * comp.mean
    return out


def seed_internal_states(
    z1_rows: Sequence[float],
    z2_rows: Sequence[float],
    p: GeneralizedSteeringParams,
    params: VehicleParams,
) -> np.ndarray:
    """Warm-up seed for xi5..xi7: run the realization recursion over the first
    max-order measurement rows, with xi3 taken as the finite difference of the
    camera channel.  Bias-independent, hence identical for all components."""
    a1, a2, b0, b1, b2, b3, c0, d0, d1 = _coeffs(p)
    zeta = np.zeros(3)
    for k in range(len(z1_rows)):
        x1 = max(float(z1_rows[k]), params.v_min_invert)
        x3 = (z2_rows[k] - z2_rows[k - 1]) / params.ts if k >= 1 else 0.0
        state = np.array([x1, float(z2_rows[k]), x3, 0.0, *zeta])
        zeta = np.array(g_functions(state, p, params))
    return zeta


def init_mixture(
    hypotheses: Sequence[float],
    initial: tuple[float, float, float],
    zeta: np.ndarray | None = None,
    bias_var: float = 0.01,
    zeta_var: float = 0.01,
) -> MixtureEstimate:
    """Equal-weight mixture with one component per hypothesized camera bias.

    initial = (xdot0, y_obs0, ydot0) where y_obs0 is the camera-frame lateral
    reading; component i centers xi2 at y_obs0 - b_i with xi4 = b_i.  The
    xi1..xi3 block has unit variance; the bias variance defaults to 0.01
    (a confident lane-center hypothesis -- bias_var=1.0 restores a unit-wide
    prior, under which the hypotheses blur together).
    """
    if len(hypotheses) < 1:
        raise ValueError("need at least one bias hypothesis")
    xdot0, y_obs0, ydot0 = initial
    if zeta is None:
        zeta = np.zeros(3)
    comps = []
    for b in hypotheses:
        mean = np.array([xdot0, y_obs0 - b, ydot0, b, *zeta])
        cov = np.diag([1.0, 1.0, 1.0, bias_var, zeta_var, zeta_var, zeta_var])
        comps.append(GaussianComponent(mean, cov, 1.0 / len(hypotheses)))
    return MixtureEstimate(comps)


# --- structural rank checks --------------------------------------------------

def _numeric_rank(matrix: np.ndarray) -> int:
    s = np.linalg.svd(matrix, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > 1e-8 * s[0]))


def _linearization_state(speed: float) -> np.ndarray:
    state = np.zeros(N_STATES)
    state[0] = speed
    return state


def observability_rank(
    p: GeneralizedSteeringParams,
    params: VehicleParams,
    sensor_rows: str = "with_human",
    speed: float = 15.0,
    mode: str = "paper",
) -> int:
    """Rank of the observability matrix of (A_h, C-selection) at the nominal
    linearization point.  "camera_speed_only" drops the human steering row."""
    state = _linearization_state(speed)
    a = state_jacobian(state, p, params, mode)
    c = measurement_jacobian(state, p, params, mode)
    if sensor_rows == "camera_speed_only":
        c = c[:2]
    elif sensor_rows != "with_human":
        raise ValueError(f"unknown sensor_rows {sensor_rows!r}")
    blocks = []
    block = c.copy()
    for _ in range(N_STATES):
        blocks.append(block)
        block = block @ a
    return _numeric_rank(np.vstack(blocks))


def controllability_rank(
    p: GeneralizedSteeringParams,
    params: VehicleParams,
    speed: float = 15.0,
    mode: str = "paper",
) -> int:
    """Rank of the controllability matrix of (A_h, B_D); the bias state is
    structurally unreachable."""
    state = _linearization_state(speed)
    a = state_jacobian(state, p, params, mode)
    _, b4 = discrete_matrices(params)
    b = np.vstack([b4, np.zeros((3, 2))])
    blocks = []
    block = b.copy()
    for _ in range(N_STATES):
        blocks.append(block)
        block = a @ block
    return _numeric_rank(np.hstack(blocks))


# --- stepped filter ----------------------------------------------------------

@dataclass
class StepResult:
    aggregate_mean: np.ndarray
    weights: np.ndarray
    comp_means: np.ndarray


class GmmEkf:
    """Bank of EKFs over bias hypotheses with Bayesian weight updates.

    Single-owner stateful object advanced one measurement step at a time.
    The hot per-step kernel runs on the compiled backend when available
    (see advisor._backend); the pure-Python backend composes the module-level
    propagate/update/update_weights operations.
    """

    def __init__(
        self,
        p: GeneralizedSteeringParams,
        params: VehicleParams,
        noise: NoiseConfig,
        mixture: MixtureEstimate,
        use_human: bool = True,
        jacobian_mode: str = "exact",
        backend: str | None = None,
    ):
        from ._backend import resolve_backend

        _coeffs(p)  # validate orders early
        if jacobian_mode not in ("paper", "exact"):
            raise ValueError(f"unknown jacobian mode {jacobian_mode!r}")
        self.p = p
        self.params = params
        self.noise = noise
        self.use_human = use_human
        self.jacobian_mode = jacobian_mode
        self.backend = resolve_backend(backend)
        n = len(mixture.components)
        if self.backend == "compiled" and n > 64:
            raise ValueError("compiled kernel supports at most 64 components")
        self._means = np.array([c.mean for c in mixture.components], dtype=float)
        self._covs = np.array([c.cov for c in mixture.components], dtype=float)
        self._weights = np.array([c.weight for c in mixture.components], dtype=float)
        self._coeff_arr = np.array(_coeffs(p), dtype=float)
        self._n = n

    @property
    def mixture(self) -> MixtureEstimate:
        return MixtureEstimate(
            [
                GaussianComponent(self._means[i].copy(), self._covs[i].copy(), float(self._weights[i]))
                for i in range(self._n)
            ]
        )

    def step(self, u: np.ndarray, z: Measurement) -> StepResult:
        """One propagate + update + weight-update cycle for all components."""
        channels = 3 if self.use_human else 2
        z_arr = z.as_array(channels)
        if self.backend == "compiled":
            from . import _ekf_core

            status = _ekf_core.gmm_step(
                self._means,
                self._covs,
                self._weights,
                self._coeff_arr,
                self.params.ts,
                self.params.near_dist,
                self.params.far_dist,
                self.params.v_min_invert,
                np.asarray(u, dtype=float),
                z_arr,
                self.noise.R[:channels, :channels].copy(),
                self.noise.Q,
                1 if self.use_human else 0,
                1 if self.jacobian_mode == "paper" else 0,
                WEIGHT_FLOOR,
            )
            if status == 1:
                raise SingularInnovation("innovation covariance is not positive definite")
            if status == 2:
                raise AllWeightsVanished("every component likelihood underflowed")
            if status == 3:
                raise CovarianceNotPSD("covariance lost positive semi-definiteness")
            if status == 4:
                raise ValueError("xi1 must be positive")
            if status != 0:
                raise RuntimeError(f"kernel returned unknown status {status}")
        else:
            from ._ekf_py import gmm_step_py

            gmm_step_py(
                self._means,
                self._covs,
                self._weights,
                self.p,
                self.params,
                self.noise,
                np.asarray(u, dtype=float),
                z,
                self.use_human,
                self.jacobian_mode,
            )
        agg = (self._weights[:, None] * self._means).sum(axis=0)
        return StepResult(
            aggregate_mean=agg,
            weights=self._weights.copy(),
            comp_means=self._means.copy(),
        )
