"""Visual angles, the two-point and generalized steering models, and identification.

The generalized model is an autoregressive law

    delta(k) = sum_i a_i delta(k-i) + sum_i b_i phi(k-i)
             + sum_i c_i Omega(k-i) + sum_i d_i xi3(k-i)

over the near-point angle phi, far-point angle Omega, and lateral velocity
xi3.  The two-point model is the proportional-integral special case.  Both
are fit by ordinary least squares; order selection minimizes BIC.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import VehicleParams
from .errors import RankDeficient, ZeroVariance
from .logs import TrajectoryLog
from .tracks import Track, TrackSpec, build_track

# Rank tolerance for the least-squares solves: the angle regressors are
# highly collinear on straight constant-speed data.
RANK_RCOND = 1e-10


@dataclass(frozen=True)
class VisualAngles:
    phi: float
    omega: float


@dataclass(frozen=True)
class TwoPointGains:
    kn: float
    kf: float
    ki: float


# Reference gains from the original human-driver derivation of the two-point law.
REFERENCE_TWO_POINT = TwoPointGains(kn=-0.2, kf=0.7, ki=0.087)


@dataclass(frozen=True)
class GeneralizedSteeringParams:
    """ARX coefficients; a has indices 1..na, the rest 0..n.

    orders = (na, nb, nc, nd) = (len(a), len(b)-1, len(c)-1, len(d)-1).
    """

    a: tuple[float, ...]
    b: tuple[float, ...]
    c: tuple[float, ...]
    d: tuple[float, ...]

    def __post_init__(self) -> None:
        for name in ("b", "c", "d"):
            if len(getattr(self, name)) < 1:
                raise ValueError(f"{name} needs at least the lag-0 coefficient")
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        object.__setattr__(self, "c", tuple(float(v) for v in self.c))
        object.__setattr__(self, "d", tuple(float(v) for v in self.d))

    @property
    def orders(self) -> tuple[int, int, int, int]:
        return (len(self.a), len(self.b) - 1, len(self.c) - 1, len(self.d) - 1)

    @property
    def max_order(self) -> int:
        return max(self.orders)

    @property
    def n_coefficients(self) -> int:
        return len(self.a) + len(self.b) + len(self.c) + len(self.d)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.a, self.b, self.c, self.d])

    def ar_roots(self) -> np.ndarray:
        """Roots of z^na - a1 z^(na-1) - ... - a_na (diagnostic only)."""
        if not self.a:
            return np.array([])
        return np.roots(np.concatenate([[1.0], -np.asarray(self.a)]))

    def is_ar_stable(self) -> bool:
        roots = self.ar_roots()
        return bool(np.all(np.abs(roots) < 1.0)) if roots.size else True

    def to_dict(self) -> dict:
        return {"a": list(self.a), "b": list(self.b), "c": list(self.c), "d": list(self.d)}

    @classmethod
    def from_dict(cls, d: dict) -> "GeneralizedSteeringParams":
        return cls(a=tuple(d["a"]), b=tuple(d["b"]), c=tuple(d["c"]), d=tuple(d["d"]))


def reference_fit() -> GeneralizedSteeringParams:
    """Generalized-model coefficients from the original human-driver study,
    indices mapped positionally.

    The AR polynomial as given is unstable (see ar_roots); use for prediction
    comparisons only, never as a closed-loop driver.
    """
    return GeneralizedSteeringParams(
        a=(1.47, 0.51),
        b=(-5.73, 17.32, -17.65, 6.12),
        c=(0.11,),
        d=(0.02, -0.02),
    )


def synthetic_default() -> GeneralizedSteeringParams:
    """Default synthetic-driver coefficients: (2,3,0,1) structure, closed-loop
    stable for speeds 8-50 m/s (spectral radius 0.885 over that range)."""
    return GeneralizedSteeringParams(
        a=(1.12, -0.31),
        b=(0.30, -0.86, 0.43, -0.08),
        c=(0.054,),
        d=(-0.048, 0.0395),
    )


def two_point_embedding(
    gains: TwoPointGains, params: VehicleParams
) -> GeneralizedSteeringParams:
    """Exact rewrite of the two-point law as a (1,1,1,0) generalized model."""
    return GeneralizedSteeringParams(
        a=(1.0,),
        b=(gains.kn + gains.ki * params.ts, gains.kn),
        c=(gains.kf, gains.kf),
        d=(0.0,),
    )


class SteeringHistory:
    """Ring buffers of recent signals.

    Angle buffers lead the steering buffer by one sample: after
    observe(phi, omega, xi3), phi(0) is the current angle, while delta(1)
    is the previous steering command (record_steer appends the new one).
    """

    def __init__(self, depth: int = 8):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.depth = depth
        self._delta: deque[float] = deque([0.0] * depth, maxlen=depth)
        self._phi: deque[float] = deque([0.0] * depth, maxlen=depth)
        self._omega: deque[float] = deque([0.0] * depth, maxlen=depth)
        self._xi3: deque[float] = deque([0.0] * depth, maxlen=depth)

    def observe(self, phi: float, omega: float, xi3: float) -> None:
        self._phi.appendleft(phi)
        self._omega.appendleft(omega)
        self._xi3.appendleft(xi3)

    def record_steer(self, delta: float) -> None:
        self._delta.appendleft(delta)

    def delta(self, i: int) -> float:
        """delta(k-i) for i >= 1."""
        if i < 1:
            raise IndexError("steering lags start at 1")
        return self._delta[i - 1]

    def phi(self, i: int) -> float:
        return self._phi[i]

    def omega(self, i: int) -> float:
        return self._omega[i]

    def xi3(self, i: int) -> float:
        return self._xi3[i]


def visual_angles(
    xi1: float, xi2: float, xi3: float, params: VehicleParams
) -> VisualAngles:
    """Near- and far-point angles from longitudinal speed, lateral offset,
    and lateral velocity."""
    if xi1 <= 0.0:
        raise ValueError("xi1 must be positive")
    heading = math.atan(xi3 / xi1)
    return VisualAngles(
        phi=heading + math.atan(xi2 / params.near_dist),
        omega=heading + math.atan(xi2 / params.far_dist),
    )


def two_point_steer(
    hist: SteeringHistory, gains: TwoPointGains, params: VehicleParams
) -> float:
    """Proportional-integral two-point law (autoregressive discrete form)."""
    return (
        hist.delta(1)
        + gains.kn * (hist.phi(0) + hist.phi(1))
        + gains.kf * (hist.omega(0) + hist.omega(1))
        + gains.ki * params.ts * hist.phi(0)
    )


def generalized_steer(hist: SteeringHistory, p: GeneralizedSteeringParams) -> float:
    if hist.depth < p.max_order:
        raise ValueError("history depth insufficient for the configured orders")
    na, nb, nc, nd = p.orders
    delta = 0.0
    for i in range(1, na + 1):
        delta += p.a[i - 1] * hist.delta(i)
    for i in range(nb + 1):
        delta += p.b[i] * hist.phi(i)
    for i in range(nc + 1):
        delta += p.c[i] * hist.omega(i)
    for i in range(nd + 1):
        delta += p.d[i] * hist.xi3(i)
    return delta


# --- identification ---------------------------------------------------------

def log_signals(
    log: TrajectoryLog,
    params: VehicleParams,
    track: Track | TrackSpec | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Track-relative regressor signals (phi, omega, xi3, delta) from truth columns.

    On a curved track the angles are measured against the centerline at the
    near/far preview distances and xi3 is the deviation rate relative to the
    local centerline slope; on a straight track this reduces to the plain
    visual-angle formulas.
    """
    if track is None:
        track = build_track(TrackSpec(kind="straight"))
    elif isinstance(track, TrackSpec):
        track = build_track(track)
    x, y = log["x"], log["y"]
    v, theta = log["v"], log["theta"]
    delta = log["delta"]
    xd = v * np.cos(theta)
    yd = v * np.sin(theta)
    slope = np.array([track.center_slope(xi) for xi in x])
    xi3 = yd - slope * xd
    heading = np.arctan2(xi3, xd)
    e_near = y - np.array([track.center(xi + params.near_dist) for xi in x])
    e_far = y - np.array([track.center(xi + params.far_dist) for xi in x])
    phi = heading + np.arctan(e_near / params.near_dist)
    omega = heading + np.arctan(e_far / params.far_dist)
    return phi, omega, xi3, delta


def regressor_matrix(
    phi: np.ndarray,
    omega: np.ndarray,
    xi3: np.ndarray,
    delta: np.ndarray,
    orders: tuple[int, int, int, int],
    start: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked ARX regressors and targets, rows k = start..n-1."""
    na, nb, nc, nd = orders
    k0 = max(na, nb, nc, nd) if start is None else start
    if k0 < max(na, nb, nc, nd):
        raise ValueError("start row smaller than the maximum lag")
    n = len(delta)
    rows = np.arange(k0, n)
    cols = []
    for i in range(1, na + 1):
        cols.append(delta[rows - i])
    for i in range(nb + 1):
        cols.append(phi[rows - i])
    for i in range(nc + 1):
        cols.append(omega[rows - i])
    for i in range(nd + 1):
        cols.append(xi3[rows - i])
    return np.column_stack(cols), delta[rows]


@dataclass
class FitReport:
    """Result of a least-squares fit plus one-step-ahead training metrics."""

    model: str  # "two_point" | "generalized"
    gains: TwoPointGains | None
    params: GeneralizedSteeringParams | None
    rmse: float
    r2: float
    residuals: np.ndarray

    @property
    def orders(self) -> tuple[int, int, int, int]:
        if self.params is not None:
            return self.params.orders
        return (1, 1, 1, 0)

    def to_dict(self) -> dict:
        d: dict = {
            "model": self.model,
            "orders": list(self.orders),
            "rmse": self.rmse,
            "r2": self.r2,
        }
        if self.model == "two_point":
            d["coefficients"] = {
                "kn": self.gains.kn, "kf": self.gains.kf, "ki": self.gains.ki,
            }
        else:
            d["coefficients"] = self.params.to_dict()
        return d

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def load_fit(path: str | Path) -> FitReport:
    with open(path) as fh:
        d = json.load(fh)
    if d["model"] == "two_point":
        c = d["coefficients"]
        gains = TwoPointGains(kn=c["kn"], kf=c["kf"], ki=c["ki"])
        return FitReport("two_point", gains, None, d["rmse"], d["r2"], np.array([]))
    params = GeneralizedSteeringParams.from_dict(d["coefficients"])
    return FitReport("generalized", None, params, d["rmse"], d["r2"], np.array([]))


def _metrics(pred: np.ndarray, actual: np.ndarray) -> tuple[float, float, np.ndarray]:
    residuals = actual - pred
    rmse = float(np.sqrt(np.mean(residuals**2)))
    sst = float(np.sum((actual - actual.mean()) ** 2))
    if sst == 0.0:
        raise ZeroVariance("target series has zero variance")
    r2 = 1.0 - float(np.sum(residuals**2)) / sst
    return rmse, r2, residuals


def _lstsq(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    beta, _, rank, _ = np.linalg.lstsq(x, y, rcond=RANK_RCOND)
    if rank < x.shape[1]:
        raise RankDeficient(
            f"regressor matrix rank {rank} < {x.shape[1]} columns"
        )
    return beta

def fit_two_point(
    log: TrajectoryLog,
    params: VehicleParams,
    track: Track | TrackSpec | None = None,
) -> FitReport:
    """Least-squares two-point gains; linear in (kn, kf, ki) with
    delta(k) - delta(k-1) as the target."""
    if len(log) < 50:
        raise ValueError("need at least 50 samples")
    phi, omega, xi3, delta = log_signals(log, params, track)
    rows = np.arange(1, len(delta))
    x = np.column_stack(
        [
            phi[rows] + phi[rows - 1],
            omega[rows] + omega[rows - 1],
            params.ts * phi[rows],
        ]
    )
    y = delta[rows] - delta[rows - 1]
    beta = _lstsq(x, y)
    gains = TwoPointGains(kn=float(beta[0]), kf=float(beta[1]), ki=float(beta[2]))
    pred = delta[rows - 1] + x @ beta
    rmse, r2, residuals = _metrics(pred, delta[rows])
    return FitReport("two_point", gains, None, rmse, r2, residuals)


def fit_generalized(
    log: TrajectoryLog,
    orders: tuple[int, int, int, int],
    params: VehicleParams,
    track: Track | TrackSpec | None = None,
) -> FitReport:
    """Ordinary least squares over the generalized-model regressors."""
    na, nb, nc, nd = orders
    p_count = na + (nb + 1) + (nc + 1) + (nd + 1)
    if len(log) < 10 * p_count:
        raise ValueError(f"need at least {10 * p_count} samples for {p_count} coefficients")
    phi, omega, xi3, delta = log_signals(log, params, track)
    x, y = regressor_matrix(phi, omega, xi3, delta, orders)
    beta = _lstsq(x, y)
    fitted = GeneralizedSteeringParams(
        a=tuple(beta[:na]),
        b=tuple(beta[na : na + nb + 1]),
        c=tuple(beta[na + nb + 1 : na + nb + nc + 2]),
        d=tuple(beta[na + nb + nc + 2 :]),
    )
    rmse, r2, residuals = _metrics(x @ beta, y)
    return FitReport("generalized", None, fitted, rmse, r2, residuals)


def select_order(
    log: TrajectoryLog,
    max_orders: tuple[int, int, int, int],
    params: VehicleParams,
    track: Track | TrackSpec | None = None,
) -> tuple[int, int, int, int]:
    """Exhaustive BIC grid search; all candidates score over a common row range.

    BIC = n ln(SSE/n) + p ln(n); ties break toward fewer coefficients.
    Candidate solves use the Gram matrix (fast); the surviving orders should
    be refit with fit_generalized.
    """
    if any(m > 6 for m in max_orders) or any(m < 0 for m in max_orders):
        raise ValueError("max orders must lie in 0..6")
    phi, omega, xi3, delta = log_signals(log, params, track)
    ma, mb, mc, md = max_orders
    k0 = max(max_orders)
    # full regressor matrix at maximum orders; candidates select columns
    x_full, y = regressor_matrix(phi, omega, xi3, delta, (ma, mb, mc, md), start=k0)
    n = len(y)
    gram = x_full.T @ x_full
    xty = x_full.T @ y
    yty = float(y @ y)
    col_a = list(range(ma))
    col_b = list(range(ma, ma + mb + 1))
    col_c = list(range(ma + mb + 1, ma + mb + mc + 2))
    col_d = list(range(ma + mb + mc + 2, ma + mb + mc + md + 3))
    best: tuple[float, int, tuple[int, int, int, int]] | None = None
    any_solved = False
    for na in range(ma + 1):
        for nb in range(mb + 1):
            for nc in range(mc + 1):
                for nd in range(md + 1):
                    idx = (
                        col_a[:na] + col_b[: nb + 1]
                        + col_c[: nc + 1] + col_d[: nd + 1]
                    )
                    sub = gram[np.ix_(idx, idx)]
                    try:
                        chol = np.linalg.cholesky(
                            sub + RANK_RCOND * np.trace(sub) / len(idx) * np.eye(len(idx))
                        )
                    except np.linalg.LinAlgError:
                        continue
                    rhs = xty[idx]
                    beta = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
                    sse = max(yty - 2.0 * beta @ rhs + beta @ sub @ beta, 1e-300)
                    any_solved = True
                    p = len(idx)
                    bic = n * math.log(sse / n) + p * math.log(n)
                    key = (bic, p, (na, nb, nc, nd))
                    if best is None or key < best:
                        best = key
    if not any_solved or best is None:
        raise RankDeficient("every candidate regressor matrix was rank deficient")
    return best[2]


# --- prediction on held-out data -------------------------------------------

def predict_generalized(
    p: GeneralizedSteeringParams,
    phi: np.ndarray,
    omega: np.ndarray,
    xi3: np.ndarray,
    delta: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """One-step-ahead predictions after the warm-up window.

    Returns (predicted, actual) aligned over rows max_order..n-1; the logged
    past steering enters the autoregressive lags.
    """
    x, y = regressor_matrix(phi, omega, xi3, delta, p.orders)
    return x @ p.flat(), y


def predict_two_point(
    gains: TwoPointGains,
    params: VehicleParams,
    phi: np.ndarray,
    omega: np.ndarray,
    xi3: np.ndarray,
    delta: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    rows = np.arange(1, len(delta))
    pred = (
        delta[rows - 1]
        + gains.kn * (phi[rows] + phi[rows - 1])
        + gains.kf * (omega[rows] + omega[rows - 1])
        + gains.ki * params.ts * phi[rows]
    )
    return pred, delta[rows]
