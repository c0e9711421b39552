"""Kinematic bicycle plant, feedback-linearization maps, and the discrete bias model.

The continuous state is (x, y, v, theta) with steering angle delta and
longitudinal acceleration a as inputs.  The discrete 4-state model stacks
(xi1, xi2, xi3, xi4) = (xdot, y, ydot, b) where b is the constant camera
bias; its inputs are the planar accelerations (xddot, yddot) produced by
the feedback-linearization map R(v, theta).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import StallError


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class VehicleParams:
    """Plant and preview geometry constants.

    kappa is the steering-to-yaw gain, read as 1/wheelbase (default 2.8 m
    wheelbase).  near_dist/far_dist are the preview distances of the two
    visual reference points.  v_min_invert bounds the 1/v amplification when
    inverting the input map.
    """

    kappa: float = 1.0 / 2.8
    ts: float = 0.05
    near_dist: float = 6.2
    far_dist: float = 20.0
    v_min_invert: float = 0.1

    def __post_init__(self) -> None:
        if self.kappa <= 0.0:
            raise ValueError("kappa must be positive")
        if self.ts <= 0.0:
            raise ValueError("ts must be positive")
        if self.near_dist <= 0.0:
            raise ValueError("near_dist must be positive")
        if self.far_dist <= self.near_dist:
            raise ValueError("far_dist must exceed near_dist")
        if self.v_min_invert <= 0.0:
            raise ValueError("v_min_invert must be positive")


@dataclass(frozen=True)
class ContinuousVehicleState:
    x: float
    y: float
    v: float
    theta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.v, self.theta])


@dataclass(frozen=True)
class ControlCommand:
    delta: float
    accel: float


@dataclass(frozen=True)
class PlanarAcceleration:
    xddot: float
    yddot: float


@dataclass(frozen=True)
class DiscreteState:
    xi1: float
    xi2: float
    xi3: float
    xi4: float

    def as_array(self) -> np.ndarray:
        return np.array([self.xi1, self.xi2, self.xi3, self.xi4])


def _check_finite(*values: float) -> None:
    for value in values:
        if not math.isfinite(value):
            raise ValueError("non-finite input")


def derivative(
    state: ContinuousVehicleState, cmd: ControlCommand, params: VehicleParams
) -> tuple[float, float, float, float]:
    """Time derivative (xdot, ydot, vdot, thetadot) of the bicycle model."""
    _check_finite(state.x, state.y, state.v, state.theta, cmd.delta, cmd.accel)
    if abs(cmd.delta) >= math.pi / 2.0:
        raise ValueError("steering angle must satisfy |delta| < pi/2")
    return (
        state.v * math.cos(state.theta),
        state.v * math.sin(state.theta),
        cmd.accel,
        state.v * params.kappa * math.tan(cmd.delta),
    )


def step(
    state: ContinuousVehicleState,
    cmd: ControlCommand,
    params: VehicleParams,
    dt: float,
) -> ContinuousVehicleState:
    """One fixed-step RK4 integration step with the command held constant."""
    if not 0.0 < dt <= params.ts:
        raise ValueError("dt must satisfy 0 < dt <= params.ts")

    def f(s: tuple[float, float, float, float]) -> tuple[float, float, float, float]:
        probe = ContinuousVehicleState(*s)
        return derivative(probe, cmd, params)

    s0 = (state.x, state.y, state.v, state.theta)
    k1 = f(s0)
    k2 = f(tuple(s + 0.5 * dt * k for s, k in zip(s0, k1)))
    k3 = f(tuple(s + 0.5 * dt * k for s, k in zip(s0, k2)))
    k4 = f(tuple(s + dt * k for s, k in zip(s0, k3)))
    x, y, v, theta = (
        s + dt / 6.0 * (a + 2.0 * b + 2.0 * c + d)
        for s, a, b, c, d in zip(s0, k1, k2, k3, k4)
    )
    if not all(math.isfinite(u) for u in (x, y, v, theta)):
        raise ValueError("non-finite state after integration step")
    return ContinuousVehicleState(x, y, v, wrap_angle(theta))


def accel_map(
    cmd: ControlCommand, v: float, theta: float, params: VehicleParams
) -> PlanarAcceleration:
    """Map physical controls (a, tan delta) to planar accelerations via R(v, theta)."""
    tan_delta = math.tan(cmd.delta)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    vsq_kappa = v * v * params.kappa
    return PlanarAcceleration(
        xddot=cos_t * cmd.accel - vsq_kappa * sin_t * tan_delta,
        yddot=sin_t * cmd.accel + vsq_kappa * cos_t * tan_delta,
    )


def accel_map_inverse(
    pa: PlanarAcceleration, v: float, theta: float, params: VehicleParams
) -> ControlCommand:
    """Invert R(v, theta); defined only while the vehicle is moving."""
    if v < params.v_min_invert:
        raise StallError(
            f"speed {v:.3f} m/s below invertibility floor {params.v_min_invert}"
        )
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    accel = cos_t * pa.xddot + sin_t * pa.yddot
    tan_delta = (-sin_t * pa.xddot + cos_t * pa.yddot) / (v * v * params.kappa)
    return ControlCommand(delta=math.atan(tan_delta), accel=accel)


def discrete_matrices(params: VehicleParams) -> tuple[np.ndarray, np.ndarray]:
    """Discrete-time (A, B) of the 4-state bias-augmented model.

    Row 4 of both matrices is structurally zero apart from A[3, 3] = 1: the
    bias state is constant and cannot be controlled.
    """
    ts = params.ts
    a = np.array(
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, ts, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    b = np.array(
        [
            [ts, 0.0],
            [0.0, ts * ts / 2.0],
            [0.0, ts],
            [0.0, 0.0],
        ]
    )
    return a, b
