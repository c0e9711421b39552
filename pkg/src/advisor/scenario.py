"""Closed-loop simulation, scenario presets, and batch estimation runs.

A scenario couples a track, a driver (synthetic steering model, two-point
law, logged replay, or live commands through the bridge), sensor noise, and
the estimator configuration.  run_closed_loop produces a TrajectoryLog;
run_estimation replays one through the Gaussian-mixture EKF.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import driver as drv
from .dynamics import (
    ContinuousVehicleState,
    ControlCommand,
    VehicleParams,
    accel_map,
    step,
)
from .errors import StallError
from .estimator import (
    GmmEkf,
    Measurement,
    NoiseConfig,
    init_mixture,
    seed_internal_states,
)
from .logs import EstimationLog, EstimationRecord, TrajectoryLog
from .tracks import Track, TrackSpec, build_track

RK4_SUBSTEPS = 10


@dataclass(frozen=True)
class SpeedProfile:
    """Speed target over time: constant hold or a sinusoidal sweep."""

    kind: str = "hold"
    target: float = 15.0
    amplitude: float = 0.0
    period: float = 11.0

    def __post_init__(self) -> None:
        if self.kind not in ("hold", "sine"):
            raise ValueError(f"unknown speed profile kind {self.kind!r}")

    def target_at(self, t: float) -> float:
        if self.kind == "hold":
            return self.target
        return self.target + self.amplitude * math.sin(2.0 * math.pi * t / self.period)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "target": self.target,
            "amplitude": self.amplitude,
            "period": self.period,
        }


@dataclass(frozen=True)
class DriverConfig:
    """Synthetic driver: a steering model evaluated on track-relative angles
    plus Gaussian perturbation (white, optionally with a low-pass "remnant"
    component mimicking human broadband corrections)."""

    kind: str = "synthetic"
    coefficients: drv.GeneralizedSteeringParams = field(
        default_factory=drv.synthetic_default
    )
    gains: drv.TwoPointGains | None = None
    noise_sigma: float = 1e-3
    remnant_sigma: float = 0.0
    remnant_tau: float = 0.5
    max_steer: float = 0.6
    speed_kp: float = 0.5
    replay_path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("synthetic", "two_point", "logged"):
            raise ValueError(f"unknown driver kind {self.kind!r}")
        if self.kind == "two_point" and self.gains is None:
            raise ValueError("two_point driver needs gains")
        if self.kind == "logged" and not self.replay_path:
            raise ValueError("logged driver needs replay_path")

    def to_dict(self) -> dict:
        d: dict = {
            "kind": self.kind,
            "noise_sigma": self.noise_sigma,
            "remnant_sigma": self.remnant_sigma,
            "remnant_tau": self.remnant_tau,
            "max_steer": self.max_steer,
            "speed_kp": self.speed_kp,
        }
        if self.kind == "synthetic":
            d["coefficients"] = self.coefficients.to_dict()
        elif self.kind == "two_point":
            d["gains"] = {"kn": self.gains.kn, "kf": self.gains.kf, "ki": self.gains.ki}
        else:
            d["replay_path"] = self.replay_path
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DriverConfig":
        kwargs = dict(d)
        if "coefficients" in kwargs:
            kwargs["coefficients"] = drv.GeneralizedSteeringParams.from_dict(
                kwargs["coefficients"]
            )
        if "gains" in kwargs and kwargs["gains"] is not None:
            g = kwargs["gains"]
            kwargs["gains"] = drv.TwoPointGains(kn=g["kn"], kf=g["kf"], ki=g["ki"])
        return cls(**kwargs)


@dataclass(frozen=True)
class ScenarioConfig:
    track: TrackSpec = field(default_factory=lambda: TrackSpec(kind="straight"))
    initial_x: float = 0.0
    initial_y: float = -0.5
    initial_v: float = 15.0
    initial_theta: float = 0.0
    true_bias: float = 0.0
    hypotheses: tuple[float, ...] = (0.0, -1.8)
    duration: float = 30.0
    seed: int = 0
    driver: DriverConfig = field(default_factory=DriverConfig)
    speed: SpeedProfile = field(default_factory=SpeedProfile)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    vehicle: VehicleParams = field(default_factory=VehicleParams)

    def __post_init__(self) -> None:
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.vehicle.ts))

    def to_dict(self) -> dict:
        return {
            "track": self.track.to_dict(),
            "initial": {
                "x": self.initial_x,
                "y": self.initial_y,
                "v": self.initial_v,
                "theta": self.initial_theta,
            },
            "true_bias": self.true_bias,
            "hypotheses": list(self.hypotheses),
            "duration": self.duration,
            "seed": self.seed,
            "driver": self.driver.to_dict(),
            "speed": self.speed.to_dict(),
            "noise": self.noise.to_dict(),
            "vehicle": {
                "kappa": self.vehicle.kappa,
                "ts": self.vehicle.ts,
                "near_dist": self.vehicle.near_dist,
                "far_dist": self.vehicle.far_dist,
                "v_min_invert": self.vehicle.v_min_invert,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        kwargs: dict = {}
        if "track" in d:
            kwargs["track"] = TrackSpec.from_dict(d["track"])
        if "initial" in d:
            init = d["initial"]
            kwargs["initial_x"] = float(init.get("x", 0.0))
            kwargs["initial_y"] = float(init.get("y", -0.5))
            kwargs["initial_v"] = float(init.get("v", 15.0))
            kwargs["initial_theta"] = float(init.get("theta", 0.0))
        for key in ("true_bias", "duration"):
            if key in d:
                kwargs[key] = float(d[key])
        if "hypotheses" in d:
            kwargs["hypotheses"] = tuple(float(h) for h in d["hypotheses"])
        if "seed" in d:
            kwargs["seed"] = int(d["seed"])
        if "driver" in d:
            kwargs["driver"] = DriverConfig.from_dict(d["driver"])
        if "speed" in d:
            kwargs["speed"] = SpeedProfile(**d["speed"])
        if "noise" in d:
            kwargs["noise"] = NoiseConfig.from_dict(d["noise"])
        if "vehicle" in d:
            kwargs["vehicle"] = VehicleParams(**d["vehicle"])
        return cls(**kwargs)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# --- drivers -----------------------------------------------------------------

class SyntheticDriver:
    """Generalized steering model on track-relative angles plus noise."""

    def __init__(self, cfg: DriverConfig, params: VehicleParams, rng: np.random.Generator):
        self.cfg = cfg
        self.params = params
        self.rng = rng
        self.hist = drv.SteeringHistory(depth=8)
        self._remnant = 0.0
        self._alpha = (
            math.exp(-params.ts / cfg.remnant_tau) if cfg.remnant_tau > 0 else 0.0
        )
        self._remnant_q = cfg.remnant_sigma * math.sqrt(1.0 - self._alpha**2)

    def steer(self, phi: float, omega: float, xi3: float) -> float:
        self.hist.observe(phi, omega, xi3)
        if self.cfg.kind == "two_point":
            delta = drv.two_point_steer(self.hist, self.cfg.gains, self.params)
        else:
            delta = drv.generalized_steer(self.hist, self.cfg.coefficients)
        delta += self.cfg.noise_sigma * self.rng.standard_normal()
        if self.cfg.remnant_sigma > 0.0:
            self._remnant = (
                self._alpha * self._remnant + self._remnant_q * self.rng.standard_normal()
            )
            delta += self._remnant
        delta = float(np.clip(delta, -self.cfg.max_steer, self.cfg.max_steer))
        self.hist.record_steer(delta)
        return delta

    def accel(self, v: float, v_target: float) -> float:
        return self.cfg.speed_kp * (v_target - v)


class Simulation:
    """Truth integrator plus sensor sampler for one scenario tick loop."""

    def __init__(self, cfg: ScenarioConfig, sensor_rng: np.random.Generator):
        self.cfg = cfg
        self.params = cfg.vehicle
        self.track: Track = build_track(cfg.track)
        self.state = ContinuousVehicleState(
            cfg.initial_x, cfg.initial_y, cfg.initial_v, cfg.initial_theta
        )
        self._rng = sensor_rng
        self._sigmas = np.sqrt(np.diag(cfg.noise.R))
        self.k = 0

    @property
    def t(self) -> float:
        return self.k * self.params.ts

    def observe(self) -> tuple[float, float, float]:
        """Track-relative (phi, omega, xi3) seen by the driver."""
        s, tr, p = self.state, self.track, self.params
        xd = s.v * math.cos(s.theta)
        yd = s.v * math.sin(s.theta)
        xi3 = yd - tr.center_slope(s.x) * xd
        heading = math.atan2(xi3, xd)
        phi = heading + math.atan((s.y - tr.center(s.x + p.near_dist)) / p.near_dist)
        omega = heading + math.atan((s.y - tr.center(s.x + p.far_dist)) / p.far_dist)
        return phi, omega, xi3

    def sensors(self, delta: float) -> tuple[float, float, float]:
        """Speedometer, biased camera, and observed steering channels."""
        s = self.state
        noise = self._rng.standard_normal(3)
        z1 = s.v * math.cos(s.theta) + self._sigmas[0] * noise[0]
        z2 = s.y + self.cfg.true_bias + self._sigmas[1] * noise[1]
        z3 = delta + self._sigmas[2] * noise[2]
        return z1, z2, z3

    def advance(self, cmd: ControlCommand) -> None:
        """Integrate the truth over one sampling interval (RK4 substeps)."""
        dt = self.params.ts / RK4_SUBSTEPS
        state = self.state
        for _ in range(RK4_SUBSTEPS):
            state = step(state, cmd, self.params, dt)
        if state.v < self.params.v_min_invert:
            raise StallError(f"vehicle stalled at t={self.t:.2f}s (v={state.v:.3f})")
        self.state = state
        self.k += 1

    def log_row(self, cmd: ControlCommand, z: tuple[float, float, float]) -> dict:
        s = self.state
        pa = accel_map(cmd, s.v, s.theta, self.params)
        return {
            "t": self.t,
            "x": s.x,
            "y": s.y,
            "v": s.v,
            "theta": s.theta,
            "delta": cmd.delta,
            "accel": cmd.accel,
            "xddot": pa.xddot,
            "yddot": pa.yddot,
            "z1": z[0],
            "z2": z[1],
            "z3": z[2],
        }


def _spawn_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    driver_ss, sensor_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(driver_ss), np.random.default_rng(sensor_ss)


def run_closed_loop(cfg: ScenarioConfig) -> TrajectoryLog:
    """Simulate the scenario; deterministic given (config, seed)."""
    driver_rng, sensor_rng = _spawn_rngs(cfg.seed)
    sim = Simulation(cfg, sensor_rng)
    log = TrajectoryLog()
    if cfg.driver.kind == "logged":
        replay = TrajectoryLog.load(cfg.driver.replay_path)
        deltas, accels = replay["delta"], replay["accel"]
        if len(replay) < cfg.n_steps:
            raise ValueError("replay log shorter than the scenario duration")
        for k in range(cfg.n_steps):
            cmd = ControlCommand(delta=float(deltas[k]), accel=float(accels[k]))
            z = sim.sensors(cmd.delta)
            log.append(**sim.log_row(cmd, z))
            sim.advance(cmd)
        return log
    synth = SyntheticDriver(cfg.driver, cfg.vehicle, driver_rng)
    for k in range(cfg.n_steps):
        phi, omega, xi3 = sim.observe()
        delta = synth.steer(phi, omega, xi3)
        accel = synth.accel(sim.state.v, cfg.speed.target_at(sim.t))
        cmd = ControlCommand(delta=delta, accel=accel)
        z = sim.sensors(cmd.delta)
        log.append(**sim.log_row(cmd, z))
        sim.advance(cmd)
    return log


# --- estimation --------------------------------------------------------------

class EstimationSession:
    """Incremental GMM-EKF pass over trajectory rows.

    Shared by offline replay (run_estimation) and the live bridge so that a
    recorded session replays bit-identically.  The first max-order rows are
    consumed as warm-up to seed xi5..xi7; filtering starts on the next row.
    """

    def __init__(
        self,
        p: drv.GeneralizedSteeringParams,
        params: VehicleParams,
        noise: NoiseConfig,
        hypotheses: tuple[float, ...],
        use_human: bool = True,
        jacobian_mode: str = "exact",
        nu_seed: int = 0,
        bias_var: float = 0.01,
        zeta_var: float = 0.01,
        backend: str | None = None,
    ):
        self.p = p
        self.params = params
        self.noise = noise
        self.hypotheses = tuple(hypotheses)
        self.use_human = use_human
        self.jacobian_mode = jacobian_mode
        self.bias_var = bias_var
        self.zeta_var = zeta_var
        self.backend = backend
        self.warmup = max(p.max_order, 1)
        self._rows: list[dict] = []
        self._prev_row: dict | None = None
        self._ekf: GmmEkf | None = None
        self._nu_rng = np.random.default_rng(np.random.SeedSequence(nu_seed))

    @property
    def ekf(self) -> GmmEkf | None:
        return self._ekf

    def feed(self, row: dict) -> EstimationRecord | None:
        """Consume one trajectory row; returns a record once filtering runs."""
        if self._ekf is None:
            self._rows.append(row)
            if len(self._rows) < self.warmup:
                return None
            z1s = [r["z1"] for r in self._rows]
            z2s = [r["z2"] for r in self._rows]
            zeta = seed_internal_states(z1s, z2s, self.p, self.params)
            mixture = init_mixture(
                self.hypotheses,
                (z1s[-1], z2s[-1], 0.0),
                zeta,
                bias_var=self.bias_var,
                zeta_var=self.zeta_var,
            )
            self._ekf = GmmEkf(
                self.p,
                self.params,
                self.noise,
                mixture,
                use_human=self.use_human,
                jacobian_mode=self.jacobian_mode,
                backend=self.backend,
            )
            self._prev_row = row
            self._rows = []
            return None
        prev = self._prev_row
        nu = self.noise.nu_sigma * self._nu_rng.standard_normal(2)
        u = np.array([prev["xddot"] + nu[0], prev["yddot"] + nu[1]])
        meas = Measurement(z1=row["z1"], z2=row["z2"], z3=row["z3"])
        result = self._ekf.step(u, meas)
        self._prev_row = row
        lat_err = abs(float(result.aggregate_mean[1]) - row["y"])
        return EstimationRecord(
            t=row["t"],
            est_mean=[float(v) for v in result.aggregate_mean],
            weights=[float(w) for w in result.weights],
            lat_err=lat_err,
            comp_means=[[float(v) for v in m] for m in result.comp_means],
        )


def run_estimation(
    log: TrajectoryLog,
    p: drv.GeneralizedSteeringParams,
    params: VehicleParams,
    noise: NoiseConfig,
    hypotheses: tuple[float, ...],
    use_human: bool = True,
    jacobian_mode: str = "exact",
    nu_seed: int = 0,
    bias_var: float = 0.01,
    zeta_var: float = 0.01,
    backend: str | None = None,
) -> EstimationLog:
    """Full GMM-EKF pass over a trajectory log."""
    if len(log) == 0:
        raise ValueError("empty trajectory log")
    session = EstimationSession(
        p, params, noise, hypotheses,
        use_human=use_human,
        jacobian_mode=jacobian_mode,
        nu_seed=nu_seed,
        bias_var=bias_var,
        zeta_var=zeta_var,
        backend=backend,
    )
    out = EstimationLog()
    for k in range(len(log)):
        record = session.feed(log.row(k))
        if record is not None:
            out.append(record)
    return out


@dataclass
class LateralErrorSummary:
    t: np.ndarray
    err: np.ndarray
    steady_mean: float
    steady_std: float
    steady_rmse: float


def lateral_error_series(
    est: EstimationLog, steady_after: float = 10.0
) -> LateralErrorSummary:
    """Per-step lateral error plus steady-state statistics."""
    if len(est) == 0:
        raise ValueError("empty estimation log")
    t = est.t
    err = est.lat_err
    mask = t >= steady_after
    if not mask.any():
        mask = np.ones_like(t, dtype=bool)
    window = err[mask]
    return LateralErrorSummary(
        t=t,
        err=err,
        steady_mean=float(window.mean()),
        steady_std=float(window.std()),
        steady_rmse=float(np.sqrt(np.mean(window**2))),
    )


# --- presets -----------------------------------------------------------------

IDENT_TRACK_BASE = ((20.0, 400.0), (4.0, 150.0), (1.5, 75.0), (0.04, 18.0))


def ident_track(speed: float = 15.0) -> TrackSpec:
    """Multi-sine identification track; wavelengths scale with speed so the
    lateral-acceleration demand stays constant across the sweep."""
    scale = speed / 15.0
    comps = tuple((a, w * scale) for a, w in IDENT_TRACK_BASE)
    return TrackSpec(kind="curved", length=60.0 * speed, components=comps)


def default_scenario(seed: int = 0) -> ScenarioConfig:
    """The estimation benchmark: straight lane, start 0.5 m off-center at
    15 m/s, ambiguous lane centers 0 and -1.8 m."""
    return ScenarioConfig(seed=seed)


def identification_scenario(
    speed: float = 15.0, seed: int = 0, noise_sigma: float = 1e-4
) -> ScenarioConfig:
    """Persistently exciting run for fitting and order selection."""
    return ScenarioConfig(
        track=ident_track(speed),
        initial_v=speed,
        seed=seed,
        driver=DriverConfig(noise_sigma=noise_sigma),
        speed=SpeedProfile(kind="sine", target=speed, amplitude=4.0, period=11.0),
    )


def transfer_training_scenario(seed: int = 0) -> ScenarioConfig:
    """Straight-track training run with speed wobble and a slow attention-
    wander remnant: enough low-frequency excitation to pin the model's
    steady-state transfer so coefficients carry over to curved roads."""
    return ScenarioConfig(
        track=TrackSpec(kind="straight"),
        seed=seed,
        duration=60.0,
        driver=DriverConfig(noise_sigma=1e-3, remnant_sigma=1e-2, remnant_tau=3.0),
        speed=SpeedProfile(kind="sine", target=15.0, amplitude=4.0, period=11.0),
    )


def curved_validation_scenario(seed: int = 0) -> ScenarioConfig:
    """The default curved track at constant nominal speed."""
    return ScenarioConfig(
        track=TrackSpec(kind="curved", components=((20.0, 400.0),)),
        seed=seed,
        driver=DriverConfig(noise_sigma=1e-3),
    )


PRESETS = {
    "default": default_scenario,
    "identification": identification_scenario,
    "transfer-training": transfer_training_scenario,
    "curved-validation": curved_validation_scenario,
}
