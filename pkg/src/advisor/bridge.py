"""Live-session WebSocket bridge: the human steers the simulator in real time
while the estimator runs alongside.

Wire protocol (JSON text frames):
    client -> server: {"type":"start","scenario":{...}}   optional keys:
                          "record": path prefix for exported logs,
                          "estimator": {"coefficients": {...}, "no_human": bool,
                                        "jacobian": "paper"|"exact"},
                          "time_scale": float (wall-clock acceleration, tests)
                      {"type":"control","steer":f,"accel":f}
                      {"type":"pause"}        (toggles pause/resume)
                      {"type":"reset"}
    server -> client per tick:
        {"type":"telemetry","t":f,"truth":{"x","y","v","theta"},"camera_y":f,
         "estimate":{"mean":[7],"weights":[...],"component_y":[...]},"lat_err":f}
    errors: {"type":"error","code":s,"message":s}

Ticks advance at the sampling time in wall clock on an absolute schedule, so
frame count over a session is exact and drift stays bounded.  One session per
connection; state is torn down on disconnect.
"""
from __future__ import annotations

import asyncio
import json
from pathlib import Path

import websockets

from . import driver as drv
from .dynamics import ControlCommand
from .errors import AdvisorError
from .estimator import init_mixture
from .logs import TrajectoryLog
from .scenario import EstimationSession, ScenarioConfig, Simulation, _spawn_rngs

DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 8742
STEER_LIMIT = 1.5  # hard clamp below pi/2 so tan(delta) stays finite


def _error(code: str, message: str) -> str:
    return json.dumps({"type": "error", "code": code, "message": message})


class LiveSession:
    """One connection's scenario: truth simulator + estimation session."""

    def __init__(self, websocket):
        self.ws = websocket
        self.sim: Simulation | None = None
        self.session: EstimationSession | None = None
        self.cfg: ScenarioConfig | None = None
        self.traj: TrajectoryLog | None = None
        self.est_records: list = []
        self.record_prefix: str | None = None
        self.time_scale = 1.0
        self.paused = False
        self.running = False
        self._cmd = ControlCommand(delta=0.0, accel=0.0)
        self._clamped = False
        self._tick_task: asyncio.Task | None = None

    # -- message handling ------------------------------------------------

    async def handle(self, raw: str) -> None:
        try:
            msg = json.loads(raw)
            mtype = msg.get("type")
        except json.JSONDecodeError:
            await self.ws.send(_error("bad-json", "message is not valid JSON"))
            return
        if mtype == "start":
            await self._handle_start(msg)
        elif mtype == "control":
            self._handle_control(msg)
        elif mtype == "pause":
            self.paused = not self.paused
        elif mtype == "reset":
            await self._teardown()
        else:
            await self.ws.send(_error("bad-type", f"unknown message type {mtype!r}"))

    async def _handle_start(self, msg: dict) -> None:
        if self.running:
            await self.ws.send(_error("already-running", "session already running"))
            return
        try:
            cfg = ScenarioConfig.from_dict(msg.get("scenario") or {})
        except (KeyError, TypeError, ValueError) as exc:
            await self.ws.send(_error("bad-scenario", str(exc)))
            return
        est_cfg = msg.get("estimator") or {}
        try:
            if "coefficients" in est_cfg:
                p = drv.GeneralizedSteeringParams.from_dict(est_cfg["coefficients"])
            else:
                p = cfg.driver.coefficients
            session = EstimationSession(
                p,
                cfg.vehicle,
                cfg.noise,
                cfg.hypotheses,
                use_human=not est_cfg.get("no_human", False),
                jacobian_mode=est_cfg.get("jacobian", "exact"),
                nu_seed=cfg.seed,
            )
        except (ValueError, AdvisorError) as exc:
            await self.ws.send(_error("bad-estimator", str(exc)))
            return
        self.cfg = cfg
        _, sensor_rng = _spawn_rngs(cfg.seed)
        self.sim = Simulation(cfg, sensor_rng)
        self.session = session
        self.traj = TrajectoryLog()
        self.est_records = []
        self.record_prefix = msg.get("record")
        self.time_scale = float(msg.get("time_scale", 1.0))
        self._cmd = ControlCommand(delta=0.0, accel=0.0)
        self.paused = False
        self.running = True
        self._tick_task = asyncio.create_task(self._tick_loop())

    def _handle_control(self, msg: dict) -> None:
        try:
            steer = float(msg.get("steer", 0.0))
            accel = float(msg.get("accel", 0.0))
        except (TypeError, ValueError):
            return
        self._clamped = abs(steer) > STEER_LIMIT
        steer = max(-STEER_LIMIT, min(STEER_LIMIT, steer))
        self._cmd = ControlCommand(delta=steer, accel=accel)

    async def _teardown(self) -> None:
        self.running = False
        if self._tick_task is not None:
            self._tick_task.cancel()
            try:
                await self._tick_task
            except (asyncio.CancelledError, Exception):
                pass
            self._tick_task = None
        self._write_logs()
        self.sim = None
        self.session = None

    def _write_logs(self) -> None:
        if not self.record_prefix or self.traj is None or len(self.traj) == 0:
            return
        prefix = Path(self.record_prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        self.traj.save(Path(str(prefix) + ".traj.jsonl"))
        from .logs import EstimationLog

        est = EstimationLog(records=list(self.est_records))
        est.save(Path(str(prefix) + ".est.jsonl"))
        self.record_prefix = None

    # -- tick loop ---------------------------------------------------------

    async def _tick_loop(self) -> None:
        assert self.sim is not None and self.cfg is not None
        loop = asyncio.get_running_loop()
        ts_wall = self.cfg.vehicle.ts / self.time_scale
        next_deadline = loop.time() + ts_wall
        n_steps = self.cfg.n_steps
        try:
            while self.running and self.sim.k < n_steps:
                delay = next_deadline - loop.time()
                if delay > 0:
                    await asyncio.sleep(delay)
                next_deadline += ts_wall
                if self.paused:
                    # hold the clock anchor so resume does not burst-fire
                    next_deadline = loop.time() + ts_wall
                    continue
                try:
                    frame = self._tick()
                except AdvisorError as exc:
                    await self.ws.send(_error("numerical", str(exc)))
                    break
                await self.ws.send(json.dumps(frame))
            self.running = False
            self._write_logs()
        except asyncio.CancelledError:
            raise
        except websockets.ConnectionClosed:
            self.running = False

    def _tick(self) -> dict:
        """Sample the held command, log, estimate, advance the truth."""
        sim, session = self.sim, self.session
        cmd = self._cmd
        z = sim.sensors(cmd.delta)
        row = sim.log_row(cmd, z)
        self.traj.append(**row)
        record = session.feed(row)
        state = sim.state
        if record is not None:
            self.est_records.append(record)
            est_mean = record.est_mean
            weights = record.weights
            comp_y = [m[1] for m in record.comp_means]
            lat_err = record.lat_err
        else:
            # warm-up ticks: provisional mixture from the current reading
            provisional = init_mixture(self.cfg.hypotheses, (z[0], z[1], 0.0))
            est_mean = [float(v) for v in provisional.aggregate_mean]
            weights = [c.weight for c in provisional.components]
            comp_y = [float(c.mean[1]) for c in provisional.components]
            lat_err = abs(est_mean[1] - state.y)
        frame = {
            "type": "telemetry",
            "t": row["t"],
            "truth": {"x": state.x, "y": state.y, "v": state.v, "theta": state.theta},
            "camera_y": z[1],
            "estimate": {"mean": est_mean, "weights": weights, "component_y": comp_y},
            "lat_err": lat_err,
        }
        if self._clamped:
            frame["clamped"] = True
        sim.advance(cmd)
        return frame


async def _handler(websocket) -> None:
    session = LiveSession(websocket)
    try:
        async for raw in websocket:
            await session.handle(raw)
    except websockets.ConnectionClosed:
        pass
    finally:
        await session._teardown()


async def serve(host: str = DEFAULT_HOST, port: int = DEFAULT_PORT):
    return await websockets.serve(_handler, host, port)


def serve_forever(host: str = DEFAULT_HOST, port: int = DEFAULT_PORT) -> None:
    async def _run() -> None:
        server = await serve(host, port)
        actual_port = server.sockets[0].getsockname()[1]
        print(f"bridge listening on ws://{host}:{actual_port}", flush=True)
        await asyncio.Future()

    asyncio.run(_run())


class BridgeServer:
    """Thread-hosted bridge for tests and embedding."""

    def __init__(self, host: str = DEFAULT_HOST, port: int = DEFAULT_PORT):
        self.host = host
        self.port = port
        self._loop: asyncio.AbstractEventLoop | None = None
        self._thread = None

    def start(self) -> None:
        import threading

        ready = threading.Event()

        def _run() -> None:
            loop = asyncio.new_event_loop()
            asyncio.set_event_loop(loop)
            self._loop = loop
            server = loop.run_until_complete(serve(self.host, self.port))
            self.port = server.sockets[0].getsockname()[1]
            ready.set()
            try:
                loop.run_forever()
            finally:
                server.close()
                loop.run_until_complete(server.wait_closed())
                loop.close()

        self._thread = threading.Thread(target=_run, daemon=True)
        self._thread.start()
        if not ready.wait(timeout=10):
            raise RuntimeError("bridge server failed to start")

    def stop(self) -> None:
        if self._loop is not None:
            self._loop.call_soon_threadsafe(self._loop.stop)
        if self._thread is not None:
            self._thread.join(timeout=10)


if __name__ == "__main__":
    serve_forever()
