// Wire protocol for the estimation bridge (JSON text frames over WebSocket).

export interface TruthPose {
    x: number;
    y: number;
    v: number;
    theta: number;
}

export interface EstimateFrame {
    mean: number[];        // 7 augmented-state entries, mean[1] is lateral position
    weights: number[];     // one per lane hypothesis, sums to 1
    component_y: number[]; // per-hypothesis lateral position estimates
}

export interface Telemetry {
    type: "telemetry";
    t: number;
    truth: TruthPose;
    camera_y: number;      // biased lane reading as the camera saw it
    estimate: EstimateFrame;
    lat_err: number;
    clamped?: boolean;
}

export interface BridgeError {
    type: "error";
    code: string;
    message: string;
}

export type ServerMessage = Telemetry | BridgeError;

function isFiniteNumber(v: unknown): v is number {
    return typeof v === "number" && Number.isFinite(v);
}

function isNumberArray(v: unknown): v is number[] {
    return Array.isArray(v) && v.every(isFiniteNumber);
}

export function parseServerMessage(raw: string): ServerMessage | null {
    let msg: any;
    try {
        msg = JSON.parse(raw);
    } catch {
        return null;
    }
    if (msg?.type === "error" && typeof msg.code === "string") {
        return { type: "error", code: msg.code, message: String(msg.message ?? "") };
    }
    if (msg?.type !== "telemetry") return null;
    const truth = msg.truth;
    const est = msg.estimate;
    if (
        !isFiniteNumber(msg.t) ||
        !truth || !isFiniteNumber(truth.x) || !isFiniteNumber(truth.y) ||
        !isFiniteNumber(truth.v) || !isFiniteNumber(truth.theta) ||
        !isFiniteNumber(msg.camera_y) || !isFiniteNumber(msg.lat_err) ||
        !est || !isNumberArray(est.mean) || est.mean.length !== 7 ||
        !isNumberArray(est.weights) || !isNumberArray(est.component_y) ||
        est.weights.length !== est.component_y.length
    ) {
        return null;
    }
    return {
        type: "telemetry",
        t: msg.t,
        truth: { x: truth.x, y: truth.y, v: truth.v, theta: truth.theta },
        camera_y: msg.camera_y,
        estimate: { mean: est.mean, weights: est.weights, component_y: est.component_y },
        lat_err: msg.lat_err,
        clamped: msg.clamped === true,
    };
}

export interface StartOptions {
    scenario?: Record<string, unknown>;
    record?: string;
    timeScale?: number;
    estimator?: Record<string, unknown>;
}

export function buildStart(opts: StartOptions = {}): string {
    const msg: Record<string, unknown> = { type: "start", scenario: opts.scenario ?? {} };
    if (opts.record) msg.record = opts.record;
    if (opts.timeScale) msg.time_scale = opts.timeScale;
    if (opts.estimator) msg.estimator = opts.estimator;
    return JSON.stringify(msg);
}

export function buildControl(steer: number, accel: number): string {
    return JSON.stringify({ type: "control", steer, accel });
}

export function buildPause(): string {
    return JSON.stringify({ type: "pause" });
}

export function buildReset(): string {
    return JSON.stringify({ type: "reset" });
}
