// Steering/pedal input: arrow keys ramp the wheel (self-centering when
// released), a gamepad axis maps linearly when present. The control stream
// runs at a fixed rate independent of rendering.

export interface InputConfig {
    maxSteer: number;       // rad
    steerRate: number;      // rad/s while a key is held
    centerRate: number;     // rad/s decay toward zero with no input
    maxAccel: number;       // m/s^2
    accelRate: number;      // m/s^2 per second while held
}

export const DEFAULT_INPUT: InputConfig = {
    maxSteer: 0.5,
    steerRate: 0.8,
    centerRate: 1.2,
    maxAccel: 3.0,
    accelRate: 4.0,
};

export interface KeyState {
    left: boolean;
    right: boolean;
    up: boolean;
    down: boolean;
}

function clamp(v: number, lo: number, hi: number): number {
    return Math.min(hi, Math.max(lo, v));
}

/** Pure input integrator; the DOM/gamepad glue lives in attachInput. */
export class InputState {
    steer = 0;
    accel = 0;
    keys: KeyState = { left: false, right: false, up: false, down: false };
    gamepadAxis: number | null = null; // -1..1, overrides keys when present

    constructor(readonly cfg: InputConfig = DEFAULT_INPUT) {}

    /** Advance by dt seconds. Positive steer = leftward (+y). */
    step(dt: number): void {
        const cfg = this.cfg;
        if (this.gamepadAxis !== null) {
            this.steer = clamp(-this.gamepadAxis, -1, 1) * cfg.maxSteer;
        } else if (this.keys.left !== this.keys.right) {
            const dir = this.keys.left ? 1 : -1;
            this.steer = clamp(this.steer + dir * cfg.steerRate * dt, -cfg.maxSteer, cfg.maxSteer);
        } else if (this.steer !== 0) {
            const decay = cfg.centerRate * dt;
            this.steer = Math.abs(this.steer) <= decay ? 0 : this.steer - Math.sign(this.steer) * decay;
        }
        if (this.keys.up !== this.keys.down) {
            const dir = this.keys.up ? 1 : -1;
            this.accel = clamp(this.accel + dir * cfg.accelRate * dt, -cfg.maxAccel, cfg.maxAccel);
        } else if (this.accel !== 0) {
            const decay = cfg.accelRate * dt;
            this.accel = Math.abs(this.accel) <= decay ? 0 : this.accel - Math.sign(this.accel) * decay;
        }
    }
}

export interface InputHooks {
    send(steer: number, accel: number): void;
    pollGamepad?(): number | null;
}

/** Wire keyboard events and start the fixed-rate control stream (>= 20 Hz). */
export function attachInput(
    target: { addEventListener: Function },
    state: InputState,
    hooks: InputHooks,
    hz = 20,
): () => void {
    const keymap: Record<string, keyof KeyState> = {
        ArrowLeft: "left",
        ArrowRight: "right",
        ArrowUp: "up",
        ArrowDown: "down",
        a: "left",
        d: "right",
        w: "up",
        s: "down",
    };
    const onKey = (down: boolean) => (ev: KeyboardEvent) => {
        const key = keymap[ev.key];
        if (key) {
            state.keys[key] = down;
            ev.preventDefault?.();
        }
    };
    const downHandler = onKey(true);
    const upHandler = onKey(false);
    target.addEventListener("keydown", downHandler);
    target.addEventListener("keyup", upHandler);
    const period = 1000 / hz;
    const timer = setInterval(() => {
        state.gamepadAxis = hooks.pollGamepad ? hooks.pollGamepad() : null;
        state.step(1 / hz);
        hooks.send(state.steer, state.accel);
    }, period);
    return () => clearInterval(timer);
}

/** First connected gamepad's steering axis, if any. */
export function pollFirstGamepadAxis(): number | null {
    const nav: any = typeof navigator !== "undefined" ? navigator : null;
    if (!nav?.getGamepads) return null;
    for (const pad of nav.getGamepads()) {
        if (pad && pad.axes.length > 0) return pad.axes[0];
    }
    return null;
}
