// Cockpit state: latest telemetry plus bounded rolling histories for the
// charts. Rendering reads from here and never mutates telemetry.
import { Telemetry } from "./protocol.js";

export interface HistoryPoint {
    t: number;
    latErr: number;
    weights: number[];
    steerCmd: number;      // what the human commanded at that tick
    predictedY: number;    // aggregate lateral estimate
    truthY: number;
}

export class CockpitViewModel {
    readonly capacity: number;
    latest: Telemetry | null = null;
    lastError: string | null = null;
    history: HistoryPoint[] = [];
    private commandedSteer = 0;

    constructor(capacity = 600) {
        this.capacity = capacity;
    }

    noteCommand(steer: number): void {
        this.commandedSteer = steer;
    }

    push(frame: Telemetry): void {
        this.latest = frame;
        this.history.push({
            t: frame.t,
            latErr: frame.lat_err,
            weights: frame.estimate.weights.slice(),
            steerCmd: this.commandedSteer,
            predictedY: frame.estimate.mean[1],
            truthY: frame.truth.y,
        });
        if (this.history.length > this.capacity) {
            this.history.splice(0, this.history.length - this.capacity);
        }
    }

    noteError(message: string): void {
        this.lastError = message;
    }

    reset(): void {
        this.latest = null;
        this.lastError = null;
        this.history = [];
        this.commandedSteer = 0;
    }
}
