// Top-down lane view: the true vehicle pose, both candidate lane centers
// (the ambiguous markings), the camera's biased reading, and per-hypothesis
// lateral estimates drawn with weight-proportional opacity. Truth is drawn
// distinctly from estimates so the disambiguation is visible.
import { Telemetry } from "./protocol.js";

export interface SceneConfig {
    laneWidth: number;   // m
    viewAhead: number;   // m of road ahead of the vehicle
    viewBehind: number;  // m behind
}

export const DEFAULT_SCENE: SceneConfig = { laneWidth: 3.6, viewAhead: 45, viewBehind: 15 };

/** World (road frame: x ahead, y left) to canvas pixels. */
export function worldToScreen(
    wx: number,
    wy: number,
    vehicleX: number,
    width: number,
    height: number,
    cfg: SceneConfig = DEFAULT_SCENE,
): [number, number] {
    const span = cfg.viewAhead + cfg.viewBehind;
    const px = ((wx - (vehicleX - cfg.viewBehind)) / span) * width;
    const metersToPx = height / (cfg.laneWidth * 3);
    const py = height / 2 - wy * metersToPx;
    return [px, py];
}

export function drawScene(
    ctx: CanvasRenderingContext2D,
    frame: Telemetry | null,
    hypotheses: number[],
    cfg: SceneConfig = DEFAULT_SCENE,
): void {
    const { width, height } = ctx.canvas;
    ctx.fillStyle = "#20252b";
    ctx.fillRect(0, 0, width, height);
    if (!frame) {
        ctx.fillStyle = "#888";
        ctx.font = "16px sans-serif";
        ctx.fillText("press Start to begin a session", 20, height / 2);
        return;
    }
    const vx = frame.truth.x;
    const metersToPx = height / (cfg.laneWidth * 3);

    // lane boundaries around the true lane center (y = 0)
    ctx.strokeStyle = "#5a6572";
    ctx.setLineDash([14, 10]);
    ctx.lineWidth = 2;
    for (const edge of [-cfg.laneWidth / 2, cfg.laneWidth / 2]) {
        const [, py] = worldToScreen(vx, edge, vx, width, height, cfg);
        ctx.beginPath();
        ctx.moveTo(0, py);
        ctx.lineTo(width, py);
        ctx.stroke();
    }
    ctx.setLineDash([]);

    // candidate lane centers: marking the camera bias hypotheses
    hypotheses.forEach((bias, i) => {
        const y = -bias; // a camera bias b places the implied center at -b
        const [, py] = worldToScreen(vx, y, vx, width, height, cfg);
        ctx.strokeStyle = i === 0 ? "#4f8f4f" : "#8f7a3f";
        ctx.lineWidth = 1;
        ctx.setLineDash([4, 6]);
        ctx.beginPath();
        ctx.moveTo(0, py);
        ctx.lineTo(width, py);
        ctx.stroke();
        ctx.setLineDash([]);
    });

    // camera's biased reading of the vehicle's lateral position
    {
        const [px, py] = worldToScreen(vx, frame.camera_y, vx, width, height, cfg);
        ctx.strokeStyle = "#b05ccc";
        ctx.lineWidth = 1.5;
        ctx.beginPath();
        ctx.arc(px, py, 7, 0, 2 * Math.PI);
        ctx.stroke();
    }

    // per-hypothesis lateral estimates, opacity proportional to weight
    frame.estimate.component_y.forEach((y, i) => {
        const w = frame.estimate.weights[i];
        const [px, py] = worldToScreen(vx, y, vx, width, height, cfg);
        ctx.fillStyle = `rgba(86, 156, 214, ${Math.max(0.08, w)})`;
        ctx.beginPath();
        ctx.arc(px, py, 9, 0, 2 * Math.PI);
        ctx.fill();
    });

    // true vehicle pose: body drawn as an oriented rectangle
    {
        const [px, py] = worldToScreen(vx, frame.truth.y, vx, width, height, cfg);
        ctx.save();
        ctx.translate(px, py);
        ctx.rotate(-frame.truth.theta);
        const len = 4.4 * (width / (cfg.viewAhead + cfg.viewBehind));
        const wid = 1.8 * metersToPx;
        ctx.fillStyle = "#e8e8e8";
        ctx.fillRect(-len / 2, -wid / 2, len, wid);
        ctx.fillStyle = "#d9534f";
        ctx.fillRect(len / 4, -wid / 2, len / 4, wid);
        ctx.restore();
    }
}
