// Strip charts over the rolling history: lateral error, hypothesis weights,
// and the steering trace.
import { HistoryPoint } from "./viewmodel.js";

interface Range {
    lo: number;
    hi: number;
}

function drawFrame(ctx: CanvasRenderingContext2D, title: string, range: Range): void {
    const { width, height } = ctx.canvas;
    ctx.fillStyle = "#1a1e23";
    ctx.fillRect(0, 0, width, height);
    ctx.strokeStyle = "#3a424c";
    ctx.strokeRect(0.5, 0.5, width - 1, height - 1);
    ctx.fillStyle = "#9aa7b4";
    ctx.font = "12px sans-serif";
    ctx.fillText(`${title}   [${range.lo.toFixed(2)}, ${range.hi.toFixed(2)}]`, 8, 14);
}

function trace(
    ctx: CanvasRenderingContext2D,
    points: number[],
    range: Range,
    color: string,
    capacity: number,
): void {
    if (points.length < 2) return;
    const { width, height } = ctx.canvas;
    const span = range.hi - range.lo || 1;
    ctx.strokeStyle = color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    points.forEach((v, i) => {
        const x = (i / (capacity - 1)) * width;
        const y = height - ((v - range.lo) / span) * (height - 20) - 4;
        if (i === 0) ctx.moveTo(x, y);
        else ctx.lineTo(x, y);
    });
    ctx.stroke();
}

export function drawErrorChart(ctx: CanvasRenderingContext2D, history: HistoryPoint[], capacity: number): void {
    const errs = history.map((h) => h.latErr);
    const hi = Math.max(1.0, ...errs);
    drawFrame(ctx, "lateral error (m)", { lo: 0, hi });
    trace(ctx, errs, { lo: 0, hi }, "#d9834f", capacity);
}

export function drawWeightChart(ctx: CanvasRenderingContext2D, history: HistoryPoint[], capacity: number): void {
    drawFrame(ctx, "hypothesis weights", { lo: 0, hi: 1 });
    const n = history.length ? history[history.length - 1].weights.length : 0;
    const colors = ["#4f8f4f", "#8f7a3f", "#569cd6", "#b05ccc"];
    for (let i = 0; i < n; i++) {
        trace(ctx, history.map((h) => h.weights[i] ?? 0), { lo: 0, hi: 1 }, colors[i % colors.length], capacity);
    }
}

export function drawSteeringChart(ctx: CanvasRenderingContext2D, history: HistoryPoint[], capacity: number): void {
    const cmds = history.map((h) => h.steerCmd);
    const amp = Math.max(0.1, ...cmds.map(Math.abs));
    drawFrame(ctx, "steering command (rad)", { lo: -amp, hi: amp });
    trace(ctx, cmds, { lo: -amp, hi: amp }, "#e8e8e8", capacity);
}
