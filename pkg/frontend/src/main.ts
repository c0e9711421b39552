// Cockpit wiring: connect to the bridge, stream input at 20 Hz, render the
// scene and charts at display refresh. Server address and scenario preset
// come from URL query parameters (?server=ws://host:port&duration=30&seed=0).
import { BridgeClient } from "./client.js";
import { attachInput, InputState, pollFirstGamepadAxis } from "./input.js";
import { buildControl, buildPause, buildReset, buildStart } from "./protocol.js";
import { CockpitViewModel } from "./viewmodel.js";
import { drawErrorChart, drawSteeringChart, drawWeightChart } from "./charts.js";
import { drawScene } from "./scene.js";

const params = new URLSearchParams(window.location.search);
const server = params.get("server") ?? "ws://127.0.0.1:8742";
const duration = Number(params.get("duration") ?? "30");
const seed = Number(params.get("seed") ?? "0");
const hypotheses = (params.get("hypotheses") ?? "0,-1.8").split(",").map(Number);

const vm = new CockpitViewModel(600);
const input = new InputState();

const sceneCanvas = document.getElementById("scene") as HTMLCanvasElement;
const errCanvas = document.getElementById("chart-error") as HTMLCanvasElement;
const wCanvas = document.getElementById("chart-weights") as HTMLCanvasElement;
const steerCanvas = document.getElementById("chart-steer") as HTMLCanvasElement;
const statusEl = document.getElementById("status")!;
const hudEl = document.getElementById("hud")!;

const client = new BridgeClient(server, {
    onOpen: () => {
        statusEl.textContent = `connected to ${server}`;
    },
    onClose: () => {
        statusEl.textContent = "disconnected";
    },
    onMessage: (msg) => {
        if (msg.type === "error") {
            vm.noteError(`${msg.code}: ${msg.message}`);
            statusEl.textContent = `bridge error ${msg.code}: ${msg.message}`;
            return;
        }
        vm.push(msg);
    },
});
client.connect();

(document.getElementById("btn-start") as HTMLButtonElement).onclick = () => {
    vm.reset();
    client.send(
        buildStart({
            scenario: { duration, seed, hypotheses },
        }),
    );
};
(document.getElementById("btn-pause") as HTMLButtonElement).onclick = () => client.send(buildPause());
(document.getElementById("btn-reset") as HTMLButtonElement).onclick = () => {
    client.send(buildReset());
    vm.reset();
};

attachInput(window, input, {
    send: (steer, accel) => {
        vm.noteCommand(steer);
        client.send(buildControl(steer, accel));
    },
    pollGamepad: pollFirstGamepadAxis,
});

function render(): void {
    drawScene(sceneCanvas.getContext("2d")!, vm.latest, hypotheses);
    drawErrorChart(errCanvas.getContext("2d")!, vm.history, vm.capacity);
    drawWeightChart(wCanvas.getContext("2d")!, vm.history, vm.capacity);
    drawSteeringChart(steerCanvas.getContext("2d")!, vm.history, vm.capacity);
    const f = vm.latest;
    if (f) {
        const w = f.estimate.weights.map((x) => x.toFixed(3)).join(" / ");
        hudEl.textContent =
            `t=${f.t.toFixed(2)}s   v=${f.truth.v.toFixed(1)} m/s   ` +
            `steer=${input.steer.toFixed(3)} rad   lat_err=${f.lat_err.toFixed(3)} m   weights=${w}` +
            (f.clamped ? "   [steer clamped]" : "");
    }
    requestAnimationFrame(render);
}
requestAnimationFrame(render);
