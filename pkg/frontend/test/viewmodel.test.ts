import { describe, expect, it } from "vitest";
import { Telemetry } from "../src/protocol.js";
import { CockpitViewModel } from "../src/viewmodel.js";

function frame(t: number, weights = [0.5, 0.5]): Telemetry {
    return {
        type: "telemetry",
        t,
        truth: { x: 15 * t, y: -0.5, v: 15, theta: 0 },
        camera_y: -0.5,
        estimate: { mean: [15, -0.5, 0, 0, 0, 0, 0], weights, component_y: [-0.5, 1.3] },
        lat_err: 0.1,
    };
}

describe("CockpitViewModel", () => {
    it("starts empty", () => {
        const vm = new CockpitViewModel();
        expect(vm.latest).toBeNull();
        expect(vm.history).toHaveLength(0);
    });

    it("keeps the history bounded at capacity", () => {
        const vm = new CockpitViewModel(600);
        for (let k = 0; k < 700; k++) vm.push(frame(k * 0.05));
        expect(vm.history).toHaveLength(600);
        expect(vm.history[0].t).toBeCloseTo(100 * 0.05);
        expect(vm.latest?.t).toBeCloseTo(699 * 0.05);
    });

    it("does not alias telemetry weight arrays", () => {
        const vm = new CockpitViewModel();
        const f = frame(0);
        vm.push(f);
        f.estimate.weights[0] = 99;
        expect(vm.history[0].weights[0]).toBe(0.5);
    });

    it("records the commanded steer alongside each frame", () => {
        const vm = new CockpitViewModel();
        vm.noteCommand(0.12);
        vm.push(frame(0));
        expect(vm.history[0].steerCmd).toBe(0.12);
    });

    it("reset clears everything", () => {
        const vm = new CockpitViewModel();
        vm.push(frame(0));
        vm.noteError("numerical: boom");
        vm.reset();
        expect(vm.latest).toBeNull();
        expect(vm.lastError).toBeNull();
        expect(vm.history).toHaveLength(0);
    });
});
