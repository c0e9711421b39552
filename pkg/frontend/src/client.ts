// Thin WebSocket wrapper: parse frames, surface telemetry/errors/closure.
import { parseServerMessage, ServerMessage } from "./protocol.js";

export interface ClientEvents {
    onMessage(msg: ServerMessage): void;
    onOpen?(): void;
    onClose?(): void;
}

export class BridgeClient {
    private ws: WebSocket | null = null;

    constructor(readonly url: string, readonly events: ClientEvents) {}

    connect(): void {
        this.ws = new WebSocket(this.url);
        this.ws.onopen = () => this.events.onOpen?.();
        this.ws.onclose = () => this.events.onClose?.();
        this.ws.onmessage = (ev) => {
            const msg = parseServerMessage(String(ev.data));
            if (msg) this.events.onMessage(msg);
        };
    }

    send(payload: string): void {
        if (this.ws && this.ws.readyState === WebSocket.OPEN) {
            this.ws.send(payload);
        }
    }

    close(): void {
        this.ws?.close();
        this.ws = null;
    }
}
