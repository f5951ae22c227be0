/** Client-side session state machine, free of DOM and socket specifics so
 * it can be driven by a mock in tests.
 *
 * Invariants it maintains:
 *  - at most one action message in flight; keys pressed while waiting are
 *    coalesced into a single pending action (latest wins)
 *  - nothing is sent once the session errored fatally or was closed
 *  - every reply is matched FIFO against the kind of request that caused
 *    it, so swap acknowledgements are distinguishable from step frames
 */

import {
  ClientMessage,
  KEY_BINDINGS,
  ServerMessage,
  parseServerMessage,
} from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
}

export type SessionEvents = {
  onFrame?: (pngBase64: string, step: number) => void;
  onSession?: (msg: { id: string; width: number; height: number; actions: string[] }) => void;
  onError?: (code: string, message: string, fatal: boolean) => void;
  onSwapState?: (active: boolean) => void;
  now?: () => number;
};

const RECOVERABLE_ERRORS = new Set(["unsupported", "bad_image", "bad_action"]);

export class ClientSession {
  readonly latencies: number[] = [];
  actions: string[] = [];
  sessionId: string | null = null;
  width = 0;
  height = 0;
  swapActive = false;
  dead = false;

  private inFlight = false;
  private pendingAction: number | null = null;
  private sentAt = 0;
  private expectations: string[] = [];
  private sentCount = 0;

  constructor(private socket: SocketLike, private events: SessionEvents = {}) {}

  get messagesSent(): number {
    return this.sentCount;
  }

  private send(message: ClientMessage): void {
    this.socket.send(JSON.stringify(message));
    this.expectations.push(message.type);
    this.sentCount += 1;
  }

  create(seed: number): void {
    this.send({ type: "create", seed });
  }

  /** Map a key to an action index against the server legend; null when the
   * key is unbound or the session cannot accept input. */
  keyToAction(key: string): number | null {
    const name = KEY_BINDINGS[key];
    if (name === undefined) return null;
    const index = this.actions.indexOf(name);
    return index >= 0 ? index : null;
  }

  /** Handle a key press; returns true when it will produce an action
   * message (now or once the in-flight frame arrives). */
  pressKey(key: string): boolean {
    if (this.dead || this.sessionId === null) return false;
    const action = this.keyToAction(key);
    if (action === null) return false;
    if (this.inFlight) {
      this.pendingAction = action; // coalesce held keys
      return true;
    }
    this.sendAction(action);
    return true;
  }

  private sendAction(action: number): void {
    this.sentAt = (this.events.now ?? Date.now)();
    this.inFlight = true;
    this.send({ type: "action", id: this.sessionId!, action });
  }

  requestSwap(pngBase64: string): void {
    if (this.dead || this.sessionId === null) return;
    this.send({ type: "swap", id: this.sessionId, png_base64: pngBase64 });
  }

  clearSwap(): void {
    if (this.dead || this.sessionId === null) return;
    this.send({ type: "clear_swap", id: this.sessionId });
  }

  close(): void {
    if (this.sessionId !== null && !this.dead) {
      this.send({ type: "close", id: this.sessionId });
    }
    this.dead = true;
  }

  handleRaw(raw: string): void {
    let msg: ServerMessage;
    try {
      msg = parseServerMessage(raw);
    } catch (err) {
      this.events.onError?.("bad_server_message", String(err), false);
      return;
    }
    this.handle(msg);
  }

  handle(msg: ServerMessage): void {
    const cause = this.expectations.shift();
    if (msg.type === "session") {
      this.sessionId = msg.id;
      this.actions = msg.actions;
      this.width = msg.width;
      this.height = msg.height;
      this.events.onSession?.(msg);
      this.events.onFrame?.(msg.frame, 0);
      return;
    }
    if (msg.type === "frame") {
      if (cause === "action") {
        this.latencies.push(((this.events.now ?? Date.now)()) - this.sentAt);
        this.inFlight = false;
        if (this.pendingAction !== null && !this.dead) {
          const next = this.pendingAction;
          this.pendingAction = null;
          this.sendAction(next);
        }
      } else if (cause === "swap") {
        this.swapActive = true;
        this.events.onSwapState?.(true);
      } else if (cause === "clear_swap") {
        this.swapActive = false;
        this.events.onSwapState?.(false);
      }
      this.events.onFrame?.(msg.frame, msg.step);
      return;
    }
    // error
    const fatal = !RECOVERABLE_ERRORS.has(msg.code);
    if (cause === "action") {
      this.inFlight = false;
      this.pendingAction = null;
    }
    if (fatal) {
      this.dead = true;
      this.pendingAction = null;
    }
    this.events.onError?.(msg.code, msg.message ?? "", fatal);
  }

  medianLatency(): number | null {
    if (this.latencies.length === 0) return null;
    const sorted = [...this.latencies].sort((a, b) => a - b);
    const mid = sorted.length >> 1;
    return sorted.length % 2 ? sorted[mid] : (sorted[mid - 1] + sorted[mid]) / 2;
  }
}
