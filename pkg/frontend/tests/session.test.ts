/** Unit tests for the client session state machine against a mock socket,
 * plus schema conformance of every outbound message. */

import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { dirname, join } from "node:path";
import { describe, expect, test } from "vitest";
import Ajv from "ajv";

import { ClientSession } from "../src/session.js";
import { parseServerMessage } from "../src/protocol.js";

const here = dirname(fileURLToPath(import.meta.url));
const schema = JSON.parse(
  readFileSync(join(here, "..", "..", "protocol", "play_protocol.schema.json"), "utf-8"),
);
const ajv = new Ajv({ strict: false });
const validateClient = ajv.compile({
  ...schema.definitions.clientMessage,
  definitions: schema.definitions,
});

class MockSocket {
  sent: any[] = [];
  send(data: string): void {
    const obj = JSON.parse(data);
    if (!validateClient(obj)) {
      throw new Error(`outbound message violates protocol schema: ${data}`);
    }
    this.sent.push(obj);
  }
}

function makeSession(events = {}) {
  const socket = new MockSocket();
  const session = new ClientSession(socket, { now: () => 0, ...events });
  return { socket, session };
}

function openSession(session: ClientSession, actions = ["left", "right", "up", "down", "stay"]) {
  session.handle({
    type: "session",
    id: "s000001",
    width: 16,
    height: 16,
    actions,
    frame: "AAAA",
  });
}

describe("session lifecycle", () => {
  test("create emits a schema-valid message and stores the legend", () => {
    const frames: number[] = [];
    const { socket, session } = makeSession({ onFrame: (_: string, s: number) => frames.push(s) });
    session.create(42);
    expect(socket.sent).toEqual([{ type: "create", seed: 42 }]);
    openSession(session);
    expect(session.sessionId).toBe("s000001");
    expect(session.actions).toContain("stay");
    expect(frames).toEqual([0]); // frame 0 rendered from the session message
  });

  test("keys map through the server legend", () => {
    const { session } = makeSession();
    openSession(session, ["up", "down", "left", "right", "stay"]);
    expect(session.keyToAction("ArrowLeft")).toBe(2);
    expect(session.keyToAction("ArrowUp")).toBe(0);
    expect(session.keyToAction(" ")).toBe(4);
    expect(session.keyToAction("q")).toBeNull();
  });

  test("unmapped keys send nothing", () => {
    const { socket, session } = makeSession();
    openSession(session);
    expect(session.pressKey("q")).toBe(false);
    expect(socket.sent.length).toBe(0);
  });

  test("no input before the session exists", () => {
    const { socket, session } = makeSession();
    expect(session.pressKey("ArrowLeft")).toBe(false);
    expect(socket.sent.length).toBe(0);
  });
});

describe("one-in-flight rule", () => {
  test("held key across 10 frames sends exactly 10 actions, one in flight", () => {
    const { socket, session } = makeSession();
    openSession(session);
    let step = 0;
    for (let i = 0; i < 10; i++) {
      session.pressKey("ArrowRight");
      const actionsInFlight = socket.sent.filter((m) => m.type === "action").length - step;
      expect(actionsInFlight).toBe(1); // never more than one outstanding
      step += 1;
      session.handle({ type: "frame", id: "s000001", step, frame: "AA" });
    }
    expect(socket.sent.filter((m) => m.type === "action").length).toBe(10);
  });

  test("presses while waiting are coalesced to the latest", () => {
    const { socket, session } = makeSession();
    openSession(session);
    session.pressKey("ArrowLeft"); // in flight
    session.pressKey("ArrowUp"); // queued
    session.pressKey("ArrowDown"); // replaces queued
    expect(socket.sent.filter((m) => m.type === "action").length).toBe(1);
    session.handle({ type: "frame", id: "s000001", step: 1, frame: "AA" });
    const actions = socket.sent.filter((m) => m.type === "action");
    expect(actions.length).toBe(2);
    expect(actions[1].action).toBe(session.actions.indexOf("down"));
  });

  test("latency samples are recorded per action round-trip", () => {
    let clock = 0;
    const { session } = makeSession({ now: () => clock });
    openSession(session);
    session.pressKey("ArrowLeft");
    clock = 25;
    session.handle({ type: "frame", id: "s000001", step: 1, frame: "AA" });
    expect(session.latencies).toEqual([25]);
    expect(session.medianLatency()).toBe(25);
  });
});

describe("errors", () => {
  test("fatal error kills the session; nothing is sent afterwards", () => {
    const errors: string[] = [];
    const { socket, session } = makeSession({
      onError: (code: string, _m: string, fatal: boolean) => errors.push(`${code}:${fatal}`),
    });
    openSession(session);
    session.pressKey("ArrowLeft");
    session.handle({ type: "error", code: "not_found", message: "gone" });
    expect(errors).toEqual(["not_found:true"]);
    expect(session.dead).toBe(true);
    const before = socket.sent.length;
    expect(session.pressKey("ArrowRight")).toBe(false);
    session.requestSwap("AAAA");
    expect(socket.sent.length).toBe(before);
  });

  test("unsupported swap is surfaced but not fatal", () => {
    const errors: Array<[string, boolean]> = [];
    const { session } = makeSession({
      onError: (code: string, _m: string, fatal: boolean) => errors.push([code, fatal]),
    });
    openSession(session);
    session.requestSwap("AAAA");
    session.handle({ type: "error", code: "unsupported", message: "simple renderer" });
    expect(errors).toEqual([["unsupported", false]]);
    expect(session.dead).toBe(false);
    expect(session.swapActive).toBe(false);
  });
});

describe("swap acks", () => {
  test("swap and clear toggle the badge state via reply matching", () => {
    const states: boolean[] = [];
    const { session } = makeSession({ onSwapState: (a: boolean) => states.push(a) });
    openSession(session);
    session.requestSwap("AAAA");
    session.handle({ type: "frame", id: "s000001", step: 0, frame: "AA" });
    session.clearSwap();
    session.handle({ type: "frame", id: "s000001", step: 0, frame: "AA" });
    expect(states).toEqual([true, false]);
    expect(session.swapActive).toBe(false);
  });
});

describe("server message parsing", () => {
  test("rejects malformed payloads", () => {
    expect(() => parseServerMessage("{}")).toThrow();
    expect(() => parseServerMessage('{"type":"frame","id":1,"step":0,"frame":""}')).toThrow();
    expect(() => parseServerMessage('{"type":"mystery"}')).toThrow();
  });
});
