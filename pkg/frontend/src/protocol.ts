/** Wire types for the play-service WebSocket protocol (one JSON object per
 * message).  The authoritative shape lives in
 * ../protocol/play_protocol.schema.json, shared with the server; tests
 * validate every outbound message against it. */

export type CreateMessage = { type: "create"; seed: number };
export type ActionMessage = { type: "action"; id: string; action: number };
export type SwapMessage = { type: "swap"; id: string; png_base64: string };
export type ClearSwapMessage = { type: "clear_swap"; id: string };
export type CloseMessage = { type: "close"; id: string };
export type ClientMessage =
  | CreateMessage
  | ActionMessage
  | SwapMessage
  | ClearSwapMessage
  | CloseMessage;

export type SessionMessage = {
  type: "session";
  id: string;
  width: number;
  height: number;
  actions: string[];
  frame: string;
};
export type FrameMessage = { type: "frame"; id: string; step: number; frame: string };
export type ErrorMessage = { type: "error"; code: string; message: string };
export type ServerMessage = SessionMessage | FrameMessage | ErrorMessage;

export function parseServerMessage(raw: string): ServerMessage {
  const obj = JSON.parse(raw);
  if (obj === null || typeof obj !== "object" || typeof obj.type !== "string") {
    throw new Error("malformed server message");
  }
  switch (obj.type) {
    case "session":
      if (
        typeof obj.id !== "string" ||
        typeof obj.width !== "number" ||
        typeof obj.height !== "number" ||
        !Array.isArray(obj.actions) ||
        typeof obj.frame !== "string"
      ) {
        throw new Error("malformed session message");
      }
      return obj as SessionMessage;
    case "frame":
      if (typeof obj.id !== "string" || typeof obj.step !== "number" || typeof obj.frame !== "string") {
        throw new Error("malformed frame message");
      }
      return obj as FrameMessage;
    case "error":
      if (typeof obj.code !== "string") {
        throw new Error("malformed error message");
      }
      return obj as ErrorMessage;
    default:
      throw new Error(`unknown server message type ${obj.type}`);
  }
}

/** Default keyboard layout; indices resolve against the server-sent legend. */
export const KEY_BINDINGS: Record<string, string> = {
  ArrowLeft: "left",
  ArrowRight: "right",
  ArrowUp: "up",
  ArrowDown: "down",
  " ": "stay",
};
