/** Browser entry: wires the session state machine to a canvas, the
 * keyboard, and the swap-upload controls. */

import { ClientSession } from "./session.js";

const SCALE = 20;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setup(): void {
  const canvas = el<HTMLCanvasElement>("screen");
  const ctx = canvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;
  const banner = el<HTMLDivElement>("banner");
  const legend = el<HTMLDivElement>("legend");
  const badge = el<HTMLSpanElement>("swap-badge");
  const latencyHud = el<HTMLSpanElement>("latency");
  const upload = el<HTMLInputElement>("swap-file");
  const clearButton = el<HTMLButtonElement>("swap-clear");
  const retryButton = el<HTMLButtonElement>("retry");

  let session: ClientSession | null = null;
  let socket: WebSocket | null = null;

  function showBanner(text: string, isError: boolean): void {
    banner.textContent = text;
    banner.className = isError ? "banner error" : "banner";
    retryButton.style.display = isError ? "inline-block" : "none";
  }

  function drawFrame(pngBase64: string): void {
    if (!pngBase64) return;
    const img = new Image();
    img.onload = () => {
      canvas.width = img.width * SCALE;
      canvas.height = img.height * SCALE;
      ctx.imageSmoothingEnabled = false;
      ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
    };
    img.src = `data:image/png;base64,${pngBase64}`;
  }

  function connect(): void {
    const url = `ws://${location.host}/ws`;
    showBanner(`connecting to ${url} ...`, false);
    socket = new WebSocket(url);
    session = new ClientSession(
      { send: (data) => socket!.send(data) },
      {
        onFrame: (png) => {
          drawFrame(png);
          const median = session!.medianLatency();
          if (median !== null) latencyHud.textContent = `${median.toFixed(0)} ms`;
        },
        onSession: (msg) => {
          showBanner(`session ${msg.id} — play with the arrow keys, space to stay`, false);
          legend.textContent = `actions: ${msg.actions.join(", ")}`;
        },
        onError: (code, message, fatal) => {
          showBanner(`${fatal ? "session error" : "rejected"}: ${code} ${message}`, fatal);
        },
        onSwapState: (active) => {
          badge.style.display = active ? "inline-block" : "none";
        },
      },
    );
    socket.onopen = () => session!.create(Math.floor(Math.random() * 2 ** 31));
    socket.onmessage = (event) => session!.handleRaw(String(event.data));
    socket.onerror = () => showBanner("connection failed — is the play service running?", true);
    socket.onclose = () => {
      if (session && !session.dead) showBanner("connection closed", true);
    };
  }

  window.addEventListener("keydown", (event) => {
    if (!session) return;
    if (event.key in { ArrowLeft: 1, ArrowRight: 1, ArrowUp: 1, ArrowDown: 1, " ": 1 }) {
      event.preventDefault();
    }
    session.pressKey(event.key);
  });

  upload.addEventListener("change", async () => {
    const file = upload.files?.[0];
    if (!file || !session) return;
    const bitmap = await createImageBitmap(file);
    const off = document.createElement("canvas");
    off.width = session.width || 16;
    off.height = session.height || 16;
    const octx = off.getContext("2d")!;
    octx.imageSmoothingEnabled = false;
    octx.drawImage(bitmap, 0, 0, off.width, off.height);
    const dataUrl = off.toDataURL("image/png");
    session.requestSwap(dataUrl.split(",", 2)[1]);
    upload.value = "";
  });

  clearButton.addEventListener("click", () => session?.clearSwap());
  retryButton.addEventListener("click", () => connect());

  connect();
}

window.addEventListener("DOMContentLoaded", setup);
