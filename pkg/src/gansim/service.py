"""Interactive inference server.

Sessions wrap a live simulator state driven by client actions; frames
stream back as base64 PNGs.  The wire protocol is JSON over WebSocket, one
object per message:

  client -> server:
    {"type":"create","seed":u64}
    {"type":"action","id":str,"action":u8}
    {"type":"swap","id":str,"png_base64":str}
    {"type":"clear_swap","id":str}
    {"type":"close","id":str}
  server -> client:
    {"type":"session","id":str,"width":u32,"height":u32,
     "actions":[names],"frame":png_base64}
    {"type":"frame","id":str,"step":u64,"frame":png_base64}
    {"type":"error","code":str,"message":str}

The WebSocket layer (RFC 6455 handshake + frame codec) is implemented
directly on asyncio streams; the same listener serves the static browser
client over plain HTTP GET.
"""

from __future__ import annotations

import asyncio
import base64
import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import load_checkpoint
from .data import frame_to_float, frame_to_u8, read_dataset
from .env import generate_maze, render_observation
from .model import Simulator
from .renderer import STATIC, compose_final
from .rng import SeedStream
from .tensor import ContractError, Tensor, no_grad


class SessionError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


def load_simulator(ckpt_path) -> Simulator:
    config, tensors, _ = load_checkpoint(ckpt_path)
    sim = Simulator(config, SeedStream(0).child("load"))
    gen = {k[len("generator."):]: v for k, v in tensors.items() if k.startswith("generator.")}
    if not gen:
        raise SessionError("bad_checkpoint", "checkpoint holds no generator tensors")
    sim.load_state(gen)
    sim.eval()
    return sim


def encode_png(frame_u8: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(frame_u8).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def decode_png(b64: str, size: int) -> np.ndarray:
    try:
        img = Image.open(io.BytesIO(base64.b64decode(b64))).convert("RGB")
    except Exception as exc:
        raise SessionError("bad_image", f"cannot decode PNG: {exc}") from exc
    if img.size != (size, size):
        img = img.resize((size, size), Image.NEAREST)
    return np.asarray(img, dtype=np.uint8)


class Session:
    """One live simulator rollout; owns its state, never shared."""

    def __init__(self, session_id: str, sim: Simulator, frame0: np.ndarray, seed: int):
        self.id = session_id
        self.sim = sim
        self.config = sim.config
        stream = SeedStream(seed, f"session/{session_id}")
        self.state = sim.initial_state(1, stream.child("init"),
                                       memory_n=sim.config.eval_memory_N)
        self.z_rng = stream.child("z")
        self.frame0 = frame0
        self.x = Tensor(frame_to_float(frame0)[None])
        self.step_count = 0
        self.swap_override: Tensor | None = None

    def step(self, action: int) -> np.ndarray:
        if not 0 <= action < self.config.action_count:
            raise SessionError("bad_action", f"action {action} out of range "
                                             f"(0..{self.config.action_count - 1})")
        with no_grad():
            z = Tensor(self.z_rng.normal((1, self.config.z_dim)))
            self.state, out = self.sim.step(self.state, self.x, [action], z)
            # the recurrent input is always the true composition; the swap
            # only affects what the client sees
            self.x = out.frame
            display = out.frame
            if self.swap_override is not None:
                display = compose_final(out.packets,
                                        override_content={STATIC: self.swap_override})
        self._check_invariants(display)
        self.step_count += 1
        return frame_to_u8(display.data[0])

    def _check_invariants(self, frame: Tensor) -> None:
        if self.state.memory is not None:
            drift = np.abs(self.state.memory.alpha_sum() - 1.0).max()
            if drift > 1e-4:
                raise SessionError("invariant", f"attention drifted from 1 by {drift:.2e}")
        if not np.isfinite(frame.data).all():
            raise SessionError("invariant", "non-finite frame")

    def set_swap(self, image_u8: np.ndarray) -> None:
        if not self.sim.disentangled:
            raise SessionError("unsupported",
                               "component swapping requires the disentangling renderer")
        self.swap_override = Tensor(frame_to_float(image_u8)[None])

    def clear_swap(self) -> None:
        self.swap_override = None


class FrameSource:
    """Initial frames for new sessions: held-out dataset episodes when a
    dataset is given, otherwise observations of freshly generated mazes."""

    def __init__(self, data_path=None, grid_size: int = 15):
        self.frames = None
        if data_path:
            episodes, _ = read_dataset(data_path)
            self.frames = [ep.frames[0] for ep in episodes]
        self.grid_size = grid_size

    def frame_for(self, seed: int) -> np.ndarray:
        if self.frames:
            return self.frames[seed % len(self.frames)]
        return render_observation(generate_maze(seed, self.grid_size))


class SessionManager:
    def __init__(self, sim: Simulator, frame_source: FrameSource, server_seed: int = 0):
        self.sim = sim
        self.frames = frame_source
        self.server_seed = server_seed
        self.sessions: dict[str, Session] = {}
        self._counter = 0

    def create(self, seed: int) -> tuple[Session, np.ndarray]:
        self._counter += 1
        session_id = f"s{self._counter:06d}"
        frame0 = self.frames.frame_for(seed)
        session = Session(session_id, self.sim, frame0, seed ^ self.server_seed)
        self.sessions[session_id] = session
        return session, frame0

    def get(self, session_id: str) -> Session:
        if session_id not in self.sessions:
            raise SessionError("not_found", f"unknown session '{session_id}'")
        return self.sessions[session_id]

    def close(self, session_id: str) -> None:
        self.sessions.pop(session_id, None)

    def handle(self, message: dict) -> dict:
        """One request -> one reply; shared by the socket layer and tests."""
        kind = message.get("type")
        if kind == "create":
            seed = int(message.get("seed", 0))
            session, frame0 = self.create(seed)
            return {"type": "session", "id": session.id,
                    "width": int(self.sim.config.image_size),
                    "height": int(self.sim.config.image_size),
                    "actions": list(self.sim.config.action_names),
                    "frame": encode_png(frame0)}
        if kind == "action":
            session = self.get(str(message.get("id")))
            frame = session.step(int(message.get("action", -1)))
            return {"type": "frame", "id": session.id, "step": session.step_count,
                    "frame": encode_png(frame)}
        if kind == "swap":
            session = self.get(str(message.get("id")))
            image = decode_png(message.get("png_base64", ""), self.sim.config.image_size)
            session.set_swap(image)
            return {"type": "frame", "id": session.id, "step": session.step_count,
                    "frame": encode_png(session.frame0 if session.step_count == 0
                                        else frame_to_u8(session.x.data[0]))}
        if kind == "clear_swap":
            session = self.get(str(message.get("id")))
            session.clear_swap()
            return {"type": "frame", "id": session.id, "step": session.step_count,
                    "frame": encode_png(session.frame0 if session.step_count == 0
                                        else frame_to_u8(session.x.data[0]))}
        if kind == "close":
            self.close(str(message.get("id")))
            return None  # fire-and-forget; no ack defined for close
        raise SessionError("bad_request", f"unknown message type {kind!r}")


# ---------------------------------------------------------------------------
# RFC 6455 WebSocket + static HTTP on asyncio streams
# ---------------------------------------------------------------------------

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
_MAX_MESSAGE = 4 * 1024 * 1024

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".png": "image/png",
    ".ico": "image/x-icon",
    ".map": "application/json",
}

_FALLBACK_PAGE = b"""<!doctype html><meta charset="utf-8">
<title>gansim play service</title>
<p>The play service is running. Connect a WebSocket client to <code>/ws</code>,
or build the browser client (<code>frontend/</code>) and restart with
<code>--static</code> pointing at its <code>dist/</code> directory.</p>
"""


def ws_accept_key(key: str) -> str:
    digest = hashlib.sha1((key + _WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


async def read_ws_message(reader: asyncio.StreamReader):
    """One complete (possibly fragmented) message; None on close."""
    payload = bytearray()
    opcode = None
    while True:
        head = await reader.readexactly(2)
        fin = head[0] & 0x80
        op = head[0] & 0x0F
        masked = head[1] & 0x80
        length = head[1] & 0x7F
        if length == 126:
            (length,) = struct.unpack(">H", await reader.readexactly(2))
        elif length == 127:
            (length,) = struct.unpack(">Q", await reader.readexactly(8))
        if length > _MAX_MESSAGE:
            raise SessionError("bad_request", "message too large")
        mask = await reader.readexactly(4) if masked else None
        data = bytearray(await reader.readexactly(length))
        if mask:
            for i in range(len(data)):
                data[i] ^= mask[i % 4]
        if op == 0x8:  # close
            return None, None
        if op == 0x9:  # ping -> payload echoed as pong by the caller
            return 0x9, bytes(data)
        if op == 0xA:  # pong: ignore
            continue
        if op in (0x1, 0x2):
            opcode = op
            payload.extend(data)
        elif op == 0x0:
            payload.extend(data)
        else:
            raise SessionError("bad_request", f"unsupported opcode {op}")
        if fin:
            return opcode, bytes(payload)


def ws_frame(payload: bytes, opcode: int = 0x1) -> bytes:
    head = bytearray([0x80 | opcode])
    n = len(payload)
    if n < 126:
        head.append(n)
    elif n < 1 << 16:
        head.append(126)
        head.extend(struct.pack(">H", n))
    else:
        head.append(127)
        head.extend(struct.pack(">Q", n))
    return bytes(head) + payload


class PlayServer:
    def __init__(self, sim: Simulator, frame_source: FrameSource, seed: int = 0,
                 static_dir=None):
        self.sim = sim
        self.frame_source = frame_source
        self.seed = seed
        self.static_dir = Path(static_dir) if static_dir else None
        self._server = None

    async def start(self, host: str = "127.0.0.1", port: int = 8765):
        self._server = await asyncio.start_server(self._handle_connection, host, port)
        return self._server.sockets[0].getsockname()[1]

    async def serve_forever(self):
        async with self._server:
            await self._server.serve_forever()

    async def close(self):
        if self._server:
            self._server.close()
            await self._server.wait_closed()

    async def _handle_connection(self, reader: asyncio.StreamReader,
                                 writer: asyncio.StreamWriter):
        try:
            request = await reader.readuntil(b"\r\n\r\n")
        except (asyncio.IncompleteReadError, asyncio.LimitOverrunError):
            writer.close()
            return
        try:
            head = request.decode("latin-1")
            lines = head.split("\r\n")
            method, path, _ = lines[0].split(" ", 2)
            headers = {}
            for line in lines[1:]:
                if ":" in line:
                    k, v = line.split(":", 1)
                    headers[k.strip().lower()] = v.strip()
            if path.split("?")[0] == "/ws" and headers.get("upgrade", "").lower() == "websocket":
                await self._websocket_session(reader, writer, headers)
            elif method == "GET":
                self._serve_static(writer, path.split("?")[0])
                await writer.drain()
                writer.close()
            else:
                writer.write(b"HTTP/1.1 405 Method Not Allowed\r\nContent-Length: 0\r\n\r\n")
                await writer.drain()
                writer.close()
        except (ConnectionResetError, asyncio.IncompleteReadError):
            writer.close()

    def _serve_static(self, writer, path: str):
        if path == "/":
            path = "/index.html"
        body = None
        ctype = "text/html; charset=utf-8"
        if self.static_dir:
            target = (self.static_dir / path.lstrip("/")).resolve()
            if target.is_file() and str(target).startswith(str(self.static_dir.resolve())):
                body = target.read_bytes()
                ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        if body is None and path == "/index.html":
            body = _FALLBACK_PAGE
        if body is None:
            writer.write(b"HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\n\r\n")
            return
        writer.write(
            f"HTTP/1.1 200 OK\r\nContent-Type: {ctype}\r\n"
            f"Content-Length: {len(body)}\r\nConnection: close\r\n\r\n".encode())
        writer.write(body)

    async def _websocket_session(self, reader, writer, headers):
        key = headers.get("sec-websocket-key")
        if not key:
            writer.write(b"HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\n\r\n")
            await writer.drain()
            writer.close()
            return
        writer.write((
            "HTTP/1.1 101 Switching Protocols\r\n"
            "Upgrade: websocket\r\nConnection: Upgrade\r\n"
            f"Sec-WebSocket-Accept: {ws_accept_key(key)}\r\n\r\n").encode())
        await writer.drain()

        # sessions live and die with their connection
        manager = SessionManager(self.sim, self.frame_source, server_seed=self.seed)
        try:
            while True:
                opcode, payload = await read_ws_message(reader)
                if opcode is None:
                    writer.write(ws_frame(b"", opcode=0x8))
                    await writer.drain()
                    break
                if opcode == 0x9:
                    writer.write(ws_frame(payload, opcode=0xA))
                    await writer.drain()
                    continue
                reply = self._dispatch(manager, payload)
                if reply is not None:
                    writer.write(ws_frame(json.dumps(reply).encode()))
                    await writer.drain()
        except (asyncio.IncompleteReadError, ConnectionResetError):
            pass
        finally:
            writer.close()

    def _dispatch(self, manager: SessionManager, payload: bytes) -> dict:
        try:
            message = json.loads(payload.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            return {"type": "error", "code": "bad_json", "message": str(exc)}
        try:
            return manager.handle(message)
        except SessionError as exc:
            return {"type": "error", "code": exc.code, "message": exc.message}
        except ContractError as exc:
            return {"type": "error", "code": "contract", "message": str(exc)}


def serve(ckpt_path, port: int, seed: int, data_path=None, static_dir=None,
          host: str = "127.0.0.1"):
    """Blocking entry point used by the CLI."""
    sim = load_simulator(ckpt_path)
    server = PlayServer(sim, FrameSource(data_path), seed=seed, static_dir=static_dir)

    async def main():
        bound = await server.start(host=host, port=port)
        print(f"play service listening on ws://{host}:{bound}/ws", flush=True)
        await server.serve_forever()

    asyncio.run(main())
