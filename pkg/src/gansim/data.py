"""Episode dataset persistence (GGEP container) and frame conversions.

Layout (little-endian):
    magic "GGEP" | u32 version | u32 header_len | header JSON
    per episode: u64 seed | u32 frame_count | u32 action_count
                 | frames u8 (n*H*W*C) | actions u8 (n-1)
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .env import Episode

MAGIC = b"GGEP"
VERSION = 1


class DataFormatError(ValueError):
    """Malformed dataset file; message carries the byte offset."""


def frame_to_float(frames: np.ndarray) -> np.ndarray:
    """u8 (..., H, W, C) -> f32 (..., C, H, W) in [-1, 1]."""
    x = frames.astype(np.float32) / 127.5 - 1.0
    return np.moveaxis(x, -1, -3)


def frame_to_u8(x: np.ndarray) -> np.ndarray:
    """f32 (..., C, H, W) in [-1, 1] -> u8 (..., H, W, C)."""
    img = np.moveaxis(x, -3, -1)
    return np.clip((img + 1.0) * 127.5 + 0.5, 0, 255).astype(np.uint8)


def write_dataset(episodes, path, action_names, counterparts) -> None:
    episodes = list(episodes)
    if not episodes:
        raise DataFormatError("refusing to write an empty dataset")
    h, w, c = episodes[0].frames.shape[1:]
    for ep in episodes:
        if ep.frames.shape[1:] != (h, w, c):
            raise DataFormatError("episodes must share one frame shape")
    header = {
        "frame_height": int(h),
        "frame_width": int(w),
        "channels": int(c),
        "action_count": len(action_names),
        "action_names": list(action_names),
        "counterparts": dict(counterparts),
        "episode_count": len(episodes),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blob)))
        f.write(blob)
        for ep in episodes:
            f.write(struct.pack("<QII", ep.seed, len(ep.frames), len(ep.actions)))
            f.write(ep.frames.tobytes())
            f.write(ep.actions.astype(np.uint8).tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise DataFormatError(f"truncated file at byte {f.tell() - len(buf)} reading {what}")
    return buf


def read_header(f) -> dict:
    magic = _read_exact(f, 4, "magic")
    if magic != MAGIC:
        raise DataFormatError(f"bad magic {magic!r} at byte 0")
    version, hlen = struct.unpack("<II", _read_exact(f, 8, "version/header length"))
    if version != VERSION:
        raise DataFormatError(f"unsupported version {version} at byte 4")
    return json.loads(_read_exact(f, hlen, "header JSON"))


def iter_episodes(path):
    """Stream (header, episode) without materializing the whole file."""
    with open(path, "rb") as f:
        header = read_header(f)
        h, w, c = header["frame_height"], header["frame_width"], header["channels"]
        for _ in range(header["episode_count"]):
            seed, n_frames, n_actions = struct.unpack("<QII", _read_exact(f, 16, "episode header"))
            if n_actions != n_frames - 1:
                raise DataFormatError(f"episode at byte {f.tell() - 16} has "
                                      f"{n_actions} actions for {n_frames} frames")
            frames = np.frombuffer(_read_exact(f, n_frames * h * w * c, "frames"),
                                   dtype=np.uint8).reshape(n_frames, h, w, c).copy()
            actions = np.frombuffer(_read_exact(f, n_actions, "actions"), dtype=np.uint8).copy()
            if (actions >= header["action_count"]).any():
                raise DataFormatError(f"action index out of range in episode at byte {f.tell()}")
            yield header, Episode(frames=frames, actions=actions, seed=seed)
        extra = f.read(1)
        if extra:
            raise DataFormatError(f"trailing bytes at {f.tell() - 1}")


def read_dataset(path):
    """All episodes + header; raises before returning anything partial."""
    header = None
    episodes = []
    for header, ep in iter_episodes(path):
        episodes.append(ep)
    if header is None:
        with open(path, "rb") as f:
            header = read_header(f)
    return episodes, header


def count_episodes(path) -> int:
    n = 0
    for _ in iter_episodes(path):
        n += 1
    return n
