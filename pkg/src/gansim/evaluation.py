"""Quantitative probes of a trained simulator.

Come-back-home: walk K random (unblocked) actions from a fresh maze, then
the reversed counterpart actions, and measure the wall-pixel change ratio

    d = sum(|s - s_hat|) / (sum(s) + 1)

between binarized wall images of the initial and final frames.  The real
environment scores d = 0 exactly under this protocol, which is the
calibration the acceptance suite checks.

The disentanglement report renders per-step static/dynamic contents, fine
masks, the composition, and a swapped-static composition into a PNG grid
plus mask statistics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .data import frame_to_float, frame_to_u8
from .env import GridWorld, env_step, generate_maze, render_observation, wall_mask
from .model import Simulator
from .renderer import DYNAMIC, STATIC, compose_final
from .rng import SeedStream
from .tensor import ContractError, Tensor, no_grad


def cbh_distance(s: np.ndarray, s_hat: np.ndarray) -> float:
    """Wall-change ratio between two binary images."""
    s = np.asarray(s)
    s_hat = np.asarray(s_hat)
    if s.shape != s_hat.shape:
        raise ContractError(f"shape mismatch: {s.shape} vs {s_hat.shape}")
    for arr in (s, s_hat):
        if not np.isin(arr, (0, 1)).all():
            raise ContractError("inputs must be binary {0,1} images")
    diff = np.abs(s.astype(np.int64) - s_hat.astype(np.int64)).sum()
    return float(diff) / (float(s.sum()) + 1.0)


@dataclass
class CbhResult:
    k: int
    distances: list
    mean: float = field(init=False)
    std: float = field(init=False)
    quartiles: tuple = field(init=False)

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=np.float64)
        if (d < 0).any():
            raise ContractError("distances must be nonnegative")
        self.mean = float(d.mean())
        self.std = float(d.std())
        self.quartiles = tuple(float(q) for q in np.percentile(d, (25, 50, 75)))

    def to_dict(self) -> dict:
        return {"k": self.k, "distances": list(map(float, self.distances)),
                "mean": self.mean, "std": self.std, "quartiles": list(self.quartiles)}


def sample_valid_walk(world: GridWorld, k: int, rng: SeedStream):
    """K actions that each actually move the agent (the reverse walk then
    provably returns home in the real maze)."""
    actions = []
    for _ in range(k):
        options = world.open_moves()
        name = options[int(rng.integers(0, len(options)))]
        actions.append(world.action_names.index(name))
        world, _ = env_step(world, name)
    return actions, world


def real_env_stepper(world: GridWorld):
    state = {"world": world}

    def step(action_idx: int) -> np.ndarray:
        state["world"], obs = env_step(state["world"], int(action_idx))
        return obs

    return step


def model_stepper(sim: Simulator, frame0: np.ndarray, stream: SeedStream,
                  memory_n: int | None = None):
    """Stateful closure stepping the simulator from a real initial frame."""
    state = sim.initial_state(1, stream.child("init"),
                              memory_n=memory_n or sim.config.eval_memory_N)
    holder = {"state": state, "x": Tensor(frame_to_float(frame0)[None])}
    zrng = stream.child("z")

    def step(action_idx: int) -> np.ndarray:
        with no_grad():
            z = Tensor(zrng.normal((1, sim.config.z_dim)))
            holder["state"], out = sim.step(holder["state"], holder["x"],
                                            [int(action_idx)], z)
            holder["x"] = out.frame
        return frame_to_u8(out.frame.data[0])

    return step


def run_cbh(stepper_factory, k: int, trials: int, seed: int,
            grid_size: int = 15) -> CbhResult:
    """stepper_factory(world, frame0, trial_stream) -> step(action) -> frame.

    Pass a factory wrapping the real environment to calibrate (d = 0), or
    one wrapping a trained simulator to evaluate it.
    """
    if k <= 0:
        raise ContractError("come-back-home needs K >= 1")
    root = SeedStream(seed, "cbh")
    counterpart_of = None
    distances = []
    for trial in range(trials):
        stream = root.child(f"trial{trial}")
        world = generate_maze(int(stream.integers(0, 2 ** 31)), grid_size)
        if counterpart_of is None:
            counterpart_of = {i: world.action_names.index(world.counterparts[name])
                              for i, name in enumerate(world.action_names)
                              if name in world.counterparts}
        frame0 = render_observation(world)
        actions, _ = sample_valid_walk(world, k, stream.child("walk"))
        step = stepper_factory(world, frame0, stream.child("sim"))
        frame = frame0
        for a in actions:
            frame = step(a)
        for a in reversed(actions):
            frame = step(counterpart_of[a])
        distances.append(cbh_distance(wall_mask(frame0), wall_mask(frame)))
    return CbhResult(k=k, distances=distances)


def run_cbh_real_env(k: int, trials: int, seed: int, grid_size: int = 15) -> CbhResult:
    return run_cbh(lambda world, frame0, stream: real_env_stepper(world),
                   k, trials, seed, grid_size)


def run_cbh_model(sim: Simulator, k: int, trials: int, seed: int,
                  grid_size: int = 15, memory_n: int | None = None) -> CbhResult:
    def factory(world, frame0, stream):
        return model_stepper(sim, frame0, stream, memory_n=memory_n)

    return run_cbh(factory, k, trials, seed, grid_size)


def random_pair_baseline(episodes, trials: int, seed: int) -> CbhResult:
    """d between the wall masks of two random frames of one real episode;
    the floor any memoryless simulator would sit near."""
    rng = SeedStream(seed, "baseline")
    distances = []
    for _ in range(trials):
        ep = episodes[int(rng.integers(0, len(episodes)))]
        i = int(rng.integers(0, len(ep.frames)))
        j = int(rng.integers(0, len(ep.frames)))
        distances.append(cbh_distance(wall_mask(ep.frames[i]), wall_mask(ep.frames[j])))
    return CbhResult(k=0, distances=distances)


# ---------------------------------------------------------------------------
# disentanglement report
# ---------------------------------------------------------------------------

def _to_u8_gray(mask: np.ndarray) -> np.ndarray:
    return np.clip(mask * 255.0 + 0.5, 0, 255).astype(np.uint8)


def disentanglement_report(sim: Simulator, episode, out_dir, seed: int = 0,
                           swap_seed: int = 1) -> dict:
    """Per-step component images and mask statistics for one episode.

    Emits report.png (rows: composed, static content, dynamic content,
    static mask, dynamic mask, swapped-static composition) and report.json
    with per-step dynamic-mask areas.
    """
    if not sim.disentangled:
        raise ContractError("disentanglement report requires the disentangling renderer")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stream = SeedStream(seed, "report")
    size = sim.config.image_size
    override = Tensor(SeedStream(swap_seed, "swap").uniform(-1, 1, (1, 3, size, size)))

    rows = []
    stats = {"dynamic_mask_area": [], "swap_leakage_ok": True}
    n_steps = len(episode.actions)
    if n_steps == 0:
        rows.append([episode.frames[0]] )
    else:
        state = sim.initial_state(1, stream.child("init"),
                                  memory_n=sim.config.eval_memory_N)
        x = Tensor(frame_to_float(episode.frames[0])[None])
        zrng = stream.child("z")
        with no_grad():
            for t in range(n_steps):
                z = Tensor(zrng.normal((1, sim.config.z_dim)))
                state, out = sim.step(state, x, [int(episode.actions[t])], z)
                x = out.frame
                packets = out.packets
                swapped = compose_final(packets, override_content={STATIC: override})
                eta_s = packets[STATIC].fine_mask.data[0, 0]
                eta_d = packets[DYNAMIC].fine_mask.data[0, 0]
                diff = np.abs(swapped.data - out.frame.data).max(axis=1)[0]
                if not (diff <= 2.0 * eta_s + 1e-5).all():
                    stats["swap_leakage_ok"] = False
                stats["dynamic_mask_area"].append(float(eta_d.mean()))
                rows.append([
                    frame_to_u8(out.frame.data[0]),
                    frame_to_u8(packets[STATIC].content.data[0]),
                    frame_to_u8(packets[DYNAMIC].content.data[0]),
                    np.repeat(_to_u8_gray(eta_s)[..., None], 3, axis=-1),
                    np.repeat(_to_u8_gray(eta_d)[..., None], 3, axis=-1),
                    frame_to_u8(swapped.data[0]),
                ])
    stats["mean_dynamic_mask_area"] = (float(np.mean(stats["dynamic_mask_area"]))
                                       if stats["dynamic_mask_area"] else None)

    pad = 2
    n_cols = max(len(r) for r in rows)
    canvas = np.zeros((len(rows) * (size + pad), n_cols * (size + pad), 3), dtype=np.uint8)
    for i, row in enumerate(rows):
        for j, img in enumerate(row):
            y, xpos = i * (size + pad), j * (size + pad)
            canvas[y:y + size, xpos:xpos + size] = img
    png_path = out_dir / "report.png"
    Image.fromarray(canvas).save(png_path)
    stats["rows"] = len(rows)
    stats["png"] = str(png_path)
    (out_dir / "report.json").write_text(json.dumps(stats, indent=2))
    return stats
