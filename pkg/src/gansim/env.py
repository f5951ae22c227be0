"""Synthetic maze gridworld: the data source the simulator learns to imitate.

A perfect maze (recursive backtracker) on an odd-sized grid, an agent that
moves one cell per action unless a wall blocks it, and egocentric
observations: a (2r+1)-cell window rendered at a fixed pixel scale, padded
to the model's frame size with wall color.  No ghosts, no score; the
come-back-home evaluation only needs walls.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .config import ACTIONS, COUNTERPARTS
from .rng import SeedStream
from .tensor import ContractError

PALETTE = {
    "wall": (40, 80, 220),
    "floor": (0, 0, 0),
    "food": (250, 200, 60),
    "agent": (240, 60, 60),
}

WINDOW_RADIUS = 2
PIXELS_PER_CELL = 3
FRAME_SIZE = 16  # (2r+1)*3 = 15, padded to 16

_MOVES = {"left": (0, -1), "right": (0, 1), "up": (-1, 0), "down": (1, 0), "stay": (0, 0)}


@dataclass
class GridWorld:
    grid_size: int
    walls: np.ndarray         # (G, G) bool
    food: np.ndarray          # (G, G) bool
    agent: tuple
    window_radius: int = WINDOW_RADIUS
    pixels_per_cell: int = PIXELS_PER_CELL
    action_names: tuple = ACTIONS
    counterparts: dict = field(default_factory=lambda: dict(COUNTERPARTS))

    def is_wall(self, r: int, c: int) -> bool:
        if not (0 <= r < self.grid_size and 0 <= c < self.grid_size):
            return True  # out of bounds renders as wall
        return bool(self.walls[r, c])

    def open_moves(self):
        """Action names that would actually move the agent."""
        r, c = self.agent
        out = []
        for name, (dr, dc) in _MOVES.items():
            if name == "stay":
                continue
            if not self.is_wall(r + dr, c + dc):
                out.append(name)
        return out


def generate_maze(seed: int, grid_size: int, food_density: float = 0.3) -> GridWorld:
    """Recursive-backtracker perfect maze; deterministic per seed."""
    if grid_size % 2 == 0 or grid_size < 5:
        raise ContractError(f"grid_size must be odd and >= 5, got {grid_size}")
    rng = SeedStream(seed, "maze")
    g = grid_size
    walls = np.ones((g, g), dtype=bool)
    cells = [(r, c) for r in range(1, g, 2) for c in range(1, g, 2)]
    start = cells[int(rng.integers(0, len(cells)))]
    walls[start] = False
    stack = [start]
    visited = {start}
    while stack:
        r, c = stack[-1]
        neighbors = []
        for dr, dc in ((-2, 0), (2, 0), (0, -2), (0, 2)):
            nr, nc = r + dr, c + dc
            if 1 <= nr < g - 1 and 1 <= nc < g - 1 and (nr, nc) not in visited:
                neighbors.append((nr, nc))
        if not neighbors:
            stack.pop()
            continue
        nr, nc = neighbors[int(rng.integers(0, len(neighbors)))]
        walls[(r + nr) // 2, (c + nc) // 2] = False
        walls[nr, nc] = False
        visited.add((nr, nc))
        stack.append((nr, nc))

    floor = np.argwhere(~walls)
    food = np.zeros_like(walls)
    n_food = int(food_density * len(floor))
    picks = rng.integers(0, len(floor), n_food)
    for i in np.unique(picks):
        food[tuple(floor[i])] = True
    agent_idx = int(rng.integers(0, len(floor)))
    agent = tuple(int(v) for v in floor[agent_idx])
    food[agent] = False
    return GridWorld(grid_size=g, walls=walls, food=food, agent=agent)


def render_observation(world: GridWorld) -> np.ndarray:
    """Egocentric u8 RGB frame, (FRAME_SIZE, FRAME_SIZE, 3)."""
    r0, c0 = world.agent
    rad = world.window_radius
    ppc = world.pixels_per_cell
    span = 2 * rad + 1
    img = np.zeros((FRAME_SIZE, FRAME_SIZE, 3), dtype=np.uint8)
    img[...] = PALETTE["wall"]
    for i in range(span):
        for j in range(span):
            r = r0 - rad + i
            c = c0 - rad + j
            y, x = i * ppc, j * ppc
            if world.is_wall(r, c):
                color = PALETTE["wall"]
                img[y:y + ppc, x:x + ppc] = color
                continue
            img[y:y + ppc, x:x + ppc] = PALETTE["floor"]
            if 0 <= r < world.grid_size and world.food[r, c]:
                img[y + ppc // 2, x + ppc // 2] = PALETTE["food"]
    cy = cx = rad * ppc
    img[cy:cy + ppc, cx:cx + ppc] = PALETTE["agent"]
    return img


def env_step(world: GridWorld, action) -> tuple:
    """Move one cell unless blocked (blocked moves leave the state
    unchanged, which is what the memory gate has to learn)."""
    if isinstance(action, (int, np.integer)):
        if not 0 <= action < len(world.action_names):
            raise ContractError(f"action index {action} out of range")
        name = world.action_names[action]
    else:
        name = action
        if name not in world.action_names:
            raise ContractError(f"unknown action '{name}'")
    dr, dc = _MOVES[name]
    r, c = world.agent
    nr, nc = r + dr, c + dc
    if not world.is_wall(nr, nc):
        world = replace(world, agent=(nr, nc))
    return world, render_observation(world)


@dataclass
class Episode:
    frames: np.ndarray   # (n, H, W, 3) u8
    actions: np.ndarray  # (n-1,) u8
    seed: int

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.dtype != np.uint8:
            raise ContractError("frames must be (n, H, W, 3) u8")
        if len(self.actions) != len(self.frames) - 1:
            raise ContractError("episode needs exactly one action between consecutive frames")

    def __len__(self):
        return len(self.frames)


def rollout(world: GridWorld, policy, length: int, seed: int) -> Episode:
    """Roll a policy for `length` observations (length-1 actions).

    policy: "random" (uniform over all actions) or a sequence of action
    names/indices to script.
    """
    if length < 2:
        raise ContractError("rollout needs length >= 2")
    rng = SeedStream(seed, "rollout")
    frames = [render_observation(world)]
    actions = []
    name_to_idx = {n: i for i, n in enumerate(world.action_names)}
    for t in range(length - 1):
        if policy == "random":
            a = int(rng.integers(0, len(world.action_names)))
        else:
            a = policy[t]
            if not isinstance(a, (int, np.integer)):
                a = name_to_idx[a]
        world, obs = env_step(world, a)
        frames.append(obs)
        actions.append(a)
    return Episode(frames=np.stack(frames), actions=np.asarray(actions, dtype=np.uint8), seed=seed)


def classify_pixels(frame: np.ndarray) -> np.ndarray:
    """Nearest palette color per pixel -> class index into PALETTE order."""
    colors = np.array(list(PALETTE.values()), dtype=np.float32)
    dist = ((frame[..., None, :].astype(np.float32) - colors) ** 2).sum(axis=-1)
    return dist.argmin(axis=-1)


def wall_mask(frame: np.ndarray) -> np.ndarray:
    """Binary wall image via nearest palette color (wall class -> 1)."""
    return (classify_pixels(frame) == 0).astype(np.uint8)
