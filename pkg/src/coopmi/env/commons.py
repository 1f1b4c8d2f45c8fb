"""Commons Game: agents harvest renewable apples and may tag each other out with a beam."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import kernels

ACTIONS = ("still", "up", "down", "left", "right", "turn_left", "turn_right", "shoot")
N_ACTIONS = len(ACTIONS)
STILL, UP, DOWN, LEFT, RIGHT, TURN_LEFT, TURN_RIGHT, SHOOT = range(N_ACTIONS)

CHANNELS = ("empty", "self", "other", "apple", "beam", "sight", "wall")
N_CHANNELS = len(CHANNELS)
EMPTY, SELF, OTHER, APPLE, BEAM, SIGHT, WALL = range(N_CHANNELS)

VIEW = 9
TIMEOUT_STEPS = 25
ORIENTATIONS = "NESW"

FORWARD = kernels.python_backend.FORWARD
RIGHT_VEC = kernels.python_backend.RIGHT


class EnvError(ValueError):
    pass


@dataclass(frozen=True)
class MapSpec:
    """Static layout. ``walls`` and ``apple_sites`` are boolean (H, W) grids."""

    walls: np.ndarray
    apple_sites: np.ndarray
    spawns: tuple
    text: str = ""

    @property
    def height(self):
        return self.walls.shape[0]

    @property
    def width(self):
        return self.walls.shape[1]

    @classmethod
    def from_text(cls, text: str) -> "MapSpec":
        rows = [line.rstrip("\r") for line in text.strip("\n").splitlines() if line.strip()]
        if not rows:
            raise EnvError("empty map")
        width = len(rows[0])
        if any(len(r) != width for r in rows):
            raise EnvError("map rows have unequal length")
        walls = np.zeros((len(rows), width), dtype=bool)
        sites = np.zeros_like(walls)
        spawns = []
        for r, line in enumerate(rows):
            for c, ch in enumerate(line):
                if ch == "@":
                    walls[r, c] = True
                elif ch == "a":
                    sites[r, c] = True
                elif ch == "P":
                    spawns.append((r, c))
                elif ch not in ". ":
                    raise EnvError(f"unknown map symbol {ch!r} at row {r}, col {c}")
        border = np.concatenate([walls[0], walls[-1], walls[:, 0], walls[:, -1]])
        if not border.all():
            raise EnvError("map border must be wall")
        return cls(walls, sites, tuple(spawns), "\n".join(rows))

    @classmethod
    def load(cls, path) -> "MapSpec":
        return cls.from_text(Path(path).read_text())


def builtin_map(name: str) -> MapSpec:
    """Load one of the shipped maps: ``commons_default``, ``desk_15x9`` or ``tiny_5x5``."""
    text = resources.files("coopmi.env").joinpath("maps", name + ".txt").read_text()
    return MapSpec.from_text(text)


def resolve_map(path_or_name) -> MapSpec:
    if isinstance(path_or_name, MapSpec):
        return path_or_name
    p = Path(path_or_name)
    if p.exists():
        return MapSpec.load(p)
    return builtin_map(str(path_or_name))


@dataclass
class AgentState:
    id: int
    position: tuple | None
    orientation: int
    timeout_remaining: int
    spawn: tuple

    @property
    def active(self):
        return self.timeout_remaining == 0


@dataclass(frozen=True)
class Event:
    step: int
    agent: int
    kind: str
    cell: tuple | None = None


@dataclass
class EventLog:
    events: list = field(default_factory=list)
    terminated: bool = False
    apples_present: int = 0

    def add(self, step, agent, kind, cell=None):
        self.events.append(Event(step, agent, kind, None if cell is None else tuple(int(v) for v in cell)))

    def of_kind(self, kind):
        return [e for e in self.events if e.kind == kind]

    def to_lines(self):
        return [
            json.dumps({"step": e.step, "agent": e.agent, "event": e.kind, "cell": e.cell})
            for e in self.events
        ]


@dataclass
class GridState:
    map: MapSpec
    apples: np.ndarray
    agents: list
    t: int
    rng: np.random.Generator
    beams: list = field(default_factory=list)
    episode: int = 0

    @property
    def n_agents(self):
        return len(self.agents)

    def apple_count(self) -> int:
        return int(self.apples.sum())

    def timeouts(self) -> np.ndarray:
        return np.array([a.timeout_remaining for a in self.agents], dtype=np.int64)

    def copy(self) -> "GridState":
        return copy.deepcopy(self)

    # -- serialization for checkpoints --------------------------------

    def to_dict(self) -> dict:
        return {
            "map": self.map.text,
            "apples": self.apples.astype(int).tolist(),
            "agents": [
                {
                    "id": a.id,
                    "position": None if a.position is None else list(a.position),
                    "orientation": a.orientation,
                    "timeout": a.timeout_remaining,
                    "spawn": list(a.spawn),
                }
                for a in self.agents
            ],
            "t": self.t,
            "episode": self.episode,
            "beams": [list(c) for c in self.beams],
            "rng": self.rng.bit_generator.state,
        }

    @classmethod
    def from_dict(cls, d) -> "GridState":
        rng = np.random.default_rng()
        rng.bit_generator.state = d["rng"]
        agents = [
            AgentState(
                a["id"],
                None if a["position"] is None else tuple(a["position"]),
                a["orientation"],
                a["timeout"],
                tuple(a["spawn"]),
            )
            for a in d["agents"]
        ]
        return cls(
            MapSpec.from_text(d["map"]),
            np.array(d["apples"], dtype=bool),
            agents,
            d["t"],
            rng,
            [tuple(c) for c in d["beams"]],
            d["episode"],
        )


def respawn_probability(n_a):
    """Regrowth probability of a collected apple given ``n_a`` apples within radius 2."""
    n = np.asarray(n_a)
    if np.any(n < 0):
        raise EnvError("apple count must be non-negative")
    out = np.select([n == 0, n <= 2, n <= 4], [0.0, 0.01, 0.05], default=0.1)
    return float(out) if out.ndim == 0 else out


def reset(map_spec: MapSpec, n: int, seed=None, rng=None) -> GridState:
    if n > len(map_spec.spawns):
        raise EnvError(f"{n} agents requested but map has {len(map_spec.spawns)} spawn points")
    if rng is None:
        rng = np.random.default_rng(seed)
    agents = [AgentState(i, map_spec.spawns[i], 0, 0, map_spec.spawns[i]) for i in range(n)]
    return GridState(map_spec, map_spec.apple_sites.copy(), agents, 0, rng)


def _restart_episode(state: GridState):
    state.apples = state.map.apple_sites.copy()
    for a in state.agents:
        a.position = a.spawn
        a.orientation = 0
        a.timeout_remaining = 0
    state.beams = []
    state.episode += 1


def _free_cell_near(state: GridState, start, occupied):
    walls = state.map.walls

    def free(cell):
        return not walls[cell] and cell not in occupied and not state.apples[cell]

    if free(start):
        return start
    h, w = walls.shape
    seen = {start}
    frontier = [start]
    while frontier:
        nxt = set()
        for r, c in frontier:
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                cell = (r + dr, c + dc)
                if 0 <= cell[0] < h and 0 <= cell[1] < w and cell not in seen and not walls[cell]:
                    seen.add(cell)
                    nxt.add(cell)
        layer = sorted(nxt)
        for cell in layer:
            if free(cell):
                return cell
        frontier = layer
    raise EnvError("no free cell to re-place a returning agent")


def step(state: GridState, joint_action):
    """Advance the game by one tick. Mutates and returns ``state``.

    Returns ``(state, rewards, log)``; ``rewards`` holds one float per agent.
    """
    actions = np.asarray(joint_action, dtype=np.int64).reshape(-1)
    n = state.n_agents
    if actions.shape[0] != n:
        raise EnvError(f"expected {n} actions, got {actions.shape[0]}")
    if np.any((actions < 0) | (actions >= N_ACTIONS)):
        raise EnvError("action index out of range")
    log = EventLog()
    rewards = np.zeros(n)
    walls = state.map.walls
    t = state.t + 1
    state.beams = []

    # 1. timeouts; agents returning this tick do not act
    acting = [a.active for a in state.agents]
    occupied = {a.position for a in state.agents if a.position is not None}
    for a in state.agents:
        if a.timeout_remaining > 0:
            a.timeout_remaining -= 1
            if a.timeout_remaining == 0:
                a.position = _free_cell_near(state, a.spawn, occupied)
                a.orientation = 0
                occupied.add(a.position)
                log.add(t, a.id, "return", a.position)

    # 2. moves and turns in random order
    moved = []
    for i in state.rng.permutation(n):
        if not acting[i]:
            continue
        a = state.agents[i]
        act = actions[i]
        if act in (UP, DOWN, LEFT, RIGHT):
            f, rt = FORWARD[a.orientation], RIGHT_VEC[a.orientation]
            delta = {UP: f, DOWN: -f, LEFT: -rt, RIGHT: rt}[act]
            target = (a.position[0] + int(delta[0]), a.position[1] + int(delta[1]))
            if not walls[target] and target not in occupied:
                occupied.discard(a.position)
                occupied.add(target)
                a.position = target
                moved.append(a)
        elif act == TURN_LEFT:
            a.orientation = (a.orientation - 1) % 4
        elif act == TURN_RIGHT:
            a.orientation = (a.orientation + 1) % 4

    # 3. harvesting
    for a in moved:
        if state.apples[a.position]:
            state.apples[a.position] = False
            rewards[a.id] += 1.0
            log.add(t, a.id, "collect", a.position)

    # 4. beams, resolved simultaneously from post-move positions
    wall_u8 = walls.view(np.uint8)
    hit = set()
    for i, a in enumerate(state.agents):
        if acting[i] and actions[i] == SHOOT:
            cells = kernels.trace_beam(wall_u8, a.position[0], a.position[1], a.orientation)
            state.beams.extend(cells)
            log.add(t, a.id, "shoot", a.position)
            swept = set(cells)
            for b in state.agents:
                if b.position is not None and b.position in swept:
                    hit.add(b.id)
    for j in sorted(hit):
        b = state.agents[j]
        log.add(t, j, "hit", b.position)
        b.position = None
        b.timeout_remaining = TIMEOUT_STEPS

    # 5. regrowth
    counts = kernels.neighbor_counts(state.apples.view(np.uint8))
    candidates = state.map.apple_sites & ~state.apples
    for a in state.agents:
        if a.position is not None:
            candidates[a.position] = False
    rows, cols = np.nonzero(candidates)
    if rows.size:
        p = respawn_probability(counts[rows, cols])
        grow = state.rng.random(rows.size) < p
        for r, c in zip(rows[grow], cols[grow]):
            state.apples[r, c] = True
            log.add(t, -1, "respawn", (r, c))

    # 6-7. clock, termination
    state.t = t
    log.apples_present = state.apple_count()
    if log.apples_present == 0:
        log.terminated = True
        log.add(t, -1, "terminate")
        _restart_episode(state)
    return state, rewards, log


def global_codes(state: GridState) -> np.ndarray:
    """Class index of every map cell as seen by an outside observer (agents as ``OTHER``)."""
    codes = np.zeros(state.map.walls.shape, dtype=np.uint8)
    codes[state.apples] = APPLE
    for cell in state.beams:
        codes[cell] = BEAM
    codes[state.map.walls] = WALL
    h, w = codes.shape
    active = [a for a in state.agents if a.position is not None]
    for a in active:
        codes[a.position] = OTHER
    for a in active:
        fr, fc = FORWARD[a.orientation]
        r, c = a.position[0] + fr, a.position[1] + fc
        if 0 <= r < h and 0 <= c < w and codes[r, c] == EMPTY:
            codes[r, c] = SIGHT
    return codes


def observation_indices(state: GridState) -> np.ndarray:
    """(n, 9, 9) class indices for every agent; timed-out agents get the all-empty sentinel."""
    out = np.zeros((state.n_agents, VIEW, VIEW), dtype=np.uint8)
    idx = [i for i, a in enumerate(state.agents) if a.position is not None]
    if idx:
        codes = global_codes(state)
        rows = [state.agents[i].position[0] for i in idx]
        cols = [state.agents[i].position[1] for i in idx]
        ors = [state.agents[i].orientation for i in idx]
        out[idx] = kernels.extract_views(codes, rows, cols, ors)
    return out


_EYE = np.eye(N_CHANNELS)


def one_hot(indices) -> np.ndarray:
    return _EYE[np.asarray(indices, dtype=np.intp)]


def render_observation(state: GridState, agent_id: int) -> np.ndarray:
    """One-hot (9, 9, 7) egocentric view of ``agent_id``."""
    if not 0 <= agent_id < state.n_agents:
        raise EnvError(f"unknown agent id {agent_id}")
    return one_hot(observation_indices(state)[agent_id])


def timeout_observation() -> np.ndarray:
    return one_hot(np.zeros((VIEW, VIEW), dtype=np.uint8))


def is_timeout_observation(o) -> bool:
    o = np.asarray(o)
    if o.ndim == 3:
        return bool(np.all(o[..., EMPTY] == 1))
    return bool(np.all(o == EMPTY))


def mask_others(o):
    """Keep only other-agent pixels; every other class collapses to empty.

    Accepts one-hot arrays (..., 7) or class-index arrays.
    """
    o = np.asarray(o)
    if o.shape[-1] == N_CHANNELS and o.dtype.kind == "f":
        out = np.zeros_like(o)
        out[..., OTHER] = o[..., OTHER]
        out[..., EMPTY] = 1.0 - o[..., OTHER]
        return out
    return np.where(o == OTHER, OTHER, EMPTY).astype(o.dtype)
