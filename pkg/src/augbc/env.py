"""Deterministic button/door/goal grid navigation with a scripted expert.

The world is a 2D grid seen by an agent with a heading (N, E, S, W). The task
is to step on the button, which opens the door of the goal building for a
limited number of steps, walk through the door and enter the goal cell before
the door closes, all within 750 steps.

Grid characters::

    .  walkable        #  obstacle (tall)     o  low obstacle (jumpable)
    B  button          D  door                G  goal
    S  start

Cells outside the grid behave as walls.
"""

from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .dataset import CAT_DTYPE, CONT_DTYPE, DemoDataset, StateSchema, StateVector, Trajectory
from .rng import RngStream

MAX_STEPS = 750
JUMP_COOLDOWN = 3
START_JITTER = 2  # start cell drawn within this Chebyshev radius of S
LAYOUT_NAMES = ("train", "test1", "test2", "test3", "test4")

# actions
FORWARD, BACKWARD, ROTATE_RIGHT, ROTATE_LEFT, JUMP, SHOOT, SIDESTEP_RIGHT, SIDESTEP_LEFT, NOOP = range(9)
ACTION_NAMES = ("forward", "backward", "rotate_right", "rotate_left", "jump", "shoot",
                "sidestep_right", "sidestep_left", "noop")

# headings: 0=N, 1=E, 2=S, 3=W; (drow, dcol)
DIRS = ((-1, 0), (0, 1), (1, 0), (0, -1))
HEADING_NAMES = "NESW"

# semantic map symbols
EMPTY, GROUND, OBSTACLE, BUTTON, DOOR, GOAL, WALL = range(7)
SYMBOL_COUNT = 7
MAP_SIZE = 5
MAP_LEVELS = ("pad_low", "below", "level", "above", "pad_high")

FLAG_NAMES = ("on_ground", "door_open", "button_pressed", "jump_cooldown")
CONTINUOUS_NAMES = (
    "goal_forward", "goal_right", "goal_distance", "door_timer", "jump_cooldown_left",
    "button_entity_forward", "button_entity_right", "button_entity_distance",
    "goal_entity_forward", "goal_entity_right", "goal_entity_distance",
)

_WALKABLE = set(".SBG")


class LayoutError(ValueError):
    pass


class EpisodeError(RuntimeError):
    pass


def _map_names() -> list[str]:
    return [f"map_{MAP_LEVELS[v]}_f{2 - f:+d}_r{r - 2:+d}"
            for v in range(MAP_SIZE) for f in range(MAP_SIZE) for r in range(MAP_SIZE)]


def make_schema(arena: int) -> StateSchema:
    """The observation schema published by this environment."""
    cont = len(CONTINUOUS_NAMES)
    norm = []
    for name in CONTINUOUS_NAMES:
        if name == "door_timer":
            norm.append("steps / door_open_duration")
        elif name == "jump_cooldown_left":
            norm.append(f"steps / {JUMP_COOLDOWN}")
        else:
            norm.append(f"cells / {arena * 2 ** 0.5:.6g}")
    nflags = len(FLAG_NAMES)
    groups = {
        "self": [0, 1, 2, 3, 4],
        "entities": [[5, 6, 7], [8, 9, 10]],
        "flags": list(range(nflags)),
        "map": list(range(nflags, nflags + MAP_SIZE ** 3)),
        "map_shape": [MAP_SIZE, MAP_SIZE, MAP_SIZE],
    }
    assert len(norm) == cont
    return StateSchema(
        continuous_names=CONTINUOUS_NAMES,
        categorical_names=FLAG_NAMES + tuple(_map_names()),
        categorical_cardinalities=(2,) * nflags + (SYMBOL_COUNT,) * MAP_SIZE ** 3,
        normalization=tuple(norm),
        feature_groups=groups,
    )


@dataclass(frozen=True, eq=False)
class WorldLayout:
    name: str
    grid: tuple
    start_heading: int = 0
    goal_rotation: float = 0.0
    door_open_duration: int = 40
    obstacles: tuple = ()
    difficulty: str = "easy"
    paths: dict = field(default_factory=dict)
    description: str = ""

    def __post_init__(self):
        grid = tuple(self.grid)
        object.__setattr__(self, "grid", grid)
        if not grid or len({len(r) for r in grid}) != 1:
            raise LayoutError(f"{self.name}: grid rows must be non-empty and of equal length")
        bad = set("".join(grid)) - set(".#oBDGS")
        if bad:
            raise LayoutError(f"{self.name}: unknown grid characters {sorted(bad)}")
        for ch in "SBG":
            if sum(r.count(ch) for r in grid) != 1:
                raise LayoutError(f"{self.name}: grid needs exactly one {ch!r}")
        if not self.door_cells:
            raise LayoutError(f"{self.name}: grid needs at least one door 'D'")
        if self.difficulty not in ("easy", "medium", "hard"):
            raise LayoutError(f"{self.name}: difficulty must be easy, medium or hard")
        if self.door_open_duration < 1:
            raise LayoutError(f"{self.name}: door_open_duration must be >= 1")
        obstacles = tuple(tuple(int(v) for v in c) for c in self.obstacles)
        for r, c in obstacles:
            if not self.in_bounds(r, c) or grid[r][c] not in "#o":
                raise LayoutError(f"{self.name}: obstacle ({r}, {c}) is not an obstacle cell")
        object.__setattr__(self, "obstacles", obstacles)
        object.__setattr__(self, "paths", {k: tuple(tuple(c) for c in v) for k, v in self.paths.items()})
        object.__setattr__(self, "_obs_table", None)
        object.__setattr__(self, "_plans", {})
        self._check_reachable()

    # geometry ---------------------------------------------------------
    @property
    def rows(self) -> int:
        return len(self.grid)

    @property
    def cols(self) -> int:
        return len(self.grid[0])

    @property
    def arena(self) -> int:
        return max(self.rows, self.cols)

    def _find(self, ch) -> list:
        return [(r, c) for r, row in enumerate(self.grid) for c, x in enumerate(row) if x == ch]

    @property
    def start_cell(self) -> tuple:
        return self._find("S")[0]

    @property
    def agent_start(self) -> tuple:
        return self.start_cell, self.start_heading

    @property
    def button_cell(self) -> tuple:
        return self._find("B")[0]

    @property
    def goal_cell(self) -> tuple:
        return self._find("G")[0]

    @property
    def door_cells(self) -> tuple:
        return tuple(self._find("D"))

    @property
    def goal_pose(self) -> tuple:
        r, c = self.goal_cell
        return (c, r, self.goal_rotation)

    @property
    def difficulty_tag(self) -> str:
        return self.difficulty

    def in_bounds(self, r, c) -> bool:
        return 0 <= r < self.rows and 0 <= c < self.cols

    def char(self, r, c) -> str:
        return self.grid[r][c] if self.in_bounds(r, c) else "#"

    def passable(self, r, c, door_open: bool) -> bool:
        ch = self.char(r, c)
        return ch in _WALKABLE or (ch == "D" and door_open)

    def _check_reachable(self):
        def bfs(src, dst, door_open, avoid=()):
            seen, todo = {src}, deque([src])
            while todo:
                cell = todo.popleft()
                if cell == dst:
                    return True
                for dr, dc in DIRS:
                    nxt = (cell[0] + dr, cell[1] + dc)
                    if nxt not in seen and nxt not in avoid and (
                            self.passable(*nxt, door_open) or self.char(*nxt) == "o"):
                        seen.add(nxt)
                        todo.append(nxt)
            return False

        if not bfs(self.start_cell, self.button_cell, False):
            raise LayoutError(f"{self.name}: button unreachable")
        if not bfs(self.button_cell, self.goal_cell, True):
            raise LayoutError(f"{self.name}: goal unreachable")
        if bfs(self.button_cell, self.goal_cell, False, avoid=self.door_cells):
            raise LayoutError(f"{self.name}: goal reachable without passing the door")

    # serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "difficulty": self.difficulty,
            "grid": list(self.grid),
            "start_heading": HEADING_NAMES[self.start_heading],
            "goal_rotation": self.goal_rotation,
            "door_open_duration": self.door_open_duration,
            "obstacles": [list(c) for c in self.obstacles],
            "paths": {k: [list(c) for c in v] for k, v in self.paths.items()},
            "description": self.description,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldLayout":
        try:
            heading = d.get("start_heading", "N")
            return cls(
                name=d["name"],
                grid=tuple(d["grid"]),
                start_heading=HEADING_NAMES.index(heading) if isinstance(heading, str) else int(heading),
                goal_rotation=float(d.get("goal_rotation", 0.0)),
                door_open_duration=int(d.get("door_open_duration", 40)),
                obstacles=tuple(tuple(c) for c in d.get("obstacles", ())),
                difficulty=d.get("difficulty", "easy"),
                paths=d.get("paths", {}),
                description=d.get("description", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, LayoutError):
                raise
            raise LayoutError(f"malformed layout: {exc}") from None

    def ascii(self, pose=None) -> str:
        rows = [list(r) for r in self.grid]
        if pose is not None:
            (r, c), h = pose
            rows[r][c] = "^>v<"[h]
        return "\n".join("".join(r) for r in rows)

    # observation tables ---------------------------------------------
    def static_map(self) -> np.ndarray:
        """Semantic map for every (row, col, heading): shape (rows, cols, 4, 125)."""
        if self._obs_table is None:
            table = np.zeros((self.rows, self.cols, 4, MAP_SIZE ** 3), dtype=CAT_DTYPE)
            for r in range(self.rows):
                for c in range(self.cols):
                    for h in range(4):
                        table[r, c, h] = _semantic_map(self, (r, c), h)
            table.flags.writeable = False
            object.__setattr__(self, "_obs_table", table)
        return self._obs_table


def _symbols(layout: WorldLayout, r: int, c: int) -> tuple:
    """(below, level, above) symbols of one world cell."""
    if not layout.in_bounds(r, c):
        return WALL, WALL, WALL
    ch = layout.grid[r][c]
    level = {".": EMPTY, "S": EMPTY, "#": OBSTACLE, "o": OBSTACLE,
             "B": BUTTON, "D": DOOR, "G": GOAL}[ch]
    above = OBSTACLE if ch == "#" else EMPTY
    return GROUND, level, above


def map_offset_to_cell(cell, heading, forward, right) -> tuple:
    fr, fc = DIRS[heading]
    rr, rc = DIRS[(heading + 1) % 4]
    return cell[0] + forward * fr + right * rr, cell[1] + forward * fc + right * rc


def map_index(level: int, forward: int, right: int) -> int:
    """Flat index into the 5x5x5 map for a vertical level and an agent-relative offset."""
    return level * 25 + (2 - forward) * 5 + (right + 2)


def _semantic_map(layout, cell, heading) -> np.ndarray:
    out = np.zeros(MAP_SIZE ** 3, dtype=CAT_DTYPE)
    for forward in range(-2, 3):
        for right in range(-2, 3):
            below, level, above = _symbols(layout, *map_offset_to_cell(cell, heading, forward, right))
            out[map_index(1, forward, right)] = below
            out[map_index(2, forward, right)] = level
            out[map_index(3, forward, right)] = above
    return out


# --- layouts ------------------------------------------------------------

def load_layout(name_or_file) -> WorldLayout:
    """Load a built-in layout by name or a layout JSON file."""
    if isinstance(name_or_file, WorldLayout):
        return name_or_file
    key = str(name_or_file)
    if key in LAYOUT_NAMES:
        text = resources.files("augbc.layouts").joinpath(f"{key}.json").read_text(encoding="utf-8")
    else:
        path = Path(key)
        if not path.exists():
            raise LayoutError(f"no built-in layout or file named {key!r}")
        text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LayoutError(f"malformed layout file: {exc.msg}") from None
    return WorldLayout.from_dict(data)


def all_layouts() -> list[WorldLayout]:
    return [load_layout(n) for n in LAYOUT_NAMES]


# --- dynamics -----------------------------------------------------------

@dataclass(frozen=True)
class EnvState:
    cell: tuple
    heading: int
    step_count: int = 0
    door_timer: int = 0
    button_pressed: bool = False
    jump_cooldown: int = 0
    door_passed: bool = False
    done: bool = False
    success: bool = False

    @property
    def agent_pose(self) -> tuple:
        return self.cell, self.heading

    @property
    def door_open(self) -> bool:
        return self.door_timer > 0


def move(layout: WorldLayout, cell, heading: int, action: int, door_open: bool,
         cooldown: int = 0) -> tuple:
    """Pure movement rule: returns (cell, heading, jumped)."""
    r, c = cell
    if action == ROTATE_RIGHT:
        return cell, (heading + 1) % 4, False
    if action == ROTATE_LEFT:
        return cell, (heading - 1) % 4, False
    if action in (FORWARD, BACKWARD, SIDESTEP_RIGHT, SIDESTEP_LEFT):
        d = {FORWARD: heading, BACKWARD: (heading + 2) % 4,
             SIDESTEP_RIGHT: (heading + 1) % 4, SIDESTEP_LEFT: (heading - 1) % 4}[action]
        nr, nc = r + DIRS[d][0], c + DIRS[d][1]
        if layout.passable(nr, nc, door_open):
            return (nr, nc), heading, False
        return cell, heading, False
    if action == JUMP:
        if cooldown > 0:
            return cell, heading, False
        dr, dc = DIRS[heading]
        if layout.char(r + dr, c + dc) == "o" and layout.passable(r + 2 * dr, c + 2 * dc, door_open):
            return (r + 2 * dr, c + 2 * dc), heading, True
        return cell, heading, True
    return cell, heading, False  # shoot and no-op


def reset(layout: WorldLayout, seed: int = 0, jitter: bool = False) -> tuple:
    """Start an episode. With ``jitter`` the seed picks a free start cell within
    ``START_JITTER`` cells of ``S`` and a random heading; otherwise the start
    pose is fixed."""
    cell, heading = layout.agent_start
    if jitter:
        gen = RngStream(seed).child("reset", layout.name).generator
        span = range(-START_JITTER, START_JITTER + 1)
        candidates = [(cell[0] + dr, cell[1] + dc) for dr in span for dc in span]
        candidates = [x for x in candidates if layout.char(*x) in ".S"]
        cell = candidates[int(gen.integers(len(candidates)))]
        heading = int(gen.integers(4))
    state = EnvState(cell=cell, heading=heading)
    return state, observe(layout, state)


def step(layout: WorldLayout, state: EnvState, action: int) -> tuple:
    """Advance one step: returns (state, observation, done, success)."""
    new = advance(layout, state, action)
    return new, observe(layout, new), new.done, new.success


def advance(layout: WorldLayout, state: EnvState, action: int) -> EnvState:
    """``step`` without building the observation."""
    if state.done:
        raise EpisodeError("step called on a finished episode")
    action = int(action)
    if not 0 <= action < 9:
        raise EpisodeError(f"invalid action {action}")
    cell, heading, jumped = move(layout, state.cell, state.heading, action, state.door_open,
                                 state.jump_cooldown)
    moved = cell != state.cell
    cooldown = JUMP_COOLDOWN if jumped else max(state.jump_cooldown - 1, 0)
    timer = max(state.door_timer - 1, 0)
    pressed = state.button_pressed
    if moved and cell == layout.button_cell and state.door_timer == 0:
        timer = layout.door_open_duration
        pressed = True
    door_passed = state.door_passed or cell in layout.door_cells
    success = moved and cell == layout.goal_cell and door_passed
    count = state.step_count + 1
    return EnvState(cell=cell, heading=heading, step_count=count, door_timer=timer,
                    button_pressed=pressed, jump_cooldown=cooldown, door_passed=door_passed,
                    done=success or count >= MAX_STEPS, success=success)


def _entity(layout, state, target) -> list:
    dr, dc = target[0] - state.cell[0], target[1] - state.cell[1]
    fr, fc = DIRS[state.heading]
    rr, rc = DIRS[(state.heading + 1) % 4]
    # scaled by the arena diagonal so the (forward, right) vector has norm <= 1
    diag = layout.arena * 2 ** 0.5
    return [(dr * fr + dc * fc) / diag, (dr * rr + dc * rc) / diag,
            (dr * dr + dc * dc) ** 0.5 / diag]


def observation_arrays(layout: WorldLayout, state: EnvState) -> tuple:
    goal = _entity(layout, state, layout.goal_cell)
    cont = np.array(goal + [state.door_timer / layout.door_open_duration,
                            state.jump_cooldown / JUMP_COOLDOWN]
                    + _entity(layout, state, layout.button_cell) + goal, dtype=CONT_DTYPE)
    flags = [int(state.jump_cooldown != JUMP_COOLDOWN), int(state.door_open),
             int(state.button_pressed), int(state.jump_cooldown > 0)]
    cat = np.concatenate([np.array(flags, dtype=CAT_DTYPE),
                          layout.static_map()[state.cell[0], state.cell[1], state.heading]])
    return cont, cat


def observe(layout: WorldLayout, state: EnvState) -> StateVector:
    return StateVector(*observation_arrays(layout, state))


# --- scripted expert ----------------------------------------------------

_ACTION_COST = {FORWARD: 1.0, ROTATE_RIGHT: 1.0, ROTATE_LEFT: 1.0, JUMP: 1.0,
                SIDESTEP_RIGHT: 1.25, SIDESTEP_LEFT: 1.25, BACKWARD: 1.5}


# ties between equally cheap actions resolve in this order, so the expert's
# choice is a function of the current state and waypoint alone
_PREFERENCE = (FORWARD, ROTATE_RIGHT, ROTATE_LEFT, JUMP, SIDESTEP_RIGHT, SIDESTEP_LEFT, BACKWARD)


def _successor(layout, node, action, door_open):
    cell, heading, cooldown = node
    c2, h2, jumped = move(layout, cell, heading, action, door_open, cooldown)
    return c2, h2, JUMP_COOLDOWN if jumped else max(cooldown - 1, 0)


def _cost_to_go(layout, target, door_open, avoid) -> dict:
    """Exact cost from every (cell, heading, cooldown) to ``target``; cached per layout."""
    key = (target, door_open, avoid)
    if key in layout._plans:
        return layout._plans[key]
    nodes = [((r, c), h, cd) for r in range(layout.rows) for c in range(layout.cols)
             if layout.passable(r, c, door_open) and ((r, c) not in avoid or (r, c) == target)
             for h in range(4) for cd in range(JUMP_COOLDOWN + 1)]
    reverse: dict = {}
    for node in nodes:
        for a, w in _ACTION_COST.items():
            nxt = _successor(layout, node, a, door_open)
            if nxt[:2] == node[:2] or (nxt[0] in avoid and nxt[0] != target):
                continue
            reverse.setdefault(nxt, []).append((node, w))
    dist = {n: 0.0 for n in nodes if n[0] == target}
    heap = [(0.0, n) for n in dist]
    heapq.heapify(heap)
    while heap:
        d, node = heapq.heappop(heap)
        if d > dist[node]:
            continue
        for prev, w in reverse.get(node, ()):
            if d + w < dist.get(prev, np.inf):
                dist[prev] = d + w
                heapq.heappush(heap, (d + w, prev))
    layout._plans[key] = dist
    return dist


def _plan_segment(layout, cell, heading, cooldown, target, door_open, avoid) -> list:
    """Greedy descent of the cost-to-go table onto ``target``."""
    dist = _cost_to_go(layout, target, door_open, avoid)
    node = (cell, heading, cooldown)
    if node not in dist:
        raise EpisodeError(f"{layout.name}: no path to {target}")
    actions = []
    while node[0] != target:
        best, choice = np.inf, None
        for a in _PREFERENCE:
            nxt = _successor(layout, node, a, door_open)
            if nxt[:2] == node[:2] or nxt not in dist:
                continue
            # costs are multiples of 1/4, so sums compare exactly
            if _ACTION_COST[a] + dist[nxt] < best:
                best, choice = _ACTION_COST[a] + dist[nxt], (a, nxt)
        actions.append(choice[0])
        node = choice[1]
    return actions


def plan_actions(layout: WorldLayout, state: EnvState, path_choice: str = "A") -> list:
    """Expert action sequence from ``state`` through the chosen corridor."""
    if path_choice not in layout.paths:
        raise EpisodeError(f"{layout.name}: no corridor {path_choice!r} defined")
    button, goal = layout.button_cell, layout.goal_cell
    waypoints = [(c, False) for c in layout.paths[path_choice]] + [(button, False)]
    waypoints += [(d, True) for d in layout.door_cells[:1]] + [(goal, True)]
    cell, heading, cooldown = state.cell, state.heading, state.jump_cooldown
    actions: list = []
    for target, door_open in waypoints:
        avoid = () if target == button or door_open else (button,)
        seg = _plan_segment(layout, cell, heading, cooldown, tuple(target), door_open, avoid)
        for a in seg:
            cell, heading, jumped = move(layout, cell, heading, a, door_open, cooldown)
            cooldown = JUMP_COOLDOWN if jumped else max(cooldown - 1, 0)
        actions += seg
    return actions


def rollout(layout: WorldLayout, state: EnvState, actions) -> tuple:
    """Execute actions from ``state``; returns (observations, final state)."""
    observations = [observe(layout, state)]
    for a in actions:
        if state.done:
            break
        state, obs, _, _ = step(layout, state, a)
        observations.append(obs)
    return observations, state


def scripted_expert(layout, path_choice: str = "A", seed: int = 0, jitter: bool = False,
                    episode_id: int = 0) -> Trajectory:
    """A successful demonstration along corridor ``A`` or ``B``."""
    layout = load_layout(layout)
    state, _ = reset(layout, seed, jitter)
    actions = plan_actions(layout, state, path_choice)
    observations, final = rollout(layout, state, actions)
    if not final.success:
        raise EpisodeError(f"{layout.name}: expert failed along corridor {path_choice}")
    obs = observations[:len(actions)]
    return Trajectory(episode_id,
                      np.stack([o.continuous for o in obs]),
                      np.stack([o.categorical for o in obs]),
                      np.array(actions), True)


def generate_demos(layout="train", episodes: int = 78, seed: int = 0) -> DemoDataset:
    """Expert demonstrations alternating between corridors A and B.

    Each episode starts from a seed-jittered pose, so the dataset is a pure
    function of ``(layout, episodes, seed)``.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    layout = load_layout(layout)
    root = RngStream(seed).child("demos")
    trajs = []
    for i in range(episodes):
        ep_seed = int(root.child(i).generator.integers(2 ** 31))
        trajs.append(scripted_expert(layout, "AB"[i % 2], seed=ep_seed, jitter=True, episode_id=i))
    return DemoDataset(make_schema(layout.arena), trajs,
                       f"expert=scripted layout={layout.name} episodes={episodes} seed={seed}")


class ExpertPolicy:
    """The scripted expert wrapped as a batch policy (plans at episode start)."""

    def __init__(self, layout, path_choice: str | None = None):
        self.layout = load_layout(layout)
        self.path_choice = path_choice
        self._plans: dict = {}

    def __call__(self, cont, cat, states) -> np.ndarray:
        out = np.empty(len(states), dtype=CAT_DTYPE)
        for i, s in enumerate(states):
            if s.step_count == 0:
                choice = self.path_choice or "AB"[i % 2]
                self._plans[i] = deque(plan_actions(self.layout, s, choice))
            plan = self._plans.get(i)
            out[i] = plan.popleft() if plan else NOOP
        return out
