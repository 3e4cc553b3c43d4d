"""RoomGoal navigation dynamics: actions, reward, termination and geodesics."""

import enum
from collections import deque
from dataclasses import dataclass

import numpy as np

from ..errors import GoalError, InvalidPoseError, UnreachableError
from .house import CELL, FLOOR, ROOM_INDEX, ROOM_TYPES
from .render import render_batch

TURN_DEG = 30.0
STRIDE = 0.25
STEP_PENALTY = 0.01
GOAL_BONUS = 1.0
DIST_COEF = 1.0
MAX_STEPS = 500


class Action(enum.IntEnum):
    TURN_LEFT = 0
    TURN_RIGHT = 1
    FORWARD = 2


N_ACTIONS = len(Action)


@dataclass(frozen=True)
class AgentPose:
    x: float
    y: float
    heading: float  # degrees in [0, 360)

    def as_tuple(self):
        return (self.x, self.y, self.heading)


@dataclass
class Observation:
    image: np.ndarray  # (32, 32, 3) in [0, 1]
    domain: str
    goal: int


@dataclass(frozen=True)
class EpisodeSpec:
    house_index: int
    start: AgentPose
    goal: int
    max_steps: int = MAX_STEPS


def goal_distance(house, x, y, goal):
    """Euclidean distance (m) to the nearest centroid of a room of type ``goal``."""
    best = np.inf
    for k in house.goal_rooms(goal):
        cx, cy = house.rooms[k].centroid
        best = min(best, float(np.hypot(x - cx, y - cy)))
    if not np.isfinite(best):
        raise GoalError(f"goal {goal} not present in house")
    return best


def in_goal_room(house, x, y, goal):
    k = house.room_at(x, y)
    return k >= 0 and house.rooms[k].room_type == goal


def step(house, pose, action, goal):
    """One transition. Returns ``(pose', reward, reached_goal)``; the step cap is the caller's."""
    x, y, heading = pose.as_tuple()
    action = Action(action)
    if action == Action.TURN_LEFT:
        new = AgentPose(x, y, (heading - TURN_DEG) % 360.0)
    elif action == Action.TURN_RIGHT:
        new = AgentPose(x, y, (heading + TURN_DEG) % 360.0)
    else:
        rad = np.radians(heading)
        nx, ny = x + STRIDE * np.cos(rad), y + STRIDE * np.sin(rad)
        new = AgentPose(nx, ny, heading) if house.is_floor(nx, ny) else pose
    d_prev = goal_distance(house, x, y, goal)
    d_new = goal_distance(house, new.x, new.y, goal)
    reached = in_goal_room(house, new.x, new.y, goal)
    reward = DIST_COEF * (d_prev - d_new) - STEP_PENALTY + (GOAL_BONUS if reached else 0.0)
    return new, reward, reached


def _goal_cells(house, goal):
    mask = np.zeros(house.grid.shape, dtype=bool)
    for k in house.goal_rooms(goal):
        mask |= house.room_id == k
    return mask


def geodesic_field(house, goal):
    """BFS distance in cells from every floor cell to the nearest goal-room cell (-1 if unreachable)."""
    cache = house.__dict__.setdefault("_geodesic_cache", {})
    if goal in cache:
        return cache[goal]
    dist = np.full(house.grid.shape, -1, dtype=np.int32)
    targets = _goal_cells(house, goal)
    if not targets.any():
        raise GoalError(f"goal {goal} not present in house")
    q = deque()
    for cy, cx in np.argwhere(targets):
        dist[cy, cx] = 0
        q.append((cx, cy))
    h, w = house.grid.shape
    while q:
        x, y = q.popleft()
        d = dist[y, x] + 1
        for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if 0 <= nx < w and 0 <= ny < h and house.grid[ny, nx] == FLOOR and dist[ny, nx] < 0:
                dist[ny, nx] = d
                q.append((nx, ny))
    cache[goal] = dist
    return dist


def shortest_path_length(house, start, goal):
    """Geodesic distance (m) over 4-connected floor cells to the nearest goal-room cell."""
    cx, cy = house.cell_of(start.x, start.y)
    if not house.is_floor(start.x, start.y):
        raise InvalidPoseError("start pose is not on a floor cell")
    d = geodesic_field(house, goal)[cy, cx]
    if d < 0:
        raise UnreachableError(f"goal {ROOM_TYPES[goal]} unreachable from cell {(cx, cy)}")
    return float(d) * CELL


def random_pose(house, rng, exclude_goal=None):
    """Uniform floor position with a 30-degree-lattice heading."""
    cells = house.floor_cells()
    for _ in range(1000):
        cx, cy = cells[rng.integers(len(cells))]
        x = (cx + rng.uniform(0.1, 0.9)) * CELL
        y = (cy + rng.uniform(0.1, 0.9)) * CELL
        heading = float(TURN_DEG * rng.integers(0, int(360 / TURN_DEG)))
        if exclude_goal is not None and in_goal_room(house, x, y, exclude_goal):
            continue
        return AgentPose(float(x), float(y), heading)
    raise InvalidPoseError("could not sample a pose outside the goal room")


def sample_episode(houses, rng, max_steps=MAX_STEPS, house_index=None):
    if house_index is None:
        house_index = int(rng.integers(len(houses)))
    house = houses[house_index]
    present = house.room_types_present()
    goal = int(present[rng.integers(len(present))])
    start = random_pose(house, rng, exclude_goal=goal)
    return EpisodeSpec(house_index, start, goal, max_steps)


def goal_id(goal):
    if isinstance(goal, str):
        if goal not in ROOM_INDEX:
            raise GoalError(f"unknown room type {goal!r}")
        return ROOM_INDEX[goal]
    if not 0 <= int(goal) < len(ROOM_TYPES):
        raise GoalError(f"unknown goal id {goal}")
    return int(goal)


class VecEnv:
    """A batch of independent episodes stepped together.

    Each slot owns its episode state; observations for all slots are rendered
    in one batched raycast. ``reset_fn(slot) -> EpisodeSpec`` supplies a new
    episode whenever a slot finishes (or ``None`` to leave the slot idle).
    """

    def __init__(self, houses, n, reset_fn, style=None):
        self.houses = houses
        self.n = n
        self.reset_fn = reset_fn
        self.style = style
        self.specs = [None] * n
        self.poses = [None] * n
        self.steps = np.zeros(n, dtype=np.int64)
        self.path = np.zeros(n)
        self.active = np.zeros(n, dtype=bool)
        for k in range(n):
            self._reset(k)

    def _reset(self, k):
        spec = self.reset_fn(k)
        self.specs[k] = spec
        if spec is None:
            self.active[k] = False
            return
        self.poses[k] = spec.start
        self.steps[k] = 0
        self.path[k] = 0.0
        self.active[k] = True

    def goals(self):
        return np.array([s.goal if s is not None else 0 for s in self.specs], dtype=np.int64)

    def render_inputs(self):
        """Active slot indices with their houses and pose tuples."""
        idx = [k for k in range(self.n) if self.active[k]]
        houses = [self.houses[self.specs[k].house_index] for k in idx]
        poses = [self.poses[k].as_tuple() for k in idx]
        return idx, houses, poses

    def observe(self):
        return observe_many([self])

    def step(self, actions):
        """Advance active slots. Returns rewards, done flags and per-slot episode info for finished slots."""
        rewards = np.zeros(self.n, dtype=np.float32)
        dones = np.zeros(self.n, dtype=bool)
        infos = [None] * self.n
        for k in range(self.n):
            if not self.active[k]:
                continue
            spec = self.specs[k]
            house = self.houses[spec.house_index]
            old = self.poses[k]
            new, r, reached = step(house, old, int(actions[k]), spec.goal)
            self.path[k] += float(np.hypot(new.x - old.x, new.y - old.y))
            self.poses[k] = new
            self.steps[k] += 1
            rewards[k] = r
            if reached or self.steps[k] >= spec.max_steps:
                dones[k] = True
                infos[k] = dict(spec=spec, success=bool(reached), path_len=float(self.path[k]),
                                steps=int(self.steps[k]))
                self._reset(k)
        return rewards, dones, infos


def observe_many(envs):
    """Render the current observation of every slot of ``envs`` in one batch; idle slots are black."""
    total = sum(e.n for e in envs)
    imgs = np.zeros((total, 32, 32, 3), dtype=np.float32)
    rows, houses, poses = [], [], []
    off = 0
    style = envs[0].style
    for e in envs:
        if e.style != style:
            raise ValueError("environments rendered together must share a style")
        idx, hs, ps = e.render_inputs()
        rows.extend(off + k for k in idx)
        houses.extend(hs)
        poses.extend(ps)
        off += e.n
    if rows:
        imgs[rows] = render_batch(houses, poses, style)
    return imgs
