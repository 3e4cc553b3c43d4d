"""Procedural house plans for the two domains and the ``JRTHOUSE v1`` bank format."""

import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..errors import GenerationError, StateError

CELL = 0.5  # meters per grid cell
WALL, FLOOR = 0, 1

ROOM_TYPES = ("bedroom", "bathroom", "kitchen", "living_room", "corridor")
ROOM_INDEX = {name: i for i, name in enumerate(ROOM_TYPES)}
DOMAINS = ("synthetic", "real")
DOMAIN_ALIASES = {"syn": "synthetic", "synthetic": "synthetic", "sim": "synthetic", "real": "real"}

# (room count range, interior side range in cells, extra-door range, type weights)
DOMAIN_PARAMS = {
    "synthetic": dict(rooms=(2, 5), side=(8, 12), extra_doors=(0, 0),
                      weights=(0.3, 0.2, 0.15, 0.25, 0.1)),
    "real": dict(rooms=(5, 10), side=(14, 19), extra_doors=(1, 2),
                 weights=(0.3, 0.2, 0.15, 0.2, 0.15)),
}
MIN_ROOM = 3
MAX_ATTEMPTS = 100
DOOR_WIDTH = 2  # cells; a door narrows to one cell where the shared wall is too short


def canonical_domain(domain):
    try:
        return DOMAIN_ALIASES[domain]
    except KeyError:
        raise GenerationError(f"unknown domain {domain!r}") from None


@dataclass(frozen=True)
class Room:
    x0: int
    y0: int
    x1: int  # exclusive
    y1: int
    room_type: int

    @property
    def centroid(self):
        return ((self.x0 + self.x1) * CELL / 2, (self.y0 + self.y1) * CELL / 2)

    def contains_cell(self, cx, cy):
        return self.x0 <= cx < self.x1 and self.y0 <= cy < self.y1


@dataclass
class HousePlan:
    grid: np.ndarray  # (H, W) uint8, WALL / FLOOR
    rooms: list
    doors: list  # (room_i, room_j, (cx, cy)); the opening belongs to room_i
    domain: str
    seed: int
    room_id: np.ndarray = field(init=False, repr=False)  # (H, W) int16, -1 on walls

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.uint8)
        rid = np.full(self.grid.shape, -1, dtype=np.int16)
        for k, r in enumerate(self.rooms):
            rid[r.y0:r.y1, r.x0:r.x1] = k
        for (i, _, _), cells in zip(self.doors, self.door_openings()):
            for cx, cy in cells:
                rid[cy, cx] = i
        self.room_id = rid

    def door_openings(self):
        """Floor cells of each door, in ``doors`` order.

        The recorded cell anchors the opening; it extends one cell further
        along the wall (+x in a horizontal wall, +y in a vertical one) when
        that cell is floor outside every room.
        """
        out = []
        for _, _, (cx, cy) in self.doors:
            cells = [(cx, cy)]
            vertical_wall = self._in_room(cx - 1, cy) and self._in_room(cx + 1, cy)
            nx, ny = (cx, cy + 1) if vertical_wall else (cx + 1, cy)
            if (0 <= ny < self.height and 0 <= nx < self.width and self.grid[ny, nx] == FLOOR
                    and not self._in_room(nx, ny)):
                cells.append((nx, ny))
            out.append(cells)
        return out

    def _in_room(self, cx, cy):
        return any(r.contains_cell(cx, cy) for r in self.rooms)

    @property
    def height(self):
        return self.grid.shape[0]

    @property
    def width(self):
        return self.grid.shape[1]

    def room_types_present(self):
        return sorted({r.room_type for r in self.rooms})

    def goal_rooms(self, goal_type):
        return [k for k, r in enumerate(self.rooms) if r.room_type == goal_type]

    def door_graph(self):
        adj = {k: set() for k in range(len(self.rooms))}
        for i, j, _ in self.doors:
            adj[i].add(j)
            adj[j].add(i)
        return adj

    def floor_cells(self):
        ys, xs = np.nonzero(self.grid == FLOOR)
        return np.stack([xs, ys], axis=1)

    def cell_of(self, x, y):
        return int(np.floor(x / CELL)), int(np.floor(y / CELL))

    def is_floor(self, x, y):
        cx, cy = self.cell_of(x, y)
        if not (0 <= cx < self.width and 0 <= cy < self.height):
            return False
        return bool(self.grid[cy, cx] == FLOOR)

    def room_at(self, x, y):
        cx, cy = self.cell_of(x, y)
        if not (0 <= cx < self.width and 0 <= cy < self.height):
            return -1
        return int(self.room_id[cy, cx])

    def style_rng(self, salt=0):
        """Per-house RNG for fixed visual properties (clutter, stripe phase)."""
        return np.random.default_rng([DOMAINS.index(self.domain), self.seed, 7919, salt])


# ---- generation --------------------------------------------------------------

def _split_rooms(rng, width, height, n_rooms):
    rects = [(1, 1, width - 1, height - 1)]
    while len(rects) < n_rooms:
        candidates = []
        for k, (x0, y0, x1, y1) in enumerate(rects):
            w, h = x1 - x0, y1 - y0
            if w >= 2 * MIN_ROOM + 1 or h >= 2 * MIN_ROOM + 1:
                candidates.append((w * h, k))
        if not candidates:
            return None
        candidates.sort(reverse=True)
        # favour big rooms but keep some randomness in which one is cut
        k = candidates[min(int(rng.integers(0, 2)), len(candidates) - 1)][1]
        x0, y0, x1, y1 = rects.pop(k)
        w, h = x1 - x0, y1 - y0
        vertical = (w >= 2 * MIN_ROOM + 1) and (w > h or h < 2 * MIN_ROOM + 1 or rng.random() < 0.3)
        if vertical:
            cut = int(rng.integers(x0 + MIN_ROOM, x1 - MIN_ROOM))
            rects += [(x0, y0, cut, y1), (cut + 1, y0, x1, y1)]
        else:
            cut = int(rng.integers(y0 + MIN_ROOM, y1 - MIN_ROOM))
            rects += [(x0, y0, x1, cut), (x0, cut + 1, x1, y1)]
    return rects


def _door_candidates(rects, width, height):
    owner = np.full((height, width), -1, dtype=np.int32)
    for k, (x0, y0, x1, y1) in enumerate(rects):
        owner[y0:y1, x0:x1] = k
    cands = {}
    for y in range(1, height - 1):
        for x in range(1, width - 1):
            if owner[y, x] >= 0:
                continue
            for a, b in (((x - 1, y), (x + 1, y)), ((x, y - 1), (x, y + 1))):
                ra, rb = owner[a[1], a[0]], owner[b[1], b[0]]
                if ra >= 0 and rb >= 0 and ra != rb:
                    key = (int(min(ra, rb)), int(max(ra, rb)))
                    cands.setdefault(key, []).append((x, y))
    return cands


def _priors_ok(types, adj):
    for k, t in enumerate(types):
        if t == ROOM_INDEX["bathroom"] and not any(types[j] == ROOM_INDEX["bedroom"] for j in adj[k]):
            return False
        if t == ROOM_INDEX["kitchen"] and not any(types[j] == ROOM_INDEX["living_room"] for j in adj[k]):
            return False
    return len(set(types)) >= 2


def _attempt(rng, domain):
    prm = DOMAIN_PARAMS[domain]
    n_rooms = int(rng.integers(prm["rooms"][0], prm["rooms"][1] + 1))
    width = int(rng.integers(prm["side"][0], prm["side"][1] + 1)) + 2
    height = int(rng.integers(prm["side"][0], prm["side"][1] + 1)) + 2
    rects = _split_rooms(rng, width, height, n_rooms)
    if rects is None:
        return None
    cands = _door_candidates(rects, width, height)
    edges = sorted(cands)
    order = rng.permutation(len(edges))
    parent = list(range(n_rooms))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    tree, rest = [], []
    for idx in order:
        i, j = edges[idx]
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            tree.append((i, j))
        else:
            rest.append((i, j))
    if len(tree) != n_rooms - 1:
        return None
    lo, hi = prm["extra_doors"]
    n_extra = int(rng.integers(lo, hi + 1))
    if n_extra > len(rest):
        return None
    chosen = tree + rest[:n_extra]
    adj = {k: set() for k in range(n_rooms)}
    for i, j in chosen:
        adj[i].add(j)
        adj[j].add(i)
    for _ in range(200):
        types = [int(t) for t in rng.choice(len(ROOM_TYPES), n_rooms, p=prm["weights"])]
        if _priors_ok(types, adj):
            break
    else:
        return None
    grid = np.zeros((height, width), dtype=np.uint8)
    rooms = []
    for (x0, y0, x1, y1), t in zip(rects, types):
        grid[y0:y1, x0:x1] = FLOOR
        rooms.append(Room(x0, y0, x1, y1, t))
    doors = []
    for i, j in chosen:
        options = cands[(i, j)]
        wide = [c for c in options if _extension(c, rects) in options]
        pool = wide if DOOR_WIDTH > 1 and wide else options
        cx, cy = pool[int(rng.integers(0, len(pool)))]
        grid[cy, cx] = FLOOR
        if pool is wide:
            ex, ey = _extension((cx, cy), rects)
            grid[ey, ex] = FLOOR
        doors.append((i, j, (cx, cy)))
    return grid, rooms, doors


def _extension(cell, rects):
    """The next cell along the wall that ``cell`` sits in."""
    cx, cy = cell
    inside = lambda x, y: any(x0 <= x < x1 and y0 <= y < y1 for x0, y0, x1, y1 in rects)
    return (cx, cy + 1) if inside(cx - 1, cy) and inside(cx + 1, cy) else (cx + 1, cy)


def generate_house(domain, seed):
    """Deterministic house for ``(domain, seed)``; retries internally."""
    domain = canonical_domain(domain)
    seed = int(seed) % 2**64
    rng = np.random.default_rng([DOMAINS.index(domain), seed])
    for _ in range(MAX_ATTEMPTS):
        out = _attempt(rng, domain)
        if out is not None:
            grid, rooms, doors = out
            return HousePlan(grid, rooms, doors, domain, seed)
    raise GenerationError(f"no valid {domain} house after {MAX_ATTEMPTS} attempts (seed {seed})")


def check_house(house):
    """Independent validation of the structural invariants; returns a list of problems."""
    problems = []
    n = len(house.rooms)
    lo, hi = DOMAIN_PARAMS[house.domain]["rooms"]
    if not lo <= n <= hi:
        problems.append(f"room count {n} outside [{lo}, {hi}]")
    # every floor cell in exactly one room
    counts = np.zeros(house.grid.shape, dtype=np.int32)
    for r in house.rooms:
        counts[r.y0:r.y1, r.x0:r.x1] += 1
    for cells in house.door_openings():
        for cx, cy in cells:
            counts[cy, cx] += 1
    floor = house.grid == FLOOR
    if np.any(counts[floor] != 1) or np.any(counts[~floor] != 0):
        problems.append("floor/room membership mismatch")
    # connectivity over floor cells
    cells = house.floor_cells()
    start = tuple(cells[0])
    seen = {start}
    q = deque([start])
    while q:
        x, y = q.popleft()
        for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if (nx, ny) not in seen and house.grid[ny, nx] == FLOOR:
                seen.add((nx, ny))
                q.append((nx, ny))
    if len(seen) != len(cells):
        problems.append("floor not connected")
    nd = len(house.doors)
    if house.domain == "synthetic" and nd != n - 1:
        problems.append(f"synthetic house has {nd} doors for {n} rooms")
    if house.domain == "real" and nd < n:
        problems.append(f"real house has {nd} doors for {n} rooms (no cycle)")
    adj = house.door_graph()
    types = [r.room_type for r in house.rooms]
    for k, t in enumerate(types):
        if t == ROOM_INDEX["bathroom"] and not any(types[j] == ROOM_INDEX["bedroom"] for j in adj[k]):
            problems.append(f"bathroom {k} has no bedroom door")
        if t == ROOM_INDEX["kitchen"] and not any(types[j] == ROOM_INDEX["living_room"] for j in adj[k]):
            problems.append(f"kitchen {k} has no living-room door")
    for i, j, (cx, cy) in house.doors:
        ri, rj = house.rooms[i], house.rooms[j]
        near_i = any(ri.contains_cell(cx + dx, cy + dy) for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)))
        near_j = any(rj.contains_cell(cx + dx, cy + dy) for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)))
        if not (near_i and near_j):
            problems.append(f"door {i}-{j} at {(cx, cy)} does not join its rooms")
    return problems


# ---- house bank I/O ------------------------------------------------------------

HOUSE_MAGIC = b"JRTHOUSE v1\n"


def save_houses(path, houses):
    out = [HOUSE_MAGIC, struct.pack("<I", len(houses))]
    for h in houses:
        out.append(struct.pack("<BQHH", DOMAINS.index(h.domain), h.seed, h.width, h.height))
        out.append(h.grid.astype(np.uint8).tobytes())
        out.append(struct.pack("<H", len(h.rooms)))
        for r in h.rooms:
            out.append(struct.pack("<HHHHB", r.x0, r.y0, r.x1, r.y1, r.room_type))
        out.append(struct.pack("<H", len(h.doors)))
        for i, j, (cx, cy) in h.doors:
            out.append(struct.pack("<HHHH", i, j, cx, cy))
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def load_houses(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(HOUSE_MAGIC):
        raise StateError(f"{path}: not a JRTHOUSE v1 file")
    off = len(HOUSE_MAGIC)
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    houses = []
    for _ in range(count):
        dom, seed, w, h = struct.unpack_from("<BQHH", blob, off)
        off += struct.calcsize("<BQHH")
        grid = np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=off).reshape(h, w).copy()
        off += w * h
        (nr,) = struct.unpack_from("<H", blob, off)
        off += 2
        rooms = []
        for _ in range(nr):
            x0, y0, x1, y1, t = struct.unpack_from("<HHHHB", blob, off)
            off += struct.calcsize("<HHHHB")
            rooms.append(Room(x0, y0, x1, y1, t))
        (nd,) = struct.unpack_from("<H", blob, off)
        off += 2
        doors = []
        for _ in range(nd):
            i, j, cx, cy = struct.unpack_from("<HHHH", blob, off)
            off += 8
            doors.append((i, j, (cx, cy)))
        houses.append(HousePlan(grid, rooms, doors, DOMAINS[dom], seed))
    return houses
