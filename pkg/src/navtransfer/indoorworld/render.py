"""First-person column raycaster with a flat synthetic style and a noisy real style.

Images are (32, 32, 3) float32 in [0, 1], row 0 at the top. Heading 0 looks
along +x; a positive turn increases the heading, and screen column 0 is the
left edge of a 60 degree field of view.
"""

import numba
import numpy as np

from ..errors import InvalidPoseError
from .house import CELL, DOMAINS, FLOOR, ROOM_TYPES, canonical_domain

IMG = 32
FOV_DEG = 60.0
WALL_SCALE = 16.0  # column height in pixels for a wall 1 m away
NOISE_SIGMA = 0.05

SYN_WALLS = np.array([
    [0.85, 0.30, 0.30],  # bedroom
    [0.30, 0.45, 0.90],  # bathroom
    [0.90, 0.80, 0.25],  # kitchen
    [0.35, 0.80, 0.40],  # living_room
    [0.65, 0.65, 0.65],  # corridor
], dtype=np.float32)
SYN_FLOOR = np.array([0.30, 0.25, 0.20], dtype=np.float32)
SYN_CEIL = np.array([0.90, 0.90, 0.95], dtype=np.float32)
SIDE_SHADE = 0.75

# real palette: washed-out, warm-cast channel mix applied to the synthetic colours
REAL_MIX = np.array([[0.30, 0.05, 0.00],
                     [0.00, 0.32, 0.05],
                     [0.05, 0.00, 0.28]], dtype=np.float32)
REAL_OFFSET = np.array([0.62, 0.55, 0.45], dtype=np.float32)
STRIPE_FREQ = 4.0  # stripes per meter of wall
STRIPE_DARK = 0.85
CLUTTER_COLOR = np.array([0.28, 0.20, 0.14], dtype=np.float32)
CLUTTER_FRACTION = 0.45  # lower part of the column covered by clutter

assert SYN_WALLS.shape[0] == len(ROOM_TYPES)


def real_palette(colors):
    return np.clip(colors @ REAL_MIX.T + REAL_OFFSET, 0, 1).astype(np.float32)


REAL_WALLS = real_palette(SYN_WALLS)
REAL_FLOOR = real_palette(SYN_FLOOR[None])[0]
REAL_CEIL = real_palette(SYN_CEIL[None])[0]


def _style_index(style):
    return DOMAINS.index(canonical_domain(style))


def house_clutter(house):
    """Boolean (H, W) mask of wall cells drawn with clutter in the real style."""
    rng = house.style_rng(1)
    g = house.grid
    h, w = g.shape
    facing = np.zeros(g.shape, dtype=bool)
    facing[1:, :] |= g[:-1, :] == FLOOR
    facing[:-1, :] |= g[1:, :] == FLOOR
    facing[:, 1:] |= g[:, :-1] == FLOOR
    facing[:, :-1] |= g[:, 1:] == FLOOR
    cand = np.argwhere((g != FLOOR) & facing)
    mask = np.zeros((h, w), dtype=bool)
    k = int(rng.integers(3, 7))
    pick = rng.choice(len(cand), size=min(k, len(cand)), replace=False)
    mask[cand[pick, 0], cand[pick, 1]] = True
    return mask


def _house_tables(house):
    cache = getattr(house, "_render_cache", None)
    if cache is None:
        types = np.full(house.grid.shape, -1, dtype=np.int16)
        for k, r in enumerate(house.rooms):
            types[house.room_id == k] = r.room_type
        phase = float(house.style_rng(2).uniform(0, 1))
        cache = (types, house_clutter(house), phase)
        house._render_cache = cache
    return cache


@numba.njit(cache=True)
def _dda(solid, types, hidx, px, py, dx, dy):
    n = px.shape[0]
    hmax, wmax = solid.shape[1], solid.shape[2]
    perp = np.empty(n)
    side = np.zeros(n, dtype=np.int8)
    prev_type = np.empty(n, dtype=np.int16)
    hitx = np.empty(n, dtype=np.int64)
    hity = np.empty(n, dtype=np.int64)
    for r in range(n):
        k = hidx[r]
        mx = int(np.floor(px[r]))
        my = int(np.floor(py[r]))
        ddx = abs(1.0 / dx[r]) if dx[r] != 0 else 1e30
        ddy = abs(1.0 / dy[r]) if dy[r] != 0 else 1e30
        sx = -1 if dx[r] < 0 else 1
        sy = -1 if dy[r] < 0 else 1
        sdx = (px[r] - mx) * ddx if dx[r] < 0 else (mx + 1 - px[r]) * ddx
        sdy = (py[r] - my) * ddy if dy[r] < 0 else (my + 1 - py[r]) * ddy
        pt = types[k, my, mx]
        s = 0
        for _ in range(hmax + wmax + 2):
            if sdx < sdy:
                sdx += ddx
                mx += sx
                s = 0
            else:
                sdy += ddy
                my += sy
                s = 1
            if mx < 0 or my < 0 or mx >= wmax or my >= hmax or solid[k, my, mx]:
                break
            pt = types[k, my, mx]
        perp[r] = sdx - ddx if s == 0 else sdy - ddy
        side[r] = s
        prev_type[r] = pt
        hitx[r] = min(max(mx, 0), wmax - 1)
        hity[r] = min(max(my, 0), hmax - 1)
    return perp, side, prev_type, hitx, hity


def cast_rays(houses, poses):
    """DDA over all rays of all poses at once.

    Returns per-ray perpendicular distance (m), hit side (0: x-face, 1: y-face),
    the room type of the last floor cell before the hit, the hit cell, and
    the texture coordinate along the wall face (m).
    """
    n = len(poses)
    hmax = max(h.height for h in houses)
    wmax = max(h.width for h in houses)
    solid = np.ones((n, hmax, wmax), dtype=bool)
    types = np.full((n, hmax, wmax), -1, dtype=np.int16)
    for k, h in enumerate(houses):
        solid[k, : h.height, : h.width] = h.grid != FLOOR
        types[k, : h.height, : h.width] = _house_tables(h)[0]
    poses = np.asarray(poses, dtype=np.float64)
    px = np.repeat(poses[:, 0] / CELL, IMG)
    py = np.repeat(poses[:, 1] / CELL, IMG)
    hd = np.radians(np.repeat(poses[:, 2], IMG))
    camx = np.tile((2 * (np.arange(IMG) + 0.5) / IMG - 1), n)
    plane = np.tan(np.radians(FOV_DEG / 2))
    dx = np.cos(hd) - np.sin(hd) * plane * camx
    dy = np.sin(hd) + np.cos(hd) * plane * camx
    hidx = np.repeat(np.arange(n), IMG)

    perp, side, prev_type, hitx, hity = _dda(solid, types, hidx, px, py, dx, dy)
    perp = np.maximum(perp, 1e-6)
    wall_u = np.where(side == 0, py + perp * dy, px + perp * dx)
    return perp * CELL, side, prev_type, hitx, hity, wall_u * CELL


def render_batch(houses, poses, styles=None):
    """Render one image per (house, pose); ``styles`` defaults to each house's domain."""
    houses = list(houses)
    n = len(houses)
    if styles is None:
        styles = [h.domain for h in houses]
    elif isinstance(styles, str):
        styles = [styles] * n
    poses = np.asarray(poses, dtype=np.float64).reshape(n, 3)
    for h, (x, y, _) in zip(houses, poses):
        if not h.is_floor(x, y):
            raise InvalidPoseError(f"pose ({x:.3f}, {y:.3f}) is not on a floor cell")
    dist, side, rtype, hitx, hity, wall_u = cast_rays(houses, poses)
    dist = dist.reshape(n, IMG)
    side = side.reshape(n, IMG)
    rtype = rtype.reshape(n, IMG)
    col_h = np.minimum(WALL_SCALE / dist, 2.0 * IMG)
    is_real = np.array([_style_index(s) == 1 for s in styles])

    walls = np.stack([SYN_WALLS, REAL_WALLS])[is_real.astype(np.int64)[:, None], np.maximum(rtype, 0)]
    walls = walls * np.where(side == 1, SIDE_SHADE, 1.0)[:, :, None].astype(np.float32)
    ceil = np.where(is_real[:, None], REAL_CEIL, SYN_CEIL).astype(np.float32)
    floor = np.where(is_real[:, None], REAL_FLOOR, SYN_FLOOR).astype(np.float32)
    stripe = np.ones((n, IMG), dtype=np.float32)
    clutter = np.zeros((n, IMG), dtype=np.bool_)
    noise = np.zeros((n, IMG, IMG, 3), dtype=np.float32)
    real = np.nonzero(is_real)[0]
    if real.size:
        phase = np.array([_house_tables(houses[k])[2] for k in real])
        u = wall_u.reshape(n, IMG)[real]
        stripe[real] = np.where(np.floor(u * STRIPE_FREQ + phase[:, None]) % 2 == 0, STRIPE_DARK, 1.0)
        hx = hitx.reshape(n, IMG)
        hy = hity.reshape(n, IMG)
        for k in real:
            clutter[k] = _house_tables(houses[k])[1][hy[k], hx[k]]
        noise[real] = pose_noise([houses[k] for k in real], poses[real])
    return _compose(col_h, walls.astype(np.float32), ceil, floor, is_real, stripe, clutter, noise,
                    CLUTTER_COLOR, CLUTTER_FRACTION)


@numba.njit(cache=True)
def _compose(col_h, walls, ceil, floor, is_real, stripe, clutter, noise, clutter_color, clutter_frac):
    n, ncol = col_h.shape
    out = np.empty((n, IMG, ncol, 3), dtype=np.float32)
    half_img = IMG / 2
    for k in range(n):
        for c in range(ncol):
            half = col_h[k, c] / 2
            for r in range(IMG):
                off = r + 0.5 - half_img  # positive below the horizon
                if abs(off) < half:
                    if is_real[k] and clutter[k, c] and off > half * (1 - 2 * clutter_frac):
                        for ch in range(3):
                            out[k, r, c, ch] = clutter_color[ch]
                    else:
                        for ch in range(3):
                            out[k, r, c, ch] = walls[k, c, ch] * stripe[k, c]
                elif off < 0:
                    for ch in range(3):
                        out[k, r, c, ch] = ceil[k, ch]
                else:
                    for ch in range(3):
                        out[k, r, c, ch] = floor[k, ch]
                if is_real[k]:
                    for ch in range(3):
                        v = out[k, r, c, ch] + noise[k, r, c, ch]
                        out[k, r, c, ch] = min(max(v, 0.0), 1.0)
    return out


_NOISE_BANK = np.random.default_rng(20181).normal(0, NOISE_SIGMA, (509, IMG, IMG, 3)).astype(np.float32)


def _mix64(x):
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def pose_noise(houses, poses):
    """Gaussian pixel noise keyed by (house seed, pose); identical inputs give identical noise."""
    poses = np.asarray(poses, dtype=np.float64)
    q = np.round(poses * 1000).astype(np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        key = _mix64(np.array([h.seed for h in houses], dtype=np.uint64))
        for j in range(3):
            key = _mix64(key ^ q[:, j])
        idx = (key % np.uint64(len(_NOISE_BANK))).astype(np.int64)
        flip = ((key >> np.uint64(20)) & np.uint64(1)).astype(bool)
    noise = _NOISE_BANK[idx]
    noise[flip] = noise[flip][:, :, ::-1]
    return noise


def render(house, pose, style=None):
    """Render a single observation image for ``pose = (x, y, heading_deg)``."""
    return render_batch([house], [pose], style if style is not None else house.domain)[0]


def wall_column_heights(house, pose):
    """Pixel height of each rendered wall column (before clipping to the image)."""
    dist = cast_rays([house], np.asarray([pose], dtype=np.float64))[0]
    return WALL_SCALE / dist
