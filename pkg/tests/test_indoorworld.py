import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from navtransfer.errors import GoalError, InvalidPoseError, StateError
from navtransfer.indoorworld import (
    CELL,
    MAX_STEPS,
    N_ACTIONS,
    ROOM_INDEX,
    Action,
    AgentPose,
    HousePlan,
    Room,
    VecEnv,
    check_house,
    generate_house,
    goal_id,
    load_houses,
    load_images,
    random_pose,
    render,
    sample_episode,
    sample_images,
    save_houses,
    save_images,
    shortest_path_length,
    step,
)
from navtransfer.indoorworld.house import FLOOR, WALL
from navtransfer.indoorworld.render import wall_column_heights

from oracles import bfs_oracle, goal_cells

BED, KITCHEN = ROOM_INDEX["bedroom"], ROOM_INDEX["kitchen"]


def two_room_house():
    """Bedroom (cells x 1-5) and kitchen (cells x 7-11) joined by a one-cell door at (6, 2)."""
    grid = np.full((5, 13), WALL, np.uint8)
    grid[1:4, 1:6] = FLOOR
    grid[1:4, 7:12] = FLOOR
    grid[2, 6] = FLOOR
    rooms = [Room(1, 1, 6, 4, BED), Room(7, 1, 12, 4, KITCHEN)]
    return HousePlan(grid, rooms, [(0, 1, (6, 2))], "synthetic", 5)


def independent_check(house):
    """Structural checks written against the raw fields only."""
    n = len(house.rooms)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            a = parent[a]
        return a

    for i, j, _ in house.doors:
        parent[find(i)] = find(j)
    assert len({find(k) for k in range(n)}) == 1
    if house.domain == "synthetic":
        assert 2 <= n <= 5 and len(house.doors) == n - 1
    else:
        assert 5 <= n <= 10 and len(house.doors) >= n
    neighbours = {k: set() for k in range(n)}
    for i, j, _ in house.doors:
        neighbours[i].add(house.rooms[j].room_type)
        neighbours[j].add(house.rooms[i].room_type)
    for k, r in enumerate(house.rooms):
        if r.room_type == ROOM_INDEX["bathroom"]:
            assert BED in neighbours[k]
        if r.room_type == KITCHEN:
            assert ROOM_INDEX["living_room"] in neighbours[k]
    # every floor cell carries exactly one room id
    floor = house.grid == FLOOR
    assert np.all(house.room_id[floor] >= 0) and np.all(house.room_id[~floor] == -1)


def test_action_space():
    assert N_ACTIONS == len(Action) == 3


@pytest.mark.parametrize("domain", ["synthetic", "real"])
def test_generated_houses_pass_independent_checker(domain):
    for seed in range(1000):
        h = generate_house(domain, seed)
        independent_check(h)
        assert check_house(h) == []


def test_generation_deterministic():
    a, b = generate_house("real", 77), generate_house("real", 77)
    assert a.grid.tobytes() == b.grid.tobytes() and a.rooms == b.rooms and a.doors == b.doors


def test_house_bank_roundtrip(tmp_path):
    houses = [generate_house("synthetic", s) for s in range(3)] + [generate_house("real", 9)]
    path = str(tmp_path / "h.bin")
    save_houses(path, houses)
    assert open(path, "rb").read().startswith(b"JRTHOUSE v1\n")
    back = load_houses(path)
    for a, b in zip(houses, back):
        assert a.grid.tobytes() == b.grid.tobytes()
        assert a.rooms == b.rooms and a.doors == b.doors and a.domain == b.domain and a.seed == b.seed


def test_forward_into_wall_is_noop():
    h = two_room_house()
    pose = AgentPose(0.6, 1.25, 180.0)
    new, r, done = step(h, pose, Action.FORWARD, KITCHEN)
    assert new == pose and r == pytest.approx(-0.01) and not done


def test_forward_toward_goal_reward():
    h = two_room_house()
    new, r, done = step(h, AgentPose(1.0, 1.25, 0.0), Action.FORWARD, KITCHEN)
    assert new.x == pytest.approx(1.25) and r == pytest.approx(0.24) and not done


def test_entering_goal_room():
    h = two_room_house()
    new, r, done = step(h, AgentPose(3.45, 1.25, 0.0), Action.FORWARD, KITCHEN)
    assert done and r == pytest.approx(0.25 - 0.01 + 1.0)
    assert h.room_at(new.x, new.y) == 1


def test_turns():
    h = two_room_house()
    p = AgentPose(1.0, 1.25, 0.0)
    left, _, _ = step(h, p, Action.TURN_LEFT, KITCHEN)
    right, _, _ = step(h, p, Action.TURN_RIGHT, KITCHEN)
    assert left.heading == 330.0 and right.heading == 30.0
    assert (left.x, left.y) == (p.x, p.y)


def test_corridor_shortest_path():
    h = two_room_house()
    assert shortest_path_length(h, AgentPose(0.75, 1.25, 0.0), KITCHEN) == pytest.approx(6 * CELL)
    assert shortest_path_length(h, AgentPose(4.0, 1.25, 0.0), KITCHEN) == 0.0


def test_shortest_path_errors():
    h = two_room_house()
    with pytest.raises(InvalidPoseError):
        shortest_path_length(h, AgentPose(0.2, 0.2, 0.0), KITCHEN)
    with pytest.raises(GoalError):
        shortest_path_length(h, AgentPose(1.0, 1.25, 0.0), ROOM_INDEX["bathroom"])


def test_goal_id():
    assert goal_id("kitchen") == KITCHEN
    with pytest.raises(GoalError):
        goal_id("garage")
    with pytest.raises(GoalError):
        goal_id(9)


def test_shortest_path_matches_bfs_oracle():
    rng = np.random.default_rng(0)
    for k in range(100):
        h = generate_house("real" if k % 2 else "synthetic", int(rng.integers(1 << 30)))
        goal = int(rng.choice(h.room_types_present()))
        pose = random_pose(h, rng)
        want = bfs_oracle(h, h.cell_of(pose.x, pose.y), goal_cells(h, goal))
        assert shortest_path_length(h, pose, goal) == want * CELL


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["synthetic", "real"]))
def test_shortest_path_triangle_inequality(seed, domain):
    h = generate_house(domain, seed)
    rng = np.random.default_rng(seed)
    goal = int(rng.choice(h.room_types_present()))
    a, b = random_pose(h, rng), random_pose(h, rng)
    ab = bfs_oracle(h, h.cell_of(a.x, a.y), {h.cell_of(b.x, b.y)}) * CELL
    assert shortest_path_length(h, a, goal) <= ab + shortest_path_length(h, b, goal) + 1e-9


def test_agent_never_enters_wall_fuzz():
    rng = np.random.default_rng(1)
    houses = [generate_house(d, s) for s in range(10) for d in ("synthetic", "real")]
    bound = 1.0 * 0.25 + 0.01 + 1.0
    total = 0
    while total < 100_000:
        h = houses[int(rng.integers(len(houses)))]
        goal = int(rng.choice(h.room_types_present()))
        pose = random_pose(h, rng)
        actions = rng.integers(0, 3, 1000)
        for a in actions:
            pose, r, _ = step(h, pose, int(a), goal)
            assert h.is_floor(pose.x, pose.y)
            assert abs(r) <= bound + 1e-9
        total += len(actions)


def test_sample_episode_valid():
    rng = np.random.default_rng(3)
    houses = [generate_house("real", s) for s in range(4)]
    for _ in range(50):
        ep = sample_episode(houses, rng)
        h = houses[ep.house_index]
        assert ep.goal in h.room_types_present()
        assert h.rooms[h.room_at(ep.start.x, ep.start.y)].room_type != ep.goal
        assert shortest_path_length(h, ep.start, ep.goal) > 0
        assert ep.max_steps == MAX_STEPS


def test_wall_height_inverse_distance():
    h = two_room_house()
    near = wall_column_heights(h, (2.0, 0.75, 0.0))
    far = wall_column_heights(h, (1.0, 0.75, 0.0))
    for c in (15, 16):
        assert abs(near[c] - 2 * far[c]) <= 1.0


def test_render_range_and_determinism():
    h = generate_house("real", 4)
    pose = random_pose(h, np.random.default_rng(0)).as_tuple()
    for style in ("synthetic", "real"):
        img = render(h, pose, style)
        assert img.shape == (32, 32, 3) and img.dtype == np.float32
        assert img.min() >= 0.0 and img.max() <= 1.0
        assert img.tobytes() == render(h, pose, style).tobytes()


def test_styles_differ():
    rng = np.random.default_rng(5)
    diffs = []
    for k in range(100):
        h = generate_house("real", k)
        pose = random_pose(h, rng).as_tuple()
        diffs.append(np.abs(render(h, pose, "synthetic") - render(h, pose, "real")).mean())
    assert np.mean(diffs) > 0.05


def test_render_rejects_pose_in_wall():
    with pytest.raises(InvalidPoseError):
        render(two_room_house(), (0.2, 0.2, 0.0))


def test_image_bank(tmp_path):
    a = sample_images("real", 20, seed=3)
    assert a.shape == (20, 32, 32, 3) and a.min() >= 0 and a.max() <= 1
    assert a.tobytes() == sample_images("real", 20, seed=3).tobytes()
    path = str(tmp_path / "i.bin")
    save_images(path, a)
    assert load_images(path).tobytes() == a.tobytes()
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(StateError):
        load_images(str(tmp_path / "bad.bin"))


def test_vecenv_resets_and_reports():
    houses = [generate_house("synthetic", s) for s in range(2)]
    rng = np.random.default_rng(0)
    env = VecEnv(houses, 3, lambda k: sample_episode(houses, rng, max_steps=5))
    assert env.observe().shape == (3, 32, 32, 3)
    finished = 0
    for _ in range(5):
        _, dones, infos = env.step(rng.integers(0, 3, 3))
        for d, info in zip(dones, infos):
            if d:
                finished += 1
                assert info["steps"] <= 5 and info["path_len"] >= 0
    assert finished >= 3
    assert np.all(env.steps < 5)
