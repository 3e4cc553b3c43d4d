import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from navtransfer import agent, evalkit
from navtransfer.errors import ComparisonError, ConfigError
from navtransfer.evalkit import EpisodeRecord, EvalReport
from navtransfer.indoorworld import EpisodeSpec, generate_house

from oracles import nearest_goal_distance

records = st.lists(st.builds(EpisodeRecord, st.integers(0, 1000), st.booleans(), st.floats(0, 50),
                             st.floats(0.5, 50), st.integers(1, 500)), min_size=1, max_size=30)


@pytest.fixture(scope="module")
def test_houses():
    return [generate_house("real", s) for s in range(3)]


def test_spl_examples():
    ok = [EpisodeRecord(i, True, 3.0, 3.0, 10) for i in range(4)]
    assert evalkit.success_rate(ok) == 100.0 and evalkit.spl(ok) == 100.0
    bad = [EpisodeRecord(i, False, 3.0, 3.0, 10) for i in range(4)]
    assert evalkit.success_rate(bad) == 0.0 and evalkit.spl(bad) == 0.0
    mixed = [EpisodeRecord(0, True, 4.0, 2.0, 10), EpisodeRecord(1, False, 1.0, 2.0, 10)]
    assert evalkit.success_rate(mixed) == 50.0 and evalkit.spl(mixed) == pytest.approx(25.0)


@given(records)
def test_spl_bounded_by_success(recs):
    rep = EvalReport(recs)
    assert rep.spl <= rep.success_rate + 1e-9


def test_compare():
    a = EvalReport([EpisodeRecord(0, True, 1.0, 1.0, 3)], episode_set_id="x")
    b = EvalReport([EpisodeRecord(0, False, 1.0, 1.0, 3)], episode_set_id="x")
    rows = evalkit.compare({"one": [a], "two": [a, b], "same": [a, b]})
    assert rows[0] == ("one", 1, 100.0, 0.0, 100.0, 0.0)
    assert rows[1][2] == rows[2][2] == 50.0
    assert rows[1][3] == pytest.approx(np.std([100.0, 0.0], ddof=1))
    with pytest.raises(ComparisonError):
        evalkit.compare({"a": [a], "b": [EvalReport([], episode_set_id="y")]})


def test_episode_set_roundtrip(tmp_path, test_houses):
    eps = evalkit.make_episode_set(test_houses, 5, seed=1, max_steps=100)
    assert len(eps) == 15 and all(l > 0 for l in eps.shortest)
    again = evalkit.make_episode_set(test_houses, 5, seed=1, max_steps=100)
    assert again.episodes == eps.episodes
    path = str(tmp_path / "eps.json")
    evalkit.save_episode_set(path, eps, houses_path="h.bin")
    back, hp = evalkit.load_episode_set(path)
    assert hp == "h.bin" and back.episodes == eps.episodes and back.shortest == eps.shortest
    assert back.ident == eps.ident


def test_evaluate_deterministic_and_consistent(tmp_path, test_houses):
    params = agent.init_agent(0)
    eps = evalkit.make_episode_set(test_houses, 8, seed=2, max_steps=60)
    rep = evalkit.evaluate(params, test_houses, eps)
    again = evalkit.evaluate(params, test_houses, eps, batch=5)
    assert evalkit.report_dict(rep) == evalkit.report_dict(again)
    assert [r.episode_id for r in rep.records] == list(range(len(eps)))
    for r in rep.records:
        spec = eps.episodes[r.episode_id]
        assert r.path_len >= 0 and r.shortest_len > 0 and 1 <= r.steps <= 60
        assert r.success or r.steps == 60
        if r.success:
            assert r.path_len >= nearest_goal_distance(test_houses[spec.house_index], spec) - 1e-9
    path = str(tmp_path / "rep.csv")
    rep.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["episode_id", "success", "path_len", "shortest_len", "steps"]
    assert len(rows) == len(eps) + 1


def test_evaluate_rejects_unknown_goal(test_houses):
    eps = evalkit.make_episode_set(test_houses, 1, seed=0)
    bad = evalkit.EpisodeSet([EpisodeSpec(0, eps.episodes[0].start, 9, 10)], [1.0], "bad")
    with pytest.raises(ConfigError):
        evalkit.evaluate(agent.init_agent(0), test_houses, bad)


def test_aggregate_csv(tmp_path):
    rep = EvalReport([EpisodeRecord(0, True, 2.0, 1.0, 3)])
    path = str(tmp_path / "agg.csv")
    evalkit.write_aggregate(path, [("sim", 0, rep)])
    rows = list(csv.reader(open(path)))
    assert rows == [["model", "seed", "success_rate", "spl"], ["sim", "0", "100.0000", "50.0000"]]


def test_heatmap(tmp_path):
    params = agent.init_agent(1)
    img = np.random.default_rng(0).uniform(size=(32, 32, 3)).astype(np.float32)
    grid = evalkit.heatmap(params, img)
    assert grid.shape == (6, 6) and grid.min() >= 0 and grid.max() <= 1
    flat = evalkit.heatmap(params, np.full((32, 32, 3), 0.4, np.float32))
    assert flat.max() - flat.min() < 0.2
    path = str(tmp_path / "h.pgm")
    evalkit.write_pgm(path, grid)
    assert open(path, "rb").read().startswith(b"P5\n6 6\n255\n")
    back = evalkit.read_pgm(path)
    np.testing.assert_array_equal(back, np.round(grid * 255).astype(np.uint8))
