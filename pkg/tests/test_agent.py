import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from navtransfer import agent
from navtransfer.errors import GoalError, ShapeError
from navtransfer.nncore import grad_check, loss_and_grad
from navtransfer.nncore import autograd as ag

SMALL = agent.AgentConfig(feature_dim=8, goal_dim=3, hidden=6, conv1=2, conv2=3, image=12)
# float64 central differences; 1e-3 steps straddle leaky kinks of the conv activations
GC_EPS = 1e-4


def random_traj(cfg, T=4, B=2, seed=0, with_starts=True):
    rng = np.random.default_rng(seed)
    starts = np.zeros((T, B), bool)
    dones = np.zeros((T, B), bool)
    if with_starts:
        dones[1, 0] = True
        starts[2, 0] = True
    return agent.Trajectory(
        images=rng.uniform(size=(T, B, cfg.image, cfg.image, 3)).astype(np.float32),
        goals=rng.integers(0, cfg.n_goals, (T, B)),
        actions=rng.integers(0, cfg.n_actions, (T, B)),
        rewards=rng.normal(0, 0.5, (T, B)).astype(np.float32),
        dones=dones,
        starts=starts,
        h0=np.zeros((B, cfg.hidden), np.float32),
        bootstrap=rng.normal(size=B).astype(np.float32),
    )


def with_random_biases(ps, seed):
    """Zero biases put pre-activations on the leaky kink, where central differences are unreliable."""
    rng = np.random.default_rng(seed)
    for n in ps.names():
        if n.endswith(".b") or n.split(".")[-1] in ("bz", "br", "bn"):
            ps[n][:] = rng.normal(0, 0.3, ps[n].shape)
    return ps


def base_advantages(ps, traj):
    """Advantages at the unperturbed parameters, held fixed during the check."""
    _, values = agent.unroll(ps.copy(np.float64).constants(), traj, SMALL)
    return traj.returns().reshape(-1) - values.value


def test_default_architecture():
    ps = agent.init_agent(0)
    images = np.random.default_rng(0).uniform(size=(3, 32, 32, 3)).astype(np.float32)
    f = agent.encode(ps, images)
    assert f.shape == (3, 128)
    assert agent.encode(ps, images).tobytes() == f.tobytes()
    assert agent.infer_config(ps) == agent.DEFAULT
    assert ps.all_finite()
    assert {n.split(".")[0] for n in ps.names()} == {"M", "G", "R", "P", "V"}


def test_encode_shape_error():
    with pytest.raises(ShapeError):
        agent.encode(agent.init_agent(0), np.zeros((1, 16, 16, 3), np.float32))


def test_act_outputs():
    ps = agent.init_agent(1)
    f = np.random.default_rng(1).normal(size=(4, 128)).astype(np.float32)
    h = agent.zero_state(4)
    p, v, h1, logits = agent.act(ps, f, [0, 1, 2, 3], h)
    assert p.shape == (4, 3) and np.allclose(p.sum(axis=1), 1, atol=1e-6)
    assert np.all(np.isfinite(v)) and np.all(np.isfinite(h1))
    p2, v2, h2, _ = agent.act(ps, f, [0, 1, 2, 3], h)
    assert p.tobytes() == p2.tobytes() and v.tobytes() == v2.tobytes() and h1.tobytes() == h2.tobytes()
    with pytest.raises(GoalError):
        agent.act(ps, f[:1], [7], h[:1])


def test_encoder_grad_check():
    ps = with_random_biases(agent.init_agent(2, SMALL).subset("M."), 2)
    x = np.random.default_rng(2).uniform(size=(2, 12, 12, 3))

    def loss(leaves):
        return ag.sum_all(ag.square(agent.encode_var(leaves, x, SMALL)))

    assert grad_check(loss, ps, eps=GC_EPS) < 1e-3


def test_unroll_value_grad_check():
    ps = with_random_biases(agent.init_agent(3, SMALL), 3)
    traj = random_traj(SMALL, T=5, B=1, with_starts=False)

    def loss(leaves):
        _, values = agent.unroll(leaves, traj, SMALL)
        return ag.sum_all(ag.pick(ag.reshape(values, (1, 5)), np.array([4])))

    assert grad_check(loss, ps, eps=GC_EPS) < 1e-3


@pytest.mark.parametrize("seed", range(2))
def test_a3c_loss_grad_check(seed):
    ps = with_random_biases(agent.init_agent(seed, SMALL), seed)
    traj = random_traj(SMALL, seed=seed)
    adv = base_advantages(ps, traj)

    def loss(leaves):
        return agent.a3c_loss_var(leaves, traj, 0.01, SMALL, advantages=adv)[0]

    assert grad_check(loss, ps, eps=GC_EPS) < 1e-3


def test_returns_example():
    r = agent.discounted_returns(np.array([[1.0], [0.0], [0.0]]), np.zeros((3, 1), bool), np.zeros(1), 0.99)
    np.testing.assert_allclose(r[:, 0], [1.0, 0.0, 0.0])


@settings(max_examples=50)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-2, 2)), st.floats(-3, 3),
       st.floats(0.5, 1.0))
def test_returns_match_brute_force(rewards, boot, gamma):
    n = len(rewards)
    got = agent.discounted_returns(rewards[:, None], np.zeros((n, 1), bool), np.array([boot]), gamma)[:, 0]
    for t in range(n):
        want = sum(gamma**k * rewards[t + k] for k in range(n - t)) + gamma ** (n - t) * boot
        assert got[t] == pytest.approx(want, abs=1e-9)


def test_returns_cut_at_episode_end():
    r = agent.discounted_returns(np.array([[1.0], [2.0]]), np.array([[True], [False]]), np.array([10.0]), 0.5)
    np.testing.assert_allclose(r[:, 0], [1.0, 7.0])


def _zero_advantage_terms(entropy_coef):
    logits = ag.leaf(np.random.default_rng(0).normal(size=(3, 3)))
    values = ag.leaf(np.array([0.5, -1.0, 2.0]))
    total, parts = agent.a3c_terms(logits, values, np.array([0, 1, 2]), values.value.copy(), entropy_coef)
    return total, parts, values


def test_loss_zero_when_returns_equal_values():
    total, parts, _ = _zero_advantage_terms(0.0)
    assert total.value == pytest.approx(0.0, abs=1e-12)
    assert parts["policy"] == 0.0 and parts["value"] == 0.0


def test_policy_term_sends_no_gradient_to_value():
    logits = ag.leaf(np.random.default_rng(0).normal(size=(4, 3)))
    values = ag.leaf(np.array([0.1, 0.2, -0.3, 0.4]))
    ret = np.array([1.0, -1.0, 0.5, 0.0])
    total, _ = agent.a3c_terms(logits, values, np.array([0, 1, 2, 0]), ret, entropy_coef=0.0, value_coef=0.0)
    ag.backward(total)
    assert values.grad is None or not np.any(values.grad)
    assert np.any(logits.grad)
    # with the value term on, the gradient equals the value term's alone
    values2 = ag.leaf(values.value.copy())
    total, _ = agent.a3c_terms(ag.leaf(logits.value.copy()), values2, np.array([0, 1, 2, 0]), ret, 0.0, 0.5)
    ag.backward(total)
    np.testing.assert_allclose(values2.grad, -(ret - values.value))


def test_entropy_maximal_at_uniform():
    assert agent.entropy(np.full(3, 1 / 3)) == pytest.approx(np.log(3))
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = rng.dirichlet(np.ones(3))
        assert agent.entropy(p) < np.log(3)


def test_entropy_term_decreases_toward_uniform():
    vals = []
    for scale in (3.0, 1.0, 0.3, 0.0):
        logits = ag.Var(np.array([[scale, 0.0, -scale]]))
        values = ag.Var(np.zeros(1))
        total, _ = agent.a3c_terms(logits, values, np.array([0]), np.zeros(1), entropy_coef=1.0, value_coef=0.0)
        vals.append(float(total.value))
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_empty_trajectory_rejected():
    traj = random_traj(SMALL, T=0, B=1, with_starts=False)
    with pytest.raises(ValueError):
        agent.a3c_loss(agent.init_agent(0, SMALL), traj, cfg=SMALL)


def test_episode_start_resets_state():
    ps = agent.init_agent(4, SMALL)
    traj = random_traj(SMALL, T=3, B=1, with_starts=False)
    traj.starts[1, 0] = True
    logits, _ = agent.unroll(ps.constants(), traj, SMALL)
    tail = agent.Trajectory(traj.images[1:], traj.goals[1:], traj.actions[1:], traj.rewards[1:], traj.dones[1:],
                            np.zeros((2, 1), bool), np.zeros((1, SMALL.hidden), np.float32), traj.bootstrap)
    tail_logits, _ = agent.unroll(ps.constants(), tail, SMALL)
    np.testing.assert_allclose(logits.value[1:], tail_logits.value, rtol=1e-6, atol=1e-7)


def test_a3c_loss_float_matches_graph():
    ps = agent.init_agent(5, SMALL)
    traj = random_traj(SMALL, seed=5)
    v = loss_and_grad(lambda lv: agent.a3c_loss_var(lv, traj, 0.01, SMALL)[0], ps)
    assert agent.a3c_loss(ps, traj, 0.01, SMALL) == pytest.approx(v, rel=1e-6)
