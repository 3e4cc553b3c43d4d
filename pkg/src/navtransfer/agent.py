"""Recurrent actor-critic: encoder ``M``, goal embedding ``G``, recurrent core
``R``, policy head ``P`` and value head ``V``, plus the actor-critic loss.

Parameter names carry the component as prefix so stages can load, freeze or
swap components independently (``M.c1.w``, ``G.emb``, ``R.gru.wz`` ...).
"""

from dataclasses import dataclass

import numpy as np

from .errors import GoalError, ShapeError
from .indoorworld import IMG, N_ACTIONS, ROOM_TYPES
from .nncore import Conv2D, Dense, Flatten, GRUCell, LeakyReLU, Network, ParamSet
from .nncore import autograd as ag
from .nncore.layers import gru_input_terms, gru_step, init_layer

ENCODER_PREFIX = "M."
POLICY_PREFIXES = ("G.", "R.", "P.", "V.")
VALUE_COEF = 0.5
ENTROPY_COEF = 0.01
GAMMA = 0.99
UNROLL = 20


@dataclass(frozen=True)
class AgentConfig:
    feature_dim: int = 128
    goal_dim: int = 16
    hidden: int = 128
    conv1: int = 8
    conv2: int = 16
    kernel: int = 4
    stride: int = 2
    image: int = IMG
    n_goals: int = len(ROOM_TYPES)
    n_actions: int = N_ACTIONS
    slope: float = 0.01

    def encoder(self):
        return Network([
            Conv2D("M.c1", 3, self.conv1, self.kernel, self.stride),
            LeakyReLU(self.slope),
            Conv2D("M.c2", self.conv1, self.conv2, self.kernel, self.stride),
            LeakyReLU(self.slope),
            Flatten(),
            Dense("M.fc", self._flat(), self.feature_dim),
            LeakyReLU(self.slope),
        ], (self.image, self.image, 3))

    def _flat(self):
        s = (self.image - self.kernel) // self.stride + 1
        s = (s - self.kernel) // self.stride + 1
        return s * s * self.conv2

    @property
    def last_conv_index(self):
        """Number of encoder layers up to and including the last conv's activation."""
        return 4


DEFAULT = AgentConfig()


def init_agent(seed, cfg=DEFAULT):
    rng = np.random.default_rng([seed % 2**63, 31337])
    ps = cfg.encoder().init_params(rng)
    ps.add("G.emb", rng.normal(0, 1.0, (cfg.n_goals, cfg.goal_dim)).astype(np.float32))
    for name, value in init_layer(GRUCell("R.gru", cfg.feature_dim + cfg.goal_dim, cfg.hidden), rng).items():
        ps.add(name, value)
    # small policy/value init keeps the initial policy near uniform
    ps.add("P.fc.w", (0.01 * rng.standard_normal((cfg.hidden, cfg.n_actions))).astype(np.float32))
    ps.add("P.fc.b", np.zeros(cfg.n_actions, np.float32))
    ps.add("V.fc.w", (0.01 * rng.standard_normal((cfg.hidden, 1))).astype(np.float32))
    ps.add("V.fc.b", np.zeros(1, np.float32))
    return ps


def infer_encoder_config(params):
    """Architecture of an encoder-only parameter set; non-encoder sizes take defaults."""
    c1 = params["M.c1.w"]
    return AgentConfig(feature_dim=params["M.fc.w"].shape[1], conv1=c1.shape[3], conv2=params["M.c2.w"].shape[3],
                       kernel=c1.shape[0])


def infer_config(params):
    """Recover the architecture from parameter shapes."""
    c1 = params["M.c1.w"]
    c2 = params["M.c2.w"]
    fc = params["M.fc.w"]
    return AgentConfig(
        feature_dim=fc.shape[1], goal_dim=params["G.emb"].shape[1], hidden=params["R.gru.uz"].shape[0],
        conv1=c1.shape[3], conv2=c2.shape[3], kernel=c1.shape[0], n_goals=params["G.emb"].shape[0],
        n_actions=params["P.fc.w"].shape[1],
    )


# ---- forward pieces ---------------------------------------------------------

def encode_var(leaves, images, cfg=DEFAULT, upto=None):
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[1:] != (cfg.image, cfg.image, 3):
        raise ShapeError(f"expected (N, {cfg.image}, {cfg.image}, 3) images, got {images.shape}")
    dtype = leaves["M.c1.w"].value.dtype
    return cfg.encoder().forward(leaves, ag.Var(images.astype(dtype, copy=False)), upto=upto)


def encode(params, images, cfg=DEFAULT):
    """Features (N, feature_dim) for a batch of images; no gradient bookkeeping."""
    return encode_var(params.constants() if isinstance(params, ParamSet) else params, images, cfg).value


def _check_goals(goals, cfg):
    goals = np.asarray(goals, dtype=np.int64)
    if np.any(goals < 0) or np.any(goals >= cfg.n_goals):
        raise GoalError(f"goal ids outside [0, {cfg.n_goals})")
    return goals


def core_var(leaves, f, goals, h, cfg=DEFAULT):
    """Recurrent step plus heads; returns (logits, value, h_next) as graph nodes."""
    goals = _check_goals(goals, cfg)
    x = ag.concat([f, ag.gather_rows(leaves["G.emb"], goals)], axis=1)
    h = gru_step(leaves, "R.gru", gru_input_terms(leaves, "R.gru", x), h)
    logits = ag.dense(h, leaves["P.fc.w"], leaves["P.fc.b"])
    value = ag.dense(h, leaves["V.fc.w"], leaves["V.fc.b"])
    return logits, value, h


def act(params, f, goals, h_prev, cfg=DEFAULT):
    """Batched acting step: action distribution, value estimate and next hidden state."""
    leaves = params.constants() if isinstance(params, ParamSet) else params
    dtype = leaves["R.gru.uz"].value.dtype
    logits, value, h = core_var(leaves, ag.Var(np.asarray(f, dtype)), goals, ag.Var(np.asarray(h_prev, dtype)), cfg)
    return ag.softmax(logits.value), value.value[:, 0], h.value, logits.value


def zero_state(n, cfg=DEFAULT, dtype=np.float32):
    return np.zeros((n, cfg.hidden), dtype=dtype)


# ---- trajectories and loss --------------------------------------------------

@dataclass
class Trajectory:
    """A batch of ``B`` parallel unrolls of length ``T`` (time-major arrays).

    ``starts[t, b]`` marks that slot ``b`` began a new episode at step ``t``,
    so the recurrent state is reset to zero before that step. ``h0`` is the
    state entering step 0 (already zeroed where ``starts[0]`` is set).
    """

    images: np.ndarray  # (T, B, H, W, 3)
    goals: np.ndarray  # (T, B)
    actions: np.ndarray  # (T, B)
    rewards: np.ndarray  # (T, B)
    dones: np.ndarray  # (T, B) episode ended after step t
    starts: np.ndarray  # (T, B)
    h0: np.ndarray  # (B, hidden)
    bootstrap: np.ndarray  # (B,) value of the state after the last step
    gamma: float = GAMMA
    probs: np.ndarray = None  # (T, B, A) behaviour distribution, informational
    values: np.ndarray = None  # (T, B)
    features: np.ndarray = None  # (T, B, feature_dim) when the encoder is frozen
    teacher: np.ndarray = None  # (T, B, A) teacher distributions for policy mimic

    @property
    def length(self):
        return self.actions.shape[0]

    def returns(self):
        return discounted_returns(self.rewards, self.dones, self.bootstrap, self.gamma)


def discounted_returns(rewards, dones, bootstrap, gamma=GAMMA):
    """n-step returns ``R_t = r_t + gamma * R_{t+1}``, cut at episode ends."""
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    out = np.zeros_like(rewards)
    running = np.asarray(bootstrap, dtype=np.float64).copy()
    for t in range(rewards.shape[0] - 1, -1, -1):
        running = rewards[t] + gamma * np.where(dones[t], 0.0, running)
        out[t] = running
    return out


def unroll(leaves, traj, cfg=DEFAULT, features=None):
    """Replay a trajectory; returns logits (T*B, A) and values (T*B,) as graph nodes, time-major."""
    T, B = traj.actions.shape
    if features is None:
        flat = traj.images.reshape(T * B, *traj.images.shape[2:])
        features = encode_var(leaves, flat, cfg)
    goals = _check_goals(traj.goals.reshape(-1), cfg)
    x = ag.concat([features, ag.gather_rows(leaves["G.emb"], goals)], axis=1)
    xz, xr, xn = gru_input_terms(leaves, "R.gru", x)
    dtype = leaves["R.gru.uz"].value.dtype
    h = ag.Var(np.asarray(traj.h0, dtype))
    hs = []
    for t in range(T):
        if t > 0 and traj.starts[t].any():
            h = h * ag.Var((~traj.starts[t]).astype(dtype)[:, None])
        lo, hi = t * B, (t + 1) * B
        h = gru_step(leaves, "R.gru", (ag.rows(xz, lo, hi), ag.rows(xr, lo, hi), ag.rows(xn, lo, hi)), h)
        hs.append(h)
    hcat = ag.concat(hs, axis=0)  # (T*B, hidden)
    logits = ag.dense(hcat, leaves["P.fc.w"], leaves["P.fc.b"])
    values = ag.dense(hcat, leaves["V.fc.w"], leaves["V.fc.b"])
    return logits, ag.reshape(values, (T * B,))


def a3c_terms(logits, values, actions, returns, entropy_coef=ENTROPY_COEF, value_coef=VALUE_COEF, batch=1,
              advantages=None):
    """Policy-gradient, value and entropy terms from unrolled outputs.

    The advantage multiplying ``log pi`` is treated as a constant, so the
    policy term sends no gradient into the value head. ``advantages`` pins
    that constant to given values; finite-difference checks need this since
    perturbing parameters would otherwise move it.
    """
    dtype = logits.value.dtype
    logp = ag.log_softmax(logits)
    ret = ag.Var(np.asarray(returns, dtype).reshape(-1))
    adv = ret.value - values.value if advantages is None else np.asarray(advantages, dtype).reshape(-1)
    pg = -ag.sum_all(ag.pick(logp, np.asarray(actions).reshape(-1)) * ag.Var(adv.astype(dtype)))
    err = ret - values
    vloss = ag.scale(ag.sum_all(ag.square(err)), value_coef)
    p = ag.softmax_var(logits)
    entropy = -ag.sum_all(p * logp)
    inv = 1.0 / batch
    total = ag.scale(pg + vloss - ag.scale(entropy, entropy_coef), inv)
    parts = dict(policy=float(pg.value) * inv, value=float(vloss.value) * inv, entropy=float(entropy.value) * inv)
    return total, parts


def a3c_loss_var(leaves, traj, entropy_coef=ENTROPY_COEF, cfg=DEFAULT, features=None, value_coef=VALUE_COEF,
                 advantages=None):
    if traj.length == 0:
        raise ValueError("empty trajectory")
    logits, values = unroll(leaves, traj, cfg, features)
    total, parts = a3c_terms(logits, values, traj.actions, traj.returns(), entropy_coef, value_coef,
                             batch=traj.actions.shape[1], advantages=advantages)
    return total, parts, logits


def a3c_loss(params, traj, entropy_coef=ENTROPY_COEF, cfg=DEFAULT):
    """Scalar actor-critic loss value for a trajectory (no gradients)."""
    if traj.actions.size == 0:
        raise ValueError("empty trajectory")
    total, _, _ = a3c_loss_var(params.constants(), traj, entropy_coef, cfg)
    return float(total.value)


def entropy(p):
    p = np.asarray(p, dtype=np.float64)
    return float(-(p * np.log(np.maximum(p, ag.LOG_EPS))).sum())
