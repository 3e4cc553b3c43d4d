"""Advantage actor-critic training over batched environment workers.

The default loop is synchronous: every worker collects one unroll from its
own environments with the current parameters, the coordinator averages the
gradients and applies a single update. ``mode="async"`` runs the workers as
threads that apply their own gradients under a lock (not bit-reproducible).
"""

import csv
import threading
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import agent
from .errors import ConfigError, DivergenceError
from .evalkit import evaluate, make_episode_set
from .indoorworld import MAX_STEPS, VecEnv, canonical_domain, observe_many, sample_episode
from .nncore import autograd as ag
from .nncore import clip_grad_norm, load_checkpoint, loss_and_grad, optim_step, rmsprop, save_checkpoint


@dataclass
class TrainConfig:
    domain: str = "synthetic"
    steps: int = 200_000
    workers: int = 4
    envs_per_worker: int = 2
    unroll: int = agent.UNROLL
    lr: float = 7e-4
    decay: float = 0.99
    rms_eps: float = 1e-5
    entropy_coef: float = agent.ENTROPY_COEF
    value_coef: float = agent.VALUE_COEF
    gamma: float = agent.GAMMA
    clip: float = 40.0
    max_steps: int = MAX_STEPS
    seed: int = 0
    eval_every: int = 0  # env steps between validation evaluations; 0 = only at the end
    eval_per_house: int = 2
    mode: str = "sync"

    def __post_init__(self):
        self.domain = canonical_domain(self.domain)
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.envs_per_worker < 1:
            raise ConfigError("envs_per_worker must be >= 1")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.unroll < 1:
            raise ConfigError("unroll must be >= 1")
        if self.mode not in ("sync", "async"):
            raise ConfigError(f"unknown training mode {self.mode!r}")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class LogRecord:
    steps: int
    mean_reward: float
    success_rate: float
    spl: float
    extra: dict = field(default_factory=dict)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    extra_columns: tuple = ()

    def append(self, rec):
        if self.records and rec.steps <= self.records[-1].steps:
            raise ValueError("log step stamps must increase")
        self.records.append(rec)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["steps", "mean_reward", "success_rate", "spl", *self.extra_columns])
            for r in self.records:
                w.writerow([r.steps, f"{r.mean_reward:.6f}", f"{r.success_rate:.4f}", f"{r.spl:.4f}",
                            *(f"{r.extra.get(c, float('nan')):.6f}" for c in self.extra_columns)])

    @property
    def final(self):
        return self.records[-1] if self.records else None


# ---- rollout collection -------------------------------------------------------

class Worker:
    """One worker: a private batch of environments and RNG streams."""

    def __init__(self, index, houses, cfg, style=None):
        self.cfg = cfg
        base = cfg.seed % 2**63
        self.ep_rng = np.random.default_rng([base, 7, index])
        self.act_rng = np.random.default_rng([base, 11, index])
        self.houses = houses
        self.env = VecEnv(houses, cfg.envs_per_worker, self._next_episode, style=style)
        self.ep_return = np.zeros(cfg.envs_per_worker)
        self.finished = []  # (return, success) of completed episodes

    def _next_episode(self, slot):
        return sample_episode(self.houses, self.ep_rng, max_steps=self.cfg.max_steps)

    def pop_finished(self):
        out, self.finished = self.finished, []
        return out


class Rollout:
    """Steps a group of workers in lockstep so rendering and acting are batched.

    Each worker keeps its own environments and random streams, so the data a
    worker produces does not depend on how many other workers share the batch.
    The recurrent state and episode-start flags live here, one row per slot.
    """

    def __init__(self, workers, mcfg):
        self.workers = workers
        self.mcfg = mcfg
        self.sizes = [w.env.n for w in workers]
        self.n = sum(self.sizes)
        self.h = agent.zero_state(self.n, mcfg)
        self.starts = np.ones(self.n, dtype=bool)

    def _observe(self):
        imgs = observe_many([w.env for w in self.workers])
        goals = np.concatenate([w.env.goals() for w in self.workers])
        return imgs, goals

    def collect(self, consts, unroll, gamma, teacher=None, frozen_features=False):
        """Roll every environment forward ``unroll`` steps under ``consts``.

        With ``teacher`` (see :mod:`pmimic`) the teacher's distribution on the
        same observations is stored in ``traj.teacher``; with
        ``frozen_features`` the encoder output is stored for reuse.
        """
        mcfg, n, T = self.mcfg, self.n, unroll
        h0 = self.h.copy()
        images = np.empty((T, n, mcfg.image, mcfg.image, 3), np.float32)
        feats = np.empty((T, n, mcfg.feature_dim), np.float32) if frozen_features else None
        goals = np.empty((T, n), np.int64)
        actions = np.empty((T, n), np.int64)
        rewards = np.empty((T, n), np.float32)
        dones = np.empty((T, n), bool)
        starts = np.empty((T, n), bool)
        tprobs = np.empty((T, n, mcfg.n_actions), np.float32) if teacher is not None else None
        cuts = np.cumsum(self.sizes)[:-1]
        for t in range(T):
            starts[t] = self.starts
            img, g = self._observe()
            images[t] = img
            goals[t] = g
            f = agent.encode(consts, img, mcfg)
            if feats is not None:
                feats[t] = f
            if teacher is not None:
                tprobs[t] = teacher.step(img, g, self.starts)
            probs, _, self.h, _ = agent.act(consts, f, g, self.h, mcfg)
            a_parts, r_parts, d_parts = [], [], []
            for w, p in zip(self.workers, np.split(probs, cuts)):
                a = sample_actions(p, w.act_rng)
                r, d, infos = w.env.step(a)
                w.ep_return += r
                for k in np.nonzero(d)[0]:
                    w.finished.append((w.ep_return[k], infos[k]["success"]))
                    w.ep_return[k] = 0.0
                a_parts.append(a)
                r_parts.append(r)
                d_parts.append(d)
            actions[t] = np.concatenate(a_parts)
            rewards[t] = np.concatenate(r_parts)
            dones[t] = np.concatenate(d_parts)
            self.h[dones[t]] = 0.0
            self.starts = dones[t].copy()
        # value of the state after the last step; the hidden state is not advanced
        img, g = self._observe()
        _, boot, _, _ = agent.act(consts, agent.encode(consts, img, mcfg), g, self.h, mcfg)
        return agent.Trajectory(images, goals, actions, rewards, dones, starts, h0, boot.astype(np.float64),
                                gamma=gamma, features=feats, teacher=tprobs)

    def pop_finished(self):
        return [e for w in self.workers for e in w.pop_finished()]


def sample_actions(probs, rng):
    """Inverse-CDF sampling, one uniform draw per row."""
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    return np.minimum((u[:, None] > cdf).sum(axis=1), probs.shape[1] - 1)


# ---- training -------------------------------------------------------------------

def a3c_objective(traj, cfg, mcfg):
    def fn(leaves):
        feats = None
        if traj.features is not None:
            T, B = traj.actions.shape
            feats = ag.Var(traj.features.reshape(T * B, -1))
        total, parts, _ = agent.a3c_loss_var(leaves, traj, cfg.entropy_coef, mcfg, feats, cfg.value_coef)
        fn.parts = parts
        return total
    return fn


def apply_update(params, opt, loss_fn, clip, step_stamp):
    """Gradient, guard, clip and optimizer step; parameters change only after all checks pass."""
    loss = loss_and_grad(loss_fn, params)
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss} at step {step_stamp}")
    norm = clip_grad_norm(params, clip)
    if not np.isfinite(norm):
        raise DivergenceError(f"non-finite gradient norm at step {step_stamp}")
    optim_step(opt, params)
    return loss


def make_optimizer(cfg):
    return rmsprop(cfg.lr, cfg.decay, cfg.rms_eps)


def run_training(params, houses, cfg, val_houses=None, start_step=0, objective=None, teacher=None,
                 frozen_features=False, extra_columns=(), on_checkpoint=None, style=None):
    """Shared loop for baseline training, fine-tuning and policy mimic.

    ``objective(traj, cfg, mcfg) -> loss_fn`` builds the per-update loss; the
    loss function may expose ``.parts`` (dict) whose keys listed in
    ``extra_columns`` are averaged into each log record.
    """
    objective = objective or a3c_objective
    mcfg = agent.infer_config(params)
    if cfg.mode == "async":
        return _run_async(params, houses, cfg, val_houses, start_step, objective, teacher, frozen_features,
                          extra_columns, on_checkpoint, style)
    rollout = Rollout([Worker(i, houses, cfg, style) for i in range(cfg.workers)], mcfg)
    opt = make_optimizer(cfg)
    log = TrainLog(extra_columns=tuple(extra_columns))
    val_set = make_episode_set(val_houses, cfg.eval_per_house, seed=cfg.seed, max_steps=cfg.max_steps) \
        if val_houses else None
    per_update = cfg.workers * cfg.envs_per_worker * cfg.unroll
    done_steps = 0
    next_eval = cfg.eval_every if cfg.eval_every > 0 else None
    interval = _Interval(extra_columns)
    while done_steps < cfg.steps:
        consts = params.constants()
        traj = rollout.collect(consts, cfg.unroll, cfg.gamma, teacher, frozen_features)
        fn = objective(traj, cfg, mcfg)
        apply_update(params, opt, fn, cfg.clip, start_step + done_steps)
        done_steps += per_update
        interval.episodes.extend(rollout.pop_finished())
        interval.add_parts(getattr(fn, "parts", {}))
        if next_eval is not None and done_steps >= next_eval and done_steps < cfg.steps:
            _record(log, interval, params, houses, val_houses, val_set, start_step + done_steps, style)
            interval = _Interval(extra_columns)
            next_eval += cfg.eval_every
            if on_checkpoint is not None:
                on_checkpoint(params, start_step + done_steps)
    if done_steps > 0:
        _record(log, interval, params, houses, val_houses, val_set, start_step + done_steps, style)
    return params, log, start_step + done_steps


class _Interval:
    def __init__(self, extra_columns):
        self.episodes = []
        self.parts = {c: [] for c in extra_columns}

    def add_parts(self, parts):
        for c in self.parts:
            if c in parts:
                self.parts[c].append(parts[c])


def _record(log, interval, params, houses, val_houses, val_set, stamp, style):
    rewards = [e[0] for e in interval.episodes]
    mean_reward = float(np.mean(rewards)) if rewards else 0.0
    if val_set is not None:
        rep = evaluate(params, val_houses, val_set, style=style)
        sr, spl_ = rep.success_rate, rep.spl
    else:
        succ = [e[1] for e in interval.episodes]
        sr = 100.0 * float(np.mean(succ)) if succ else 0.0
        spl_ = float("nan")
    extra = {c: float(np.mean(v)) for c, v in interval.parts.items() if v}
    log.append(LogRecord(stamp, mean_reward, sr, spl_, extra))


def _run_async(params, houses, cfg, val_houses, start_step, objective, teacher, frozen_features,
               extra_columns, on_checkpoint, style):
    mcfg = agent.infer_config(params)
    opt = make_optimizer(cfg)
    lock = threading.Lock()
    counter = [0]
    errors = []
    interval = _Interval(extra_columns)
    per_update = cfg.envs_per_worker * cfg.unroll

    def run(i):
        w = Rollout([Worker(i, houses, cfg, style)], mcfg)
        local_teacher = teacher.clone() if teacher is not None else None
        try:
            while True:
                with lock:
                    if counter[0] >= cfg.steps or errors:
                        return
                    snapshot = params.copy()
                traj = w.collect(snapshot.constants(), cfg.unroll, cfg.gamma, local_teacher, frozen_features)
                fn = objective(traj, cfg, mcfg)
                loss_and_grad(fn, snapshot)
                with lock:
                    if counter[0] >= cfg.steps:
                        return
                    for name in params.grads:
                        params.grads[name][...] = snapshot.grads[name]
                    if not np.isfinite(params.flat_grad_norm()):
                        raise DivergenceError(f"non-finite gradient at step {start_step + counter[0]}")
                    clip_grad_norm(params, cfg.clip)
                    optim_step(opt, params)
                    counter[0] += per_update
                    interval.episodes.extend(w.pop_finished())
                    interval.add_parts(getattr(fn, "parts", {}))
        except Exception as exc:  # surfaced to the caller below
            errors.append(exc)

    threads = [threading.Thread(target=run, args=(i,)) for i in range(cfg.workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    log = TrainLog(extra_columns=tuple(extra_columns))
    val_set = make_episode_set(val_houses, cfg.eval_per_house, seed=cfg.seed, max_steps=cfg.max_steps) \
        if val_houses else None
    if counter[0] > 0:
        _record(log, interval, params, houses, val_houses, val_set, start_step + counter[0], style)
    return params, log, start_step + counter[0]


# ---- entry points -------------------------------------------------------------------

def checkpoint_extra(step):
    return {"meta.step": np.array([step], dtype=np.float32)}


def checkpoint_step(extra):
    v = extra.get("meta.step")
    return int(v[0]) if v is not None else 0


def train_baseline(cfg, houses, val_houses=None, out=None, log_path=None, init_seed=None):
    """Train a fresh agent on ``houses`` of ``cfg.domain``; returns ``(params, TrainLog)``."""
    if not houses:
        raise ConfigError("no training houses")
    params = agent.init_agent(cfg.seed if init_seed is None else init_seed)
    ckpt = _checkpointer(out)
    params, log, final = run_training(params, houses, cfg, val_houses, on_checkpoint=ckpt)
    if out is not None:
        save_checkpoint(out, params, checkpoint_extra(final))
    if log_path is not None:
        log.to_csv(log_path)
    return params, log


def finetune(source, houses, cfg, val_houses=None, out=None, log_path=None):
    """Continue actor-critic training of every parameter on ``houses``.

    ``source`` is a checkpoint path or a ``(params, extra)`` pair. Log step
    stamps continue from the source's step counter.
    """
    params, extra = load_checkpoint(source) if isinstance(source, str) else source
    params = params.copy()
    params.frozen = set()
    start = checkpoint_step(extra)
    params, log, final = run_training(params, houses, cfg, val_houses, start_step=start,
                                      on_checkpoint=_checkpointer(out))
    if out is not None:
        save_checkpoint(out, params, checkpoint_extra(final))
    if log_path is not None:
        log.to_csv(log_path)
    return params, log


def _checkpointer(out):
    if out is None:
        return None
    return lambda params, step: save_checkpoint(out, params, checkpoint_extra(step))


def with_overrides(cfg, **kw):
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
