"""Adversarial feature adaptation of the visual encoder.

A real-domain encoder ``M_r`` (initialized from the synthetic encoder
``M_s``) is trained so that a discriminator ``D`` cannot tell its features on
real images from ``M_s`` features on synthetic images. ``M_s`` stays fixed.
``D`` outputs the probability that a feature came from the synthetic path.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import agent
from .errors import ConfigError, DivergenceError
from .nncore import Dense, LeakyReLU, Network, ParamSet, Sigmoid, adam, load_checkpoint, loss_and_grad
from .nncore import autograd as ag
from .nncore import optim_step, save_checkpoint

D_HIDDEN = 64


@dataclass
class AdaptConfig:
    idt_weight: float = 5e-4
    norm_weight: float = 1e-4
    lr: float = 1e-4  # discriminator
    encoder_lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    iters: int = 1000
    batch: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.idt_weight < 0 or self.norm_weight < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.batch < 2 or self.batch % 2:
            raise ConfigError("batch must be even so it splits equally between domains")
        if self.lr <= 0 or self.encoder_lr <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.iters < 0:
            raise ConfigError("iters must be >= 0")

    @property
    def half(self):
        return self.batch // 2


class DiscriminatorModel:
    """Two dense layers: feature -> 64 (leaky) -> 1 (sigmoid)."""

    def __init__(self, feature_dim=128, hidden=D_HIDDEN):
        self.net = Network([Dense("D.fc1", feature_dim, hidden), LeakyReLU(), Dense("D.fc2", hidden, 1), Sigmoid()],
                           (feature_dim,))

    def init_params(self, seed):
        return self.net.init_params(np.random.default_rng([seed % 2**63, 577]))

    def forward(self, leaves, f):
        """Probabilities (N,) as a graph node."""
        return ag.reshape(self.net.forward(leaves, f), (f.value.shape[0],))

    def predict(self, params, features):
        consts = params.constants() if isinstance(params, ParamSet) else params
        dtype = consts["D.fc1.w"].value.dtype
        return self.forward(consts, ag.Var(np.asarray(features, dtype))).value


def _check_batch(*xs):
    for x in xs:
        if x.value.shape[0] == 0:
            raise ValueError("empty feature batch")


# ---- losses -------------------------------------------------------------------

def discriminator_loss_var(disc, d_leaves, f_s, f_r):
    """``-mean log D(f_s) - mean log(1 - D(f_r))``."""
    _check_batch(f_s, f_r)
    p_s = disc.forward(d_leaves, f_s)
    p_r = disc.forward(d_leaves, f_r)
    return -(ag.mean_all(ag.log_clamped(p_s)) + ag.mean_all(ag.log_clamped(1.0 - p_r)))


def adversarial_loss_var(disc, d_leaves, f_r):
    """``-mean log D(M_r(x_r))``, minimized by the encoder."""
    _check_batch(f_r)
    return -ag.mean_all(ag.log_clamped(disc.forward(d_leaves, f_r)))


def identity_loss_var(f_ms, f_mr):
    """Mean over the batch of ``||M_s(x) - M_r(x)||_2``."""
    _check_batch(f_ms, f_mr)
    return ag.mean_all(ag.row_norm(f_mr - f_ms))


def norm_loss_var(leaves, names):
    """Sum of squared entries of the named (trainable) tensors."""
    terms = [ag.sum_all(ag.square(leaves[n])) for n in names]
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def discriminator_loss(d_params, f_s, f_r):
    disc = DiscriminatorModel(d_params["D.fc1.w"].shape[0], d_params["D.fc1.w"].shape[1])
    dt = d_params.dtype
    return float(discriminator_loss_var(disc, d_params.constants(), ag.Var(np.asarray(f_s, dt)),
                                        ag.Var(np.asarray(f_r, dt))).value)


def adversarial_loss(d_params, mr_params, x_r):
    disc = DiscriminatorModel(d_params["D.fc1.w"].shape[0], d_params["D.fc1.w"].shape[1])
    f_r = agent.encode_var(mr_params.constants(), x_r, agent.infer_encoder_config(mr_params))
    return float(adversarial_loss_var(disc, d_params.constants(), f_r).value)


def identity_loss(ms_params, mr_params, x_s):
    cfg = agent.infer_encoder_config(ms_params)
    f_ms = agent.encode_var(ms_params.constants(), x_s, cfg)
    f_mr = agent.encode_var(mr_params.constants(), x_s, cfg)
    return float(identity_loss_var(f_ms, f_mr).value)


# ---- training -------------------------------------------------------------------

@dataclass
class AdaptRecord:
    iter: int
    l_cls: float
    l_adv: float
    l_idt: float
    l_norm: float


def write_adapt_log(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "l_cls", "l_adv", "l_idt", "l_norm"])
        for r in records:
            w.writerow([r.iter, f"{r.l_cls:.6f}", f"{r.l_adv:.6f}", f"{r.l_idt:.6f}", f"{r.l_norm:.6f}"])


def adapt(ms_source, sim_images, real_images, cfg, out=None, log_path=None):
    """Train ``M_r`` against a fresh discriminator.

    ``ms_source`` is an agent checkpoint path or ``(params, extra)``. Returns
    ``(agent_params, d_params, records)`` where ``agent_params`` is the source
    agent with its encoder replaced by ``M_r``; the source is never mutated.
    """
    src, extra = load_checkpoint(ms_source) if isinstance(ms_source, str) else ms_source
    mcfg = agent.infer_config(src)
    ms = src.subset(agent.ENCODER_PREFIX)
    mr = ms.copy()
    mr.frozen = set()
    ms_consts = ms.constants()
    disc = DiscriminatorModel(mcfg.feature_dim)
    dp = disc.init_params(cfg.seed)
    d_opt = adam(cfg.lr, cfg.beta1, cfg.beta2)
    m_opt = adam(cfg.encoder_lr, cfg.beta1, cfg.beta2)
    sim_images = np.asarray(sim_images, np.float32)
    real_images = np.asarray(real_images, np.float32)
    if len(sim_images) == 0 or len(real_images) == 0:
        raise ConfigError("image banks must be non-empty")
    rng = np.random.default_rng([cfg.seed % 2**63, 8081])
    fs_bank = agent.encode(ms_consts, sim_images, mcfg)
    d_names = dp.names()
    m_names = mr.names()
    records = []
    n = cfg.half
    for it in range(cfg.iters):
        i_s = rng.integers(0, len(sim_images), n)
        i_r = rng.integers(0, len(real_images), n)
        x_s, x_r = sim_images[i_s], real_images[i_r]
        f_s = ag.Var(fs_bank[i_s])
        f_r_now = ag.Var(agent.encode(mr.constants(), x_r, mcfg))

        # discriminator step on features of the current M_r
        parts = {}

        def d_loss(leaves):
            cls = discriminator_loss_var(disc, leaves, f_s, f_r_now)
            nrm = norm_loss_var(leaves, d_names)
            parts["cls"] = float(cls.value)
            return cls + ag.scale(nrm, cfg.norm_weight)

        v = loss_and_grad(d_loss, dp)
        if not np.isfinite(v):
            raise DivergenceError(f"non-finite discriminator loss at iteration {it}")
        optim_step(d_opt, dp)

        # encoder step against the updated discriminator
        d_consts = dp.constants()

        def m_loss(leaves):
            adv = adversarial_loss_var(disc, d_consts, agent.encode_var(leaves, x_r, mcfg))
            idt = identity_loss_var(ag.Var(fs_bank[i_s]), agent.encode_var(leaves, x_s, mcfg))
            nrm = norm_loss_var(leaves, m_names)
            parts.update(adv=float(adv.value), idt=float(idt.value), norm=float(nrm.value))
            return adv + ag.scale(idt, cfg.idt_weight) + ag.scale(nrm, cfg.norm_weight)

        v = loss_and_grad(m_loss, mr)
        if not np.isfinite(v):
            raise DivergenceError(f"non-finite encoder loss at iteration {it}")
        optim_step(m_opt, mr)
        records.append(AdaptRecord(it, parts["cls"], parts["adv"], parts["idt"], parts["norm"]))

    result = src.copy()
    result.load_from(mr, agent.ENCODER_PREFIX)
    if out is not None:
        save_checkpoint(out, result, extra)
    if log_path is not None:
        write_adapt_log(log_path, records)
    return result, dp, records


# ---- probe -------------------------------------------------------------------------

def probe_accuracy(a, b, seed=0, hidden=D_HIDDEN, iters=600, lr=1e-3, holdout=0.5, batch=128):
    """Held-out accuracy of a freshly trained two-layer classifier separating ``a`` from ``b``.

    Inputs are flattened, centred with the training-split mean and divided by
    one global training-split scale (a per-dimension scale would inflate
    near-constant features). Each class is split by ``holdout``: one part
    trains the probe, the other scores it.
    """
    rng = np.random.default_rng([seed % 2**63, 1601])
    a = np.asarray(a, np.float32).reshape(len(a), -1)
    b = np.asarray(b, np.float32).reshape(len(b), -1)
    ia, ib = rng.permutation(len(a)), rng.permutation(len(b))
    ka, kb = int(len(a) * (1 - holdout)), int(len(b) * (1 - holdout))
    xtr = np.concatenate([a[ia[:ka]], b[ib[:kb]]])
    ytr = np.concatenate([np.ones(ka), np.zeros(kb)]).astype(np.float32)
    xte = np.concatenate([a[ia[ka:]], b[ib[kb:]]])
    yte = np.concatenate([np.ones(len(a) - ka), np.zeros(len(b) - kb)])
    mu, sd = xtr.mean(axis=0), xtr.std() + 1e-6
    xtr, xte = (xtr - mu) / sd, (xte - mu) / sd
    disc = DiscriminatorModel(xtr.shape[1], hidden)
    ps = disc.init_params(seed)
    opt = adam(lr)
    for _ in range(iters):
        idx = rng.integers(0, len(xtr), batch)
        xb, yb = ag.Var(xtr[idx]), ag.Var(ytr[idx])

        def loss(leaves):
            p = disc.forward(leaves, xb)
            ll = yb * ag.log_clamped(p) + (1.0 - yb) * ag.log_clamped(1.0 - p)
            return -ag.mean_all(ll)

        loss_and_grad(loss, ps)
        optim_step(opt, ps)
    pred = disc.predict(ps, xte) > 0.5
    return float((pred == (yte > 0.5)).mean())


def feature_gap(ms_params, mr_params, sim_images, real_images, seed=0):
    """Probe accuracy on ``{M_s(x_s)}`` versus ``{M_r(x_r)}``."""
    cfg = agent.infer_encoder_config(ms_params)
    f_s = agent.encode(ms_params, sim_images, cfg)
    f_r = agent.encode(mr_params, real_images, cfg)
    return probe_accuracy(f_s, f_r, seed=seed)
