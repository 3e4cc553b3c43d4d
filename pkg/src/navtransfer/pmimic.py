"""Policy mimic: real-domain training of the policy side under a distillation
term that pulls the student toward a frozen synthetic-domain teacher.

The student sees real observations through the frozen adapted encoder
``M_r``; its goal embedding, recurrent core, policy and value heads are
trained. The teacher (the complete synthetic baseline) consumes the same
observations with its own recurrent state.
"""

from dataclasses import dataclass, field

import numpy as np

from . import agent, rl
from .errors import ConfigError
from .nncore import load_checkpoint, save_checkpoint
from .nncore import autograd as ag
from .nncore.autograd import LOG_EPS, cross_entropy, softmax

MIMIC_WEIGHT = 0.1


@dataclass
class MimicConfig:
    mimic_weight: float = MIMIC_WEIGHT
    train: rl.TrainConfig = field(default_factory=lambda: rl.TrainConfig(domain="real"))
    frozen: tuple = (agent.ENCODER_PREFIX,)

    def __post_init__(self):
        if self.mimic_weight < 0:
            raise ConfigError("mimic weight must be >= 0")


class Teacher:
    """Frozen synthetic baseline with a private recurrent state per environment slot."""

    def __init__(self, params):
        self.params = params.copy()
        self.params.freeze("")
        self.consts = self.params.constants()
        self.cfg = agent.infer_config(self.params)
        self.h = None

    def clone(self):
        return Teacher(self.params)

    def step(self, images, goals, starts):
        """Distribution for one batch of observations; ``starts`` resets the state first."""
        if self.h is None or self.h.shape[0] != len(goals):
            self.h = agent.zero_state(len(goals), self.cfg)
        self.h[np.asarray(starts, bool)] = 0.0
        p, self.h = teacher_distribution(self, images, self.h, goals)
        return p

    def checksum(self):
        return self.params.checksum()


def teacher_distribution(teacher, x_r, h, goals):
    """``softmax(P_s(M_s(x_r)))`` with the teacher's core; returns ``(p, h_next)``."""
    f = agent.encode(teacher.consts, x_r, teacher.cfg)
    p, _, h_next, _ = agent.act(teacher.consts, f, goals, h, teacher.cfg)
    return p, h_next


def mimic_loss(p, logits):
    """``-sum_a p(a) log softmax(logits)(a)`` with the log clamped at 1e-8."""
    return cross_entropy(np.asarray(p, np.float64), softmax(np.asarray(logits, np.float64)), LOG_EPS)


def mimic_loss_var(p, logits):
    """Summed cross-entropy over the rows of ``logits`` against constant targets ``p``."""
    q = ag.softmax_var(logits)
    return -ag.sum_all(ag.Var(np.asarray(p, logits.value.dtype)) * ag.log_clamped(q))


def combined_objective(weight):
    def build(traj, cfg, mcfg):
        T, B = traj.actions.shape
        feats = ag.Var(traj.features.reshape(T * B, -1)) if traj.features is not None else None

        def fn(leaves):
            total, parts, logits = agent.a3c_loss_var(leaves, traj, cfg.entropy_coef, mcfg, feats, cfg.value_coef)
            if weight > 0 and traj.teacher is not None:
                mim = ag.scale(mimic_loss_var(traj.teacher.reshape(T * B, -1), logits), 1.0 / B)
                parts["l_mimic"] = float(mim.value)
                total = total + ag.scale(mim, weight)
            elif traj.teacher is not None:
                parts["l_mimic"] = float(mimic_loss_var(traj.teacher.reshape(T * B, -1), logits).value) / B
            fn.parts = parts
            return total

        return fn

    return build


def build_student(mr_params, teacher_params, frozen=(agent.ENCODER_PREFIX,)):
    """Teacher policy side plus the encoder of ``mr_params``; ``frozen`` prefixes fixed."""
    student = teacher_params.copy()
    student.frozen = set()
    student.load_from(mr_params.subset(agent.ENCODER_PREFIX), agent.ENCODER_PREFIX)
    student.freeze(*frozen)
    return student


def mimic_train(mr_source, teacher_source, houses, cfg, val_houses=None, out=None, log_path=None):
    """Train the student; returns ``(params, TrainLog)``.

    Sources are checkpoint paths or ``(params, extra)`` pairs. The output
    checkpoint carries the frozen ``M_r`` unchanged alongside the trained
    policy side.
    """
    mr, mr_extra = load_checkpoint(mr_source) if isinstance(mr_source, str) else mr_source
    tp, _ = load_checkpoint(teacher_source) if isinstance(teacher_source, str) else teacher_source
    student = build_student(mr, tp, cfg.frozen)
    teacher = Teacher(tp)
    before = teacher.checksum()
    frozen_before = {p: student.checksum(p) for p in cfg.frozen}
    start = rl.checkpoint_step(mr_extra)
    encoder_frozen = all(n in student.frozen for n in student.names(agent.ENCODER_PREFIX))
    params, log, final = rl.run_training(
        student, houses, cfg.train, val_houses, start_step=start, objective=combined_objective(cfg.mimic_weight),
        teacher=teacher, frozen_features=encoder_frozen, extra_columns=("l_mimic",),
        on_checkpoint=(lambda p, s: save_checkpoint(out, p, rl.checkpoint_extra(s))) if out else None)
    if teacher.checksum() != before or any(student.checksum(p) != c for p, c in frozen_before.items()):
        raise RuntimeError("frozen parameters changed during policy mimic")
    if out is not None:
        save_checkpoint(out, params, rl.checkpoint_extra(final))
    if log_path is not None:
        log.to_csv(log_path)
    return params, log
