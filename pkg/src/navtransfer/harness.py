"""Pipeline configuration, stage orchestration with resume, and ablation sweeps.

Per seed the pipeline writes one directory tree::

    <out_dir>/seed<S>/
        config.txt                 resolved configuration (+ its hash)
        houses/<domain>_<split>.bin
        images/<domain>.bin
        ckpt/{sim,real,ft,fa,fa_pm,sim_pm}.ckpt
        logs/*.csv
        eval/<model>.csv           per-episode records
        stages/<stage>.done        completion markers (config hash + output digests)

and at the top level ``table1.csv`` (mean and std per model) and
``aggregate.csv`` (per model and seed), each next to ``config.txt``.
"""

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field, fields

import numpy as np

from . import agent, evalkit, fadapt, pmimic, rl
from .errors import ConfigError, NavTransferError, StageError
from .indoorworld import DOMAINS, generate_house, load_houses, sample_images, save_houses
from .indoorworld import load_images, save_images
from .nncore import load_checkpoint

SPLITS = ("train", "val", "test")
MODELS = ("sim", "real", "sim+FT", "sim+FA", "sim+PM", "sim+FA+PM")
MODEL_FILES = {"sim": "sim", "real": "real", "sim+FT": "ft", "sim+FA": "fa", "sim+PM": "sim_pm",
               "sim+FA+PM": "fa_pm"}
SWEEP_PARAMS = ("idt_weight", "mimic_weight")


@dataclass
class PipelineConfig:
    out_dir: str = "runs"
    seeds: tuple = (0, 1, 2)
    # houses (fixed across seeds so every model is scored on the same episodes)
    house_seed: int = 2018
    train_houses: int = 24
    val_houses: int = 8
    test_houses: int = 8
    episodes_per_house: int = 30
    eval_max_steps: int = 200
    # reinforcement learning
    sim_steps: int = 400_000
    real_steps: int = 100_000
    ft_steps: int = 100_000
    pm_steps: int = 100_000
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
    max_steps: int = 200
    eval_every: int = 50_000
    eval_per_house: int = 2
    mode: str = "sync"
    # feature adaptation
    images: int = 2000
    idt_weight: float = 5e-4
    norm_weight: float = 1e-4
    adapt_lr: float = 1e-4
    adapt_encoder_lr: float = 1e-5
    adapt_iters: int = 1000
    adapt_batch: int = 64
    # policy mimic
    mimic_weight: float = pmimic.MIMIC_WEIGHT

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        for name in ("train_houses", "val_houses", "test_houses", "episodes_per_house", "images", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("sim_steps", "real_steps", "ft_steps", "pm_steps", "adapt_iters"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        # validate the derived stage configs early
        self.train_config("synthetic", 0, 0)
        self.adapt_config(0)
        pmimic.MimicConfig(self.mimic_weight)

    # ---- text form ----------------------------------------------------------

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def parse(cls, text, overrides=None):
        """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            values[key.strip()] = value.strip()
        values.update(overrides or {})
        return cls.from_strings(values)

    @classmethod
    def from_strings(cls, values):
        types = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(values) - set(types))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kw = {}
        for key, value in values.items():
            kw[key] = _coerce(key, types[key], value)
        return cls(**kw)

    @classmethod
    def load(cls, path, overrides=None):
        with open(path) as fh:
            return cls.parse(fh.read(), overrides)

    def resolved(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def hash(self, exclude=("out_dir", "seeds")):
        """Digest of every setting that influences numbers (not where they are written)."""
        text = "\n".join(line for line in self.resolved().splitlines() if line.split(" = ")[0] not in exclude)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def write(self, directory):
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "config.txt"), "w") as fh:
            fh.write(self.resolved())
            fh.write(f"# config_hash = {self.hash()}\n")

    # ---- stage configs -----------------------------------------------------------

    def train_config(self, domain, steps, seed):
        return rl.TrainConfig(
            domain=domain, steps=steps, workers=self.workers, envs_per_worker=self.envs_per_worker,
            unroll=self.unroll, lr=self.lr, decay=self.decay, rms_eps=self.rms_eps,
            entropy_coef=self.entropy_coef, value_coef=self.value_coef, gamma=self.gamma, clip=self.clip,
            max_steps=self.max_steps, seed=seed, eval_every=self.eval_every,
            eval_per_house=self.eval_per_house, mode=self.mode)

    def adapt_config(self, seed, idt_weight=None):
        return fadapt.AdaptConfig(idt_weight=self.idt_weight if idt_weight is None else idt_weight,
                                  norm_weight=self.norm_weight, lr=self.adapt_lr,
                                  encoder_lr=self.adapt_encoder_lr, iters=self.adapt_iters,
                                  batch=self.adapt_batch, seed=seed)

    def mimic_config(self, seed, mimic_weight=None):
        w = self.mimic_weight if mimic_weight is None else mimic_weight
        return pmimic.MimicConfig(w, self.train_config("real", self.pm_steps, seed))


def _coerce(key, typ, value):
    try:
        if typ in ("tuple", tuple):
            return tuple(int(v) for v in str(value).replace(" ", "").split(",") if v)
        if typ in ("int", int):
            return int(float(value)) if "e" in str(value).lower() else int(value)
        if typ in ("float", float):
            return float(value)
        return str(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None


# ---- paths and markers ---------------------------------------------------------

@dataclass
class SeedTree:
    root: str

    def __post_init__(self):
        for sub in ("houses", "images", "ckpt", "logs", "eval", "stages"):
            os.makedirs(os.path.join(self.root, sub), exist_ok=True)

    def houses(self, domain, split):
        return os.path.join(self.root, "houses", f"{domain}_{split}.bin")

    def images(self, domain):
        return os.path.join(self.root, "images", f"{domain}.bin")

    def ckpt(self, name):
        return os.path.join(self.root, "ckpt", f"{name}.ckpt")

    def log(self, name):
        return os.path.join(self.root, "logs", f"{name}.csv")

    def eval(self, model):
        return os.path.join(self.root, "eval", f"{MODEL_FILES.get(model, model)}.csv")

    def marker(self, stage):
        return os.path.join(self.root, "stages", f"{stage}.done")


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _stage_done(tree, stage, key):
    path = tree.marker(stage)
    if not os.path.exists(path):
        return False
    with open(path) as fh:
        info = json.load(fh)
    if info.get("key") != key:
        return False
    return all(os.path.exists(p) and file_digest(p) == d for p, d in info.get("outputs", {}).items())


def _mark(tree, stage, key, outputs):
    with open(tree.marker(stage), "w") as fh:
        json.dump({"key": key, "outputs": {p: file_digest(p) for p in outputs}}, fh, indent=1)


def read_marker(tree, stage):
    with open(tree.marker(stage)) as fh:
        return json.load(fh)


# ---- pipeline ----------------------------------------------------------------------

@dataclass
class PipelineResult:
    out_dir: str
    config_hash: str
    reports: dict = field(default_factory=dict)  # model -> list of EvalReport (seed order)
    rows: list = field(default_factory=list)  # compare() rows
    executed: list = field(default_factory=list)  # (seed, stage) actually run
    train_steps: int = 0


def house_seeds(house_seed, domain, split, count):
    """Generation seeds for one (domain, split) bank; splits never share a house."""
    rng = np.random.default_rng([house_seed % 2**63, DOMAINS.index(domain), SPLITS.index(split)])
    return [int(s) for s in rng.integers(0, 2**62, count)]


def split_size(cfg, split):
    return {"train": cfg.train_houses, "val": cfg.val_houses, "test": cfg.test_houses}[split]


class _Runner:
    def __init__(self, cfg, seed, resume, result, log=print):
        self.cfg = cfg
        self.seed = seed
        self.resume = resume
        self.result = result
        self.tree = SeedTree(os.path.join(cfg.out_dir, f"seed{seed}"))
        self.hash = cfg.hash()
        self.log = log

    def stage(self, name, outputs, fn, key_extra=""):
        key = f"{self.hash}:{self.seed}:{key_extra}"
        if self.resume and _stage_done(self.tree, name, key):
            return False
        self.log(f"[seed {self.seed}] {name}")
        try:
            fn()
        except NavTransferError as exc:
            raise StageError(name, str(exc)) from exc
        except (OSError, ValueError, KeyError, RuntimeError, FloatingPointError) as exc:
            raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
        _mark(self.tree, name, key, outputs)
        self.result.executed.append((self.seed, name))
        return True

    def houses(self, domain, split):
        return load_houses(self.tree.houses(domain, split))


def run_pipeline(cfg, resume=False, log=print):
    """Run every stage for every seed, then compare the six models on the real test split."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    cfg.write(cfg.out_dir)
    result = PipelineResult(cfg.out_dir, cfg.hash())
    for seed in cfg.seeds:
        run = _Runner(cfg, seed, resume, result, log)
        cfg.write(run.tree.root)
        _run_seed(run)
        for model in MODELS:
            result.reports.setdefault(model, []).append(_load_report(run, model))
    result.rows = evalkit.compare(result.reports)
    evalkit.write_comparison(os.path.join(cfg.out_dir, "table1.csv"), result.rows)
    evalkit.write_aggregate(os.path.join(cfg.out_dir, "aggregate.csv"),
                            [(m, s, r) for m, rs in result.reports.items() for s, r in zip(cfg.seeds, rs)])
    return result


def test_episode_set(cfg, houses):
    return evalkit.make_episode_set(houses, cfg.episodes_per_house, seed=cfg.house_seed,
                                    max_steps=cfg.eval_max_steps)


def _read_report(run, path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    records = [evalkit.EpisodeRecord(int(r["episode_id"]), bool(int(r["success"])), float(r["path_len"]),
                                     float(r["shortest_len"]), int(r["steps"])) for r in rows]
    houses = run.houses("real", "test")
    return evalkit.EvalReport(records, run.seed, test_episode_set(run.cfg, houses).ident)


def _load_report(run, model):
    return _read_report(run, run.tree.eval(model))


def _run_seed(run):
    cfg, t, seed = run.cfg, run.tree, run.seed

    for domain in DOMAINS:
        for split in SPLITS:
            path = t.houses(domain, split)
            run.stage(f"houses-{domain}-{split}", [path],
                      lambda d=domain, s=split, p=path: save_houses(p, [generate_house(d, k)
                                                                        for k in house_seeds(cfg.house_seed, d, s, split_size(cfg, s))]))

    def train(domain, steps, name):
        def fn():
            tc = cfg.train_config(domain, steps, seed)
            rl.train_baseline(tc, run.houses(domain, "train"), run.houses(domain, "val"), out=t.ckpt(name),
                              log_path=t.log(name))
            run.result.train_steps += steps
        return fn

    run.stage("train-sim", [t.ckpt("sim"), t.log("sim")], train("synthetic", cfg.sim_steps, "sim"))
    run.stage("train-real", [t.ckpt("real"), t.log("real")], train("real", cfg.real_steps, "real"))

    def finetune():
        tc = cfg.train_config("real", cfg.ft_steps, seed)
        rl.finetune(t.ckpt("sim"), run.houses("real", "train"), tc, run.houses("real", "val"), out=t.ckpt("ft"),
                    log_path=t.log("ft"))
        run.result.train_steps += cfg.ft_steps

    run.stage("finetune", [t.ckpt("ft"), t.log("ft")], finetune, key_extra=file_digest(t.ckpt("sim")))

    for domain in DOMAINS:
        path = t.images(domain)
        run.stage(f"images-{domain}", [path],
                  lambda d=domain, p=path: save_images(p, sample_images(d, cfg.images, seed,
                                                                        houses=run.houses(d, "train"))))

    def adapt():
        fadapt.adapt(t.ckpt("sim"), load_images(t.images("synthetic")), load_images(t.images("real")),
                     cfg.adapt_config(seed), out=t.ckpt("fa"), log_path=t.log("fa"))

    run.stage("adapt", [t.ckpt("fa"), t.log("fa")], adapt, key_extra=file_digest(t.ckpt("sim")))

    def mimic(mr_name, out_name):
        def fn():
            pmimic.mimic_train(t.ckpt(mr_name), t.ckpt("sim"), run.houses("real", "train"), cfg.mimic_config(seed),
                               run.houses("real", "val"), out=t.ckpt(out_name), log_path=t.log(out_name))
            run.result.train_steps += cfg.pm_steps
        return fn

    run.stage("mimic-fa", [t.ckpt("fa_pm"), t.log("fa_pm")], mimic("fa", "fa_pm"),
              key_extra=file_digest(t.ckpt("fa")))
    run.stage("mimic-sim", [t.ckpt("sim_pm"), t.log("sim_pm")], mimic("sim", "sim_pm"),
              key_extra=file_digest(t.ckpt("sim")))

    for model in MODELS:
        ck = t.ckpt(MODEL_FILES[model])
        run.stage(f"eval-{MODEL_FILES[model]}", [t.eval(model)],
                  lambda c=ck, m=model: evaluate_checkpoint(c, run.houses("real", "test"), cfg, seed, t.eval(m)),
                  key_extra=file_digest(ck))


def evaluate_checkpoint(path, houses, cfg, seed, out_csv):
    params, _ = load_checkpoint(path)
    rep = evalkit.evaluate(params, houses, test_episode_set(cfg, houses), seed=seed)
    rep.to_csv(out_csv)
    return rep


# ---- sweeps ---------------------------------------------------------------------------

@dataclass
class SweepSpec:
    param: str
    values: tuple
    seeds: tuple = None  # defaults to the base config's seeds

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {self.param!r}")
        self.values = tuple(float(v) for v in self.values)
        if len(set(self.values)) != len(self.values):
            raise ConfigError("sweep values must be distinct")
        if any(v < 0 for v in self.values):
            raise ConfigError("sweep values must be >= 0")


def sweep(spec, base, resume=True, log=print):
    """Vary one weight, reusing the base pipeline's upstream checkpoints.

    Returns ``{value: [EvalReport per seed]}`` and writes
    ``sweep_<param>.csv`` and ``sweep_<param>_summary.csv`` under ``base.out_dir``.
    """
    seeds = tuple(spec.seeds) if spec.seeds else base.seeds
    cfg = PipelineConfig(**{**{f.name: getattr(base, f.name) for f in fields(base)}, "seeds": seeds})
    run_pipeline(cfg, resume=resume, log=log)
    base_value = getattr(cfg, spec.param)
    out = {}
    result = PipelineResult(cfg.out_dir, cfg.hash())
    for seed in seeds:
        run = _Runner(cfg, seed, True, result, log)
        t = run.tree
        for value in spec.values:
            if value == base_value:
                model = "sim+FA" if spec.param == "idt_weight" else "sim+FA+PM"
                out.setdefault(value, []).append(_load_report(run, model))
                continue
            tag = f"{spec.param}={value:g}"
            ck = t.ckpt(f"sweep_{tag}")
            ev = os.path.join(t.root, "eval", f"sweep_{tag}.csv")
            if spec.param == "idt_weight":
                fn = lambda v=value, c=ck: fadapt.adapt(
                    t.ckpt("sim"), load_images(t.images("synthetic")), load_images(t.images("real")),
                    cfg.adapt_config(seed, idt_weight=v), out=c, log_path=t.log(f"sweep_{tag}"))
                upstream = file_digest(t.ckpt("sim"))
            else:
                fn = lambda v=value, c=ck: pmimic.mimic_train(
                    t.ckpt("fa"), t.ckpt("sim"), run.houses("real", "train"), cfg.mimic_config(seed, v),
                    run.houses("real", "val"), out=c, log_path=t.log(f"sweep_{tag}"))
                upstream = file_digest(t.ckpt("fa"))
            run.stage(f"sweep-{tag}", [ck], fn, key_extra=upstream)
            run.stage(f"sweep-eval-{tag}", [ev],
                      lambda c=ck, e=ev: evaluate_checkpoint(c, run.houses("real", "test"), cfg, seed, e),
                      key_extra=file_digest(ck))
            out.setdefault(value, []).append(_read_report(run, ev))
    path = os.path.join(cfg.out_dir, f"sweep_{spec.param}.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param_value", "seed", "success_rate", "spl"])
        for value in spec.values:
            for seed, rep in zip(seeds, out[value]):
                w.writerow([f"{value:g}", seed, f"{rep.success_rate:.4f}", f"{rep.spl:.4f}"])
    rows = evalkit.compare({f"{spec.param}={v:g}": out[v] for v in spec.values})
    evalkit.write_comparison(os.path.join(cfg.out_dir, f"sweep_{spec.param}_summary.csv"), rows)
    return out
