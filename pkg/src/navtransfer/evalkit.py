"""Success rate / SPL evaluation, cross-seed comparison tables, and conv heatmaps."""

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import agent
from .errors import ComparisonError, ConfigError
from .indoorworld import AgentPose, EpisodeSpec, VecEnv, sample_episode, shortest_path_length


@dataclass
class EpisodeRecord:
    episode_id: int
    success: bool
    path_len: float
    shortest_len: float
    steps: int


@dataclass
class EvalReport:
    records: list
    seed: int = 0
    episode_set_id: str = ""

    @property
    def success_rate(self):
        return success_rate(self.records)

    @property
    def spl(self):
        return spl(self.records)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode_id", "success", "path_len", "shortest_len", "steps"])
            for r in sorted(self.records, key=lambda r: r.episode_id):
                w.writerow([r.episode_id, int(r.success), f"{r.path_len:.6f}", f"{r.shortest_len:.6f}", r.steps])


def success_rate(records):
    if not records:
        return 0.0
    return 100.0 * sum(bool(r.success) for r in records) / len(records)


def spl(records):
    """Success weighted by normalized inverse path length, as a percentage."""
    if not records:
        return 0.0
    total = 0.0
    for r in records:
        if r.success:
            total += r.shortest_len / max(r.path_len, r.shortest_len)
    return 100.0 * total / len(records)


# ---- episode sets -------------------------------------------------------------

@dataclass
class EpisodeSet:
    episodes: list  # EpisodeSpec
    shortest: list = field(default_factory=list)  # l_i per episode, meters
    ident: str = ""

    def __len__(self):
        return len(self.episodes)


def make_episode_set(houses, per_house=10, seed=0, max_steps=500):
    """``per_house`` episodes for every house, with geodesic lengths precomputed."""
    rng = np.random.default_rng([seed % 2**63, 4099])
    episodes, shortest = [], []
    for hi, house in enumerate(houses):
        for _ in range(per_house):
            spec = sample_episode(houses, rng, max_steps=max_steps, house_index=hi)
            episodes.append(spec)
            shortest.append(shortest_path_length(house, spec.start, spec.goal))
    ident = f"{len(houses)}x{per_house}:{seed}:{max_steps}"
    return EpisodeSet(episodes, shortest, ident)


def save_episode_set(path, eps, houses_path=None):
    data = dict(ident=eps.ident, houses=houses_path, episodes=[
        dict(house=e.house_index, x=e.start.x, y=e.start.y, heading=e.start.heading,
             goal=e.goal, max_steps=e.max_steps, shortest=l)
        for e, l in zip(eps.episodes, eps.shortest)])
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1)


def load_episode_set(path):
    with open(path) as fh:
        data = json.load(fh)
    episodes = [EpisodeSpec(e["house"], AgentPose(e["x"], e["y"], e["heading"]), e["goal"], e["max_steps"])
                for e in data["episodes"]]
    return EpisodeSet(episodes, [e["shortest"] for e in data["episodes"]], data["ident"]), data.get("houses")


# ---- evaluation -------------------------------------------------------------

def evaluate(params, houses, episode_set, seed=0, batch=64, style=None):
    """Greedy rollouts of every episode; returns an :class:`EvalReport`.

    Episodes run in parallel slots; ties in the argmax go to the lowest action.
    """
    cfg = agent.infer_config(params)
    for e in episode_set.episodes:
        if not 0 <= e.goal < cfg.n_goals:
            raise ConfigError(f"episode goal {e.goal} outside the model's goal vocabulary")
    consts = params.constants()
    queue = list(range(len(episode_set)))[::-1]
    slot_ep = {}

    def reset_fn(slot):
        if not queue:
            slot_ep[slot] = None
            return None
        i = queue.pop()
        slot_ep[slot] = i
        return episode_set.episodes[i]

    n = min(batch, len(episode_set))
    env = VecEnv(houses, n, reset_fn, style=style)
    h = agent.zero_state(n, cfg)
    records = {}
    while env.active.any():
        imgs = env.observe()
        feats = agent.encode(consts, imgs, cfg)
        probs, _, h, logits = agent.act(consts, feats, env.goals(), h, cfg)
        actions = np.argmax(logits, axis=1)
        ids = dict(slot_ep)
        _, dones, infos = env.step(actions)
        for k in np.nonzero(dones)[0]:
            i = ids[k]
            info = infos[k]
            records[i] = EpisodeRecord(i, info["success"], info["path_len"], episode_set.shortest[i], info["steps"])
            h[k] = 0
    return EvalReport([records[i] for i in sorted(records)], seed, episode_set.ident)


# ---- comparison -------------------------------------------------------------

def mean_std(values):
    v = np.asarray(values, dtype=np.float64)
    if v.size <= 1:
        return float(v.mean()) if v.size else 0.0, 0.0
    return float(v.mean()), float(v.std(ddof=1))


def compare(reports):
    """``reports``: model label -> list of per-seed EvalReports over one episode set.

    Returns rows ``(label, n_seeds, success_mean, success_std, spl_mean, spl_std)``.
    """
    idents = {r.episode_set_id for rs in reports.values() for r in rs}
    if len(idents) > 1:
        raise ComparisonError(f"reports span different episode sets: {sorted(idents)}")
    rows = []
    for label, rs in reports.items():
        sm, ss = mean_std([r.success_rate for r in rs])
        pm, ps = mean_std([r.spl for r in rs])
        rows.append((label, len(rs), sm, ss, pm, ps))
    return rows


def write_comparison(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "seeds", "success_rate", "success_std", "spl", "spl_std"])
        for label, n, sm, ss, pm, ps in rows:
            w.writerow([label, n, f"{sm:.2f}", f"{ss:.2f}", f"{pm:.2f}", f"{ps:.2f}"])


def format_table(rows):
    lines = [f"{'method':<14} {'% success rate':>18} {'% SPL':>18}"]
    for label, _, sm, ss, pm, ps in rows:
        lines.append(f"{label:<14} {sm:8.2f}% +- {ss:5.2f}% {pm:8.2f}% +- {ps:5.2f}%")
    return "\n".join(lines)


def write_aggregate(path, rows):
    """``rows``: iterable of (model, seed, EvalReport)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "seed", "success_rate", "spl"])
        for model, seed, rep in rows:
            w.writerow([model, seed, f"{rep.success_rate:.4f}", f"{rep.spl:.4f}"])


# ---- heatmaps -------------------------------------------------------------------

def heatmap(params, image):
    """Mean |activation| of the last conv layer per spatial cell, min-max scaled to [0, 1]."""
    cfg = agent.infer_config(params)
    act = agent.encode_var(params.constants(), np.asarray(image)[None], cfg, upto=cfg.last_conv_index).value[0]
    m = np.abs(act).mean(axis=-1).astype(np.float64)
    span = m.max() - m.min()
    if span < 1e-12:
        return np.zeros_like(m)
    return (m - m.min()) / span


def write_pgm(path, grid):
    """Binary portable graymap (P5), 8-bit."""
    g = np.clip(np.round(np.asarray(grid) * 255), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{g.shape[1]} {g.shape[0]}\n255\n".encode("ascii"))
        fh.write(g.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def report_dict(rep):
    return dict(success_rate=rep.success_rate, spl=rep.spl, records=[asdict(r) for r in rep.records])
