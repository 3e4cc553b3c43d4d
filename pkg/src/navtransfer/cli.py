"""Command line entry point: ``navtransfer <subcommand> ...``."""

import argparse
import os
import sys

from . import evalkit, fadapt, harness, pmimic, rl
from .errors import NavTransferError, StageError
from .indoorworld import canonical_domain, generate_house, load_houses, load_images, sample_images, save_houses
from .indoorworld import save_images
from .nncore import load_checkpoint


def _base_config(args):
    overrides = dict(kv.split("=", 1) for kv in (args.set or []))
    overrides = {k.strip(): v.strip() for k, v in overrides.items()}
    if getattr(args, "config", None):
        return harness.PipelineConfig.load(args.config, overrides)
    return harness.PipelineConfig.from_strings(overrides)


def cmd_gen_houses(args):
    domain = canonical_domain(args.domain)
    seeds = harness.house_seeds(args.seed, domain, args.split, args.count)
    save_houses(args.out, [generate_house(domain, s) for s in seeds])
    print(f"wrote {args.count} {domain} houses to {args.out}")


def cmd_sample_images(args):
    houses = load_houses(args.houses) if args.houses else None
    images = sample_images(args.domain, args.count, args.seed, houses=houses)
    save_images(args.out, images)
    print(f"wrote {len(images)} images to {args.out}")


def _train_config(args, domain):
    base = _base_config(args)
    tc = base.train_config(domain, args.steps if args.steps is not None else base.sim_steps, args.seed)
    return rl.with_overrides(tc, workers=args.workers)


def cmd_train(args):
    domain = canonical_domain(args.domain)
    tc = _train_config(args, domain)
    houses = load_houses(args.houses)
    val = load_houses(args.val_houses) if args.val_houses else None
    if args.from_ckpt:
        _, log = rl.finetune(args.from_ckpt, houses, tc, val, out=args.out, log_path=args.log)
    else:
        _, log = rl.train_baseline(tc, houses, val, out=args.out, log_path=args.log)
    if log.final is not None:
        print(f"steps {log.final.steps} success {log.final.success_rate:.2f}%")


def cmd_adapt(args):
    cfg = fadapt.AdaptConfig(idt_weight=args.idt, norm_weight=args.norm, iters=args.iters, batch=args.batch,
                             seed=args.seed, lr=args.lr, encoder_lr=args.encoder_lr)
    _, _, records = fadapt.adapt(args.ms, load_images(args.sim_images), load_images(args.real_images), cfg,
                                 out=args.out, log_path=args.log)
    if records:
        r = records[-1]
        print(f"iter {r.iter} l_cls {r.l_cls:.4f} l_adv {r.l_adv:.4f} l_idt {r.l_idt:.4f}")


def cmd_mimic(args):
    base = _base_config(args)
    tc = base.train_config("real", args.steps if args.steps is not None else base.pm_steps, args.seed)
    tc = rl.with_overrides(tc, workers=args.workers)
    mc = pmimic.MimicConfig(args.mimic_lambda, tc)
    val = load_houses(args.val_houses) if args.val_houses else None
    _, log = pmimic.mimic_train(args.mr, args.teacher, load_houses(args.houses), mc, val, out=args.out,
                                log_path=args.log)
    if log.final is not None:
        print(f"steps {log.final.steps} success {log.final.success_rate:.2f}%")


def cmd_make_episodes(args):
    houses = load_houses(args.houses)
    eps = evalkit.make_episode_set(houses, args.per_house, seed=args.seed, max_steps=args.max_steps)
    evalkit.save_episode_set(args.out, eps, houses_path=os.path.abspath(args.houses))
    print(f"wrote {len(eps)} episodes to {args.out}")


def cmd_eval(args):
    eps, houses_path = evalkit.load_episode_set(args.episodes)
    houses = load_houses(args.houses or houses_path)
    params, _ = load_checkpoint(args.model)
    rep = evalkit.evaluate(params, houses, eps, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    rep.to_csv(os.path.join(args.out, "episodes.csv"))
    name = os.path.splitext(os.path.basename(args.model))[0]
    evalkit.write_aggregate(os.path.join(args.out, "aggregate.csv"), [(name, args.seed, rep)])
    print(f"success {rep.success_rate:.2f}% spl {rep.spl:.2f}%")


def cmd_heatmap(args):
    params, _ = load_checkpoint(args.model)
    images = load_images(args.image_bank)
    grid = evalkit.heatmap(params, images[args.index])
    evalkit.write_pgm(args.out, grid)
    print(f"wrote {grid.shape[1]}x{grid.shape[0]} heatmap to {args.out}")


def cmd_pipeline(args):
    cfg = _base_config(args)
    res = harness.run_pipeline(cfg, resume=args.resume)
    print(evalkit.format_table(res.rows))
    print(f"config hash {res.config_hash}; outputs in {cfg.out_dir}")


def cmd_sweep(args):
    cfg = _base_config(args)
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else None
    spec = harness.SweepSpec(args.param, tuple(float(v) for v in args.values.split(",")), seeds)
    out = harness.sweep(spec, cfg)
    rows = evalkit.compare({f"{spec.param}={v:g}": out[v] for v in spec.values})
    print(evalkit.format_table(rows))


def build_parser():
    p = argparse.ArgumentParser(prog="navtransfer", description="Synthetic-to-real transfer for room navigation.")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="key = value pipeline config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    sp = sub.add_parser("gen-houses", help="generate a house bank")
    sp.add_argument("--domain", required=True)
    sp.add_argument("--split", choices=harness.SPLITS, default="train")
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_gen_houses)

    sp = sub.add_parser("sample-images", help="render an image bank from random poses")
    sp.add_argument("--domain", required=True)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--houses", help="house bank (default: fresh training houses)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_sample_images)

    sp = sub.add_parser("train", help="actor-critic training from scratch or from a checkpoint")
    sp.add_argument("--domain", required=True)
    sp.add_argument("--from", dest="from_ckpt", help="checkpoint to fine-tune")
    sp.add_argument("--houses", required=True, help="training house bank")
    sp.add_argument("--val-houses", help="validation house bank for the log")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--log")
    with_config(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("adapt", help="adversarial feature adaptation of the encoder")
    sp.add_argument("--ms", required=True, help="synthetic baseline checkpoint")
    sp.add_argument("--sim-images", required=True)
    sp.add_argument("--real-images", required=True)
    sp.add_argument("--idt", type=float, default=5e-4)
    sp.add_argument("--norm", type=float, default=1e-4)
    sp.add_argument("--lr", type=float, default=1e-4, help="discriminator learning rate")
    sp.add_argument("--encoder-lr", type=float, default=1e-5, help="encoder learning rate")
    sp.add_argument("--iters", type=int, default=1000)
    sp.add_argument("--batch", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--log")
    sp.set_defaults(fn=cmd_adapt)

    sp = sub.add_parser("mimic", help="policy mimic in the real domain")
    sp.add_argument("--mr", required=True, help="checkpoint whose encoder is used (adapted or not)")
    sp.add_argument("--teacher", required=True, help="synthetic baseline checkpoint")
    sp.add_argument("--houses", required=True)
    sp.add_argument("--val-houses")
    sp.add_argument("--lambda", dest="mimic_lambda", type=float, default=pmimic.MIMIC_WEIGHT)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--log")
    with_config(sp)
    sp.set_defaults(fn=cmd_mimic)

    sp = sub.add_parser("make-episodes", help="fix an evaluation episode set")
    sp.add_argument("--houses", required=True)
    sp.add_argument("--per-house", type=int, default=10)
    sp.add_argument("--max-steps", type=int, default=500)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_make_episodes)

    sp = sub.add_parser("eval", help="greedy evaluation on an episode set")
    sp.add_argument("--model", required=True)
    sp.add_argument("--episodes", required=True)
    sp.add_argument("--houses", help="override the house bank recorded in the episode file")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("heatmap", help="last-conv activation map as a PGM file")
    sp.add_argument("--model", required=True)
    sp.add_argument("--image-bank", required=True)
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_heatmap)

    sp = sub.add_parser("pipeline", help="run every stage for every seed")
    with_config(sp)
    sp.add_argument("--resume", action="store_true", help="skip stages whose outputs are complete")
    sp.set_defaults(fn=cmd_pipeline)

    sp = sub.add_parser("sweep", help="ablation over the identity or mimic weight")
    with_config(sp)
    sp.add_argument("--param", required=True, choices=harness.SWEEP_PARAMS)
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.add_argument("--seeds", help="comma-separated seeds (default: config seeds)")
    sp.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NavTransferError as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
