"""Command-line harness: train, eval, sweep, plot, export-actions."""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import autodiff as ad
from .algos import evaluate, load_actor, make_actor, train
from .config import (ALGORITHMS, ENVIRONMENTS, MODES, ROUTER_TO_ALGO, ROUTERS,
                     RunConfig, load_config, parse_config, serialize_config)
from .envs import make_env
from .errors import ConfigError, DomainError, TrainingError, UsageError
from .metrics import (auc, eval_curve, plot_learning_curves, read_metrics,
                      routing_probability_trace, write_csv)


def _int_tuple(text):
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad layer list {text!r}") from None


def _add_run_flags(parser):
    parser.add_argument("--config", metavar="PATH", help="config file to start from")
    parser.add_argument("--seed", type=int, help="training seed")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--algo", choices=ALGORITHMS, help="algorithm tag")
    parser.add_argument("--k", type=int, help="number of primitives")
    parser.add_argument("--alpha", type=float, help="entropy temperature")
    parser.add_argument("--mode", choices=MODES, help="primitive loss mode")
    parser.add_argument("--router", choices=ROUTERS,
                        help="router variant for the off-policy family")
    parser.add_argument("--obs-noise", type=float, dest="obs_noise",
                        help="observation noise sigma used by eval")
    parser.add_argument("--fixed-layout", action="store_true", default=None,
                        dest="fixed_layout", help="freeze target and obstacles")
    parser.add_argument("--env", choices=ENVIRONMENTS, help="environment name")
    parser.add_argument("--steps", type=int, help="total environment steps")
    parser.add_argument("--batch", type=int, help="minibatch size")
    parser.add_argument("--warmup", type=int, help="random warmup steps")
    parser.add_argument("--hidden", type=_int_tuple,
                        help="hidden widths for actor and critic, e.g. 64,64")
    parser.add_argument("--horizon", type=int, help="environment horizon")
    parser.add_argument("--n-obstacles", type=int, dest="n_obstacles")
    parser.add_argument("--eval-interval", type=int, dest="eval_interval")
    parser.add_argument("--eval-episodes", type=int, dest="eval_episodes")
    parser.add_argument("--loss-interval", type=int, dest="loss_interval")
    parser.add_argument("--checkpoint-interval", type=int,
                        dest="checkpoint_interval")


def _resolve_config(args) -> RunConfig:
    algo = args.algo
    if args.router is not None:
        routed = ROUTER_TO_ALGO[args.router]
        if algo == "pmoe-ppo" and args.router != "freq":
            raise ConfigError("the on-policy trainer supports only the freq router")
        if algo in (None, "pmoe-sac") or algo in ROUTER_TO_ALGO.values():
            algo = routed
    if args.config:
        config = load_config(args.config)
        if algo is not None:
            config.trainer.algo = algo
    else:
        config = RunConfig.defaults(algo or "pmoe-sac", env=args.env or "reach")
    trainer_flags = {"seed": "seed", "k": "k", "alpha": "alpha", "mode": "mode",
                     "steps": "total_steps", "batch": "batch_size",
                     "warmup": "warmup_steps"}
    for flag, field in trainer_flags.items():
        value = getattr(args, flag)
        if value is not None:
            setattr(config.trainer, field, value)
    if args.hidden is not None:
        config.trainer.hidden_actor = args.hidden
        config.trainer.hidden_critic = args.hidden
    run_flags = {"env": "env", "horizon": "horizon", "n_obstacles": "n_obstacles",
                 "fixed_layout": "fixed_layout", "eval_interval": "eval_interval",
                 "eval_episodes": "eval_episodes", "loss_interval": "loss_interval",
                 "checkpoint_interval": "checkpoint_interval", "out": "out_dir"}
    for flag, field in run_flags.items():
        value = getattr(args, flag)
        if value is not None:
            setattr(config, field, value)
    if args.obs_noise is not None:
        config.obs_noise = (args.obs_noise,)
    config.validate()
    return config


def _default_out(config: RunConfig) -> str:
    return os.path.join("runs",
                        f"{config.trainer.algo}_seed{config.trainer.seed}")


def _run_summary(result) -> dict:
    summary = {"algo": result.config.trainer.algo,
               "seed": result.config.trainer.seed,
               "env_steps": result.env_steps, "updates": result.updates,
               "out_dir": result.config.out_dir}
    if result.final_eval is not None:
        summary.update(mean_return=result.final_eval.mean_return,
                       std_return=result.final_eval.std_return,
                       success_rate=result.final_eval.success_rate)
    return summary


def _plot_own_curve(out_dir):
    path = os.path.join(out_dir, "metrics.jsonl")
    header, rows = read_metrics(path)
    steps, values = eval_curve(rows)
    if steps.size >= 2:
        label = f"{header.get('algo', 'run')} seed {header.get('seed', '?')}"
        plot_learning_curves([(label, steps, values)],
                             os.path.join(out_dir, "curves.svg"))


def cmd_train(args) -> int:
    config = _resolve_config(args)
    if not config.out_dir:
        config.out_dir = _default_out(config)
    result = train(config)
    _plot_own_curve(config.out_dir)
    print(json.dumps(_run_summary(result), sort_keys=True))
    return 0


def _sweep_worker(text: str) -> dict:
    config = parse_config(text)
    result = train(config)
    return _run_summary(result)


def cmd_sweep(args) -> int:
    base = _resolve_config(args)
    root = base.out_dir or _default_out(base)
    texts = []
    for seed in range(args.seeds):
        config = parse_config(serialize_config(base))
        config.trainer.seed = seed
        config.out_dir = os.path.join(root, f"seed_{seed}")
        texts.append(serialize_config(config))
    if args.workers and args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            summaries = list(pool.map(_sweep_worker, texts))
    else:
        summaries = [_sweep_worker(text) for text in texts]
    for summary in summaries:
        print(json.dumps(summary, sort_keys=True))
    return 0


def _latest_checkpoint(out_dir) -> str:
    paths = glob.glob(os.path.join(out_dir, "checkpoint_*.bin"))
    if not paths:
        raise UsageError(f"no checkpoint files under {out_dir}")
    return max(paths, key=lambda p: int(
        os.path.basename(p)[len("checkpoint_"):-len(".bin")]))


def _load_run(out_dir):
    config = load_config(os.path.join(out_dir, "config.cfg"))
    actor = load_actor(config, _latest_checkpoint(out_dir))
    return config, actor


def cmd_eval(args) -> int:
    if not args.out:
        raise UsageError("eval requires --out RUN_DIR")
    config, actor = _load_run(args.out)
    sigma = args.obs_noise if args.obs_noise is not None else config.obs_noise[0]
    episodes = args.eval_episodes or config.eval_episodes
    seed = args.seed if args.seed is not None else 0
    env = make_env(config.env, n_obstacles=config.n_obstacles,
                   horizon=config.horizon, fixed_layout=config.fixed_layout,
                   seed=seed)
    result = evaluate(actor, env, episodes, obs_noise_sigma=sigma, seed=seed)
    print(json.dumps({"mean_return": result.mean_return,
                      "std_return": result.std_return,
                      "success_rate": result.success_rate,
                      "obs_noise": sigma, "episodes": episodes},
                     sort_keys=True))
    return 0


def cmd_plot(args) -> int:
    curves = []
    for spec in args.runs:
        path = spec if spec.endswith(".jsonl") else os.path.join(spec,
                                                                 "metrics.jsonl")
        header, rows = read_metrics(path)
        steps, values = eval_curve(rows)
        label = f"{header.get('algo', 'run')} seed {header.get('seed', '?')}"
        curves.append((label, steps, values))
    if not curves:
        raise UsageError("plot needs at least one metrics file")
    plot_learning_curves(curves, args.out or "curves.svg")
    reference = curves[0]
    for label, steps, values in curves:
        try:
            pct = auc((steps, values), (reference[1], reference[2]))
            print(f"AUC {label}: {pct:.1f}%")
        except UsageError as exc:
            print(f"AUC {label}: n/a ({exc})")
    return 0


def cmd_export_actions(args) -> int:
    if not args.out:
        raise UsageError("export-actions requires --out RUN_DIR")
    config, actor = _load_run(args.out)
    seed = args.seed if args.seed is not None else 0
    env = make_env(config.env, n_obstacles=config.n_obstacles,
                   horizon=config.horizon, fixed_layout=config.fixed_layout,
                   seed=seed)
    rng = ad.init_rng(seed, "export")
    episodes = args.eval_episodes or 10
    k, act_dim = actor.k, env.act_dim
    rows = []
    for _ in range(episodes):
        obs, done = env.reset(), False
        while not done:
            means = actor.primitive_means(obs[None, :])[0] * actor.action_scale
            action, component = actor.export_sample(obs, rng)
            rows.append([*obs, *means.reshape(k * act_dim), component])
            step = env.step(action * actor.action_scale)
            obs, done = step.observation, step.done
    header = ([f"s{i}" for i in range(env.obs_dim)]
              + [f"mu{i}_{j}" for i in range(k) for j in range(act_dim)]
              + ["component"])
    write_csv(os.path.join(args.out, "actions_dump.csv"), header, rows)

    trace_env = make_env(config.env, n_obstacles=config.n_obstacles,
                         horizon=config.horizon,
                         fixed_layout=config.fixed_layout, seed=seed)
    trace = routing_probability_trace(actor, trace_env,
                                      ad.init_rng(seed, "trace"), episodes=1)
    write_csv(os.path.join(args.out, "routing_trace.csv"),
              [f"w{i}" for i in range(k)], trace.tolist())
    print(json.dumps({"rows": len(rows),
                      "actions_dump": os.path.join(args.out, "actions_dump.csv"),
                      "routing_trace": os.path.join(args.out,
                                                    "routing_trace.csv")},
                     sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmoe",
        description="Gaussian-mixture policy training and analysis harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one seeded trainer")
    _add_run_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="run a seed sweep of one config")
    _add_run_flags(p_sweep)
    p_sweep.add_argument("--seeds", type=int, default=5,
                         help="number of seeds, 0..N-1")
    p_sweep.add_argument("--workers", type=int, default=1,
                         help="parallel trainer processes")
    p_sweep.set_defaults(func=cmd_sweep)

    p_eval = sub.add_parser("eval", help="evaluate a stored checkpoint")
    _add_run_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_plot = sub.add_parser("plot", help="render learning curves to SVG")
    p_plot.add_argument("runs", nargs="+",
                        help="run directories or metrics.jsonl files")
    p_plot.add_argument("--out", metavar="SVG", help="output SVG path")
    p_plot.set_defaults(func=cmd_plot)

    p_export = sub.add_parser("export-actions",
                              help="dump per-state primitive actions")
    _add_run_flags(p_export)
    p_export.set_defaults(func=cmd_export_actions)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
