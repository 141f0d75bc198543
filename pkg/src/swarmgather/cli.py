"""Command-line experiment harness: train, discover, evaluate, bench, render.

Every flag can also come from a SWARMGATHER_-prefixed environment variable
(SWARMGATHER_SEED, SWARMGATHER_OUT, ...); explicit flags win.  All randomness
descends from the single --seed through one root generator that each command
consumes in a fixed documented order (initial-state draws, then parameter
init and rollouts, then evaluation draws), so runs reproduce bit for bit.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .config import (
    ConfigError,
    RunConfig,
    UnknownExperiment,
    experiment_preset,
    load_run_config,
)
from .discovery import (
    DiscoveryFailure,
    PatternVerdict,
    evaluate_chain,
    load_chain,
    run_discovery,
    save_chain,
)
from .env import InitialConfig, reset
from .nn import save_checkpoint
from .ppo import METRICS_FIELDS, NonFiniteLoss, train_policy
from .render import ParseFailure, render_snapshots, write_trajectories

BENCH_FIELDS = ("experiment", "seed", "steps_base", "steps_aux", "steps_total",
                "success_rate", "collisions")


class MissingCheckpoint(Exception):
    pass


def _env(name: str, fallback=None):
    return os.environ.get("SWARMGATHER_" + name, fallback)


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _fail(message: str, code: int) -> int:
    print(f"swarmgather: error: {message}", file=sys.stderr)
    return code


def _add_common(parser: argparse.ArgumentParser, episodes_default=None) -> None:
    parser.add_argument("--config", default=_env("CONFIG"),
                        help="path to a YAML run configuration")
    parser.add_argument("--experiment", default=_env("EXPERIMENT"),
                        help="built-in experiment id (A-F)")
    parser.add_argument("--seed", type=int, default=int(_env("SEED", 0)),
                        help="root random seed (default 0)")
    parser.add_argument("--out", default=_env("OUT", "out"),
                        help="output directory (default ./out)")
    env_episodes = _env("EPISODES")
    parser.add_argument("--episodes", type=int,
                        default=int(env_episodes) if env_episodes is not None
                        else episodes_default,
                        help="number of evaluation episodes")
    parser.add_argument("--quiet", action="store_true",
                        default=bool(_env("QUIET")))


def _resolve_config(args) -> RunConfig:
    if args.experiment and args.config:
        raise ConfigError("pass either --experiment or --config, not both")
    if args.experiment:
        return experiment_preset(args.experiment, seed=args.seed)
    if args.config:
        return load_run_config(args.config, seed=args.seed)
    raise ConfigError("one of --experiment or --config is required")


def _write_metrics_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _verdict_payload(verdict: PatternVerdict) -> dict:
    return {
        "valid": verdict.valid,
        "episodes": [
            {
                "collision_free": rep.collision_free,
                "goal": rep.goal,
                "steps_per_phase": rep.steps_per_phase,
                "steps_base": rep.steps_base,
                "steps_aux": rep.steps_aux,
                "steps_total": rep.steps_total,
                "phase_final_signals": rep.phase_final_signals,
            }
            for rep in verdict.episodes
        ],
    }


def _write_verdict(path: str, verdict: PatternVerdict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_verdict_payload(verdict), fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train(args) -> int:
    rc = _resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    sigma = []
    for _ in range(rc.discovery.sigma_size):
        seed = int(rng.integers(np.iinfo(np.int64).max))
        sigma.append(reset(InitialConfig(rc.init.kind, rc.init.epsilon, seed), rc.swarm))
    try:
        result = train_policy(sigma, rc.hp, rc.swarm, rc.mode, rng, weights=rc.weights)
    except NonFiniteLoss as exc:
        return _fail(f"training diverged: {exc}", 1)
    ckpt_path = os.path.join(args.out, "checkpoint.ckpt")
    save_checkpoint(ckpt_path, result.policy, result.value_net,
                    result.policy_adam, result.value_adam)
    _write_metrics_csv(os.path.join(args.out, "metrics.csv"), result.metrics)
    _say(args, f"trained {rc.hp.epochs} epochs; harvested {len(result.sigma_star)} "
               f"of {len(sigma)} final states; checkpoint at {ckpt_path}")
    return 0


def cmd_discover(args) -> int:
    rc = _resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    try:
        result = run_discovery(
            rc.init, rc.hp, rc.swarm, rc.mode, rng,
            schedule=rc.discovery.schedule,
            sigma_size=rc.discovery.sigma_size,
            max_chain=rc.discovery.max_chain,
            eval_episodes=args.episodes or rc.discovery.eval_episodes,
            weights=rc.weights, goal=rc.goal, switch=rc.discovery.switch)
    except DiscoveryFailure as exc:
        return _fail(f"discovery failed ({exc.reason}): {exc}", 3)
    except NonFiniteLoss as exc:
        return _fail(f"training diverged: {exc}", 1)
    save_chain(os.path.join(args.out, "chain"), result.chain)
    _write_verdict(os.path.join(args.out, "verdict.json"), result.verdict)
    write_trajectories(os.path.join(args.out, "trajectories.jsonl"),
                       result.verdict.trajectories, rc.swarm, rc.mode)
    for i, metrics in enumerate(result.run_metrics):
        _write_metrics_csv(os.path.join(args.out, f"metrics_run_{i}.csv"), metrics)
    steps = [rep.steps_total for rep in result.verdict.episodes]
    _say(args, f"discovered a {len(result.chain)}-policy chain; "
               f"mean evaluation steps {np.mean(steps):.1f}; outputs in {args.out}")
    return 0


def _load_chain_or_fail(path: str):
    if not os.path.exists(os.path.join(path, "chain.json")):
        raise MissingCheckpoint(f"no chain bundle at {path}")
    return load_chain(path)


def cmd_evaluate(args) -> int:
    rc = _resolve_config(args)
    chain = _load_chain_or_fail(args.chain)
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    episodes = args.episodes or rc.discovery.eval_episodes
    verdict = evaluate_chain(chain, rc.init, rc.swarm, rng, episodes=episodes,
                             weights=rc.weights, goal=rc.goal)
    _write_verdict(os.path.join(args.out, "verdict.json"), verdict)
    write_trajectories(os.path.join(args.out, "trajectories.jsonl"),
                       verdict.trajectories, rc.swarm, rc.mode)
    ok = sum(1 for r in verdict.episodes if r.collision_free and r.goal)
    _say(args, f"verdict {'valid' if verdict.valid else 'invalid'}: "
               f"{ok}/{episodes} episodes formed valid patterns")
    return 0


def cmd_bench(args) -> int:
    ids = [s.strip().upper() for s in args.experiment.split(",")] \
        if args.experiment else []
    if not ids:
        return _fail("bench needs --experiment with one or more ids", 2)
    os.makedirs(args.out, exist_ok=True)
    episodes = args.episodes if args.episodes is not None else 200
    rows = []
    for exp_id in ids if episodes > 0 else []:
        rc = experiment_preset(exp_id, seed=args.seed)
        chain = _load_chain_or_fail(os.path.join(args.chains, exp_id, "chain"))
        rng = np.random.default_rng(np.random.SeedSequence(args.seed))
        verdict = evaluate_chain(chain, rc.init, rc.swarm, rng,
                                 episodes=episodes, goal=rc.goal, record=False)
        reps = verdict.episodes
        ok = sum(1 for r in reps if r.collision_free and r.goal)
        base = float(np.mean([r.steps_base for r in reps]))
        aux = float(np.mean([r.steps_aux for r in reps]))
        rows.append({
            "experiment": exp_id,
            "seed": args.seed,
            "steps_base": base,
            "steps_aux": aux,
            "steps_total": base + aux,
            "success_rate": ok / episodes,
            "collisions": sum(1 for r in reps if not r.collision_free),
        })
    out_path = os.path.join(args.out, "bench.csv")
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    _say(args, f"benchmarked {len(rows)} experiment(s) over {episodes} episodes "
               f"-> {out_path}")
    return 0


def cmd_render(args) -> int:
    written = render_snapshots(args.trajectories, args.out, episode=args.episode,
                               scan_rings=args.scan_rings,
                               shade_viewer=args.shade,
                               stride=args.stride)
    _say(args, f"wrote {len(written)} SVG file(s) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarmgather",
        description="Discover collision-less gathering patterns for fat robot swarms.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training pass and save a checkpoint")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("discover", help="run base/auxiliary pattern discovery")
    _add_common(p)
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("evaluate", help="evaluate a saved policy chain")
    _add_common(p)
    p.add_argument("--chain", required=True, help="chain bundle directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="measure pattern formation steps per experiment")
    _add_common(p, episodes_default=200)
    p.add_argument("--chains", default=_env("CHAINS", "out"),
                   help="root directory holding <experiment>/chain bundles")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("render", help="render SVG snapshots from a trajectory file")
    _add_common(p)
    p.add_argument("--trajectories", required=True, help="JSON-lines trajectory file")
    p.add_argument("--episode", type=int, default=0)
    p.add_argument("--scan-rings", action="store_true")
    p.add_argument("--shade", type=int, default=None,
                   help="shade occlusion wedges as seen from this robot index")
    p.add_argument("--stride", type=int, default=None,
                   help="additionally dump every stride-th frame")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UnknownExperiment) as exc:
        return _fail(str(exc), 2)
    except MissingCheckpoint as exc:
        return _fail(str(exc), 2)
    except ParseFailure as exc:
        return _fail(str(exc), 2)
    except OSError as exc:
        return _fail(f"i/o failure: {exc}", 1)


if __name__ == "__main__":
    sys.exit(main())
