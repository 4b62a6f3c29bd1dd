"""Command line front end.

Subcommands:
  gen        generate a world and write it as a scenario JSON (or print it)
  train      run the training loop, writing checkpoint + manifest
  eval       benchmark a checkpoint (or the expert / random baseline)
  replay     plan or load a replay and print ASCII frames
  selfcheck  run the built-in diagnostics

Every command is deterministic given its seed arguments.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint
from .config import TrainConfig, load_config
from .evaluation import (
    ExpertActor,
    PolicyActor,
    RandomActor,
    benchmark,
    emit_report,
    write_records,
)
from .expert import SearchBudget, expert_action, plan_for_world
from .scenario import (
    load_replay,
    load_scenario,
    render_ascii,
    replay_frames,
    save_replay,
    save_scenario,
)
from .selfcheck import run_selfcheck
from .train import train
from .world import WorldSpec, generate_world


def _add_gen(sub):
    p = sub.add_parser("gen", help="generate a world and save or print it")
    p.add_argument("--size", type=int, default=10)
    p.add_argument("--density", type=float, default=0.0)
    p.add_argument("--agents", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None,
                   help="scenario JSON path; stdout ASCII when omitted")
    p.set_defaults(func=_cmd_gen)


def _cmd_gen(args) -> int:
    spec = WorldSpec(
        size=args.size, obstacle_density=args.density,
        num_agents=args.agents, seed=args.seed,
    )
    world = generate_world(spec)
    if args.out is not None:
        save_scenario(args.out, world, spec)
        print(f"wrote {args.out}")
    else:
        print(render_ascii(world))
    return 0


def _add_train(sub):
    p = sub.add_parser("train", help="train a policy")
    p.add_argument("--config", type=Path, default=None, help="YAML config")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_train)


def _cmd_train(args) -> int:
    config = load_config(args.config) if args.config else TrainConfig()
    overrides = {
        k: getattr(args, k)
        for k in ("episodes", "workers", "seed")
        if getattr(args, k) is not None
    }
    if overrides:
        config = replace(config, train=replace(config.train, **overrides))
    _, manifest = train(config, out_dir=str(args.out))
    print(
        f"trained {manifest.total_episodes} episodes "
        f"({manifest.success_episodes} successful) in {manifest.wall_time_s:.1f}s; "
        f"checkpoint at {manifest.checkpoint_path}"
    )
    return 0


def _add_eval(sub):
    p = sub.add_parser("eval", help="benchmark an actor over seeded episodes")
    p.add_argument("--checkpoint", type=Path, default=None,
                   help="policy checkpoint (required for --actor policy)")
    p.add_argument("--actor", choices=("policy", "expert", "random"),
                   default="policy")
    p.add_argument("--size", type=int, default=20)
    p.add_argument("--agents", type=int, nargs="+", default=[1, 2, 4, 8])
    p.add_argument("--densities", type=float, nargs="+",
                   default=[0.0, 0.1, 0.2, 0.3])
    p.add_argument("--episodes", type=int, default=100,
                   help="episodes per configuration")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample", action="store_true",
                   help="sample policy actions instead of greedy")
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    p.add_argument("--out", type=Path, default=None,
                   help="write the report here instead of stdout")
    p.add_argument("--records", type=Path, default=None,
                   help="also dump per-episode records as JSON lines")
    p.set_defaults(func=_cmd_eval)


def _cmd_eval(args) -> int:
    if args.actor == "policy":
        if args.checkpoint is None:
            print("eval: --actor policy requires --checkpoint", file=sys.stderr)
            return 2
        params, _, _ = load_checkpoint(args.checkpoint)
        actor = PolicyActor(params, greedy=not args.sample)
    elif args.actor == "expert":
        actor = ExpertActor()
    else:
        actor = RandomActor()

    records = []
    rows = benchmark(
        actor,
        agent_counts=args.agents,
        densities=args.densities,
        m=args.size,
        n_envs=args.episodes,
        base_seed=args.seed,
        on_record=records.append,
    )
    report = emit_report(rows, format=args.format)
    if args.out is not None:
        args.out.write_text(report, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(report, end="")
    if args.records is not None:
        write_records(args.records, records)
        print(f"wrote {args.records}")
    return 0


def _add_replay(sub):
    p = sub.add_parser(
        "replay",
        help="print ASCII frames of a saved replay, or plan one for a scenario",
    )
    p.add_argument("path", type=Path, help="replay or scenario JSON")
    p.add_argument("--plan", action="store_true",
                   help="treat the file as a scenario and plan with the expert")
    p.add_argument("--save", type=Path, default=None,
                   help="with --plan: write the planned replay here")
    p.add_argument("--quiet", action="store_true", help="suppress frames")
    p.set_defaults(func=_cmd_replay)


def _cmd_replay(args) -> int:
    if args.plan:
        world, spec = load_scenario(args.path)
        plan = plan_for_world(world, budget=SearchBudget())
        if plan is None:
            print("replay: no plan found", file=sys.stderr)
            return 1
        joint = [
            [expert_action(plan, i, t) for i in range(world.num_agents)]
            for t in range(plan.makespan)
        ]
        if args.save is not None:
            save_replay(args.save, world, spec, joint)
            print(f"wrote {args.save}")
    else:
        world, spec, joint = load_replay(args.path)

    if not args.quiet:
        for t, _state, frame in replay_frames(world, joint):
            print(f"t={t}")
            print(frame)
            print()
    return 0


def _add_selfcheck(sub):
    p = sub.add_parser("selfcheck", help="run the built-in diagnostics")
    p.set_defaults(func=lambda args: run_selfcheck())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdmapf",
        description="crowd-aware multi-agent grid pathfinding workbench",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_gen(sub)
    _add_train(sub)
    _add_eval(sub)
    _add_replay(sub)
    _add_selfcheck(sub)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
