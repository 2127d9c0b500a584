"""Command-line entry point ``augbc``.

Seeds default to the ``AUGBC_SEED`` environment variable (0 when unset).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import env as envmod
from .augment import SCALE_MODES, Pipeline, build_augmented_dataset, enumerate_pipelines
from .dataset import load_dataset, save_dataset, subsample_episodes
from .experiment import (BASELINE, SweepConfig, default_seed, evaluate, load_trials, run_sweep)
from .policy import ArchitectureConfig, load_checkpoint, save_checkpoint
from .report import SweepReport, emit_report, trials_from_csv
from .train import TrainConfig, train


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_env_validate(args) -> int:
    layout = envmod.load_layout(args.layout)
    _print_json({"name": layout.name, "difficulty": layout.difficulty_tag,
                 "obstacles": len(layout.obstacles), "goal_pose": list(layout.goal_pose),
                 "button": list(layout.button_cell), "doors": [list(d) for d in layout.door_cells],
                 "door_open_duration": layout.door_open_duration})
    if args.ascii:
        print(layout.ascii())
    return 0


def cmd_demos_generate(args) -> int:
    demos = envmod.generate_demos(args.layout, args.episodes, args.seed)
    save_dataset(demos, args.out)
    print(f"wrote {demos.episode_count} episodes / {demos.sample_count} samples to {args.out}")
    return 0


def cmd_augment(args) -> int:
    base = load_dataset(args.demos)
    pipeline = Pipeline.parse(args.pipeline, args.scale_mode)
    out = build_augmented_dataset(base, pipeline, args.clones, args.seed)
    save_dataset(out, args.out)
    print(f"{pipeline.id}: {base.sample_count} -> {out.sample_count} samples, wrote {args.out}")
    return 0


def cmd_pipelines(args) -> int:
    sigmas = [float(s) for s in args.sigmas.split(",")]
    ps = enumerate_pipelines(args.max_size, sigmas, args.scale_mode)
    for p in ps:
        print(p.id)
    print(f"# {len(ps)} pipelines", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    data = subsample_episodes(load_dataset(args.demos), args.data_frac, args.seed)
    if args.pipeline != BASELINE:
        data = build_augmented_dataset(data, Pipeline.parse(args.pipeline, args.scale_mode),
                                       args.clones, args.seed)
    arch = ArchitectureConfig(embedding_dim=args.embedding_dim)
    if args.variant == "faithful":
        arch = ArchitectureConfig.faithful(embedding_dim=args.embedding_dim)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                      learning_rate=args.learning_rate, seed=args.seed)
    policy, log = train(data, arch, cfg)
    save_checkpoint(policy, args.out, extra={"pipeline": args.pipeline, "data_fraction": args.data_frac,
                                             "clones": args.clones, "samples": log["samples"]})
    print(f"trained on {log['samples']} samples: final loss {log['loss'][-1]:.6f}, "
          f"train accuracy {log['train_accuracy']:.4f}; wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    policy = load_checkpoint(args.model)
    res = evaluate(policy, args.layout, args.episodes, args.seed)
    _print_json({"layout": res.layout, "successes": res.successes, "episodes": res.episodes,
                 "success_rate": res.success_rate, "mean_episode_length": res.mean_episode_length})
    return 0


def _sweep_config(args) -> SweepConfig:
    if args.config:
        cfg = SweepConfig.from_json(Path(args.config).read_text(encoding="utf-8"))
    else:
        cfg = SweepConfig.profile(args.profile)
    overrides = {k: v for k, v in (("epochs", args.epochs), ("seeds", args.seeds),
                                   ("workers", args.workers), ("demos", args.demos),
                                   ("seed_base", args.seed)) if v is not None}
    return replace(cfg, **overrides)


def cmd_sweep(args) -> int:
    cfg = _sweep_config(args)

    def progress(key, results, err):
        rates = " ".join(f"{t.layout}={t.success_rate:.2f}" for t in results)
        print(f"{key[0]} frac={key[1]} seed={key[2]}: {'FAILED' if err else rates}", flush=True)

    report = run_sweep(cfg, args.out, progress=progress)
    emit_report(report, args.out)
    print(f"{report.jobs_run} models trained, {len(report.failures)} failures; report in {args.out}")
    return 1 if report.failures else 0


def cmd_report(args) -> int:
    src = Path(args.trials)
    if src.is_dir():
        src = src / "trials.jsonl" if (src / "trials.jsonl").exists() else src / "trials.csv"
    trials = trials_from_csv(src) if src.suffix == ".csv" else load_trials(src)
    report = SweepReport.from_trials(trials)
    for path in emit_report(report, args.out, args.top_k):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    seed = default_seed()
    p = argparse.ArgumentParser(prog="augbc", description="State augmentation for behavioral cloning.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("env", help="layout utilities").add_subparsers(dest="env_command", required=True)
    v = e.add_parser("validate", help="load and validate a layout (built-in name or JSON file)")
    v.add_argument("layout")
    v.add_argument("--ascii", action="store_true", help="also print the grid")
    v.set_defaults(func=cmd_env_validate)

    d = sub.add_parser("demos", help="expert demonstrations").add_subparsers(dest="demos_command", required=True)
    g = d.add_parser("generate", help="roll out the scripted expert")
    g.add_argument("--layout", default="train")
    g.add_argument("--episodes", type=int, default=78)
    g.add_argument("--seed", type=int, default=seed)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_demos_generate)

    a = sub.add_parser("augment", help="build an augmented dataset")
    a.add_argument("--demos", required=True)
    a.add_argument("--pipeline", required=True, help='pipeline id, e.g. "sca+sm" or "gauss_e4+drc"')
    a.add_argument("--clones", type=int, default=3)
    a.add_argument("--seed", type=int, default=seed)
    a.add_argument("--scale-mode", choices=SCALE_MODES, default="literal")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_augment)

    pl = sub.add_parser("pipelines", help="list enumerated pipeline ids")
    pl.add_argument("--max-size", type=int, default=3)
    pl.add_argument("--sigmas", default="0.0003", help="comma-separated gaussian sigmas")
    pl.add_argument("--scale-mode", choices=SCALE_MODES, default="literal")
    pl.set_defaults(func=cmd_pipelines)

    t = sub.add_parser("train", help="train one policy")
    t.add_argument("--demos", required=True)
    t.add_argument("--pipeline", default=BASELINE)
    t.add_argument("--clones", type=int, default=3)
    t.add_argument("--data-frac", type=float, default=1.0)
    t.add_argument("--seed", type=int, default=seed)
    t.add_argument("--scale-mode", choices=SCALE_MODES, default="literal")
    t.add_argument("--variant", choices=("compact", "faithful"), default="compact")
    t.add_argument("--embedding-dim", type=int, default=128)
    t.add_argument("--epochs", type=int, default=300)
    t.add_argument("--batch-size", type=int, default=256)
    t.add_argument("--learning-rate", type=float, default=1e-3)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a layout")
    ev.add_argument("--model", required=True)
    ev.add_argument("--layout", default="train")
    ev.add_argument("--episodes", type=int, default=100)
    ev.add_argument("--seed", type=int, default=12345)
    ev.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="run or resume a sweep")
    s.add_argument("--profile", choices=("desk", "full"), default="desk")
    s.add_argument("--config", help="JSON file mirroring SweepConfig (overrides --profile)")
    s.add_argument("--out", required=True)
    s.add_argument("--demos", help="demonstration JSONL (generated when omitted)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seeds", type=int)
    s.add_argument("--seed", type=int, help="first model seed (default: AUGBC_SEED or profile)")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="emit report files from recorded trials")
    r.add_argument("--trials", required=True, help="sweep directory, trials.jsonl or trials.csv")
    r.add_argument("--out", required=True)
    r.add_argument("--top-k", type=int, default=19)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"augbc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
