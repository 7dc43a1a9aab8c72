"""Operator command line.

Subcommands: ingest, pretrain, train, eval, benchmark. Every command resolves
one INI config (flags override file values), writes the resolved copy into the
output directory, and exits 0 on success, 1 on method failure, 2 on usage or
I/O errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import agent, baselines, dataset, evaluate, mf, qnet
from .config import RunConfig, load_config, task_mode, write_resolved
from .env import write_trace
from .errors import CfrlError, DivergenceError, ParseError, ValidationError
from .seeding import derive_seed

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.out = args.out
    if getattr(args, "jobs", None) is not None:
        cfg.jobs = args.jobs
    if getattr(args, "data", None):
        cfg.data_path = args.data
    if getattr(args, "format", None):
        cfg.data_format = args.format
    return cfg


def _load_dataset(cfg: RunConfig):
    if not cfg.data_path:
        raise ValueError("no dataset path configured; set [data] path or pass --data")
    if dataset.is_snapshot(cfg.data_path):
        return dataset.load_snapshot(cfg.data_path)
    return dataset.load_ratings(cfg.data_path, cfg.data_format)


def _splits(cfg: RunConfig, ds):
    return dataset.make_splits(
        ds,
        n_splits=cfg.split_count,
        test_fraction=cfg.test_fraction,
        min_ratings=cfg.min_ratings,
        seed=cfg.seed,
    )


def _mf_ckpt_path(out: Path, split_index: int) -> Path:
    return out / f"mf_split{split_index}.ckpt"


def cmd_ingest(args) -> int:
    cfg = _resolve_config(args)
    if not cfg.data_path:
        raise ValueError("no dataset path configured; set [data] path or pass --data")
    ds = dataset.load_ratings(cfg.data_path, cfg.data_format)
    stats = dataset.dataset_stats(ds)
    for key in ("m", "n", "rating_count", "mean_rating", "density"):
        print(f"{key} = {stats[key]}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    snap = out / "dataset.snap"
    dataset.save_snapshot(ds, snap)
    print(f"snapshot written to {snap}")
    write_resolved(cfg, out)
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _resolve_config(args)
    ds = _load_dataset(cfg)
    split = _splits(cfg, ds)[args.split]
    seed = derive_seed(cfg.seed, f"mf:{args.split}")
    model = mf.pretrain(
        ds, split.train_users, d=cfg.mf_dim, reg=cfg.mf_reg, lr=cfg.mf_lr,
        epochs=cfg.mf_epochs, seed=seed,
    )
    for epoch, rmse in enumerate(model.epoch_rmse):
        print(f"epoch {epoch:3d}  train_rmse {rmse:.6f}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = _mf_ckpt_path(out, args.split)
    mf.save_mf(
        model, path,
        manifest={
            "seed": seed,
            "epochs": cfg.mf_epochs,
            "dim": cfg.mf_dim,
            "reg": cfg.mf_reg,
            "lr": cfg.mf_lr,
            "split": args.split,
            "train_rmse": model.epoch_rmse[-1] if model.epoch_rmse else None,
        },
    )
    print(f"checkpoint written to {path}")
    write_resolved(cfg, out)
    return EXIT_OK


def _require_mf(out: Path, split_index: int) -> mf.MfModel:
    path = _mf_ckpt_path(out, split_index)
    if not path.exists():
        raise FileNotFoundError(
            f"MF checkpoint {path} not found; run `cfrl pretrain --split {split_index}` first"
        )
    return mf.load_mf(path)


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    ds = _load_dataset(cfg)
    split = _splits(cfg, ds)[args.split]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)
    method = args.method
    train_cfg = cfg.train_config()
    # one agent per task; the task tag keeps the two from overwriting each other
    stem = f"{method}_{train_cfg.task.value}_split{args.split}"

    if method == "linucb":
        model = _require_mf(out, args.split)
        ucb = baselines.train_linucb(ds, split, model, train_cfg, alpha_ucb=cfg.linucb_alpha)
        path = out / f"{stem}.npz"
        np.savez(path, A=ucb.A, b=ucb.b, alpha_ucb=np.array([ucb.alpha_ucb]))
        print(f"checkpoint written to {path}")
        return EXIT_OK

    if method == "cfrl":
        model = _require_mf(out, args.split)
        trainer = agent.make_trainer(ds, split, model, train_cfg)
    elif method == "dqn":
        trainer = agent.make_trainer(ds, split, baselines.null_mf_model(ds), train_cfg, raw_state=True)
    else:
        raise ValueError(f"unknown trainable method {method!r}")

    state_path = out / f"{stem}_state.npz"
    if args.resume:
        if not state_path.exists():
            raise FileNotFoundError(f"--resume given but {state_path} does not exist")
        trainer.restore(state_path)
        print(f"resumed at episode {trainer.episode}")
    trace_rows: list | None = [] if args.trace else None
    log_path = out / f"{stem}_train_log.csv"
    try:
        while trainer.episode < train_cfg.episodes:
            if cfg.checkpoint_every > 0:
                target = min(train_cfg.episodes, trainer.episode + cfg.checkpoint_every)
            else:
                target = train_cfg.episodes
            trainer.run(until_episode=target, trace=trace_rows)
            trainer.save(state_path)
    except DivergenceError as exc:
        agent.write_training_log(log_path, trainer.logs)
        kept = (
            f"last-good state kept at {state_path}"
            if state_path.exists()
            else "no checkpoint had been written yet"
        )
        print(f"training diverged: {exc}; {kept}", file=sys.stderr)
        return EXIT_FAILURE
    agent.write_training_log(log_path, trainer.logs)
    if trace_rows is not None:
        write_trace(out / f"{stem}_trace.csv", trace_rows)
    ckpt = out / f"{stem}.ckpt"
    qnet.save_qnet(
        trainer.net, ckpt,
        manifest={
            "seed": train_cfg.seed,
            "episodes": trainer.episode,
            "train_steps": trainer.train_steps,
            "sync_period": train_cfg.sync_period,
            "gamma": train_cfg.gamma,
            "q_lr": train_cfg.q_lr,
            "task": train_cfg.task.value,
            "split": args.split,
        },
    )
    print(f"checkpoint written to {ckpt}")
    print(f"training log written to {log_path}")
    return EXIT_OK


def _policy_for_eval(method: str, cfg: RunConfig, ds, split, split_index: int,
                     task, out: Path):
    """Returns (policy, env model) for one configured method."""
    null_model = baselines.null_mf_model(ds)
    if method == "random":
        return baselines.RandomPolicy(seed=derive_seed(cfg.seed, f"random:{split_index}")), null_model
    if method == "popular":
        return baselines.popular_policy(ds, split.train_users), null_model
    if method == "impact":
        return baselines.impact_policy(ds, split.train_users), null_model
    if method == "mf":
        model = _require_mf(out, split_index)
        return baselines.OnlineMfPolicy(model), model
    if method == "linucb":
        model = _require_mf(out, split_index)
        path = out / f"linucb_{task.value}_split{split_index}.npz"
        if not path.exists():
            raise FileNotFoundError(f"LinUCB checkpoint {path} not found; run `cfrl train` first")
        with np.load(path) as data:
            ucb = baselines.LinUcbModel(A=data["A"], b=data["b"], alpha_ucb=float(data["alpha_ucb"][0]))
        return baselines.LinUcbPolicy(ucb, model, frozen=True), model
    if method == "cfrl":
        model = _require_mf(out, split_index)
        net = qnet.load_qnet(out / f"cfrl_{task.value}_split{split_index}.ckpt")
        return baselines.GreedyQPolicy(net, mf_model=model), model
    if method == "dqn":
        net = qnet.load_qnet(out / f"dqn_{task.value}_split{split_index}.ckpt")
        return baselines.GreedyQPolicy(net, raw_state=True), null_model
    raise ValueError(f"unknown method {method!r}")


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    ds = _load_dataset(cfg)
    split = _splits(cfg, ds)[args.split]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    task = task_mode(args.task)
    policy, env_model = _policy_for_eval(args.method, cfg, ds, split, args.split, task, out)
    scores = evaluate.evaluate_policy(policy, ds, env_model, split, task, cfg.horizon)
    path = out / f"eval_{args.method}_{task.value}_split{args.split}.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("user,score\n")
        for user, score in zip(sorted(split.test_users), scores):
            fh.write(f"{user},{score!r}\n")
    print(f"{args.method} {task.value} split {args.split}: "
          f"mean reward {float(np.mean(scores)):.4f} over {scores.size} users")
    print(f"per-user scores written to {path}")
    write_resolved(cfg, out)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = _resolve_config(args)
    if args.methods is not None:
        cfg.methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if not cfg.methods:
        raise ValueError("empty methods list")
    ds = _load_dataset(cfg)
    splits = _splits(cfg, ds)
    tasks = tuple(task_mode(t) for t in cfg.eval_tasks)
    train_cfg = cfg.train_config() if set(cfg.methods) & evaluate.TRAINED_METHODS else None
    report = evaluate.benchmark(
        ds, splits, cfg.methods, tasks,
        dataset_name=cfg.dataset_name,
        seed=cfg.seed,
        horizon=cfg.horizon,
        mf_dim=cfg.mf_dim,
        mf_reg=cfg.mf_reg,
        mf_lr=cfg.mf_lr,
        mf_epochs=cfg.mf_epochs,
        train_cfg=train_cfg,
        linucb_alpha=cfg.linucb_alpha,
        jobs=cfg.jobs,
    )
    out = Path(cfg.out)
    evaluate.write_report(report, out)
    write_resolved(cfg, out)
    print(report.render_text())
    print(f"report files written to {out}")
    return EXIT_FAILURE if report.failed_cells() else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfrl",
        description="Interactive recommendation simulator and benchmark suite",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--seed", type=int, help="override [run] seed")
        p.add_argument("--out", help="override [run] out directory")

    p_ingest = sub.add_parser("ingest", help="parse a ratings file, print stats, write a snapshot")
    common(p_ingest)
    p_ingest.add_argument("--data", help="ratings file path")
    p_ingest.add_argument("--format", choices=sorted(dataset.FORMAT_SEPARATORS))
    p_ingest.set_defaults(func=cmd_ingest)

    p_pre = sub.add_parser("pretrain", help="pretrain the factor model for one split")
    common(p_pre)
    p_pre.add_argument("--data", help="ratings file or snapshot path")
    p_pre.add_argument("--format", choices=sorted(dataset.FORMAT_SEPARATORS))
    p_pre.add_argument("--split", type=int, default=0)
    p_pre.set_defaults(func=cmd_pretrain)

    p_train = sub.add_parser("train", help="train cfrl, dqn or linucb on one split")
    common(p_train)
    p_train.add_argument("--data", help="ratings file or snapshot path")
    p_train.add_argument("--format", choices=sorted(dataset.FORMAT_SEPARATORS))
    p_train.add_argument("--method", choices=("cfrl", "dqn", "linucb"), default="cfrl")
    p_train.add_argument("--split", type=int, default=0)
    p_train.add_argument("--resume", action="store_true", help="continue from the saved state")
    p_train.add_argument("--trace", action="store_true", help="write the per-step episode trace")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate one method on one split")
    common(p_eval)
    p_eval.add_argument("--data", help="ratings file or snapshot path")
    p_eval.add_argument("--format", choices=sorted(dataset.FORMAT_SEPARATORS))
    p_eval.add_argument("--method", required=True, choices=evaluate.KNOWN_METHODS)
    p_eval.add_argument("--task", default="task1")
    p_eval.add_argument("--split", type=int, default=0)
    p_eval.set_defaults(func=cmd_eval)

    p_bench = sub.add_parser("benchmark", help="run the full methods-by-tasks grid")
    common(p_bench)
    p_bench.add_argument("--data", help="ratings file or snapshot path")
    p_bench.add_argument("--format", choices=sorted(dataset.FORMAT_SEPARATORS))
    p_bench.add_argument("--methods", help="comma-separated method subset")
    p_bench.add_argument("--jobs", type=int, help="parallel split workers")
    p_bench.set_defaults(func=cmd_benchmark)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ParseError, ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CfrlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
