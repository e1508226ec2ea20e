"""Command line front end: collect, train, eval, compare, show-config."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import agent
from .config import RunConfig, set_path
from .errors import ConfigError

log = logging.getLogger("calibrl")

POLICIES = ("learned", "random", "handcrafted")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--preset", choices=("desk", "paper"), default="desk")
    common.add_argument("--seed", type=int)
    common.add_argument("--mode", choices=("intrinsic", "extrinsic"))
    common.add_argument("--episodes", type=int, help="episode budget for collect/train")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--workers", type=int, help="worker processes for evaluation")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="calibrl", description="Learned calibration trajectories (model-based RL).")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("collect", parents=[common], help="gather random-trajectory episodes")
    sub.add_parser("train", parents=[common], help="run the model-based RL loop")
    ev = sub.add_parser("eval", parents=[common], help="evaluate one policy")
    ev.add_argument("--policy", choices=POLICIES, default="learned")
    ev.add_argument("--checkpoint", type=Path, help="trained agent directory (default: --out)")
    cmp_ = sub.add_parser("compare", parents=[common], help="random vs handcrafted vs learned table")
    cmp_.add_argument("--checkpoint", type=Path, help="trained agent directory (default: --out)")
    cmp_.add_argument("--finetuned", type=Path, help="optional fine-tuned agent directory")
    sub.add_parser("show-config", parents=[common], help="print the resolved configuration")
    return p


def _resolve(args) -> RunConfig:
    cli = {}
    if args.seed is not None:
        set_path(cli, "seed", args.seed)
    if args.mode is not None:
        set_path(cli, "mode", args.mode)
    if args.out is not None:
        set_path(cli, "output_dir", str(args.out))
    if args.workers is not None:
        set_path(cli, "workers", args.workers)
    if args.episodes is not None:
        if args.episodes < 0:
            raise ConfigError("--episodes", "must be non-negative")
        mode = args.mode
        if mode is None:
            mode = RunConfig.from_file(args.config, args.preset).mode if args.config else "intrinsic"
        if args.command == "collect":
            set_path(cli, "training.random_episodes", args.episodes)
        else:
            set_path(cli, f"training.train_episodes.{mode}", args.episodes)
    if args.config is not None:
        return RunConfig.from_file(args.config, args.preset, cli)
    return RunConfig.resolve(args.preset, None, cli)


def _write_config(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfg.to_yaml())


# ----------------------------------------------------------------------------
# commands


def cmd_collect(cfg: RunConfig, args) -> int:
    out = Path(cfg.tree["output_dir"])
    _write_config(cfg, out)
    n = int(cfg.tree["training"]["random_episodes"])
    env = agent.phase_env(cfg.env_config(), False, True)
    ds = agent.ReplayDataset.load(out / "dataset.jsonl") if (out / "dataset.jsonl").exists() else agent.ReplayDataset()
    if n > 0:
        agent.collect_random(env, n, ds, agent.named_rng(cfg.seed, "random_actions"), cfg.seed)
    ds.save(out / "dataset.jsonl")
    print(f"{len(ds)} records in {out / 'dataset.jsonl'}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    out = Path(cfg.tree["output_dir"])
    _write_config(cfg, out)
    env_cfg, pso_cfg, agent_cfg = cfg.env_config(), cfg.pso_config(), cfg.agent_config()
    every = int(cfg.tree["training"]["checkpoint_every"])
    if (out / "models.json").exists():
        ts = agent.load_checkpoint(out)
    else:
        ts = agent.new_training_state(cfg.mode, cfg.model_config(), pso_cfg, cfg.seed)
        if (out / "dataset.jsonl").exists():
            for rec in agent.ReplayDataset.load(out / "dataset.jsonl"):
                ts.dataset.append(rec)
            ts.model.update_normalizer(list(ts.dataset))
    text = cfg.to_yaml()
    meta = {"mode": cfg.mode, "finetuned": False}
    if (out / "agent.json").exists():
        meta = json.loads((out / "agent.json").read_text())

    def save():
        agent.save_checkpoint(out, ts, text)
        (out / "agent.json").write_text(json.dumps(meta, indent=2))

    phases = [(False, agent_cfg.train_episodes)]
    if cfg.mode == "extrinsic" and agent_cfg.finetune_episodes:
        phases.append((True, agent_cfg.finetune_episodes))
    if all(n == 0 for _, n in phases):
        save()
        print(f"no episodes requested; checkpoint written to {out}")
        return 0
    if len(ts.dataset) == 0:
        if agent_cfg.random_episodes < 1:
            raise ConfigError("training.random_episodes", "training needs random episodes or an existing dataset")
        agent.collect_random(
            agent.phase_env(env_cfg, False, True), agent_cfg.random_episodes, ts.dataset, ts.rngs["random_actions"], cfg.seed
        )
        ts.model.update_normalizer(list(ts.dataset))
    for finetune, n in phases:
        env = agent.phase_env(env_cfg, finetune, True)
        if finetune:
            meta["finetuned"] = True
        done = 0
        while done < n:
            k = min(every, n - done)
            agent.train(env, k, ts, agent_cfg, pso_cfg, cfg.seed)
            done += k
            save()
            log.info("%s: %d/%d episodes", "fine-tune" if finetune else "train", done, n)
    print(f"trained {ts.episodes_done} episodes; checkpoint in {out}")
    if ts.aborted:
        print(f"{ts.aborted} episode(s) aborted after repeated divergence", file=sys.stderr)
        return 1
    return 0


def _learned_policy(cfg: RunConfig, directory: Path) -> agent.Policy:
    if not (directory / "models.json").exists():
        raise FileNotFoundError(f"no trained checkpoint in {directory}")
    ts = agent.load_checkpoint(directory)
    meta = json.loads((directory / "agent.json").read_text()) if (directory / "agent.json").exists() else {}
    if meta.get("mode", cfg.mode) != cfg.mode:
        raise ConfigError("mode", f"checkpoint was trained for {meta['mode']} calibration")
    return agent.Policy(
        "learned", ts.model, ts.memory, cfg.pso_config(), status_calibrated=bool(meta.get("finetuned", False))
    )


def _policy(cfg: RunConfig, kind: str, checkpoint: Path) -> agent.Policy:
    if kind == "learned":
        return _learned_policy(cfg, checkpoint)
    if kind == "handcrafted":
        return agent.Policy("handcrafted", actions=agent.load_handcrafted(cfg.mode))
    return agent.Policy("random")


def _evaluate(cfg: RunConfig, policy: agent.Policy) -> agent.EvalReport:
    ev = cfg.tree["evaluation"]
    return agent.evaluate(policy, cfg.env_config(), ev["n_configs"], ev["repeats"], ev["seed"], cfg.tree["workers"])


def _write_rows(path: Path, report: agent.EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["policy", "config", "repeat", "relative_error", "path_length", "a_opt", "failed"])
        for r in report.rows:
            w.writerow([report.policy, r.config, r.repeat, repr(r.relative_error), repr(r.path_length), repr(r.a_opt), int(r.failed)])


def cmd_eval(cfg: RunConfig, args) -> int:
    out = Path(cfg.tree["output_dir"])
    policy = _policy(cfg, args.policy, args.checkpoint or out)
    _write_config(cfg, out)
    report = _evaluate(cfg, policy)
    (out / f"eval_{args.policy}.json").write_text(json.dumps(report.to_dict(), indent=2))
    _write_rows(out / f"eval_{args.policy}.csv", report)
    print(f"{args.policy}: mean error {100 * report.mean_error:.3f} %, path length {report.mean_path_length:.3f} m, "
          f"mean A-optimality {report.mean_a_opt:.4g}")
    return 0


def cmd_compare(cfg: RunConfig, args) -> int:
    out = Path(cfg.tree["output_dir"])
    checkpoint = args.checkpoint or out
    policies = [("Random trajectory", _policy(cfg, "random", checkpoint)),
                ("Handcrafted trajectory", _policy(cfg, "handcrafted", checkpoint)),
                ("Learned trajectory", _learned_policy(cfg, checkpoint))]
    if args.finetuned is not None:
        policies.append(("Fine-tuned trajectory", _learned_policy(cfg, args.finetuned)))
    _write_config(cfg, out)
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["policy", "mean_error", "path_length", "mean_a_optimality"])
        for name, pol in policies:
            rep = _evaluate(cfg, pol)
            w.writerow([name, repr(rep.mean_error), repr(rep.mean_path_length), repr(rep.mean_a_opt)])
            print(f"{name:24s} error {100 * rep.mean_error:8.3f} %  path {rep.mean_path_length:7.3f} m  "
                  f"A-opt {rep.mean_a_opt:.4g}")
    return 0


def cmd_show_config(cfg: RunConfig, args) -> int:
    print(cfg.describe())
    return 0


COMMANDS = {
    "collect": cmd_collect,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "show-config": cmd_show_config,
}


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
