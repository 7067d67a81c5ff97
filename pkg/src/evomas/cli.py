"""Command-line entry point: train, eval, inspect, oracle-check.

Exit codes: 0 success, 1 a check failed, 2 bad configuration or capacity,
3 I/O failure, 4 corrupt checkpoint.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from evomas.adapter import encode_state, greedy_workflow, probability_snapshot
from evomas.checks import run_checks
from evomas.config import ConfigError, ExperimentConfig, load_config
from evomas.core import TaskState
from evomas.env import state_after_successes
from evomas.errors import CapacityError
from evomas.trainer import Checkpoint, ChecksumError, CurvePoint, eval_rng, evaluate, train

log = logging.getLogger("evomas")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_IO, EXIT_CHECKSUM = 0, 1, 2, 3, 4

CURVE_FIELDS = ("trajectories", "mean_return", "validation_success", "update_norm")


def _resolve_config(args) -> ExperimentConfig:
    return load_config(args.config, seed=args.seed)


def _check_pool(config: ExperimentConfig, ckpt: Checkpoint) -> None:
    n = len(config.env.build_pool())
    if ckpt.params.n_agents != n:
        raise ConfigError(f"checkpoint has {ckpt.params.n_agents} agents but the configured pool has {n}")


# =============================================================================
# SUBCOMMANDS
# =============================================================================


def cmd_train(args) -> int:
    config = _resolve_config(args)
    digest = config.config_hash()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps({"config_hash": digest, **config.to_flat()}, indent=2) + "\n")
    ckpt_dir = out / "checkpoints"
    if config.train.checkpoint_every:
        ckpt_dir.mkdir(exist_ok=True)

    with open(out / "curve.csv", "w", newline="") as curve_fh, open(out / "trajectories.jsonl", "w") as traj_fh:
        curve_fh.write(f"# config_hash={digest}\n")
        writer = csv.writer(curve_fh, lineterminator="\n")
        writer.writerow(CURVE_FIELDS)
        curve_fh.flush()

        def on_trajectory(index, trajectory, ret):
            record = {"config_hash": digest, "index": index, "return": ret, **trajectory.to_dict()}
            traj_fh.write(json.dumps(record) + "\n")

        def on_point(point: CurvePoint):
            writer.writerow([point.trajectories, repr(point.mean_return), repr(point.validation_success),
                             repr(point.update_norm)])
            curve_fh.flush()
            traj_fh.flush()

        def on_checkpoint(ckpt: Checkpoint):
            ckpt.save(ckpt_dir / f"step_{ckpt.counter:08d}.ckpt")

        result = train(config.env, config.train, config.adapter, digest,
                       on_trajectory=on_trajectory, on_point=on_point, on_checkpoint=on_checkpoint)
    result.checkpoint.save(out / "final.ckpt")
    final = result.curve[-1].validation_success if result.curve else float("nan")
    print(f"trajectories={result.checkpoint.counter} validation_success={final:.3f} config_hash={digest}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _resolve_config(args)
    ckpt = Checkpoint.load(args.checkpoint)
    _check_pool(config, ckpt)
    if ckpt.config_hash and ckpt.config_hash != config.config_hash():
        log.warning("checkpoint was trained under config %s, evaluating under %s", ckpt.config_hash, config.config_hash())
    env = config.env
    episodes = args.episodes if args.episodes is not None else config.train.eval_episodes
    if episodes < 1:
        raise ConfigError("--episodes must be at least 1")
    seed = config.train.seed
    success = evaluate(ckpt.params, env.val_templates(), episodes, eval_rng(seed), env.build_pool(),
                       env.outcome_model(), env.t_max, config.adapter.encoder())
    print(f"success_rate={success:.3f} episodes={episodes} seed={seed}")
    return EXIT_OK


def _inspect_state(config: ExperimentConfig, args) -> TaskState:
    if args.state is not None:
        return TaskState.from_dict(json.loads(Path(args.state).read_text()))
    env = config.env
    if not 0 <= args.subtask < len(env.stage_types):
        raise ConfigError(f"--subtask must lie in [0, {len(env.stage_types)})")
    return state_after_successes(env.val_templates()[0], env.outcome_model(), args.subtask)


def cmd_inspect(args) -> int:
    config = _resolve_config(args)
    ckpt = Checkpoint.load(args.checkpoint)
    _check_pool(config, ckpt)
    state = _inspect_state(config, args)
    encoder = config.adapter.encoder()
    X = encode_state(state, encoder)
    wf = greedy_workflow(X, ckpt.params)
    names = [a.name for a in config.env.build_pool()]
    lines = []
    for rec in probability_snapshot(X, ckpt.params, wf, meta_step=state.stage, agent_names=names):
        rec = {"config_hash": ckpt.config_hash, "stage_type": state.active_stage_type, **rec}
        lines.append(json.dumps(rec))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    config = _resolve_config(args)
    results = run_checks(config.oracle, progress=lambda r: print(r.line(), flush=True))
    passed = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return EXIT_OK if passed else EXIT_CHECK_FAILED


# =============================================================================
# ARGUMENT PARSING
# =============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evomas", description="Train and inspect a workflow-building adapter.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file (dotted keys); defaults apply if omitted")
        p.add_argument("--seed", type=int, help="override train.seed (takes precedence over EVOMAS_SEED)")

    p = sub.add_parser("train", help="run REINFORCE training")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="success rate of a checkpoint on the validation tasks")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="layer-wise selection probabilities at one state")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--state", help="JSON task state; defaults to the first validation task's initial state")
    p.add_argument("--subtask", type=int, default=0, help="start with this many subtasks already completed")
    p.add_argument("--out", help="also write the snapshot lines to this file")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("oracle-check", help="certify sampler, log-probabilities and gradients")
    common(p)
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ChecksumError as err:
        print(f"error: corrupt checkpoint: {err}", file=sys.stderr)
        return EXIT_CHECKSUM
    except (ConfigError, CapacityError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, json.JSONDecodeError) as err:
        # malformed checkpoints and state files land here
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CHECKSUM if getattr(args, "checkpoint", None) else EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
