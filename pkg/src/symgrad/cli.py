"""Command-line entry point: train, eval, and replay subcommands."""

from __future__ import annotations

import argparse
import json
import sys
import time

from .config_io import load_config, serialize_config, structurally_equal
from .datasets import load_dataset
from .errors import BackendError, ConfigError, DataError, EngineError
from .gateway import HttpBackend, ScriptedBackend
from .loss import LossMode
from .optimizers import LRLevel
from .training import MetricName, TrainConfig, evaluate, replay_run, train

_MODES = {
    "supervised": LossMode.SUPERVISED,
    "unsupervised": LossMode.UNSUPERVISED,
    "score": LossMode.SCORE_INFORMED,
}

_METRICS = {
    "em": MetricName.EXACT_MATCH,
    "f1": MetricName.F1,
    "score": MetricName.NUMERIC_SCORE,
    "judge": MetricName.JUDGE_SCORE,
}


def make_backend(spec: str):
    if spec == "http":
        return HttpBackend.from_env()
    if spec.startswith("script:"):
        path = spec[len("script:") :]
        try:
            return ScriptedBackend.from_file(path)
        except FileNotFoundError as err:
            raise BackendError(f"script file not found: {path}") from err
    raise ConfigError(f"unknown backend {spec!r}; use 'http' or 'script:<file>'")


def _load_config_or_err(path: str):
    try:
        return load_config(path)
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err


def _load_dataset_or_err(path: str):
    try:
        return load_dataset(path)
    except FileNotFoundError as err:
        raise DataError(f"dataset file not found: {path}") from err


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symgrad")
    sub = parser.add_subparsers(dest="command", required=True)

    train_p = sub.add_parser("train", help="run the learning loop over a dataset")
    train_p.add_argument("--config", required=True)
    train_p.add_argument("--data", required=True)
    train_p.add_argument("--epochs", type=int, default=1)
    train_p.add_argument("--batch-size", type=int, default=1)
    train_p.add_argument("--lr", choices=[l.value for l in LRLevel], default="moderate")
    train_p.add_argument("--mode", choices=sorted(_MODES), default="supervised")
    train_p.add_argument("--metric", choices=sorted(_METRICS), default="em")
    train_p.add_argument("--no-rollback", action="store_true")
    train_p.add_argument("--seed", type=int, default=0)
    train_p.add_argument("--shuffle", action="store_true")
    train_p.add_argument("--max-examples", type=int, default=None)
    train_p.add_argument("--optimize-structure", action="store_true")
    train_p.add_argument("--tools", action="store_true", help="enable tool calls and the tool optimizer")
    train_p.add_argument("--backend", default="http")
    train_p.add_argument("--model", default="")
    train_p.add_argument("--out", default=None, help="run directory (default runs/<timestamp>)")

    eval_p = sub.add_parser("eval", help="score a config on a dataset, no optimization")
    eval_p.add_argument("--config", required=True)
    eval_p.add_argument("--data", required=True)
    eval_p.add_argument("--metric", choices=sorted(_METRICS), default="em")
    eval_p.add_argument("--backend", default="http")
    eval_p.add_argument("--seed", type=int, default=0)
    eval_p.add_argument("--tools", action="store_true")
    eval_p.add_argument("--model", default="")
    eval_p.add_argument("--scorer-cmd", default=None, help="grader executable for the score metric")

    replay_p = sub.add_parser("replay", help="rebuild the final config from a run's audit log")
    replay_p.add_argument("--run", required=True)
    return parser


def _cmd_train(args) -> int:
    config = _load_config_or_err(args.config)
    dataset = _load_dataset_or_err(args.data)
    backend = make_backend(args.backend)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate_level=LRLevel(args.lr),
        rollback_enabled=not args.no_rollback,
        seed=args.seed,
        mode=_MODES[args.mode],
        metric=_METRICS[args.metric],
        max_examples=args.max_examples,
        shuffle=args.shuffle,
        optimize_structure=args.optimize_structure,
        tools_enabled=args.tools,
        model_id=args.model,
    )
    out = args.out or f"runs/{int(time.time())}"
    final, checkpoints = train(config, dataset, cfg, backend, run_dir=out)
    print(
        json.dumps(
            {
                "run_dir": out,
                "final_version": final.version,
                "checkpoints": len(checkpoints),
                "llm_calls": len(backend.transcript),
            }
        )
    )
    return 0


def _cmd_eval(args) -> int:
    config = _load_config_or_err(args.config)
    dataset = _load_dataset_or_err(args.data)
    backend = make_backend(args.backend)
    report = evaluate(
        config,
        dataset,
        _METRICS[args.metric],
        backend,
        seed=args.seed,
        tools_enabled=args.tools,
        model_id=args.model,
        scorer_cmd=args.scorer_cmd,
    )
    print(json.dumps(report.to_dict(), ensure_ascii=False, indent=2))
    return 0


def _cmd_replay(args) -> int:
    reconstructed = replay_run(args.run)
    final_path = f"{args.run}/final.cfg"
    try:
        final = load_config(final_path)
    except FileNotFoundError:
        print(serialize_config(reconstructed), end="")
        return 0
    if structurally_equal(reconstructed, final):
        print(json.dumps({"match": True, "version": reconstructed.version}))
        return 0
    print(json.dumps({"match": False}), file=sys.stderr)
    return 1


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        return _cmd_replay(args)
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 4
    except BackendError as err:
        print(f"backend error: {err}", file=sys.stderr)
        return 3
    except EngineError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
