"""Command-line interface.

Subcommands: train, optimize, evaluate, compare-baselines, sweep.
Configuration comes from a JSON document; flags override config fields,
with --set taking dotted JSON paths. Exit codes: 0 success, 2 config
error, 3 infeasible constraint or bad plan.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, InfeasibleError, PlanError, StageError
from .experiment import (ExperimentConfig, compare_baselines, run_experiment,
                         sweep_thresholds)
from .model import load_checkpoint, save_checkpoint, build_model
from .plan import ApproxPlan
from .tasks import generate_task
from .tensor import spawn_rng
from .training import evaluate_accuracy, evaluate_loss, train_epochs


def _load_config(args) -> ExperimentConfig:
    try:
        doc = json.loads(Path(args.config).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {args.config}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    for override in getattr(args, "set", None) or []:
        if "=" not in override:
            raise ConfigError(f"--set expects path=value, got '{override}'")
        path, raw = override.split("=", 1)
        _set_path(doc, path.strip(), _parse_value(raw.strip()))
    if getattr(args, "focus", None):
        doc["focus"] = args.focus
    if getattr(args, "max_degradation", None) is not None:
        doc["max_degradation"] = args.max_degradation
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    if getattr(args, "train_loss_only", False):
        doc["train_loss_only"] = True
    return ExperimentConfig.from_doc(doc)


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _set_path(doc: dict, path: str, value):
    parts = path.split(".")
    node = doc
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set path '{path}' crosses a non-object field")
    node[parts[-1]] = value


def _cmd_train(args) -> int:
    config = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = generate_task(config.task)
    model = build_model(config.transformer_config(), config.seed)
    train_epochs(model, None, data.train, config.epochs_baseline,
                 spawn_rng(config.seed, 0), lr=config.lr, batch_size=config.batch_size)
    save_checkpoint(model, out / "baseline")
    metrics = {
        "train_loss": evaluate_loss(model, None, data.train),
        "val_loss": evaluate_loss(model, None, data.val),
        "val_accuracy": evaluate_accuracy(model, None, data.val),
    }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def _cmd_optimize(args) -> int:
    config = _load_config(args)
    report = run_experiment(config, args.out)
    print(report.to_json())
    return 0


def _cmd_evaluate(args) -> int:
    config = _load_config(args)
    model = load_checkpoint(args.checkpoint)
    plan = ApproxPlan.from_json(Path(args.plan).read_text()) if args.plan else ApproxPlan()
    data = generate_task(config.task)
    cost = model.cost(plan)
    result = {
        "train_loss": evaluate_loss(model, plan, data.train),
        "val_loss": evaluate_loss(model, plan, data.val),
        "val_accuracy": evaluate_accuracy(model, plan, data.val),
        "mac_count": cost.mac_count,
        "param_count": cost.param_count,
        "bytes": cost.bytes,
    }
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def _cmd_compare(args) -> int:
    config = _load_config(args)
    result = compare_baselines(config, args.out)
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args)
    pairs = []
    for chunk in args.epsilons.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if ":" in chunk:
            skip_part, approx_part = chunk.split(":", 1)
            pairs.append((float(skip_part), float(approx_part)))
        else:
            pairs.append(float(chunk))
    rows = sweep_thresholds(config, pairs, args.out, workers=args.workers)
    print(json.dumps(rows, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slimformer",
        description="Greedy significance analysis and approximation for toy transformers")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--set", action="append", metavar="PATH=VALUE",
                       help="override a config field by dotted JSON path")
        p.add_argument("--seed", type=int, default=None)
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")

    p_train = sub.add_parser("train", help="fine-tune the baseline model")
    common(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_opt = sub.add_parser("optimize", help="full analyze-and-approximate pipeline")
    common(p_opt)
    p_opt.add_argument("--focus", choices=["speed", "size", "accuracy"])
    p_opt.add_argument("--max-degradation", type=float, dest="max_degradation")
    p_opt.add_argument("--train-loss-only", action="store_true", dest="train_loss_only",
                       help="accept decisions on the train split alone")
    p_opt.set_defaults(func=_cmd_optimize)

    p_eval = sub.add_parser("evaluate", help="evaluate a checkpoint, optionally under a plan")
    common(p_eval, needs_out=False)
    p_eval.add_argument("--checkpoint", required=True,
                        help="checkpoint prefix (expects .json and .bin)")
    p_eval.add_argument("--plan", default=None, help="plan JSON file")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_cmp = sub.add_parser("compare-baselines",
                           help="greedy vs oracle vs Taylor comparison on a tiny model")
    common(p_cmp)
    p_cmp.add_argument("--focus", choices=["speed", "size", "accuracy"])
    p_cmp.set_defaults(func=_cmd_compare)

    p_sweep = sub.add_parser("sweep", help="threshold sweep producing sweep.csv")
    common(p_sweep)
    p_sweep.add_argument("--epsilons", required=True,
                         help="comma-separated eps values; 'skip:approx' pairs allowed")
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        cause = exc.cause
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(cause, ConfigError):
            return 2
        return 3 if isinstance(cause, (PlanError, InfeasibleError)) else 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (PlanError, InfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
