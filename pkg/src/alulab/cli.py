"""Command-line entry point: ``alulab <subcommand> [--config c.json] [--seed N] [--out DIR]``.

Exit status is 0 on success, 1 for configuration or usage errors and 2 for
failures while running.  Every subcommand prints a JSON summary and writes it
to ``<out>/<subcommand>.json``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from alulab import alu
from alulab.analysis import pattern_stats, proof_report
from alulab.errors import ConfigError
from alulab.experiment import (
    Artifacts,
    ExperimentConfig,
    attack_test_set,
    read_attack_dump,
    run_ablation,
    sweep,
    sweep_rows,
    write_attack_dump,
)
from alulab.models import VAE, LogitClassifier, train_classifier, train_unified, train_vae
from alulab.persistence import load_checkpoint, load_dataset, save_checkpoint, save_dataset
from alulab.purifier import purify

U64_MAX = 2**64 - 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value <= U64_MAX:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2^64), got {value}")
    return value


def _common() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="JSON experiment config")
    p.add_argument("--seed", type=_seed, default=argparse.SUPPRESS, help="global seed")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default: out)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="alulab", parents=[common], description="Purification + logit-update defense experiments.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="<command>")
    sub.required = True

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    add("gen-data", "write train/test datasets")
    for name in ("train-classifier", "train-vae"):
        add(name, f"{name.split('-', 1)[1]} training").add_argument("--data", required=True)
    p = add("train-unified", "train a classifier on VAE reconstructions")
    p.add_argument("--data", required=True)
    p.add_argument("--vae", required=True)
    p = add("attack", "attack a dataset")
    p.add_argument("--classifier", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vae", help="required when the config targets the pipeline")
    p.add_argument("--epsilon", type=float)
    p = add("purify", "purify a dataset")
    p.add_argument("--vae", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--trace", help="CSV path for the per-step loss of one sample")
    p.add_argument("--trace-sample", type=int, default=0)
    p = add("calibrate", "calibrate the detector threshold on clean data")
    p.add_argument("--vae", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--data", required=True)
    add("evaluate", "full ablation run")
    add("analyze-patterns", "logit-pattern statistics").add_argument("--dump", required=True)
    add("verify-proof", "check the one-step learning-rate formulas").add_argument("--instances", type=int, default=100)
    p = add("sweep", "purifier learning-rate or iteration sweep")
    p.add_argument("--parameter", required=True, choices=["learning_rate", "iterations"])
    p.add_argument("--values", required=True, nargs="+", type=float)
    return parser


def _config(args) -> ExperimentConfig:
    path = getattr(args, "config", None)
    cfg = ExperimentConfig.load(path) if path else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return dataclasses.replace(cfg, output_dir=_out(args))


def _out(args) -> str:
    out = getattr(args, "out", None) or "out"
    os.makedirs(out, exist_ok=True)
    return out


def _input(path: str) -> str:
    if not os.path.exists(path):
        raise ConfigError(f"input file not found: {path}")
    return path


def _emit(args, name: str, payload: dict) -> dict:
    text = json.dumps(payload, sort_keys=True, indent=2)
    with open(os.path.join(_out(args), f"{name}.json"), "w") as fh:
        fh.write(text + "\n")
    print(text)
    return payload


def cmd_gen_data(args, cfg):
    train, test = cfg.data.generate(cfg.seed)
    paths = {}
    for ds in (train, test):
        paths[ds.split] = os.path.join(cfg.output_dir, f"{ds.split}.alud")
        save_dataset(ds, paths[ds.split])
    return {"paths": paths, "n_train": train.n, "n_test": test.n, "d": train.d, "M": train.n_classes,
            "min_mean_distance": train.min_mean_distance()}


def _train_summary(model, path, history):
    save_checkpoint(model, path)
    return {"checkpoint": path, "digest": model.digest(), "final_loss": history[-1], "epochs": len(history)}


def cmd_train_classifier(args, cfg):
    ds = load_dataset(_input(args.data))
    c = LogitClassifier(hidden=tuple(cfg.classifier.hidden))
    _, hist = train_classifier(c, ds.features, ds.labels, cfg.classifier_train, n_classes=ds.n_classes)
    out = _train_summary(c, os.path.join(cfg.output_dir, "classifier.alu1"), hist)
    out["train_accuracy"] = float(np.mean(c.predict(ds.features) == ds.labels))
    return out


def cmd_train_vae(args, cfg):
    ds = load_dataset(_input(args.data))
    v = VAE(latent_dim=cfg.vae.latent_dim, hidden=cfg.vae.hidden)
    _, hist = train_vae(v, ds.features, cfg.vae_train)
    return _train_summary(v, os.path.join(cfg.output_dir, "vae.alu1"), hist)


def cmd_train_unified(args, cfg):
    ds = load_dataset(_input(args.data))
    v = load_checkpoint(_input(args.vae), VAE)
    c = LogitClassifier(hidden=tuple(cfg.classifier.hidden))
    _, hist = train_unified(v, c, ds.features, ds.labels, cfg.classifier_train, n_classes=ds.n_classes)
    return _train_summary(c, os.path.join(cfg.output_dir, "unified.alu1"), hist)


def cmd_attack(args, cfg):
    ds = load_dataset(_input(args.data), split="test")
    c = load_checkpoint(_input(args.classifier), LogitClassifier)
    v = load_checkpoint(_input(args.vae), VAE) if args.vae else None
    if cfg.attack.target == "pipeline" and v is None:
        raise ConfigError("a pipeline-targeted attack needs --vae")
    attack = cfg.attack if args.epsilon is None else dataclasses.replace(cfg.attack, epsilon=args.epsilon)
    cfg = dataclasses.replace(cfg, attack=attack)
    art = Artifacts(train=ds, test=ds, classifier=c, vae=v)
    adv, acfg = attack_test_set(cfg, art)
    adv_ds = dataclasses.replace(ds, features=adv)
    path = os.path.join(cfg.output_dir, "adversarial.alud")
    save_dataset(adv_ds, path)
    dump = os.path.join(cfg.output_dir, "attack_dump.csv")
    clean_logits, adv_logits = c.decision_function(ds.features), c.decision_function(adv)
    write_attack_dump(dump, clean_logits, adv_logits, ds.labels)
    return {
        "adversarial": path,
        "dump": dump,
        "attack": cfg.attack.name,
        "epsilon": acfg.epsilon,
        "step_size": acfg.step_size,
        "max_perturbation": float(np.max(np.abs(adv - ds.features))) if ds.n else 0.0,
        "clean_accuracy": float(np.mean(np.argmax(clean_logits, 1) == ds.labels)),
        "adversarial_accuracy": float(np.mean(np.argmax(adv_logits, 1) == ds.labels)),
    }


def cmd_purify(args, cfg):
    ds = load_dataset(_input(args.data))
    v = load_checkpoint(_input(args.vae), VAE)
    x_hat, trace = purify(v, ds.features, cfg.purify)
    path = os.path.join(cfg.output_dir, "purified.alud")
    save_dataset(dataclasses.replace(ds, features=x_hat), path)
    out = {"purified": path, "initial_loss_mean": float(trace.losses[0].mean()),
           "final_loss_mean": float(trace.losses[-1].mean()), "iterations": cfg.purify.iterations}
    if args.trace:
        trace.to_csv(args.trace, args.trace_sample)
        out["trace"] = args.trace
    return out


def cmd_calibrate(args, cfg):
    ds = load_dataset(_input(args.data))
    v = load_checkpoint(_input(args.vae), VAE)
    c = load_checkpoint(_input(args.classifier), LogitClassifier)
    th = alu.calibrate_threshold(v, c, ds.features, cfg.purify, cfg.percentile)
    return {**th.to_dict(include_statistics=False), "logits": "raw"}


def cmd_evaluate(args, cfg):
    return run_ablation(cfg).to_dict()


def cmd_analyze_patterns(args, cfg):
    clean, adv, labels = read_attack_dump(args.dump)
    return pattern_stats(clean, adv, labels)


def cmd_verify_proof(args, cfg):
    if args.instances < 1:
        raise ConfigError("--instances must be positive")
    return proof_report(args.instances, cfg.seed)


def cmd_sweep(args, cfg):
    records = sweep(cfg, args.parameter, args.values)
    return {
        "parameter": args.parameter,
        "columns": ["value", "clean_acc", "adv_acc", "clean_det_rate", "adv_det_rate"],
        "rows": sweep_rows(args.parameter, records),
        "config_hashes": [r.config_hash for r in records],
    }


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-classifier": cmd_train_classifier,
    "train-vae": cmd_train_vae,
    "train-unified": cmd_train_unified,
    "attack": cmd_attack,
    "purify": cmd_purify,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "analyze-patterns": cmd_analyze_patterns,
    "verify-proof": cmd_verify_proof,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    try:
        cfg = _config(args)
        _emit(args, args.command, COMMANDS[args.command](args, cfg))
    except ConfigError as exc:
        print(f"alulab: config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"alulab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
