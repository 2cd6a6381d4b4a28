"""Command-line surface: gen-synthetic, mine-rules, train, evaluate, retrieve.

Every subcommand can read a TOML config (keys = long flag names with
underscores); explicit flags win over the config, which wins over the
defaults. Reports go to stdout as JSON, a human-readable table goes to
stderr, and error categories map to distinct exit codes.
"""

from __future__ import annotations

import argparse
import json
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .catalog import load_catalog, load_pairs, sample_triplets, split_pairs
from .errors import InputError, OutfitMatchError
from .metrics import (
    ModelScorer,
    TeacherScorer,
    evaluate_triplets,
    mrr_retrieval,
    pop_baseline,
    rand_baseline,
)
from .rules import mine_rules, parse_rules, write_rules
from .synthetic import gen_synthetic
from .training import TrainConfig, load_checkpoint, paper_preset, save_checkpoint, train

# Evaluation triplets draw from their own seed stream, far from the
# per-epoch training streams (seed+1 .. seed+epochs).
TEST_SAMPLE_SEED_OFFSET = 2_000_003


def _emit(report: dict, table: list[tuple[str, object]]) -> None:
    json.dump(report, sys.stdout)
    sys.stdout.write("\n")
    width = max((len(k) for k, _ in table), default=0)
    for key, val in table:
        print(f"{key.ljust(width)}  {val}", file=sys.stderr)


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _merged(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults <- config file <- explicit flags."""
    merged = dict(defaults)
    file_cfg = _load_config_file(args.config)
    for key, val in file_cfg.items():
        key = key.replace("-", "_")
        if key not in merged:
            raise InputError(f"unknown config key {key!r}")
        merged[key] = tuple(val) if isinstance(val, list) else val
    for key in merged:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


_TRAIN_DEFAULTS = {
    "epochs": None,
    "batch": None,
    "lr": None,
    "momentum": None,
    "lambda_reg": None,
    "c": None,
    "rho_max": None,
    "rho_alpha": None,
    "seed": None,
    "m": None,
    "hidden": None,
    "attention_hidden": None,
    "select": None,
}


def _train_config(args) -> TrainConfig:
    base = paper_preset() if getattr(args, "preset", None) == "paper" else TrainConfig()
    opts = _merged(args, _TRAIN_DEFAULTS)
    hidden = opts["hidden"]
    if isinstance(hidden, str):
        hidden = tuple(int(h) for h in hidden.split(","))
    return TrainConfig(
        epochs=opts["epochs"] if opts["epochs"] is not None else base.epochs,
        batch_size=opts["batch"] if opts["batch"] is not None else base.batch_size,
        learning_rate=opts["lr"] if opts["lr"] is not None else base.learning_rate,
        momentum=opts["momentum"] if opts["momentum"] is not None else base.momentum,
        lambda_reg=(
            opts["lambda_reg"] if opts["lambda_reg"] is not None else base.lambda_reg
        ),
        c=opts["c"] if opts["c"] is not None else base.c,
        rho_max=opts["rho_max"] if opts["rho_max"] is not None else base.rho_max,
        rho_alpha=opts["rho_alpha"] if opts["rho_alpha"] is not None else base.rho_alpha,
        seed=opts["seed"] if opts["seed"] is not None else base.seed,
        m_negatives=opts["m"] if opts["m"] is not None else base.m_negatives,
        hidden_sizes=tuple(hidden) if hidden is not None else base.hidden_sizes,
        attention_hidden=(
            opts["attention_hidden"]
            if opts["attention_hidden"] is not None
            else base.attention_hidden
        ),
        select=opts["select"] if opts["select"] is not None else base.select,
    )


def cmd_train(args) -> int:
    cfg = _train_config(args)
    catalog = load_catalog(args.items)
    pairs = load_pairs(args.pairs, catalog)
    train_pairs, valid_pairs, _ = split_pairs(pairs, seed=cfg.seed)
    rules = parse_rules(args.rules) if args.rules else None

    def log_epoch(stats, _theta, _phi):
        vauc = "-" if stats.valid_auc is None else f"{stats.valid_auc:.4f}"
        print(
            f"{stats.epoch}\t{stats.loss:.6f}\t{stats.train_auc:.4f}\t{vauc}\t{stats.rho:.4f}",
            file=sys.stderr,
        )

    resume = load_checkpoint(args.resume) if args.resume else None
    ckpt = train(
        catalog, train_pairs, valid_pairs, rules, cfg, resume_from=resume, on_epoch=log_epoch
    )
    save_checkpoint(ckpt, args.out)
    report = {
        "checkpoint": str(args.out),
        "epochs": ckpt.epoch,
        "best_epoch": ckpt.best_epoch,
        "best_valid_auc": ckpt.best_valid_auc,
        "final_train_loss": ckpt.history[-1].loss if ckpt.history else None,
        "n_rules": len(rules) if rules is not None else 0,
        "mode": "distill" if rules is not None else "plain",
    }
    _emit(report, list(report.items()))
    return 0


def _eval_setup(args):
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.config
    seed = args.seed if args.seed is not None else cfg.seed
    m = args.m if args.m is not None else cfg.m_negatives
    c = args.c if args.c is not None else cfg.c
    catalog = load_catalog(args.items)
    pairs = load_pairs(args.pairs, catalog)
    train_pairs, _, test_pairs = split_pairs(pairs, seed=seed)
    student, attention = ckpt.selected_params(args.params)
    rules = parse_rules(args.rules) if args.rules else None
    if args.mode == "q":
        if rules is None:
            raise InputError("teacher-mode scoring needs --rules")
        scorer = TeacherScorer(student, attention, rules, catalog, c)
    elif args.scorer == "pop":
        scorer = pop_baseline(train_pairs)
    elif args.scorer == "rand":
        scorer = rand_baseline(seed)
    else:
        scorer = ModelScorer(student, catalog)
    return catalog, pairs, train_pairs, test_pairs, rules, scorer, seed, m


def cmd_evaluate(args) -> int:
    catalog, pairs, _train_pairs, test_pairs, rules, scorer, seed, m = _eval_setup(args)
    triplets = sample_triplets(
        catalog, test_pairs, m, seed=seed + TEST_SAMPLE_SEED_OFFSET, exclude=pairs
    )
    report_obj = evaluate_triplets(
        scorer,
        triplets,
        rules=rules if args.per_rule else None,
        catalog=catalog if args.per_rule else None,
    )
    report = {
        "auc": report_obj.auc,
        "n_triplets": report_obj.n_triplets,
        "mode": args.mode,
        "scorer": args.scorer,
        "seed": seed,
    }
    if report_obj.per_rule is not None:
        report["per_rule_auc"] = {str(k): v for k, v in report_obj.per_rule.items()}
    _emit(report, [(k, v) for k, v in report.items() if k != "per_rule_auc"])
    return 0


def cmd_retrieve(args) -> int:
    catalog, _pairs, train_pairs, test_pairs, _rules, scorer, seed, _m = _eval_setup(args)
    result = mrr_retrieval(
        scorer,
        catalog,
        test_pairs,
        train_pairs,
        args.t_candidates,
        seed=seed + TEST_SAMPLE_SEED_OFFSET,
        split=args.split,
    )
    report = {
        "mrr": result.mrr,
        "t_candidates": result.t_candidates,
        "split": result.split,
        "n_queries": result.n_queries,
        "mode": args.mode,
        "seed": seed,
    }
    _emit(report, list(report.items()))
    return 0


def cmd_gen_synthetic(args) -> int:
    opts = _merged(
        args,
        {
            "n_tops": 500,
            "n_bottoms": 500,
            "n_pairs": 2000,
            "d_v": 12,
            "d_c": 16,
            "noise": 0.2,
            "rule_boost": 0.85,
            "seed": 0,
        },
    )
    ds = gen_synthetic(
        args.out_dir,
        n_tops=opts["n_tops"],
        n_bottoms=opts["n_bottoms"],
        n_pairs=opts["n_pairs"],
        d_v=opts["d_v"],
        d_c=opts["d_c"],
        noise=opts["noise"],
        rule_boost=opts["rule_boost"],
        seed=opts["seed"],
    )
    report = {
        "items": str(ds.items_path),
        "pairs": str(ds.pairs_path),
        "rules": str(ds.rules_path),
        "lexicon": str(ds.lexicon_path),
        "n_tops": ds.n_tops,
        "n_bottoms": ds.n_bottoms,
        "n_pairs": ds.n_pairs,
    }
    _emit(report, list(report.items()))
    return 0


def cmd_mine_rules(args) -> int:
    catalog = load_catalog(args.items)
    pairs = load_pairs(args.pairs, catalog)
    if args.use_train_split:
        seed = args.seed if args.seed is not None else 0
        pairs, _, _ = split_pairs(pairs, seed=seed)
    with open(args.lexicon, "r", encoding="utf-8") as fh:
        lexicon = {attr: set(vals) for attr, vals in json.load(fh).items()}
    candidates = mine_rules(catalog, pairs, lexicon, args.top_n, args.bottom_n)
    write_rules(args.out, candidates)
    report = {
        "out": str(args.out),
        "n_candidates": len(candidates),
        "n_pairs_mined": len(pairs),
    }
    _emit(report, list(report.items()))
    return 0


def _add_eval_flags(sub):
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--items", required=True)
    sub.add_argument("--pairs", required=True)
    sub.add_argument("--rules", default=None)
    sub.add_argument("--config", default=None)
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--m", type=int, default=None, help="negatives per test pair")
    sub.add_argument("--c", type=float, default=None)
    sub.add_argument("--mode", choices=("p", "q"), default="p")
    sub.add_argument("--scorer", choices=("model", "pop", "rand"), default="model")
    sub.add_argument(
        "--params",
        choices=("best", "last"),
        default=None,
        help="which checkpoint snapshot to score with",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="outfitmatch",
        description="Train and evaluate rule-distilled outfit compatibility models.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-synthetic", help="generate a planted-rule dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--n-tops", type=int, default=None)
    p.add_argument("--n-bottoms", type=int, default=None)
    p.add_argument("--n-pairs", type=int, default=None)
    p.add_argument("--d-v", type=int, default=None)
    p.add_argument("--d-c", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--rule-boost", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_synthetic)

    p = subs.add_parser("mine-rules", help="emit co-occurrence rule candidates")
    p.add_argument("--items", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--lexicon", required=True, help="JSON {attribute: [values]}")
    p.add_argument("--out", required=True)
    p.add_argument("--top-n", type=int, default=10)
    p.add_argument("--bottom-n", type=int, default=10)
    p.add_argument("--use-train-split", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_mine_rules)

    p = subs.add_parser("train", help="train the model (distilled or plain)")
    p.add_argument("--items", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--rules", default=None, help="omit to train the plain baseline")
    p.add_argument("--out", default="checkpoint.json")
    p.add_argument("--resume", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--lambda", dest="lambda_reg", type=float, default=None)
    p.add_argument("--c", type=float, default=None)
    p.add_argument("--rho-max", type=float, default=None)
    p.add_argument("--rho-alpha", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--m", type=int, default=None, help="negatives per positive pair")
    p.add_argument("--hidden", default=None, help="comma-separated layer widths")
    p.add_argument("--attention-hidden", type=int, default=None)
    p.add_argument("--select", choices=("best", "last"), default=None)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("evaluate", help="AUC on held-out triplets")
    _add_eval_flags(p)
    p.add_argument("--per-rule", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("retrieve", help="MRR over ranked candidate bottoms")
    _add_eval_flags(p)
    p.add_argument("--split", choices=("observed", "unobserved", "all"), default="all")
    p.add_argument("--t-candidates", type=int, default=10)
    p.set_defaults(func=cmd_retrieve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OutfitMatchError as exc:
        print(f"error[{exc.__class__.__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error[{exc.__class__.__name__}]: {exc}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
