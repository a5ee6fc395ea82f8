"""Command-line entry point: ``murphy <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from ..schema import load_schema, rlls_schema
from ..synthgen import generate_dataset, save_dataset
from .ablation import VARIANTS, run_ablation
from .config import ExperimentConfig, load_config
from .gradcheck import MODULES, grad_check
from .training import evaluate, train


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    schema = load_schema(args.schema) if args.schema else rlls_schema()
    n_train = args.train_sequences if args.train_sequences is not None else (2 * args.sequences) // 3
    if not 0 <= n_train <= args.sequences:
        raise SystemExit("--train-sequences must lie between 0 and --sequences")
    gen = replace(cfg.data.gen, rng_seed=args.seed)
    ds = generate_dataset(
        schema, gen, cfg.data.features, n_train, args.sequences - n_train,
        cfg.data.train_styles, cfg.data.test_styles,
    )
    save_dataset(ds, args.out)
    _print({"out": str(args.out), "train": len(ds.split.train), "test": len(ds.split.test),
            "frames": sum(len(s) for s in ds.sequences)})
    return 0


def cmd_train(args) -> int:
    overrides = {"output_dir": args.output_dir} if args.output_dir else None
    cfg = load_config(args.config, overrides)
    result = train(cfg, resume_from=args.resume)
    _print({"run_dir": str(result.run_dir), "sap3": result.report["sap3"], "sap6": result.report["sap6"]})
    return 0


def cmd_eval(args) -> int:
    report = evaluate(args.checkpoint, args.split, data_dir=args.data_dir)
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _print(report)
    return 0


def cmd_ablate(args) -> int:
    overrides = {"output_dir": args.output_dir} if args.output_dir else None
    cfg = load_config(args.config, overrides)
    doc = run_ablation(cfg, variants=args.variants, seeds=args.seeds)
    _print({v: r["mean"] for v, r in doc["variants"].items()})
    return 0


def cmd_gradcheck(args) -> int:
    modules = MODULES if args.module == "all" else (args.module,)
    failed = False
    for m in modules:
        res = grad_check(m, eps=args.eps, seed=args.seed, zero_params=args.zero_params)
        ok = res.max_rel_error < args.tol
        failed |= not ok
        print(json.dumps(asdict(res) | {"pass": ok}))
    return 1 if failed and not args.zero_params else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="murphy", description="Hierarchical surgical workflow recognition on synthetic data.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    g.add_argument("--schema", type=Path, help="schema JSON (default: bundled RLLS-shaped schema)")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--sequences", type=int, default=60)
    g.add_argument("--train-sequences", type=int, help="sequences drawn from train styles (default: two thirds)")
    g.add_argument("--config", type=Path, help="take generator and feature settings from this config")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one configuration")
    t.add_argument("--config", type=Path, required=True)
    t.add_argument("--resume", type=Path, help="checkpoint to resume from")
    t.add_argument("--output-dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--data-dir", type=Path, help="dataset directory (default: regenerate from the checkpoint config)")
    e.add_argument("--out", type=Path, help="also write the report here")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train every ablation variant over several seeds")
    a.add_argument("--config", type=Path, required=True)
    a.add_argument("--variants", nargs="+", choices=tuple(VARIANTS), default=tuple(VARIANTS))
    a.add_argument("--seeds", nargs="+", type=int, help="override the config's ablation_seeds")
    a.add_argument("--output-dir")
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("gradcheck", help="finite-difference gradient check")
    c.add_argument("--module", choices=MODULES + ("all",), default="all")
    c.add_argument("--eps", type=float, default=1e-5)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tol", type=float, default=1e-4)
    c.add_argument("--zero-params", action="store_true")
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
