"""Command-line entry point: synth, train, eval, ablate, sweep-missing, similarity."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import typing
from dataclasses import fields
from pathlib import Path

from .config import RunConfig, load_config
from .data import export_subjects, generate_synthetic
from .experiments import (METRIC_FIELDS, run_ablation, similarity_report, summarize_sweep,
                          sweep_missing, write_csv)
from .model import GraphModel
from .training import load_dataset, prepare, run_eval, run_train

log = logging.getLogger("omnigraph")


def parse_missing(text):
    """``G=0.4,T=0.2`` -> ``{"G": 0.4, "T": 0.2}``."""
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, sep, val = part.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected MODALITY=RATIO, got {part!r}")
        out[key.strip().upper()] = float(val)
    return out


def _optional_int(text):
    return None if text.lower() in ("none", "") else int(text)


def add_config_flags(p, seed_required=False):
    """One flag per RunConfig field; unset flags leave the default untouched."""
    hints = typing.get_type_hints(RunConfig)
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = hints[f.name]
        if f.name == "seed":
            p.add_argument(flag, type=int, required=seed_required,
                           **({} if seed_required else {"default": argparse.SUPPRESS}))
        elif f.name == "missing":
            p.add_argument(flag, type=parse_missing, default=argparse.SUPPRESS,
                           help="per-modality missing ratios, e.g. G=0.4")
        elif kind is bool:
            p.add_argument(flag, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS)
        elif f.name == "max_folds":
            p.add_argument(flag, type=_optional_int, default=argparse.SUPPRESS)
        else:
            p.add_argument(flag, type=kind, default=argparse.SUPPRESS)
    p.add_argument("--config", type=Path, help="JSON config; its keys override flags")


def config_from_args(args):
    names = {f.name for f in fields(RunConfig)}
    given = {k: v for k, v in vars(args).items() if k in names}
    config = RunConfig().updated(**given)
    if getattr(args, "config", None) is not None:
        config = load_config(args.config, base=config)
    return config.validate()


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out is not None:
        Path(out).write_text(text + "\n")
    print(text)


def cmd_synth(args):
    data = generate_synthetic(args.n_subjects, class_count=args.classes, seed=args.seed,
                              cell_graphs=args.cell_graphs)
    export_subjects(data, args.out)
    print(f"wrote {len(data)} subjects to {args.out}")
    return 0


def cmd_train(args):
    config = config_from_args(args)
    _, report = run_train(config, out_dir=args.out)
    _emit(report)
    return 0


def cmd_eval(args):
    dataset = None
    if args.data is not None:
        from .data import import_subjects
        dataset = import_subjects(args.data)
    _emit(run_eval(args.checkpoint, dataset=dataset), args.out)
    return 0


def cmd_ablate(args):
    config = config_from_args(args)
    rows = run_ablation(config)
    write_csv(rows, args.out, fields=("variant",) + METRIC_FIELDS)
    for r in rows:
        print(",".join("" if r.get(k) is None else str(r.get(k)) for k in ("variant",) + METRIC_FIELDS))
    failed = [r for r in rows if "error" in r]
    for r in failed:
        print(f"variant {r['variant']} failed: {r['error']}", file=sys.stderr)
    return 1 if failed else 0


def cmd_sweep(args):
    config = config_from_args(args)
    rows = sweep_missing(config, args.modality, etas=args.etas, seeds=args.seeds)
    write_csv(rows, args.out, fields=("eta", "seed", "variant") + METRIC_FIELDS)
    for (eta, variant), auc in summarize_sweep(rows).items():
        print(f"eta={eta:g} {variant} mean_auc={auc:.4f}")
    return 0


def cmd_similarity(args):
    model = GraphModel.load(args.checkpoint)
    dataset = load_dataset(model.config)
    dataset, _ = prepare(model.config, dataset)
    match = [s for s in dataset if s.subject_id == args.subject]
    if not match:
        raise ValueError(f"subject {args.subject!r} not in dataset")
    missing = None if args.missing.lower() in ("none", "") else args.missing
    _emit(similarity_report(model, match[0], missing), args.out)
    return 0


def _float_list(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _int_list(text):
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser():
    parser = argparse.ArgumentParser(prog="omnigraph", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic cohort as line-delimited JSON")
    p.add_argument("--n-subjects", type=int, default=300)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--cell-graphs", action="store_true")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="cross-validated training with checkpoints")
    add_config_flags(p, seed_required=True)
    p.add_argument("--out", type=Path, help="checkpoint directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="re-evaluate saved fold checkpoints")
    p.add_argument("--checkpoint", type=Path, required=True, help="directory written by train")
    p.add_argument("--data", type=Path, help="subject file (defaults to the training data)")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train every ablation variant; CSV of mean metrics")
    add_config_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-missing", help="full vs zero-init across missing ratios")
    add_config_flags(p)
    p.add_argument("--modality", default="G")
    p.add_argument("--etas", type=_float_list, default=[0.2, 0.4, 0.6, 0.8])
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2, 3, 4])
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("similarity", help="edge weights of a full vs a completed subject graph")
    p.add_argument("--checkpoint", type=Path, required=True, help="fold checkpoint (.npz)")
    p.add_argument("--subject", required=True)
    p.add_argument("--missing", default="G", help="modality to remove and complete, or none")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_similarity)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
