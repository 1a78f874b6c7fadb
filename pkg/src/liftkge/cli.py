"""Command-line entry point: ``liftkge {train,eval,count-params,sweep}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
(malformed data, diverged training, incompatible checkpoint).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import PRESETS, ConfigError, ExperimentConfig, preset
from .data import DatasetError, build_filter_index, load_dataset
from .evaluation import evaluate
from .liftnet import PlanningError
from .models import CheckpointError, load_checkpoint, save_checkpoint
from .reporting import DATASET_SIZES, count_model_params, count_params, efficiency_percentage, emit_table
from .training import TrainingDiverged, lr_grid_search

log = logging.getLogger("liftkge")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
SWEEP_AXES = ("input_dim", "output_dim", "layers", "fc_variant")


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("experiment")
    g.add_argument("--config", help="JSON config file (a train summary.json also works)")
    g.add_argument("--preset", choices=sorted(PRESETS), default="reproduce", help="base settings when no --config")
    g.add_argument("--data", help="dataset directory")
    g.add_argument("--format", choices=("openke", "tsv"))
    g.add_argument("--model", help="TransE, TransH, DistMult or ComplEx")
    g.add_argument("--dim", type=int, help="entity embedding dimension")
    g.add_argument("--out-dim", type=int, help="score-space dimension (relations, lifted entities)")
    g.add_argument("--liftnet", choices=("none", "tc", "fc"))
    g.add_argument("--layers", type=int)
    g.add_argument("--p", type=int, choices=(1, 2), help="norm order of translational distances")
    g.add_argument("--lr", type=float, help="fixed learning rate (disables the grid)")
    g.add_argument("--lr-grid", type=_floats)
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch", type=int)
    g.add_argument("--margin", type=float)
    g.add_argument("--negatives", type=int)
    g.add_argument("--eval-every", type=int)
    g.add_argument("--dtype", choices=("float64", "float32"))
    g.add_argument("--tie-policy", choices=("optimistic", "average"))
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory")


def _load_config_file(path: str) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{p}: invalid JSON: {err}") from None
    if isinstance(d, dict) and "config" in d and isinstance(d["config"], dict):
        d = d["config"]
    if not isinstance(d, dict):
        raise ConfigError(f"{p}: config must be a JSON object")
    return ExperimentConfig.from_dict(d)


def resolve_config(args) -> ExperimentConfig:
    """Config file (or preset) first, then command-line flags on top.

    Without a lifting network the model has one dimension: ``--dim``, else
    ``--out-dim``, else the configured entity dimension.
    """
    cfg = _load_config_file(args.config) if args.config else preset(args.preset)
    d = cfg.to_dict()
    train = d["train"]
    top = dict(data=args.data, format=args.format, model=args.model, liftnet=args.liftnet,
               layers=args.layers, p=args.p, out=args.out)
    flags = dict(max_epochs=args.epochs, batch_size=args.batch, margin=args.margin,
                 negatives_per_positive=args.negatives, eval_every=args.eval_every, dtype=args.dtype,
                 tie_policy=args.tie_policy, seed=args.seed)
    d.update({k: v for k, v in top.items() if v is not None})
    train.update({k: v for k, v in flags.items() if v is not None})
    if args.lr is not None:
        train["learning_rate"], train["lr_grid"] = args.lr, None
    if args.lr_grid is not None:
        train["lr_grid"] = args.lr_grid
    if d["liftnet"] == "none":
        n = next(v for v in (args.dim, args.out_dim, d["entity_dim"], d["dim"]) if v is not None)
        d["entity_dim"], d["dim"] = n, n
    else:
        if args.dim is not None:
            d["entity_dim"] = args.dim
        if args.out_dim is not None:
            d["dim"] = args.out_dim
    return ExperimentConfig.from_dict(d)


def _load_kg(cfg: ExperimentConfig):
    path = Path(cfg.data)
    if not path.is_dir():
        raise UsageError(f"dataset directory not found: {path}")
    return load_dataset(str(path), cfg.format)


def _dataset_name(path: str) -> str:
    return Path(path).name.upper()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _run(cfg: ExperimentConfig, kg, filt):
    """Grid-search training plus test evaluation; returns (params, best_lr, records, summary)."""
    best_lr, params, records = lr_grid_search(kg, cfg.spec(), cfg.train, filt)
    rec = records[best_lr]
    summary = {
        "config": cfg.to_dict(),
        "dataset": _dataset_name(cfg.data),
        "model": cfg.spec().label,
        "best_lr": best_lr,
        "best_epoch": rec.best_epoch,
        "best_valid_mrr": rec.best_valid_mrr,
        "lr_runs": {
            repr(lr): {"best_valid_mrr": r.best_valid_mrr, "best_epoch": r.best_epoch, "diverged": r.diverged}
            for lr, r in records.items()
        },
        "params": count_model_params(params).to_dict(),
    }
    for split in ("valid", "test"):
        if len(kg.split(split)):
            summary[split] = evaluate(params, kg.split(split), filt, split, cfg.eval_ks, cfg.train.tie_policy).to_dict()
    return params, best_lr, records, summary


def _summary_row(summary: dict) -> dict:
    rep = summary.get("test") or summary.get("valid") or {"mrr": None, "hits": {}}
    return {
        "dataset": summary["dataset"],
        "model": summary["model"],
        "dim": summary["config"]["entity_dim"] or summary["config"]["dim"],
        "mrr": rep["mrr"],
        "h1": rep["hits"].get("1"),
        "h10": rep["hits"].get("10"),
        "params_exact": summary["params"]["params_exact"],
        "params_millions": summary["params"]["params_millions"],
        "percentage": None,
    }


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    kg = _load_kg(cfg)
    filt = build_filter_index(kg)
    params, best_lr, records, summary = _run(cfg, kg, filt)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out / "checkpoint.npz", {"best_lr": best_lr, "dataset": summary["dataset"]})
    _write(out / "train_log.csv", records[best_lr].to_csv())
    _write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    row = _summary_row(summary)
    _write(out / "report.md", emit_table([row], "markdown"))
    _write(out / "report.csv", emit_table([row], "csv"))
    print(json.dumps({k: summary[k] for k in ("model", "best_lr", "best_valid_mrr")}, sort_keys=True))
    if "test" in summary:
        print(f"test mrr {summary['test']['mrr']:.4f} h@1 {summary['test']['hits']['1']:.4f} "
              f"h@10 {summary['test']['hits']['10']:.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    if not Path(args.data).is_dir():
        raise UsageError(f"dataset directory not found: {args.data}")
    params, _ = load_checkpoint(args.checkpoint)
    kg = load_dataset(args.data, args.format)
    if (params.entity_count, params.relation_count) != (kg.entity_count, kg.relation_count):
        raise RuntimeFailure(
            f"checkpoint has {params.entity_count} entities / {params.relation_count} relations, "
            f"dataset has {kg.entity_count} / {kg.relation_count}"
        )
    triples = kg.split(args.split)
    if not len(triples):
        raise RuntimeFailure(f"split {args.split!r} is empty")
    report = evaluate(params, triples, build_filter_index(kg), args.split, args.ks, args.tie_policy)
    text = report.to_json()
    print(text)
    if args.out:
        _write(Path(args.out), text + "\n")
    return EXIT_OK


def _sizes(args, cfg):
    if args.entities is not None or args.relations is not None:
        if args.entities is None or args.relations is None:
            raise UsageError("--entities and --relations go together")
        return "custom", args.entities, args.relations
    if args.dataset:
        key = args.dataset.upper()
        if key not in DATASET_SIZES:
            raise UsageError(f"unknown dataset {args.dataset!r}; known: {', '.join(DATASET_SIZES)}")
        return key, *DATASET_SIZES[key]
    kg = _load_kg(cfg)
    return _dataset_name(cfg.data), kg.entity_count, kg.relation_count


def cmd_count_params(args) -> int:
    if args.checkpoint:
        if not Path(args.checkpoint).is_file():
            raise UsageError(f"checkpoint not found: {args.checkpoint}")
        params, extra = load_checkpoint(args.checkpoint)
        report = count_model_params(params)
        name, E, R = extra.get("dataset", "checkpoint"), params.entity_count, params.relation_count
        kind, dim, entity_dim = params.kind.value, params.dim, params.entity_dim
        label = f"{'LN-' if params.lift is not None else ''}{kind} ({entity_dim})"
    else:
        cfg = resolve_config(args)
        spec = cfg.spec()
        name, E, R = _sizes(args, cfg)
        kind, dim, entity_dim = spec.kind, spec.dim, spec.input_dim
        report = count_params(kind, E, R, entity_dim, dim, spec.lift_config())
        label = spec.label
    row = {"dataset": name, "model": label, "dim": entity_dim, "params_exact": report.exact_count,
           "params_millions": report.millions, "percentage": None}
    rows = [row]
    if args.baseline:
        base = count_params(kind, E, R, dim, dim)
        row["percentage"] = efficiency_percentage(report, base)
        rows.insert(0, {"dataset": name, "model": f"{kind} ({dim})", "dim": dim, "params_exact": base.exact_count,
                        "params_millions": base.millions, "percentage": 100.0})
    print(emit_table(rows, args.table_format), end="")
    return EXIT_OK


def _sweep_config(cfg: ExperimentConfig, axis: str, value: int) -> ExperimentConfig:
    if axis == "input_dim":
        return cfg.override(entity_dim=value, liftnet="tc" if cfg.liftnet == "none" else cfg.liftnet)
    if axis == "output_dim":
        return cfg.override(dim=value, liftnet="tc" if cfg.liftnet == "none" else cfg.liftnet)
    if axis == "layers":
        return cfg.override(layers=value, liftnet="tc")
    return cfg.override(layers=value, liftnet="fc")


def cmd_sweep(args) -> int:
    base = resolve_config(args)
    kg = _load_kg(base)
    filt = build_filter_index(kg)
    rows = []
    for value in args.values:
        row = {"dataset": _dataset_name(base.data), "model": base.model, "dim": None, "axis": args.axis,
               "axis_value": value, "status": "ok", "lr": None, "mrr": None, "h1": None, "h3": None,
               "h10": None, "params_exact": None, "params_millions": None, "percentage": None}
        try:
            cfg = _sweep_config(base, args.axis, value)
            spec = cfg.spec()
            spec.lift_config()
        except (PlanningError, ConfigError, ValueError) as err:
            log.warning("%s=%s skipped: %s", args.axis, value, err)
            row["status"] = f"infeasible: {err}"
            rows.append(row)
            continue
        try:
            params, best_lr, _, summary = _run(cfg, kg, filt)
        except TrainingDiverged as err:
            log.warning("%s=%s diverged: %s", args.axis, value, err)
            row["status"] = f"diverged: {err}"
            rows.append(row)
            continue
        rep = summary.get("test") or summary.get("valid")
        pr = summary["params"]
        row.update(model=spec.label, dim=spec.input_dim, lr=best_lr, mrr=rep["mrr"], h1=rep["hits"].get("1"),
                   h3=rep["hits"].get("3"), h10=rep["hits"].get("10"), params_exact=pr["params_exact"],
                   params_millions=pr["params_millions"])
        rows.append(row)
    out = Path(base.out)
    _write(out / "sweep.csv", emit_table(rows, "csv"))
    _write(out / "sweep.md", emit_table(rows, "markdown"))
    print(emit_table(rows, "markdown"), end="")
    if all(r["status"] != "ok" for r in rows):
        print("every sweep value failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="liftkge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train with the lr grid and write checkpoint, log, summary, report")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("openke", "tsv"), default="openke")
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--ks", type=_ints, default=[1, 3, 10])
    p.add_argument("--tie-policy", choices=("optimistic", "average"), default="optimistic")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("count-params", help="exact parameter count of a config or checkpoint")
    _add_experiment_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--dataset", help="use known sizes: " + ", ".join(DATASET_SIZES))
    p.add_argument("--entities", type=int)
    p.add_argument("--relations", type=int)
    p.add_argument("--baseline", action="store_true", help="also print the unlifted model at the output dim")
    p.add_argument("--table-format", choices=("markdown", "csv", "json"), default="markdown")
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("sweep", help="train one model per value of an axis and write sweep.csv")
    _add_experiment_flags(p)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", type=_ints, required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, PlanningError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, CheckpointError, TrainingDiverged, RuntimeFailure) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
