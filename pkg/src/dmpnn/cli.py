"""Command-line frontend: ``dmpnn {train,predict,hyperopt,split,eval,featurize}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .chem import SmilesError, parse_smiles
from .data import (
    DATA_DIR,
    DataError,
    Dataset,
    SplitSpec,
    file_digest,
    load_csv,
    read_smiles_rows,
    split,
    unlabeled_dataset,
    write_json_atomic,
    write_split,
)
from .experiment import run_once, summarize
from .featurize import DESCRIPTOR_NAMES, DimensionMismatch, compute_descriptors, load_feature_file, morgan_fingerprint
from .pipeline import attach_raw_features, parse_feature_option
from .train import (
    METRICS,
    CheckpointError,
    Diverged,
    HyperSpace,
    TrainConfig,
    average_predictions,
    evaluate,
    hyperopt,
    load_checkpoint,
    save_checkpoint,
    training_objective,
)
from .train.hyperopt import metric_minimizes
from .train.metrics import CLASSIFICATION_METRICS, MetricError, default_metric
from .train.optim import AllMissing

logger = logging.getLogger("dmpnn")

EXIT_FLAGS, EXIT_DATA, EXIT_DIVERGED = 2, 3, 4

# flag -> default; None means "derived later"
TRAIN_DEFAULTS = {
    "task_type": "regression",
    "split": "random",
    "sizes": "0.8,0.1,0.1",
    "seed": 0,
    "num_runs": 1,
    "depth": 3,
    "hidden": 300,
    "ffn_layers": 2,
    "dropout": 0.0,
    "epochs": 30,
    "batch": 50,
    "messages": "directed",
    "features": "none",
    "ensemble": 1,
    "save": "dmpnn_out",
    "metric": None,
    "iters": 50,
    "splits": 3,
    "random_search": False,
}


class FlagError(Exception):
    pass


def _add_data_flags(p, required=True):
    p.add_argument("--data", required=required, help="CSV path or bundled dataset name (esol, freesolv)")
    p.add_argument("--task-type", choices=("regression", "classification"), default=None)


def _add_split_flags(p):
    p.add_argument("--split", choices=("random", "scaffold", "index"), default=None)
    p.add_argument("--sizes", default=None, help="train,val,test fractions (default 0.8,0.1,0.1)")
    p.add_argument("--seed", type=int, default=None)


def _add_model_flags(p):
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--ffn-layers", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--messages", choices=("directed", "undirected", "atom"), default=None)
    p.add_argument("--features", default=None, help="none | native | file:PATH")
    p.add_argument("--metric", choices=sorted(METRICS), default=None)
    p.add_argument("--config", default=None, help="JSON of flag values, or a run manifest to repeat (flags win)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmpnn", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and evaluate over seeded splits")
    _add_data_flags(p, required=False)
    _add_split_flags(p)
    _add_model_flags(p)
    p.add_argument("--num-runs", type=int, default=None, help="number of split seeds (seed, seed+1, ...)")
    p.add_argument("--ensemble", type=int, default=None)
    p.add_argument("--save", default=None, help="output directory")

    p = sub.add_parser("predict", help="predict with one or more checkpoints")
    p.add_argument("--checkpoint", "--checkpoints", nargs="+", required=True, dest="checkpoints")
    p.add_argument("--data", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--features-file", default=None, help="raw feature CSV for models trained with file features")

    p = sub.add_parser("hyperopt", help="search depth, hidden size, FFN layers and dropout")
    _add_data_flags(p, required=False)
    _add_split_flags(p)
    _add_model_flags(p)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--splits", type=int, default=None, help="seeded splits averaged per trial")
    p.add_argument("--random-search", action="store_true", default=None)
    p.add_argument("--save", default=None)

    p = sub.add_parser("split", help="write train/val/test CSVs and a manifest")
    _add_data_flags(p)
    p.add_argument("--type", "--split", dest="split", choices=("random", "scaffold", "index"), default="random")
    p.add_argument("--sizes", default="0.8,0.1,0.1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score a prediction CSV against a labeled CSV")
    p.add_argument("--preds", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--task-type", choices=("regression", "classification"), default="regression")
    p.add_argument("--metric", action="append", choices=sorted(METRICS), default=None)
    p.add_argument("--output", default=None, help="JSON report path")

    p = sub.add_parser("featurize", help="write fingerprint or descriptor CSVs")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=("morgan", "morgan-count", "descriptors"), default="morgan")
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--bits", type=int, default=2048)
    p.add_argument("--output", required=True)
    return parser


# --- option resolution ------------------------------------------------------


def resolve(args: argparse.Namespace) -> dict:
    """Flags > config file > defaults.

    The config may also be a ``manifest.json`` from an earlier run, whose
    recorded options and data path are then reused.
    """
    cfg_file = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                cfg_file = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise FlagError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg_file, dict):
            raise FlagError("config file must hold a flat JSON object")
        if isinstance(cfg_file.get("options"), dict) and "command" in cfg_file:
            cfg_file = {**cfg_file["options"], "data": cfg_file.get("data")}
        cfg_file = {k.replace("-", "_"): v for k, v in cfg_file.items()}
        unknown = set(cfg_file) - set(TRAIN_DEFAULTS) - {"data"}
        if unknown:
            raise FlagError(f"unknown config keys {sorted(unknown)}")
    out = {}
    for key, default in TRAIN_DEFAULTS.items():
        flag = getattr(args, key, None)
        out[key] = flag if flag is not None else cfg_file.get(key, default)
    out["data"] = getattr(args, "data", None) or cfg_file.get("data")
    if not out["data"]:
        raise FlagError("--data is required (on the command line or in --config)")
    return out


def parse_sizes(text) -> tuple[float, float, float]:
    try:
        vals = tuple(float(v) for v in (text.split(",") if isinstance(text, str) else text))
        spec = SplitSpec(vals)
    except (ValueError, DataError) as exc:
        raise FlagError(f"bad --sizes {text!r}: {exc}") from exc
    return spec.fractions


def resolve_data_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    bundled = DATA_DIR / f"{name.lower()}.csv"
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"no such data file: {name}")


def train_config_from(opts: dict) -> TrainConfig:
    for key in ("depth", "hidden", "ffn_layers", "epochs", "batch", "ensemble", "num_runs"):
        if int(opts[key]) < 1:
            raise FlagError(f"--{key.replace('_', '-')} must be >= 1")
    if not 0.0 <= float(opts["dropout"]) < 1.0:
        raise FlagError("--dropout must be in [0, 1)")
    try:
        kind, _ = parse_feature_option(opts["features"])
    except ValueError as exc:
        raise FlagError(str(exc)) from exc
    metric = opts["metric"]
    if metric in CLASSIFICATION_METRICS and opts["task_type"] != "classification":
        raise FlagError(f"--metric {metric} needs --task-type classification")
    if metric is not None and metric not in CLASSIFICATION_METRICS and opts["task_type"] == "classification":
        raise FlagError(f"--metric {metric} is a regression metric")
    return TrainConfig(
        epochs=int(opts["epochs"]),
        batch_size=int(opts["batch"]),
        seed=int(opts["seed"]),
        depth=int(opts["depth"]),
        hidden=int(opts["hidden"]),
        ffn_layers=int(opts["ffn_layers"]),
        dropout=float(opts["dropout"]),
        message_type=opts["messages"],
        features=kind,
        metric=metric or default_metric(opts["task_type"]),
    )


def load_training_data(opts: dict, data_arg: str) -> tuple[Path, Dataset]:
    path = resolve_data_path(data_arg)
    data = load_csv(path, opts["task_type"])
    kind, fpath = parse_feature_option(opts["features"])
    matrix = load_feature_file(fpath) if fpath else None
    return path, attach_raw_features(data, kind, matrix)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))


# --- subcommands ------------------------------------------------------------


def cmd_train(args) -> int:
    opts = resolve(args)
    fractions = parse_sizes(opts["sizes"])
    cfg = train_config_from(opts)
    start = time.time()
    path, data = load_training_data(opts, opts["data"])
    out = Path(opts["save"])
    out.mkdir(parents=True, exist_ok=True)
    runs, artifacts = [], {}
    for r in range(int(opts["num_runs"])):
        split_seed = cfg.seed + r
        outcome = run_once(data, cfg, split_seed, opts["split"], fractions, int(opts["ensemble"]))
        run_dir = out / f"run_{r}"
        run_dir.mkdir(exist_ok=True)
        for j, model in enumerate(outcome.models):
            ck = run_dir / f"model_{j}.json"
            save_checkpoint(model, ck)
            artifacts[str(ck.relative_to(out))] = file_digest(ck)
        pred_path = run_dir / "test_preds.csv"
        _write_csv(
            pred_path,
            ["smiles", *data.task_names],
            ([rec.smiles, *(_fmt(v) for v in row)] for rec, row in zip(outcome.test, outcome.test_preds)),
        )
        artifacts[str(pred_path.relative_to(out))] = file_digest(pred_path)
        runs.append(
            {
                "run": r,
                "split_seed": split_seed,
                "model_seeds": [m.model.train_config.seed for m in outcome.members],
                "sizes": dict(zip(("train", "val", "test"), outcome.sizes)),
                "scaffold_overlap_train_test": outcome.overlap,
                "best_epochs": [m.model.best_epoch for m in outcome.members],
                "val": outcome.val_score,
                "test": outcome.test_score.mean,
                "test_members": outcome.member_test_scores,
                "test_per_task": outcome.test_score.to_dict(data.task_names),
            }
        )
        print(f"run {r} (seed {split_seed}): val {cfg.metric} {outcome.val_score:.4f}  test {outcome.test_score.mean:.4f}")
    report = {
        "metric": cfg.metric,
        "task_names": list(data.task_names),
        "ensemble": int(opts["ensemble"]),
        "runs": runs,
        "val": summarize([r["val"] for r in runs]),
        "test": summarize([r["test"] for r in runs]),
    }
    write_json_atomic(out / "report.json", report)
    _write_csv(
        out / "report.csv",
        ["run", "split_seed", "n_train", "n_val", "n_test", f"val_{cfg.metric}", f"test_{cfg.metric}"],
        [
            [r["run"], r["split_seed"], *r["sizes"].values(), _fmt(r["val"]), _fmt(r["test"])]
            for r in runs
        ]
        + [[stat, "", "", "", "", _fmt(report["val"][stat]), _fmt(report["test"][stat])] for stat in ("mean", "std", "stderr")],
    )
    for name in ("report.json", "report.csv"):
        artifacts[name] = file_digest(out / name)
    manifest = {
        "command": "train",
        "argv": sys.argv[1:],
        "version": __version__,
        "options": {**opts, "sizes": list(fractions)},
        "train_config": cfg.to_dict(),
        "data": str(path),
        "data_sha256": file_digest(path),
        "rejected_rows": [r.row for r in data.rejected],
        "split_seeds": [r["split_seed"] for r in runs],
        "split_sizes": [r["sizes"] for r in runs],
        "scaffold_overlap": [r["scaffold_overlap_train_test"] for r in runs],
        "wall_clock_seconds": time.time() - start,
        "artifacts": artifacts,
    }
    write_json_atomic(out / "manifest.json", manifest)
    t = report["test"]
    print(f"test {cfg.metric}: {t['mean']:.4f} +/- {t['std']:.4f} (stderr {t['stderr']:.4f}) over {len(runs)} run(s)")
    return 0


def _collect_checkpoints(items: Sequence[str]) -> list[Path]:
    paths = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            found = sorted(p.rglob("model_*.json"))
            if not found:
                raise FileNotFoundError(f"no model_*.json checkpoints under {p}")
            paths.extend(found)
        else:
            paths.append(p)
    return paths


def cmd_predict(args) -> int:
    models = [load_checkpoint(p) for p in _collect_checkpoints(args.checkpoints)]
    first = models[0]
    for m in models[1:]:
        if m.task_names != first.task_names or m.featurization.kind != first.featurization.kind:
            raise CheckpointError("checkpoints predict different tasks or use different features")
    smiles = read_smiles_rows(args.data)
    data = unlabeled_dataset(smiles, first.task_names, first.task_type)
    for rej in data.rejected:
        logger.warning("row %d (%s) not predicted: %s", rej.row, rej.smiles, rej.reason)
    kind = first.featurization.kind
    matrix = load_feature_file(args.features_file) if kind == "file" and args.features_file else None
    if kind == "file" and matrix is None:
        raise DimensionMismatch("model was trained with file features; pass --features-file")
    raw = attach_raw_features(data, kind, matrix)
    preds = average_predictions([m.predict(m.featurize(raw)) for m in models]) if len(raw) else None
    by_row = {rec.row: preds[i] for i, rec in enumerate(raw.records)}
    _write_csv(
        Path(args.output),
        ["smiles", *first.task_names],
        (
            [smi, *(_fmt(v) for v in by_row[i])] if i in by_row else [smi, *([""] * len(first.task_names))]
            for i, smi in enumerate(smiles)
        ),
    )
    print(f"wrote {len(smiles)} rows ({len(data.rejected)} unparseable) to {args.output}")
    return 0


def cmd_hyperopt(args) -> int:
    opts = resolve(args)
    fractions = parse_sizes(opts["sizes"])
    cfg = train_config_from(opts)
    if int(opts["iters"]) < 1 or int(opts["splits"]) < 1:
        raise FlagError("--iters and --splits must be >= 1")
    path = resolve_data_path(opts["data"])
    data = load_csv(path, opts["task_type"])
    _, fpath = parse_feature_option(opts["features"])
    matrix = load_feature_file(fpath) if fpath else None
    objective = training_objective(cfg, data, int(opts["splits"]), fractions, opts["split"], matrix)
    minimize = metric_minimizes(cfg.metric, opts["task_type"])
    result = hyperopt(
        objective,
        HyperSpace(),
        int(opts["iters"]),
        seed=cfg.seed,
        minimize=minimize,
        random_search=bool(opts["random_search"]),
    )
    out = Path(opts["save"])
    out.mkdir(parents=True, exist_ok=True)
    keep = ("task_type", "split", "sizes", "seed", "epochs", "batch", "messages", "features", "metric")
    best = {**{k: opts[k] for k in keep}, "sizes": list(fractions), "metric": cfg.metric, **result.best}
    write_json_atomic(out / "best_config.json", best)
    write_json_atomic(out / "trials.json", result.to_dict())
    _write_csv(
        out / "trials.csv",
        ["trial", *HyperSpace.NAMES, "score", "source"],
        ([t.number, *t.params.values(), _fmt(t.score), t.source] for t in result.trials),
    )
    write_json_atomic(
        out / "manifest.json",
        {
            "command": "hyperopt",
            "argv": sys.argv[1:],
            "version": __version__,
            "options": {**opts, "sizes": list(fractions)},
            "data": str(path),
            "data_sha256": file_digest(path),
            "artifacts": {n: file_digest(out / n) for n in ("best_config.json", "trials.json", "trials.csv")},
        },
    )
    print(f"best {cfg.metric} {result.best_score:.4f} with {result.best} after {len(result.trials)} trials")
    return 0


def cmd_split(args) -> int:
    fractions = parse_sizes(args.sizes)
    data = load_csv(resolve_data_path(args.data), args.task_type or "regression")
    spec = SplitSpec(fractions, args.seed, args.split)
    manifest = write_split(args.out, split(data, spec), spec)
    print(json.dumps(manifest["sizes"]), f"train/test scaffold overlap {manifest['scaffold_overlap']['train_test']:.2f}%")
    return 0


def cmd_eval(args) -> int:
    task_type = args.task_type
    truth = load_csv(resolve_data_path(args.data), task_type)
    with open(args.preds, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0].strip().lower() != "smiles":
        raise DataError(f"{args.preds}: first header column must be 'smiles'")
    header = [h.strip() for h in rows[0]]
    missing = [t for t in truth.task_names if t not in header]
    if missing:
        raise DataError(f"{args.preds}: no prediction columns for {missing}")
    cols = [header.index(t) for t in truth.task_names]
    by_smiles: dict[str, list] = {}
    for row in rows[1:]:
        if row:
            by_smiles.setdefault(row[0].strip(), []).append(row)
    n = len(truth)
    preds = np.zeros((n, truth.num_tasks))
    have = np.zeros((n, truth.num_tasks), dtype=bool)
    for i, rec in enumerate(truth.records):
        queue = by_smiles.get(rec.smiles)
        if not queue:
            continue
        row = queue.pop(0)
        for j, c in enumerate(cols):
            cell = row[c].strip() if c < len(row) else ""
            if cell:
                preds[i, j] = float(cell)
                have[i, j] = True
    values, mask = truth.targets()
    metrics = args.metric or [default_metric(task_type)]
    report = {m: evaluate(m, preds, values, mask & have).to_dict(truth.task_names) for m in metrics}
    report["scored_pairs"] = int((mask & have).sum())
    if args.output:
        write_json_atomic(args.output, report)
    for m in metrics:
        print(f"{m}: {report[m]['mean']:.6g}")
    print(json.dumps(report))
    return 0


def cmd_featurize(args) -> int:
    smiles = read_smiles_rows(args.data)
    if args.kind == "descriptors":
        header = ["smiles", *DESCRIPTOR_NAMES]
        width = len(DESCRIPTOR_NAMES)
    else:
        if args.bits < 1 or args.radius < 0:
            raise FlagError("--bits must be >= 1 and --radius >= 0")
        header = ["smiles", *(f"bit{i}" for i in range(args.bits))]
        width = args.bits
    failed = 0
    rows = []
    for smi in smiles:
        try:
            g = parse_smiles(smi)
        except SmilesError as exc:
            logger.warning("%s: %s", smi, exc)
            failed += 1
            rows.append([smi, *([""] * width)])
            continue
        if args.kind == "descriptors":
            vec = compute_descriptors(g)
            rows.append([smi, *(repr(float(v)) for v in vec)])
        else:
            vec = morgan_fingerprint(g, args.radius, args.bits, counted=args.kind == "morgan-count")
            rows.append([smi, *(str(int(v)) for v in vec)])
    _write_csv(Path(args.output), header, rows)
    print(json.dumps({"rows": len(smiles), "failed": failed, "columns": width, "output": args.output}))
    return 0


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "hyperopt": cmd_hyperopt,
    "split": cmd_split,
    "eval": cmd_eval,
    "featurize": cmd_featurize,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return COMMANDS[args.command](args)
    except FlagError as exc:
        parser.error(str(exc))  # exits 2
    except Diverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, SmilesError, DimensionMismatch, CheckpointError, MetricError, AllMissing, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
