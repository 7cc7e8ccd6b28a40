"""Command-line driver: generate, train, eval, search and report.

Exit status is 0 on success, 2 when inputs fail validation (nothing is
trained in that case) and 3 when a run fails part-way.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import math
import shutil
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import metrics as M
from .graph import SYNTHETIC_TASKS, Dataset, DatasetError, generate_synthetic, load_dataset, save_dataset
from .layers import AggregatorKind, CombineKind, ConfigError, MergeKind
from .model import (
    BUILTIN_CONFIGS,
    AnyConfig,
    CheckpointError,
    build_model,
    builtin_config,
    config_from_dict,
    load_checkpoint,
    load_config,
    save_checkpoint,
)
from .training import KFoldResult, TrainSettings, evaluate, format_mean_std, run_kfold, write_curves_csv

log = logging.getLogger("hagnet")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class ValidationError(Exception):
    """Bad inputs; carries every problem found."""

    def __init__(self, problems):
        self.problems = [problems] if isinstance(problems, str) else list(problems)
        super().__init__("; ".join(self.problems))


# ---------------------------------------------------------------------------
# helpers


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _clean(x):
    """JSON-safe copy: numpy scalars and arrays to Python, NaN to null."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return None if math.isnan(x) else float(x)
    return x


def _dump_json(doc, path) -> None:
    text = json.dumps(_clean(doc), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _parse_overrides(pairs: Sequence[str]) -> Dict[str, Any]:
    out = {}
    for item in pairs or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ValidationError(f"--set expects KEY=VALUE (got {item!r})")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def resolve_config(source, overrides: Optional[Dict[str, Any]] = None) -> AnyConfig:
    """Config from a file path, a built-in name, a dict or a config object, unvalidated."""
    try:
        if dataclasses.is_dataclass(source):
            doc = source.to_dict()
        elif isinstance(source, dict):
            doc = dict(source)
        elif Path(source).is_file():
            doc = load_config(source, validate=False).to_dict()
        elif str(source) in BUILTIN_CONFIGS:
            doc = builtin_config(str(source)).to_dict()
        else:
            raise ValidationError(f"config {source!r} is neither a file nor one of {', '.join(BUILTIN_CONFIGS)}")
        doc.update(overrides or {})
        return config_from_dict(doc, validate=False)
    except ConfigError as exc:
        raise ValidationError(exc.problems) from None


def _load_dataset(path) -> Dataset:
    try:
        return load_dataset(path)
    except (DatasetError, OSError) as exc:
        raise ValidationError(str(exc)) from None


def _check_run(config: AnyConfig, dataset: Dataset, folds: int, epochs: int) -> AnyConfig:
    """Collect every problem with a config/dataset/protocol triple before training."""
    problems = list(config.problems())
    if config.vocab_size is None:
        config = dataclasses.replace(config, vocab_size=dataset.vocab_size)
    elif isinstance(config.vocab_size, int) and config.vocab_size < dataset.vocab_size:
        problems.append(f"vocab_size {config.vocab_size} is smaller than the dataset vocabulary "
                        f"{dataset.vocab_size}")
    if folds < 2:
        problems.append(f"folds must be >= 2 (got {folds})")
    else:
        counts = np.bincount(dataset.labels, minlength=2)
        for cls in (0, 1):
            if counts[cls] < folds:
                problems.append(f"class {cls} has {counts[cls]} graphs, fewer than {folds} folds")
    if epochs < 1:
        problems.append(f"epochs must be >= 1 (got {epochs})")
    if not problems:
        try:
            build_model(config, 0)  # width checks live in the layer constructors
        except ConfigError as exc:
            problems.extend(exc.problems)
    if problems:
        raise ValidationError(problems)
    return config


def _settings(epochs, optimizer=None, learning_rate=None, batch_size=256, eval_every_epoch=True):
    return TrainSettings(epochs=epochs, batch_size=batch_size, optimizer=optimizer,
                         learning_rate=learning_rate, eval_every_epoch=eval_every_epoch)


# ---------------------------------------------------------------------------
# generate


def _dense_label(task: str, g) -> int:
    A = np.zeros((g.num_nodes, g.num_nodes), dtype=np.int64)
    for u, v in g.edges:
        A[u, v] = A[v, u] = 1
    deg = A.sum(axis=1)
    if task == "triangle_parity":
        return int(np.trace(A @ A @ A) // 6) % 2
    if task == "degree_threshold":
        return int(deg.max() >= 4)
    return int(deg.sum() == 2 * (g.num_nodes - 1) and deg.max() == g.num_nodes - 1)


def cmd_generate(task: str, n: int, seed: int, out) -> Path:
    if task not in SYNTHETIC_TASKS:
        raise ValidationError(f"unknown task {task!r} (have {', '.join(SYNTHETIC_TASKS)})")
    try:
        ds = generate_synthetic(task, n, seed)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    bad = [i for i, g in enumerate(ds.graphs) if _dense_label(task, g) != g.label]
    if bad:
        raise RuntimeError(f"label recount disagrees on graphs {bad[:10]}")
    out = Path(out)
    save_dataset(ds, out)
    pos = int(ds.labels.sum())
    print(f"wrote {len(ds)} graphs to {out}; class 1: {pos}/{len(ds)} ({pos / len(ds):.3f})")
    return out


# ---------------------------------------------------------------------------
# train


def _summary_doc(res: KFoldResult) -> Dict[str, Any]:
    out = {}
    for key in res.mean:
        vals = [f.metrics[key] for f in res.folds]
        out[key] = {"mean": res.mean[key], "std": res.std[key],
                    "formatted": format_mean_std(vals, scale=100.0)}
    return out


def cmd_train(config, dataset, folds: int = 5, epochs: int = 100, seed: int = 0, out="run",
              optimizer: Optional[str] = None, learning_rate: Optional[float] = None,
              batch_size: int = 256, overrides: Optional[Dict[str, Any]] = None,
              eval_every_epoch: bool = True) -> Dict[str, Any]:
    """k-fold training; writes curves, checkpoints, metrics.json and manifest.json into ``out``."""
    started = _now()
    ds = _load_dataset(dataset)
    cfg = _check_run(resolve_config(config, overrides), ds, folds, epochs)
    settings = _settings(epochs, optimizer, learning_rate, batch_size, eval_every_epoch)
    if settings.optimizer not in (None, "sgd", "adam"):
        raise ValidationError(f"unknown optimizer {settings.optimizer!r}")
    settings = settings.resolved(cfg)
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)

    log.info("training %s on %s (%d graphs), %d folds x %d epochs", cfg.to_dict().get("model"),
             dataset, len(ds), folds, epochs)
    res = run_kfold(ds, cfg, k=folds, epochs=epochs, seed=seed, settings=settings, keep_models=True)

    artifacts = []
    fold_docs = []
    for f in res.folds:
        curves = outdir / f"fold{f.fold}_curves.csv"
        ckpt = outdir / f"fold{f.fold}.ckpt"
        write_curves_csv(f.curves, curves)
        save_checkpoint(f.model, ckpt)
        artifacts += [("curves", curves), ("checkpoint", ckpt)]
        fold_docs.append({"fold": f.fold, "metrics": f.metrics,
                          "test_indices": f.test_indices, "labels": f.labels, "scores": f.scores})
    metrics_doc = {
        "config": cfg.to_dict(),
        "dataset": {"name": ds.name, "num_graphs": len(ds), "sha256": sha256_file(dataset)},
        "protocol": {"folds": folds, "epochs": epochs, "seed": seed,
                     "optimizer": settings.optimizer, "learning_rate": settings.learning_rate,
                     "batch_size": settings.batch_size, "mstd_window": 5},
        "summary": _summary_doc(res),
        "folds": fold_docs,
    }
    metrics_path = outdir / "metrics.json"
    _dump_json(metrics_doc, metrics_path)
    artifacts.insert(0, ("metrics", metrics_path))

    manifest = {
        "command": "train",
        "config": cfg.to_dict(),
        "dataset": {"path": str(Path(dataset).resolve()), "sha256": sha256_file(dataset)},
        "seed": seed,
        "started_at": started,
        "finished_at": _now(),
        "artifacts": [{"kind": k, "path": p.name, "sha256": sha256_file(p)} for k, p in artifacts],
    }
    _dump_json(manifest, outdir / "manifest.json")
    s = metrics_doc["summary"]
    print(f"AuPR {s['aupr_harmonic']['formatted']}  ER {s['er']['formatted']}  "
          f"AuROC {s['auroc']['formatted']}  -> {outdir}")
    return manifest


# ---------------------------------------------------------------------------
# eval


def cmd_eval(checkpoint, dataset, out=None) -> Dict[str, Any]:
    try:
        model = load_checkpoint(checkpoint)
    except (CheckpointError, OSError, ConfigError, KeyError, ValueError) as exc:
        raise ValidationError(f"{checkpoint}: {exc}") from None
    ds = _load_dataset(dataset)
    vocab = model.config.vocab_size
    if vocab is not None and ds.vocab_size > vocab:
        raise ValidationError(f"dataset uses node label {ds.vocab_size - 1} but the checkpoint "
                              f"vocabulary has {vocab} entries")
    result = {"num_graphs": len(ds), **evaluate(model, ds.graphs)}
    text = json.dumps(_clean(result), indent=2, sort_keys=True)
    if out is not None:
        Path(out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return result


# ---------------------------------------------------------------------------
# search


def _subsets(kinds, max_size):
    return [list(c) for r in range(1, max_size + 1) for c in itertools.combinations(kinds, r)]


def default_space(max_subset_size: int = 2) -> Dict[str, Any]:
    aggs = [k.value for k in AggregatorKind]
    return {
        "base": {},
        "max_subset_size": max_subset_size,
        "grid": {
            "agg_kinds": _subsets(aggs, max_subset_size),
            "agg_merge": [m.value for m in MergeKind],
            "combine": [c.value for c in CombineKind],
            "readout_kinds": _subsets(aggs, max_subset_size),
            "readout_merge": [m.value for m in MergeKind],
            "pyramid": [False, True],
            "readout_tied": [False, True],
            "dense_connections": [False, True],
        },
    }


def _normalise_point(doc: Dict[str, Any]) -> Dict[str, Any]:
    # collapse knobs that have no effect so equivalent points are not trained twice
    doc = dict(doc)
    if len(doc.get("agg_kinds", [])) == 1:
        doc["agg_merge"] = "sum"
    if len(doc.get("readout_kinds", [])) == 1:
        doc["readout_merge"] = None
    if not doc.get("pyramid", False):
        doc["readout_tied"] = False
    return doc


def expand_space(space: Dict[str, Any]) -> List[AnyConfig]:
    """Every valid, distinct config described by a search-space document.

    A space is either ``{"configs": [...]}`` (file paths, built-in names or
    config objects) or ``{"base": {...}, "grid": {field: [candidates]}}``.
    Aggregator subsets larger than ``max_subset_size`` (default 2) are dropped.
    """
    if "configs" in space:
        out = []
        for item in space["configs"]:
            cfg = resolve_config(item, space.get("base"))
            if cfg.problems():
                raise ValidationError([f"{item}: {p}" for p in cfg.problems()])
            out.append(cfg)
        return out
    grid = space.get("grid") or {}
    limit = int(space.get("max_subset_size", 2))
    base = {"model": "hagnet", **builtin_config("cfg2").to_dict(), **(space.get("base") or {})}
    keys = sorted(grid)
    seen, out = set(), []
    for values in itertools.product(*(grid[k] for k in keys)):
        doc = _normalise_point({**base, **dict(zip(keys, values))})
        if len(doc["agg_kinds"]) > limit or len(doc["readout_kinds"]) > limit:
            continue
        key = json.dumps(doc, sort_keys=True)
        if key in seen:
            continue
        seen.add(key)
        try:
            cfg = config_from_dict(doc, validate=False)
        except ConfigError:
            continue
        if not cfg.problems():
            out.append(cfg)
    return out


def rank_key(row: Dict[str, float]):
    aupr = row["aupr_harmonic"]
    return (-aupr if not math.isnan(aupr) else math.inf, row["mstd_er"], row["er"])


SEARCH_COLUMNS = ("rank", "candidate", "aupr_harmonic", "mstd_er", "er", "auroc", "config")


def cmd_search(space, dataset, budget: int, seed: int = 0, out="search", folds: int = 5,
               epochs: int = 10, optimizer: Optional[str] = None,
               learning_rate: Optional[float] = None, batch_size: int = 256) -> List[Dict[str, Any]]:
    """Abbreviated k-fold over sampled configs, ranked by AuPR, then mstd, then ER."""
    started = _now()
    if budget < 1:
        raise ValidationError(f"budget must be >= 1 (got {budget})")
    if space is None:
        space_doc = default_space()
    elif isinstance(space, dict):
        space_doc = space
    else:
        try:
            space_doc = json.loads(Path(space).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"{space}: {exc}") from None
    ds = _load_dataset(dataset)
    candidates = expand_space(space_doc)
    if not candidates:
        raise ValidationError("search space is empty")
    if len(candidates) > budget:
        pick = np.sort(np.random.default_rng(seed).choice(len(candidates), budget, replace=False))
        candidates = [candidates[i] for i in pick]
    checked = [_check_run(c, ds, folds, epochs) for c in candidates]

    rows = []
    for i, cfg in enumerate(checked):
        settings = _settings(epochs, optimizer, learning_rate, batch_size).resolved(cfg)
        res = run_kfold(ds, cfg, k=folds, epochs=epochs, seed=seed, settings=settings)
        rows.append({"candidate": i, **{k: res.mean[k] for k in ("aupr_harmonic", "mstd_er", "er", "auroc")},
                     "config": json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))})
        log.info("candidate %d/%d: aupr %.4f", i + 1, len(checked), res.mean["aupr_harmonic"])
    rows.sort(key=lambda r: (rank_key(r), r["candidate"]))
    for rank, r in enumerate(rows, start=1):
        r["rank"] = rank

    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    table = outdir / "search.csv"
    with open(table, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SEARCH_COLUMNS)
        for r in rows:
            w.writerow([r["rank"], r["candidate"]] + [repr(float(r[k])) for k in SEARCH_COLUMNS[2:6]]
                       + [r["config"]])
    manifest = {
        "command": "search",
        "space": space_doc,
        "dataset": {"path": str(Path(dataset).resolve()), "sha256": sha256_file(dataset)},
        "seed": seed,
        "budget": budget,
        "protocol": {"folds": folds, "epochs": epochs},
        "started_at": started,
        "finished_at": _now(),
        "artifacts": [{"kind": "ranking", "path": table.name, "sha256": sha256_file(table)}],
    }
    _dump_json(manifest, outdir / "manifest.json")
    best = rows[0]
    print(f"{len(rows)} configs ranked; best AuPR {best['aupr_harmonic']:.4f} -> {table}")
    return rows


# ---------------------------------------------------------------------------
# report


def _read_manifest(path) -> tuple:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{p}: {exc}") from None
    if doc.get("command") != "train":
        raise ValidationError(f"{p}: not a training run manifest")
    problems = []
    for art in doc["artifacts"]:
        f = p.parent / art["path"]
        if not f.is_file():
            problems.append(f"{p}: missing artifact {art['path']}")
        elif sha256_file(f) != art["sha256"]:
            problems.append(f"{p}: artifact {art['path']} does not match its recorded hash")
    if problems:
        raise ValidationError(problems)
    return p.parent, doc


REPORT_COLUMNS = ("run", "aupr_mean", "aupr_std", "er_mean", "er_std", "mstd_mean", "mstd_std")


def cmd_report(manifests: Sequence, out="report") -> List[Dict[str, Any]]:
    """One row per run: AuPR and ER in percent, mstd of each fold's ER% curve."""
    if not manifests:
        raise ValidationError("report needs at least one manifest")
    runs = [_read_manifest(m) for m in manifests]
    outdir = Path(out)
    (outdir / "curves").mkdir(parents=True, exist_ok=True)
    rows, used = [], set()
    for i, (rundir, doc) in enumerate(runs):
        name = rundir.name or f"run{i}"
        if name in used:
            name = f"{name}_{i}"
        used.add(name)
        metrics_doc = json.loads((rundir / "metrics.json").read_text(encoding="utf-8"))
        window = metrics_doc["protocol"].get("mstd_window", 5)
        aupr = [f["metrics"]["aupr_harmonic"] for f in metrics_doc["folds"]]
        er = [f["metrics"]["er"] for f in metrics_doc["folds"]]
        spreads = []
        dest = outdir / "curves" / name
        dest.mkdir(exist_ok=True)
        for art in doc["artifacts"]:
            if art["kind"] != "curves":
                continue
            shutil.copyfile(rundir / art["path"], dest / art["path"])
            with open(dest / art["path"], newline="", encoding="utf-8") as fh:
                curve = [float(r["eval_er"]) for r in csv.DictReader(fh)]
            curve = [100.0 * v for v in curve if not math.isnan(v)]
            spreads.append(M.mstd(curve, window) if len(curve) >= 2 else 0.0)
        to_float = lambda xs: np.array([np.nan if v is None else v for v in xs], dtype=np.float64)
        a, e, s = to_float(aupr) * 100, to_float(er) * 100, np.array(spreads)
        rows.append({"run": name, "aupr_mean": a.mean(), "aupr_std": a.std(), "er_mean": e.mean(),
                     "er_std": e.std(), "mstd_mean": s.mean(), "mstd_std": s.std()})

    with open(outdir / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([r["run"]] + [repr(float(r[c])) for c in REPORT_COLUMNS[1:]])
    width = max(len("run"), *(len(r["run"]) for r in rows))
    lines = [f"{'run':<{width}}  {'AuPR':>12}  {'ER':>12}  {'mstd(ER%)':>12}"]
    for r in rows:
        cells = [f"{r[k + '_mean']:.1f}±{r[k + '_std']:.1f}" for k in ("aupr", "er", "mstd")]
        lines.append(f"{r['run']:<{width}}  " + "  ".join(f"{c:>12}" for c in cells))
    text = "\n".join(lines) + "\n"
    (outdir / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return rows


# ---------------------------------------------------------------------------
# argument parsing


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hagnet", description="Heterogeneous-aggregation graph classifier")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic JSON-lines dataset")
    g.add_argument("--task", required=True, choices=SYNTHETIC_TASKS)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    def training_flags(sp, epochs_default):
        sp.add_argument("--dataset", required=True)
        sp.add_argument("--folds", type=int, default=5)
        sp.add_argument("--epochs", type=int, default=epochs_default)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--optimizer", choices=("sgd", "adam"))
        sp.add_argument("--lr", type=float)
        sp.add_argument("--batch-size", type=int, default=256)

    t = sub.add_parser("train", help="k-fold training run")
    t.add_argument("--config", required=True, help=f"JSON file or one of {', '.join(BUILTIN_CONFIGS)}")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field (value parsed as JSON)")
    t.add_argument("--out", default="run")
    training_flags(t, 100)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--out")

    s = sub.add_parser("search", help="grid search ranked by harmonic AuPR")
    s.add_argument("--space", help="search-space JSON (default: full grid, subsets of size <= 2)")
    s.add_argument("--budget", type=int, required=True)
    s.add_argument("--out", default="search")
    training_flags(s, 10)

    r = sub.add_parser("report", help="table and curve bundle from training runs")
    r.add_argument("manifests", nargs="+", help="manifest.json files or run directories")
    r.add_argument("--out", default="report")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "generate":
            cmd_generate(args.task, args.n, args.seed, args.out)
        elif args.command == "train":
            cmd_train(args.config, args.dataset, args.folds, args.epochs, args.seed, args.out,
                      args.optimizer, args.lr, args.batch_size, _parse_overrides(args.set))
        elif args.command == "eval":
            cmd_eval(args.checkpoint, args.dataset, args.out)
        elif args.command == "search":
            cmd_search(args.space, args.dataset, args.budget, args.seed, args.out, args.folds,
                       args.epochs, args.optimizer, args.lr, args.batch_size)
        else:
            cmd_report(args.manifests, args.out)
    except ValidationError as exc:
        for prob in exc.problems:
            print(f"error: {prob}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any failure mid-run maps to one exit status
        log.debug("run failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
