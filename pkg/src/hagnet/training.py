"""Loss, optimisers, the epoch loop and stratified k-fold evaluation."""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import metrics as M
from . import tensor as T
from .graph import Dataset, Graph, batch, stratified_kfold
from .model import AnyConfig, GraphClassifier, HagNetConfig, build_model
from .tensor import Tape, Tensor

__all__ = [
    "WiringError",
    "cross_entropy_logits",
    "OptimizerState",
    "make_optimizer",
    "optimizer_step",
    "TrainSettings",
    "default_settings",
    "train_epoch",
    "predict",
    "evaluate",
    "FoldResult",
    "KFoldResult",
    "run_kfold",
    "format_mean_std",
    "CURVE_COLUMNS",
    "write_curves_csv",
    "read_curves_csv",
]

log = logging.getLogger(__name__)


class WiringError(RuntimeError):
    """A trainable parameter received no gradient."""


def cross_entropy_logits(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of [g, C] logits against integer labels."""
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    Z = logits.data
    if Z.ndim != 2 or Z.shape[0] != y.size:
        raise T.DimensionError(f"logits {Z.shape} vs {y.size} labels")
    if np.any((y < 0) | (y >= Z.shape[1])):
        raise ValueError(f"labels must lie in [0, {Z.shape[1]})")
    shifted = Z - Z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(y.size)
    loss = float(np.mean(logsum - shifted[rows, y]))
    probs = np.exp(shifted - logsum[:, None])

    def rule(g):
        d = probs.copy()
        d[rows, y] -= 1.0
        return (d * (g.item() / y.size),)

    return T.emit(np.asarray(loss), (logits,), rule)


# ---------------------------------------------------------------------------
# optimisers


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def make_optimizer(kind: str, learning_rate: float, params: Sequence[Tensor]) -> OptimizerState:
    if kind not in ("sgd", "adam"):
        raise ValueError(f"unknown optimizer {kind!r}")
    state = OptimizerState(kind, float(learning_rate))
    if kind == "adam":
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    return state


def optimizer_step(state: OptimizerState, params: Sequence[Tensor]) -> None:
    """Update ``params`` in place from their ``.grad``."""
    missing = [i for i, p in enumerate(params) if p.grad is None]
    if missing:
        names = [params[i].name or f"#{i}" for i in missing]
        raise WiringError(f"no gradient for trainable parameter(s) {names}")
    state.step += 1
    lr = state.learning_rate
    if state.kind == "sgd":
        for p in params:
            p.data = p.data - lr * p.grad
        return
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for i, p in enumerate(params):
        g = p.grad
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------


@dataclass
class TrainSettings:
    epochs: int = 100
    batch_size: int = 256
    optimizer: Optional[str] = None  # None: sgd for HAG-Net, adam for baselines
    learning_rate: Optional[float] = None
    eval_batch_size: int = 256
    eval_every_epoch: bool = True

    def resolved(self, config: AnyConfig) -> "TrainSettings":
        hag = isinstance(config, HagNetConfig)
        opt = self.optimizer or ("sgd" if hag else "adam")
        lr = self.learning_rate
        if lr is None:
            lr = 1e-2 if opt == "sgd" else 1e-3
        return dataclasses.replace(self, optimizer=opt, learning_rate=lr)


def default_settings(config: AnyConfig, **overrides) -> TrainSettings:
    return TrainSettings(**overrides).resolved(config)


def _graphs(data) -> List[Graph]:
    return list(data.graphs) if isinstance(data, Dataset) else list(data)


def train_epoch(model: GraphClassifier, data, optimizer: OptimizerState, batch_size: int,
                rng: np.random.Generator) -> float:
    """One pass over ``data`` in shuffled mini-batches; returns the sample-weighted mean loss."""
    graphs = _graphs(data)
    if not graphs:
        raise ValueError("empty training set")
    params = model.parameters()
    order = rng.permutation(len(graphs))
    total = 0.0
    for lo in range(0, len(graphs), batch_size):
        chunk = [graphs[i] for i in order[lo : lo + batch_size]]
        b = batch(chunk)
        model.zero_grad()
        with Tape() as tape:
            loss = cross_entropy_logits(model(b, "train"), b.graph_labels)
        tape.backward(loss)
        optimizer_step(optimizer, params)
        total += loss.data.item() * len(chunk)
    return total / len(graphs)


def predict(model: GraphClassifier, data, batch_size: int = 256) -> np.ndarray:
    """Eval-mode probability of class 1 for each graph, in input order."""
    graphs = _graphs(data)
    out = []
    for lo in range(0, len(graphs), batch_size):
        logits = model(batch(graphs[lo : lo + batch_size]), "eval").data
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        out.append(e[:, 1] / e.sum(axis=1))
    return np.concatenate(out) if out else np.zeros(0)


def _safe(fn, p):
    try:
        return fn(p)
    except M.UndefinedMetricError:
        return float("nan")


def evaluate(model: GraphClassifier, data, batch_size: int = 256) -> Dict[str, float]:
    graphs = _graphs(data)
    if not graphs:
        raise ValueError("empty evaluation set")
    p = M.ScoredPredictions(predict(model, graphs, batch_size), [g.label for g in graphs])
    out = {
        "er": M.error_rate(p),
        "auroc": _safe(M.auroc, p),
        "aupr_harmonic": _safe(M.aupr_harmonic, p),
    }
    out.update(M.per_class_prf(p))
    return out


# ---------------------------------------------------------------------------
# k-fold protocol

CURVE_COLUMNS = (
    "epoch", "train_loss", "eval_er", "eval_auroc", "eval_aupr_harmonic",
    "precision_0", "recall_0", "f1_0", "precision_1", "recall_1", "f1_1",
)


@dataclass
class FoldResult:
    fold: int
    train_indices: np.ndarray
    test_indices: np.ndarray
    curves: Dict[str, List[float]]
    metrics: Dict[str, float]
    scores: np.ndarray
    labels: np.ndarray
    model: Optional[GraphClassifier] = None

    @property
    def epochs(self) -> int:
        return len(self.curves["train_loss"])


@dataclass
class KFoldResult:
    folds: List[FoldResult]
    mean: Dict[str, float]
    std: Dict[str, float]

    def formatted(self, key: str, scale: float = 100.0, digits: int = 1) -> str:
        return format_mean_std([f.metrics[key] for f in self.folds], scale, digits)


EVAL_KEYS = ("er", "auroc", "aupr_harmonic") + CURVE_COLUMNS[5:]
SUMMARY_KEYS = ("er", "auroc", "aupr_harmonic", "mstd_er")


def _summarise(folds: List[FoldResult]):
    mean, std = {}, {}
    for key in SUMMARY_KEYS:
        vals = np.array([f.metrics[key] for f in folds], dtype=np.float64)
        mean[key] = float(np.mean(vals))
        std[key] = float(np.std(vals))
    return mean, std


def format_mean_std(values: Sequence[float], scale: float = 100.0, digits: int = 1) -> str:
    """Render fold values as ``"92.5±0.5"`` (population std, values times ``scale``)."""
    v = np.asarray(values, dtype=np.float64) * scale
    return f"{np.mean(v):.{digits}f}±{np.std(v):.{digits}f}"


def run_kfold(dataset: Dataset, config: AnyConfig, k: int = 5, epochs: int = 100,
              seed: int = 0, settings: Optional[TrainSettings] = None,
              keep_models: bool = False, mstd_window: int = 5) -> KFoldResult:
    """Train a fresh model per stratified fold and collect per-epoch test curves.

    Fold ``i`` builds its model from ``seed + i`` and shuffles batches with an
    independent stream derived from the same pair.
    """
    settings = dataclasses.replace(settings or TrainSettings(), epochs=epochs).resolved(config)
    if config.vocab_size is None:
        config = dataclasses.replace(config, vocab_size=dataset.vocab_size)
    elif config.vocab_size < dataset.vocab_size:
        raise ValueError(f"config vocab_size {config.vocab_size} < dataset vocab {dataset.vocab_size}")
    graphs = dataset.graphs
    folds = []
    for fi, (train_idx, test_idx) in enumerate(stratified_kfold(dataset, k, seed)):
        model = build_model(config, seed + fi)
        opt = make_optimizer(settings.optimizer, settings.learning_rate, model.parameters())
        rng = np.random.default_rng([seed + fi, 1])
        train = [graphs[i] for i in train_idx]
        test = [graphs[i] for i in test_idx]
        curves = {c: [] for c in CURVE_COLUMNS}
        for ep in range(settings.epochs):
            loss = train_epoch(model, train, opt, settings.batch_size, rng)
            curves["epoch"].append(ep + 1)
            curves["train_loss"].append(loss)
            if settings.eval_every_epoch or ep == settings.epochs - 1:
                ev = evaluate(model, test, settings.eval_batch_size)
            else:
                ev = dict.fromkeys(EVAL_KEYS, float("nan"))  # keeps rows aligned with epochs
            curves["eval_er"].append(ev["er"])
            curves["eval_auroc"].append(ev["auroc"])
            curves["eval_aupr_harmonic"].append(ev["aupr_harmonic"])
            for c in CURVE_COLUMNS[5:]:
                curves[c].append(ev[c])
        scores = predict(model, test, settings.eval_batch_size)
        labels = np.array([g.label for g in test], dtype=np.int64)
        p = M.ScoredPredictions(scores, labels)
        er_curve = [v for v in curves["eval_er"] if not np.isnan(v)]
        fold_metrics = {
            "er": M.error_rate(p),
            "auroc": _safe(M.auroc, p),
            "aupr_harmonic": _safe(M.aupr_harmonic, p),
            "mstd_er": M.mstd(er_curve, mstd_window) if len(er_curve) >= 2 else 0.0,
        }
        log.info("fold %d: %s", fi, fold_metrics)
        folds.append(FoldResult(fi, train_idx, test_idx, curves, fold_metrics, scores, labels,
                                model if keep_models else None))
    mean, std = _summarise(folds)
    return KFoldResult(folds, mean, std)


def write_curves_csv(curves: Dict[str, List[float]], path) -> None:
    n = len(curves["epoch"])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for i in range(n):
            row = []
            for c in CURVE_COLUMNS:
                vals = curves.get(c, [])
                v = vals[i] if i < len(vals) else float("nan")
                row.append(str(int(v)) if c == "epoch" else repr(float(v)))
            w.writerow(row)


def read_curves_csv(path) -> Dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return {c: np.array([float(r[c]) for r in rows]) for c in rows[0].keys()} if rows else {}
