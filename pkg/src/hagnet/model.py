"""HAG-Net assembly: embedding, stacked aggregation layers, READOUT(s), classifier.

Configurations are plain JSON documents whose keys mirror
:class:`HagNetConfig` (or :class:`BaselineConfig` when ``"model"`` is
``"gin"`` or ``"sage"``). The two tuned configurations ship as package data
and load with :func:`builtin_config`.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from . import tensor as T
from .layers import (
    AggregatorKind,
    CombineKind,
    ConfigError,
    GINLayer,
    HeteroLayer,
    Identity,
    Linear,
    MergeKind,
    Module,
    Neighborhood,
    Readout,
    SAGELayer,
)
from .tensor import Tensor

__all__ = [
    "HagNetConfig",
    "BaselineConfig",
    "GraphClassifier",
    "build",
    "build_baseline",
    "build_model",
    "forward",
    "config_from_dict",
    "load_config",
    "save_config",
    "builtin_config",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]


@dataclass
class HagNetConfig:
    num_agg_layers: int
    agg_kinds: List[str]
    agg_merge: str
    combine: str
    readout_kinds: List[str]
    readout_merge: Optional[str] = None
    pyramid: bool = False
    readout_tied: bool = False
    dense_connections: bool = False
    embed_dim: int = 75
    hidden_dim: int = 75
    vocab_size: Optional[int] = None
    att_heads: int = 1
    mlp_depth: int = 1

    def problems(self) -> List[str]:
        """Every violated rule, in a stable order."""
        out = []
        if not isinstance(self.num_agg_layers, int) or self.num_agg_layers < 1:
            out.append(f"num_agg_layers must be >= 1 (got {self.num_agg_layers})")
        for key in ("agg_kinds", "readout_kinds"):
            kinds = getattr(self, key)
            if not kinds:
                out.append(f"{key} must be non-empty")
                continue
            bad = [k for k in kinds if k not in {a.value for a in AggregatorKind}]
            if bad:
                out.append(f"{key} has unknown aggregators {bad}")
            if len(set(kinds)) != len(kinds):
                out.append(f"{key} has duplicates {list(kinds)}")
        if self.agg_merge not in {m.value for m in MergeKind}:
            out.append(f"agg_merge must be one of cat/sum (got {self.agg_merge!r})")
        if self.combine not in {c.value for c in CombineKind}:
            out.append(f"combine must be one of sum/max/cat/rnn (got {self.combine!r})")
        multi = len(self.readout_kinds or []) > 1
        if multi and self.readout_merge is None:
            out.append("readout_merge is required when readout_kinds has more than one entry")
        if not multi and self.readout_merge is not None:
            out.append("readout_merge must be absent when readout_kinds has a single entry")
        if self.readout_merge is not None and self.readout_merge not in {m.value for m in MergeKind}:
            out.append(f"readout_merge must be one of cat/sum (got {self.readout_merge!r})")
        if self.readout_tied and not self.pyramid:
            out.append("readout_tied requires pyramid")
        for key in ("embed_dim", "hidden_dim", "att_heads", "mlp_depth"):
            val = getattr(self, key)
            if not isinstance(val, int) or val < 1:
                out.append(f"{key} must be a positive int (got {val!r})")
        if self.vocab_size is not None and (not isinstance(self.vocab_size, int) or self.vocab_size < 1):
            out.append(f"vocab_size must be a positive int (got {self.vocab_size!r})")
        return out

    def validate(self) -> "HagNetConfig":
        probs = self.problems()
        if probs:
            raise ConfigError(probs)
        return self

    def to_dict(self) -> dict:
        return {"model": "hagnet", **asdict(self)}


@dataclass
class BaselineConfig:
    model: str
    num_layers: int = 5
    embed_dim: int = 75
    hidden_dim: int = 75
    vocab_size: Optional[int] = None
    eps: float = 0.0
    mlp_depth: int = 1

    def problems(self) -> List[str]:
        out = []
        if self.model not in ("gin", "sage"):
            out.append(f"unknown baseline kind {self.model!r}")
        if not isinstance(self.num_layers, int) or self.num_layers < 1:
            out.append(f"num_layers must be >= 1 (got {self.num_layers})")
        for key in ("embed_dim", "hidden_dim", "mlp_depth"):
            val = getattr(self, key)
            if not isinstance(val, int) or val < 1:
                out.append(f"{key} must be a positive int (got {val!r})")
        if self.vocab_size is not None and (not isinstance(self.vocab_size, int) or self.vocab_size < 1):
            out.append(f"vocab_size must be a positive int (got {self.vocab_size!r})")
        return out

    def validate(self) -> "BaselineConfig":
        probs = self.problems()
        if probs:
            raise ConfigError(probs)
        return self

    def to_dict(self) -> dict:
        return asdict(self)


AnyConfig = Union[HagNetConfig, BaselineConfig]


def config_from_dict(doc: dict, validate: bool = True) -> AnyConfig:
    doc = dict(doc)
    kind = doc.pop("model", "hagnet")
    cls = HagNetConfig if kind == "hagnet" else BaselineConfig
    if cls is BaselineConfig:
        doc["model"] = kind
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError([f"unknown config key {k!r}" for k in unknown])
    try:
        cfg = cls(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate() if validate else cfg


def load_config(path, validate: bool = True) -> AnyConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config_from_dict(doc, validate)


def save_config(cfg: AnyConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")


BUILTIN_CONFIGS = ("cfg1", "cfg2", "gin", "sage")


def builtin_config(name: str) -> AnyConfig:
    """Load a shipped configuration: ``cfg1``, ``cfg2`` or the ``gin`` / ``sage`` baselines."""
    if name not in BUILTIN_CONFIGS:
        raise ConfigError(f"no built-in config named {name!r} (have {', '.join(BUILTIN_CONFIGS)})")
    text = resources.files("hagnet.configs").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return config_from_dict(json.loads(text))


# ---------------------------------------------------------------------------


class GraphClassifier(Module):
    """Embedding -> aggregation layers -> READOUT(s) -> 3 dense layers -> 2 logits."""

    def __init__(self, config: AnyConfig, embedding: Tensor, layers, readouts, classifier,
                 pyramid: bool, dense_connections: bool):
        self.config = config
        self.embedding = embedding
        self.layers = list(layers)
        self.readouts = list(readouts)
        self.classifier = list(classifier)
        self.pyramid = pyramid
        self.dense_connections = dense_connections

    def node_states(self, batched, mode: str = "train") -> List[Tensor]:
        x = T.embedding_lookup(self.embedding, batched.node_labels)
        nbr = Neighborhood(batched.edge_index, batched.num_nodes)
        outs: List[Tensor] = []
        for k, layer in enumerate(self.layers):
            if k == 0:
                inp = x
            elif self.dense_connections:
                inp = outs[0]
                for o in outs[1:]:
                    inp = T.add(inp, o)
            else:
                inp = outs[-1]
            outs.append(T.relu(layer(inp, nbr, mode)))
        return outs

    def graph_embedding(self, batched, mode: str = "train") -> Tensor:
        outs = self.node_states(batched, mode)
        if self.pyramid:
            g = None
            for ro, h in zip(self.readouts, outs):
                r = ro(h, batched.node_to_graph, batched.num_graphs, mode)
                g = r if g is None else T.add(g, r)
            return g
        return self.readouts[0](outs[-1], batched.node_to_graph, batched.num_graphs, mode)

    def __call__(self, batched, mode: str = "train") -> Tensor:
        h = self.graph_embedding(batched, mode)
        for i, lin in enumerate(self.classifier):
            h = lin(h)
            if i < len(self.classifier) - 1:
                h = T.relu(h)
        return h

    def state_dict(self) -> dict:
        out = {name: p.data for name, p in self.named_parameters()}
        for name, st in self.named_buffers():
            out[f"{name}.mean"] = st.mean
            out[f"{name}.var"] = st.var
        return out

    def load_state_dict(self, state: dict) -> None:
        expected = self.state_dict()
        missing = sorted(set(expected) - set(state))
        extra = sorted(set(state) - set(expected))
        if missing or extra:
            raise CheckpointError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, arr in expected.items():
            if np.shape(state[name]) != arr.shape:
                raise CheckpointError(f"{name}: shape {np.shape(state[name])} != {arr.shape}")
        for name, p in self.named_parameters():
            p.data = np.array(state[name], dtype=np.float64)
        for name, st in self.named_buffers():
            st.mean = np.array(state[f"{name}.mean"], dtype=np.float64)
            st.var = np.array(state[f"{name}.var"], dtype=np.float64)


def _embedding(rng, vocab: int, dim: int) -> Tensor:
    return Tensor(rng.normal(0.0, 0.1, size=(vocab, dim)), requires_grad=True)


def _classifier(rng, hidden: int) -> list:
    return [Linear(hidden, hidden, rng), Linear(hidden, hidden, rng), Linear(hidden, 2, rng)]


def _require_vocab(cfg) -> int:
    if cfg.vocab_size is None:
        raise ConfigError("vocab_size must be set before building a model")
    return cfg.vocab_size


def build(config: HagNetConfig, seed: int = 0) -> GraphClassifier:
    config.validate()
    vocab = _require_vocab(config)
    rng = np.random.default_rng(seed)
    H = config.hidden_dim
    embedding = _embedding(rng, vocab, config.embed_dim)
    layers = []
    d = config.embed_dim
    for _ in range(config.num_agg_layers):
        layers.append(
            HeteroLayer(
                d, H, config.agg_kinds, config.agg_merge, config.combine, rng,
                att_heads=config.att_heads, mlp_depth=config.mlp_depth,
            )
        )
        d = H

    def make_readout():
        return Readout(H, H, config.readout_kinds, config.readout_merge, rng,
                       att_heads=config.att_heads, mlp_depth=config.mlp_depth)

    if config.pyramid and config.readout_tied:
        shared = make_readout()
        readouts = [shared] * config.num_agg_layers
    elif config.pyramid:
        readouts = [make_readout() for _ in range(config.num_agg_layers)]
    else:
        readouts = [make_readout()]
    return GraphClassifier(config, embedding, layers, readouts, _classifier(rng, H),
                           config.pyramid, config.dense_connections)


def build_baseline(config: Union[BaselineConfig, str], seed: int = 0, **dims) -> GraphClassifier:
    """GIN or GraphSAGE stack with a parameter-free sum READOUT and the same classifier."""
    if isinstance(config, str):
        config = BaselineConfig(config, **dims)
    config.validate()
    vocab = _require_vocab(config)
    rng = np.random.default_rng(seed)
    H = config.hidden_dim
    embedding = _embedding(rng, vocab, config.embed_dim)
    layers = []
    d = config.embed_dim
    for _ in range(config.num_layers):
        if config.model == "gin":
            layers.append(GINLayer(d, H, rng, eps=config.eps, mlp_depth=config.mlp_depth))
        else:
            layers.append(SAGELayer(d, H, rng))
        d = H
    readout = Readout(H, H, ["sum"], None, rng, phis=[Identity(H)], psi=Identity(H))
    return GraphClassifier(config, embedding, layers, [readout], _classifier(rng, H),
                           pyramid=False, dense_connections=False)


def build_model(config: AnyConfig, seed: int = 0) -> GraphClassifier:
    if isinstance(config, HagNetConfig):
        return build(config, seed)
    return build_baseline(config, seed)


def forward(model: GraphClassifier, batched, mode: str = "train") -> Tensor:
    return model(batched, mode)


# ---------------------------------------------------------------------------
# checkpoints: magic, u64 header length, JSON header, little-endian float64 payload

_MAGIC = b"HAGNETCK"


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: GraphClassifier, path) -> None:
    state = model.state_dict()
    entries, blobs, offset = [], [], 0
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(
        {"format": 1, "config": model.config.to_dict(), "tensors": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> GraphClassifier:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    payload = memoryview(raw)[16 + hlen :]
    state = {}
    for ent in header["tensors"]:
        count = int(np.prod(ent["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=ent["offset"])
        state[ent["name"]] = arr.reshape(ent["shape"]).astype(np.float64)
    model = build_model(config_from_dict(header["config"]))
    model.load_state_dict(state)
    return model
