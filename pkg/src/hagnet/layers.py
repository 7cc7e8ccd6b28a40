"""Neighbourhood aggregation kernels and graph layers.

Edge lists are canonicalised (sorted by target, then source) before any
reduction, so every aggregate is independent of the order edges arrive in.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .tensor import BatchNormStats, Tensor

__all__ = [
    "ConfigError",
    "AggregatorKind",
    "MergeKind",
    "CombineKind",
    "Module",
    "Linear",
    "Identity",
    "BatchNorm",
    "MLP",
    "GRUCell",
    "NeighborAttention",
    "AttentionPool",
    "Neighborhood",
    "aggregate",
    "segment_aggregate",
    "HeteroLayer",
    "Readout",
    "GINLayer",
    "SAGELayer",
    "hetero_layer_forward",
    "readout_forward",
    "gin_layer_forward",
    "sage_layer_forward",
    "glorot",
]


class ConfigError(ValueError):
    """Invalid layer or model configuration; ``problems`` lists every violation."""

    def __init__(self, problems: Union[str, Sequence[str]]):
        self.problems = [problems] if isinstance(problems, str) else list(problems)
        super().__init__("; ".join(self.problems))


class AggregatorKind(str, Enum):
    MAX = "max"
    SUM = "sum"
    MEAN = "mean"
    ATT = "att"


class MergeKind(str, Enum):
    CAT = "cat"
    SUM = "sum"


class CombineKind(str, Enum):
    SUM = "sum"
    MAX = "max"
    CAT = "cat"
    RNN = "rnn"


# ---------------------------------------------------------------------------
# parameter containers


class Module:
    """Attribute-walking parameter container.

    Trainable tensors, child modules, lists of child modules and
    :class:`BatchNormStats` found in ``vars(self)`` are discovered in
    attribute order. Shared children are reported once.
    """

    def _children(self) -> Iterator[Tuple[str, object]]:
        for key, val in vars(self).items():
            if isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item
            else:
                yield key, val

    def _walk(self, prefix: str, seen: set):
        for key, val in self._children():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                if id(val) not in seen:
                    seen.add(id(val))
                    yield "param", name, val
            elif isinstance(val, BatchNormStats):
                if id(val) not in seen:
                    seen.add(id(val))
                    yield "buffer", name, val
            elif isinstance(val, Module):
                if id(val) not in seen:
                    seen.add(id(val))
                    yield from val._walk(name + ".", seen)

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return [(n, v) for kind, n, v in self._walk("", set()) if kind == "param"]

    def parameters(self) -> List[Tensor]:
        return [v for _, v in self.named_parameters()]

    def named_buffers(self) -> List[Tuple[str, BatchNormStats]]:
        return [(n, v) for kind, n, v in self._walk("", set()) if kind == "buffer"]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = Tensor(glorot(rng, in_dim, out_dim), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        y = T.matmul(x, self.weight)
        return T.add(y, self.bias) if self.bias is not None else y


class Identity(Module):
    def __init__(self, dim: int):
        self.in_dim = self.out_dim = dim

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        return x


class BatchNorm(Module):
    def __init__(self, dim: int):
        self.in_dim = self.out_dim = dim
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.stats = BatchNormStats(dim)

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        return T.batch_norm_1d(x, self.stats, mode, self.gamma, self.beta)


class MLP(Module):
    """``depth`` blocks of Linear -> BatchNorm -> ReLU, then a final Linear."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, rng, depth: int = 1):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.blocks = []
        d = in_dim
        for _ in range(depth):
            self.blocks.append(Linear(d, hidden, rng))
            self.blocks.append(BatchNorm(hidden))
            d = hidden
        self.out = Linear(d, out_dim, rng)

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        for i in range(0, len(self.blocks), 2):
            x = self.blocks[i](x, mode)
            x = T.relu(self.blocks[i + 1](x, mode))
        return self.out(x, mode)


class GRUCell(Module):
    """Gated recurrent update h' = n + z * (h - n).

    r = sigmoid(x W_r + h U_r), z = sigmoid(x W_z + h U_z),
    n = tanh(x W_n + r * (h U_n)); biases live on the input side except b_hn.
    """

    def __init__(self, input_dim: int, hidden_dim: int, rng):
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        self.x_r = Linear(input_dim, hidden_dim, rng)
        self.x_z = Linear(input_dim, hidden_dim, rng)
        self.x_n = Linear(input_dim, hidden_dim, rng)
        self.h_r = Linear(hidden_dim, hidden_dim, rng, bias=False)
        self.h_z = Linear(hidden_dim, hidden_dim, rng, bias=False)
        self.h_n = Linear(hidden_dim, hidden_dim, rng)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        r = T.sigmoid(T.add(self.x_r(x), self.h_r(h)))
        z = T.sigmoid(T.add(self.x_z(x), self.h_z(h)))
        n = T.tanh(T.add(self.x_n(x), T.mul(r, self.h_n(h))))
        return T.add(n, T.mul(z, T.sub(h, n)))


# ---------------------------------------------------------------------------
# neighbourhoods and reductions


class Neighborhood:
    """Directed edges sorted by (target, source)."""

    __slots__ = ("src", "dst", "num_nodes")

    def __init__(self, edge_index, num_nodes: int):
        ei = np.asarray(edge_index, dtype=np.int64).reshape(2, -1)
        if ei.size and (ei.min() < 0 or ei.max() >= num_nodes):
            raise T.DimensionError(f"edge_index refers to nodes outside [0, {num_nodes})")
        order = np.lexsort((ei[0], ei[1]))
        self.src = ei[0][order]
        self.dst = ei[1][order]
        self.num_nodes = num_nodes

    @classmethod
    def of(cls, edge_index, num_nodes: int) -> "Neighborhood":
        if isinstance(edge_index, Neighborhood):
            return edge_index
        return cls(edge_index, num_nodes)

    def degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.num_nodes)


class NeighborAttention(Module):
    """Multi-head scaled dot-product attention of a centre node over its neighbours.

    The centre node supplies the query, neighbours supply keys and values;
    heads are concatenated and projected back to ``dim`` without bias, so an
    empty neighbourhood yields a zero row.
    """

    def __init__(self, dim: int, rng, heads: int = 1, head_dim: Optional[int] = None):
        if heads < 1:
            raise ConfigError("attention needs at least one head")
        self.dim, self.heads = dim, heads
        self.head_dim = head_dim or dim
        inner = heads * self.head_dim
        self.query = Linear(dim, inner, rng, bias=False)
        self.key = Linear(dim, inner, rng, bias=False)
        self.value = Linear(dim, inner, rng, bias=False)
        self.proj = Linear(inner, dim, rng, bias=False)

    def weights(self, node_feats: Tensor, nbr: Neighborhood, center_feats: Tensor) -> Tensor:
        """Softmax attention weights per sorted edge and head, shape [E, H]."""
        q = T.gather_rows(self.query(center_feats), nbr.dst)
        k = T.gather_rows(self.key(node_feats), nbr.src)
        scores = T.scale(T.head_dot(q, k, self.heads), 1.0 / math.sqrt(self.head_dim))
        return T.segment_softmax(scores, nbr.dst, nbr.num_nodes)

    def __call__(self, node_feats: Tensor, nbr: Neighborhood, center_feats: Tensor) -> Tensor:
        p = self.weights(node_feats, nbr, center_feats)
        v = T.gather_rows(self.value(node_feats), nbr.src)
        pooled = T.segment_sum(T.head_weight(v, p, self.heads), nbr.dst, nbr.num_nodes)
        return self.proj(pooled)


class AttentionPool(Module):
    """Attention over all nodes of a graph with a learned query per head."""

    def __init__(self, dim: int, rng, heads: int = 1, head_dim: Optional[int] = None):
        self.dim, self.heads = dim, heads
        self.head_dim = head_dim or dim
        inner = heads * self.head_dim
        self.query = Tensor(glorot(rng, 1, inner), requires_grad=True)
        self.key = Linear(dim, inner, rng, bias=False)
        self.value = Linear(dim, inner, rng, bias=False)
        self.proj = Linear(inner, dim, rng, bias=False)

    def weights(self, x: Tensor, index: np.ndarray, num_segments: int) -> Tensor:
        q = T.gather_rows(self.query, np.zeros(len(index), dtype=np.int64))
        scores = T.scale(T.head_dot(q, self.key(x), self.heads), 1.0 / math.sqrt(self.head_dim))
        return T.segment_softmax(scores, index, num_segments)

    def __call__(self, x: Tensor, index: np.ndarray, num_segments: int) -> Tensor:
        p = self.weights(x, index, num_segments)
        pooled = T.segment_sum(T.head_weight(self.value(x), p, self.heads), index, num_segments)
        return self.proj(pooled)


_SEGMENT = {
    AggregatorKind.SUM: T.segment_sum,
    AggregatorKind.MEAN: T.segment_mean,
    AggregatorKind.MAX: T.segment_max,
}


def aggregate(
    kind,
    node_feats: Tensor,
    edge_index,
    center_feats: Optional[Tensor] = None,
    attention: Optional[NeighborAttention] = None,
) -> Tensor:
    """Row ``v`` of the result summarises {h_u : u in N(v)}; isolated nodes get zeros."""
    kind = AggregatorKind(kind)
    n = node_feats.shape[0]
    nbr = Neighborhood.of(edge_index, n)
    if kind is AggregatorKind.ATT:
        if attention is None:
            raise ConfigError("att aggregation needs attention parameters")
        return attention(node_feats, nbr, node_feats if center_feats is None else center_feats)
    msgs = T.gather_rows(node_feats, nbr.src)
    return _SEGMENT[kind](msgs, nbr.dst, n)


def segment_aggregate(
    kind, x: Tensor, index: np.ndarray, num_segments: int, attention: Optional[AttentionPool] = None
) -> Tensor:
    """Pool rows of ``x`` into ``num_segments`` groups (``index`` non-decreasing)."""
    kind = AggregatorKind(kind)
    if kind is AggregatorKind.ATT:
        if attention is None:
            raise ConfigError("att readout needs attention parameters")
        return attention(x, index, num_segments)
    return _SEGMENT[kind](x, index, num_segments)


def _merge(parts: List[Tensor], merge: MergeKind) -> Tensor:
    if len(parts) == 1:
        return parts[0]
    if merge is MergeKind.CAT:
        return T.concat(parts, axis=1)
    out = parts[0]
    for p in parts[1:]:
        out = T.add(out, p)
    return out


def _merged_width(phis, merge: MergeKind, where: str) -> int:
    widths = [p.out_dim for p in phis]
    if merge is MergeKind.CAT:
        return sum(widths)
    if len(set(widths)) != 1:
        raise ConfigError(f"{where}: sum merge needs equal branch widths, got {widths}")
    return widths[0]


def _kinds(kinds) -> List[AggregatorKind]:
    kinds = [AggregatorKind(k) for k in kinds]
    if not kinds:
        raise ConfigError("at least one aggregator is required")
    if len(set(kinds)) != len(kinds):
        raise ConfigError(f"duplicate aggregators in {[k.value for k in kinds]}")
    return kinds


# ---------------------------------------------------------------------------
# layers


class HeteroLayer(Module):
    """h_v <- psi(C(h_v, merge_i phi_i(A_i(N(v))))) with one phi per aggregator.

    ``phis``/``psi`` default to MLPs; pass :class:`Identity` (or any module
    exposing ``in_dim``/``out_dim``) to override. ``eps`` scales the centre
    path by ``1 + eps`` before combining.
    """

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        kinds,
        merge="sum",
        combine="sum",
        rng: Optional[np.random.Generator] = None,
        *,
        hidden: Optional[int] = None,
        phis: Optional[Sequence[Module]] = None,
        psi: Optional[Module] = None,
        eps: float = 0.0,
        att_heads: int = 1,
        mlp_depth: int = 1,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.kinds = _kinds(kinds)
        self.merge = MergeKind(merge)
        self.combine = CombineKind(combine)
        self.eps = float(eps)
        hidden = hidden or out_dim
        self.in_dim, self.out_dim = in_dim, out_dim

        self.attention = [
            NeighborAttention(in_dim, rng, heads=att_heads)
            for k in self.kinds
            if k is AggregatorKind.ATT
        ]
        if phis is None:
            phis = [MLP(in_dim, hidden, hidden, rng, mlp_depth) for _ in self.kinds]
        if len(phis) != len(self.kinds):
            raise ConfigError(f"{len(phis)} transforms for {len(self.kinds)} aggregators")
        self.phis = list(phis)
        mw = _merged_width(self.phis, self.merge, "aggregation layer")

        self.width_map = None
        self.cell = None
        if self.combine in (CombineKind.SUM, CombineKind.MAX):
            if in_dim != mw:
                self.width_map = Linear(in_dim, mw, rng, bias=False)
            combined = mw
        elif self.combine is CombineKind.CAT:
            combined = in_dim + mw
        else:
            self.cell = GRUCell(in_dim, mw, rng)
            combined = mw
        self.psi = psi if psi is not None else MLP(combined, hidden, out_dim, rng, mlp_depth)
        if self.psi.in_dim != combined:
            raise ConfigError(f"psi expects width {self.psi.in_dim}, combine yields {combined}")
        self.out_dim = self.psi.out_dim

    def merged(self, x: Tensor, edge_index, mode: str = "train") -> Tensor:
        nbr = Neighborhood.of(edge_index, x.shape[0])
        att = iter(self.attention)
        parts = []
        for kind, phi in zip(self.kinds, self.phis):
            a = aggregate(kind, x, nbr, x, next(att) if kind is AggregatorKind.ATT else None)
            parts.append(phi(a, mode))
        return _merge(parts, self.merge)

    def __call__(self, x: Tensor, edge_index, mode: str = "train") -> Tensor:
        m = self.merged(x, edge_index, mode)
        center = T.scale(x, 1.0 + self.eps) if self.eps else x
        if self.combine is CombineKind.RNN:
            h = self.cell(center, m)
        elif self.combine is CombineKind.CAT:
            h = T.concat([center, m], axis=1)
        else:
            if self.width_map is not None:
                center = self.width_map(center)
            h = T.add(center, m) if self.combine is CombineKind.SUM else T.maximum(center, m)
        return self.psi(h, mode)


class Readout(Module):
    """h_G = psi(merge_i phi_i(A_i over all nodes of G))."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        kinds,
        merge=None,
        rng: Optional[np.random.Generator] = None,
        *,
        hidden: Optional[int] = None,
        phis: Optional[Sequence[Module]] = None,
        psi: Optional[Module] = None,
        att_heads: int = 1,
        mlp_depth: int = 1,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.kinds = _kinds(kinds)
        if len(self.kinds) > 1 and merge is None:
            raise ConfigError("readout with several aggregators needs a merge")
        self.merge = MergeKind(merge) if merge is not None else MergeKind.SUM
        hidden = hidden or out_dim
        self.attention = [
            AttentionPool(in_dim, rng, heads=att_heads) for k in self.kinds if k is AggregatorKind.ATT
        ]
        if phis is None:
            phis = [MLP(in_dim, hidden, hidden, rng, mlp_depth) for _ in self.kinds]
        if len(phis) != len(self.kinds):
            raise ConfigError(f"{len(phis)} transforms for {len(self.kinds)} aggregators")
        self.phis = list(phis)
        mw = _merged_width(self.phis, self.merge, "readout")
        self.psi = psi if psi is not None else MLP(mw, hidden, out_dim, rng, mlp_depth)
        if self.psi.in_dim != mw:
            raise ConfigError(f"readout psi expects width {self.psi.in_dim}, merge yields {mw}")
        self.in_dim, self.out_dim = in_dim, self.psi.out_dim

    def __call__(self, x: Tensor, node_to_graph, num_graphs: int, mode: str = "train") -> Tensor:
        index = np.asarray(node_to_graph, dtype=np.int64)
        att = iter(self.attention)
        parts = []
        for kind, phi in zip(self.kinds, self.phis):
            pool = next(att) if kind is AggregatorKind.ATT else None
            parts.append(phi(segment_aggregate(kind, x, index, num_graphs, pool), mode))
        return self.psi(_merge(parts, self.merge), mode)


class GINLayer(Module):
    """h_v <- phi((1 + eps) h_v + sum_{u in N(v)} h_u)."""

    def __init__(self, in_dim: int, out_dim: int, rng=None, *, eps: float = 0.0,
                 hidden: Optional[int] = None, phi: Optional[Module] = None, mlp_depth: int = 1):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.eps = float(eps)
        self.phi = phi if phi is not None else MLP(in_dim, hidden or out_dim, out_dim, rng, mlp_depth)
        self.in_dim, self.out_dim = in_dim, self.phi.out_dim

    def __call__(self, x: Tensor, edge_index, mode: str = "train") -> Tensor:
        agg = aggregate(AggregatorKind.SUM, x, edge_index)
        center = T.scale(x, 1.0 + self.eps) if self.eps else x
        return self.phi(T.add(center, agg), mode)


class SAGELayer(Module):
    """h_v <- phi_1(h_v) + phi_2(mean_{u in N(v)} h_u), with linear phi."""

    def __init__(self, in_dim: int, out_dim: int, rng=None, *,
                 phi_self: Optional[Module] = None, phi_neigh: Optional[Module] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.phi_self = phi_self if phi_self is not None else Linear(in_dim, out_dim, rng)
        self.phi_neigh = phi_neigh if phi_neigh is not None else Linear(in_dim, out_dim, rng, bias=False)
        self.in_dim, self.out_dim = in_dim, self.phi_self.out_dim

    def __call__(self, x: Tensor, edge_index, mode: str = "train") -> Tensor:
        agg = aggregate(AggregatorKind.MEAN, x, edge_index)
        return T.add(self.phi_self(x, mode), self.phi_neigh(agg, mode))


# functional aliases


def hetero_layer_forward(layer: HeteroLayer, node_feats: Tensor, edge_index, mode: str = "train"):
    return layer(node_feats, edge_index, mode)


def readout_forward(readout: Readout, batched, node_feats: Tensor, mode: str = "train"):
    return readout(node_feats, batched.node_to_graph, batched.num_graphs, mode)


def gin_layer_forward(layer: GINLayer, node_feats: Tensor, edge_index, mode: str = "train"):
    return layer(node_feats, edge_index, mode)


def sage_layer_forward(layer: SAGELayer, node_feats: Tensor, edge_index, mode: str = "train"):
    return layer(node_feats, edge_index, mode)
