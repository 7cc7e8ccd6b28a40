"""
Mixing several neighbourhood aggregators in one layer
======================================================

A heterogeneous layer runs a handful of aggregators side by side (max, sum,
mean, attention), merges their outputs, combines the result with the node's
own state and passes it through a small MLP. With a single sum aggregator,
identity transforms and a sum combine it collapses to a GIN layer.
"""

import numpy as np

from hagnet.graph import Graph, batch
from hagnet.layers import GINLayer, HeteroLayer, Identity, aggregate
from hagnet.tensor import Tensor

# a path 0-1-2 plus an isolated node 3, one feature per node
g = Graph(4, (0, 0, 0, 0), ((0, 1), (1, 2)), 0)
edge_index = batch([g]).edge_index
h = Tensor(np.array([[1.0], [2.0], [4.0], [8.0]]))

for kind in ("max", "sum", "mean"):
    print(f"{kind:>4}:", aggregate(kind, h, edge_index).data.ravel())
# the isolated node gets a zero row from every aggregator

rng = np.random.default_rng(1)
x = Tensor(rng.normal(size=(4, 3)))
layer = HeteroLayer(3, 5, ["max", "mean", "att"], "cat", "rnn", rng, hidden=8)
print("heterogeneous layer output shape:", layer(x, edge_index, "train").shape)

# the GIN special case, sharing one MLP so the two layers are comparable
gin = GINLayer(3, 3, rng, eps=0.25)
special = HeteroLayer(3, 3, ["sum"], "sum", "sum", phis=[Identity(3)], psi=gin.phi, eps=0.25)
gap = np.abs(special(x, edge_index, "eval").data - gin(x, edge_index, "eval").data).max()
print("GIN reduction, max deviation:", gap)
