"""
Reverse-mode gradients on a tape
================================

Operations record themselves while a ``Tape`` is active. ``backward`` then
walks the record in reverse and fills ``.grad`` on every leaf that asked
for one. Finite differences give an independent check.
"""

import numpy as np

from hagnet import tensor as T
from hagnet.gradcheck import check_gradients
from hagnet.tensor import Tape, Tensor

rng = np.random.default_rng(0)
W = Tensor(rng.normal(size=(3, 2)), requires_grad=True, name="W")
x = Tensor(rng.normal(size=(4, 3)))

# a tiny two-step model: relu(x W), summed
with Tape() as tape:
    y = T.relu(T.matmul(x, W))
    loss = T.sum_all(y)
tape.backward(loss)
print("loss", loss.data.item())
print("dloss/dW\n", W.grad)

# the same gradient by hand: x^T (1 where the pre-activation is positive)
mask = (x.data @ W.data > 0).astype(float)
print("matches the closed form:", np.allclose(W.grad, x.data.T @ mask))

# the tape can be replayed; gradients accumulate into .grad until cleared
W.grad = None
tape.backward(loss)
tape.backward(loss)
print("two replays double it:", np.allclose(W.grad, 2 * x.data.T @ mask))

# segment operations power the graph aggregators; check one against central differences
feats = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
groups = np.array([0, 0, 1, 1, 1, 3])
res = check_gradients(lambda: T.sum_all(T.tanh(T.segment_max(feats, groups, 4))), [feats])
print(f"segment_max gradient check: ok={res.ok}, {res.checked} entries, worst rel {res.worst_rel:.1e}")
