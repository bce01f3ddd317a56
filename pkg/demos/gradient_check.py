"""
Checking tape gradients against finite differences
==================================================

The model is differentiated by a small reverse-mode tape. Here we build a
tiny Bi-cLSTM, compare every parameter gradient with central differences,
and look at one gradient that is exactly zero by construction.
"""

import numpy as np

from rul_forge import autodiff as ad
from rul_forge.gradcheck import check_model, tiny_config
from rul_forge.model import bind, forward_graph, init_params

# a scalar function on the tape: mean(tanh(A @ B))
g = ad.Graph()
A = g.param(np.array([[0.5, -1.0], [2.0, 0.25]]))
B = g.param(np.array([[1.0], [0.5]]))
loss = ad.reduce_mean(ad.tanh(ad.matmul(A, B)))
g.backward(loss)
print("loss", float(loss.value))
print("dloss/dA\n", A.grad)

# the full model: 8 features, 2 blocks, hidden width 8, windows of 6 steps
config = tiny_config(seed=0)
report = check_model(config, window=6, batch=2)
for line in report.lines():
    print(line)

# the last block's backward LSTM is read after one step from a zero state,
# so its recurrent weights get no gradient at all
params = init_params(config)
g = ad.Graph()
leaves = bind(g, params)
pred = forward_graph(g, leaves, config, np.random.default_rng(0).standard_normal((2, 6, 8)))
g.backward(ad.reduce_mean(pred * pred))
print("block1.bwd.Wh gradient norm:", np.linalg.norm(leaves["block1.bwd.Wh"].grad))
print("block0.bwd.Wh gradient norm:", np.linalg.norm(leaves["block0.bwd.Wh"].grad))
