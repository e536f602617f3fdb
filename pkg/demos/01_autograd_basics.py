"""
Reverse-mode gradients on numpy arrays
======================================

Build a small expression, backpropagate, and compare the result with
central finite differences.
"""

import numpy as np

from geoformer import tensor as T
from geoformer.tensor import Tensor

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(3, 4)))
mix = Tensor(rng.normal(size=(3, 2)))


# a scalar through matmul, GELU and a row softmax
def loss_of(w):
    return T.sum(T.mul(T.softmax_rows(T.gelu(T.matmul(x, w))), mix))


w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
loss = loss_of(w)
loss.backward()
print("loss", loss.item())
print("d loss / d w\n", w.grad)

fd = T.finite_diff_grad(loss_of, w.data)
print("relative error vs finite differences:", T.relative_error(w.grad, fd))
