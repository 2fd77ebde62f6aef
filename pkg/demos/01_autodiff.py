"""
Reverse-mode autodiff with manlab.numerics
==========================================

Tensors record the ops applied to them; ``backward()`` on a scalar walks the
tape in reverse and leaves a ``.grad`` array on every leaf that asked for one.
"""

import numpy as np

from manlab.numerics import Adam, Tensor, ops

# a tiny regression: fit w in y = x @ w
rng = np.random.default_rng(0)
x = rng.standard_normal((64, 3))
w_true = np.array([[1.5], [-2.0], [0.5]])
y = x @ w_true

w = Tensor(np.zeros((3, 1)), requires_grad=True)
loss = ops.mean((ops.matmul(Tensor(x), w) - Tensor(y)) * (ops.matmul(Tensor(x), w) - Tensor(y)))
loss.backward()
print("loss at w=0:", loss.item())
print("analytic grad:", w.grad.ravel())
print("closed form:  ", (-2 / len(x) * x.T @ y).ravel())

# %%
# Adam drives it to the solution. The tape is rebuilt on every forward pass.
opt = Adam([w], lr=0.1)
for step in range(300):
    opt.zero_grad()
    r = ops.matmul(Tensor(x), w) - Tensor(y)
    loss = ops.mean(r * r)
    loss.backward()
    opt.step()
print("fitted w:", w.data.ravel().round(3), "final loss %.2e" % loss.item())

# %%
# Convolutions, pooling and normalization are ops too, so a small conv net is
# just a composition of them.
img = Tensor(rng.random((2, 1, 8, 8)), requires_grad=True)
k = Tensor(rng.standard_normal((4, 1, 3, 3)) * 0.3, requires_grad=True)
feat = ops.max_pool2d(ops.relu(ops.conv2d(img, k, pad=1)), 2)
ops.sum(feat).backward()
print("feature map", feat.shape, "| kernel grad norm %.3f" % np.linalg.norm(k.grad))
