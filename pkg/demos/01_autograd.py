"""Reverse-mode autograd on a closed set of numpy primitives.

Run: python demos/01_autograd.py
"""
# %%
import numpy as np

from ecgfuse import autograd as ag
from ecgfuse.autograd import Tensor

# %% [markdown]
# A tensor is a numpy array plus an optional gradient slot. Operations record
# themselves while gradients are enabled, and `backward` walks the graph in
# reverse. Here is a one-weight regression: d/dw mean((w x - y)^2) at w=3,
# x=2, y=0 should be 2 * (6 - 0) * 2 = 24.

# %%
w = Tensor([3.0], requires_grad=True)
loss = ag.mse(w * Tensor([2.0]), Tensor([0.0]))
ag.backward(loss)
print("loss", float(loss.data), "grad", w.grad)

# %% [markdown]
# A small two-layer network. Gradients land on every leaf with the leaf's
# shape, and calling backward again accumulates rather than overwrites.

# %%
gen = np.random.default_rng(0)
x = Tensor(gen.standard_normal((5, 4)))
w1 = Tensor(gen.standard_normal((4, 8)) * 0.5, requires_grad=True)
b1 = Tensor(np.zeros(8), requires_grad=True)
w2 = Tensor(gen.standard_normal((8, 1)) * 0.5, requires_grad=True)
target = Tensor(gen.random((5, 1)))

out = ag.linear(ag.gelu(ag.linear(x, w1, b1)), w2)
ag.backward(ag.bce(out, target))
print("grad shapes", w1.grad.shape, b1.grad.shape, w2.grad.shape)

# %% [markdown]
# Finite differences are the reference. `grad_check` perturbs each entry by
# +-epsilon in 64-bit and compares the central difference with the analytic
# gradient (relative error, denominator floored at 1e-8).

# %%
with ag.precision(64):
    y = Tensor(gen.random((3, 3)))
    report = ag.grad_check(lambda v: ag.mse(ag.softmax(v, axis=-1), y),
                           Tensor(gen.standard_normal((3, 3))))
print(report)

# %% [markdown]
# Dropout masks come from a counter-based stream keyed by (seed, layer, step),
# so the same key always drops the same units.

# %%
ones = Tensor(np.ones((2, 8)))
a = ag.dropout(ones, 0.5, training=True, key=(7, 0, 1)).data
b = ag.dropout(ones, 0.5, training=True, key=(7, 0, 1)).data
print(a)
print("same key, same mask:", np.array_equal(a, b))
