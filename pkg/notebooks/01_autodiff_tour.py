#!/usr/bin/env python3
# A short tour of the reverse-mode engine underneath the GAN.
# Run from the repo root:  python3 notebooks/01_autodiff_tour.py

import numpy as np

from stochgan import autodiff as ad
from stochgan.autodiff import Graph, Tensor

# %% scalars: y = x^2 + 3x, dy/dx = 2x + 3
x = Tensor(2.0, requires_grad=True)
y = x * x + x * 3.0
y.backward()
print("y =", y.item(), " dy/dx =", x.grad)

# %% a tiny layer, written as a named graph so inputs are bound explicitly
def layer(x, W, b):
    return ad.mean(ad.log(ad.sigmoid(ad.matmul(x, W) + b)))

g = Graph(layer, ["x", "W", "b"], params=["W", "b"])
rng = np.random.default_rng(0)
loss = g.forward({"x": rng.standard_normal((4, 3)), "W": rng.standard_normal((3, 1)), "b": np.zeros(1)})
grads = g.backward()
print("loss", loss.item())
print("dL/dW", grads["W"].ravel(), " dL/db", grads["b"])

# %% compare with a central difference on one weight
h = 1e-6
bind = {"x": rng.standard_normal((4, 3)), "W": rng.standard_normal((3, 1)), "b": np.zeros(1)}
g.forward(bind)
analytic = g.backward()["W"][0, 0]
Wp, Wm = bind["W"].copy(), bind["W"].copy()
Wp[0, 0] += h
Wm[0, 0] -= h
fd = (g.forward({**bind, "W": Wp}).item() - g.forward({**bind, "W": Wm}).item()) / (2 * h)
print(f"analytic {analytic:.10f}  finite-difference {fd:.10f}")

# %% precision: f64 by default, f32 available for longer training runs
with ad.precision("f32"):
    print("dtype inside f32 block:", Tensor(1.0).data.dtype)
print("dtype outside:", Tensor(1.0).data.dtype)

# %% non-finite values stop the show instead of propagating silently
try:
    ad.log(Tensor([1.0, 0.0]))
except ValueError as exc:
    print("log(0) rejected:", exc)
