"""Reverse-mode autodiff on numpy arrays, checked against central differences.

Run: python demos/01_autodiff.py
"""

# %% A small graph: layer norm, a matmul and GELU, reduced to a scalar.
import numpy as np

from fusionsf import tensor as T
from fusionsf.tensor import Tensor

rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
w = Tensor(rng.standard_normal((6, 3)), requires_grad=True)
gamma, beta = Tensor(np.ones(6)), Tensor(np.zeros(6))


def f(x, w):
    return T.sum(T.gelu(T.matmul(T.layer_norm(x, gamma, beta), w)))


loss = f(x, w)
T.backward(loss)
print("loss", loss.item())

# %% The same derivative by central differences, entry by entry.
h = 1e-5
num = np.zeros_like(w.data)
for idx in np.ndindex(w.shape):
    old = w.data[idx]
    w.data[idx] = old + h
    with T.no_grad():
        up = f(x, w).item()
    w.data[idx] = old - h
    with T.no_grad():
        down = f(x, w).item()
    w.data[idx] = old
    num[idx] = (up - down) / (2 * h)

rel = np.linalg.norm(w.grad - num) / max(np.linalg.norm(w.grad) + np.linalg.norm(num), 1e-8)
print(f"relative error of dL/dW vs finite differences: {rel:.2e}")

# %% Gradients accumulate until cleared; a second backward over a stale graph is refused.
T.zero_grad([x, w])
T.backward(f(x, w))
print("grad norm after a fresh pass", float(np.linalg.norm(w.grad)))
