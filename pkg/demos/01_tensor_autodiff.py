"""Tour of the tensor core: forward ops, gradients, and a tiny training loop.

Run:  python demos/01_tensor_autodiff.py
"""

import numpy as np

from auxcl import autodiff as ad
from auxcl.autodiff import Parameter, Tensor

rng = np.random.default_rng(0)

# --- basic ops build a tape; backward() fills .grad -------------------------
a = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
b = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
loss = ad.mse(ad.matmul(a, b), Tensor(np.zeros((4, 2))))
loss.backward()
print("loss:", loss.item())
print("grad shapes:", a.grad.shape, b.grad.shape)

# --- quick numerical check on one coordinate --------------------------------
step = 1e-5
probe = a.data.copy()
probe[0, 0] += step
hi = (((probe @ b.data) ** 2).mean())
probe[0, 0] -= 2 * step
lo = (((probe @ b.data) ** 2).mean())
print("analytic dL/da[0,0]:", a.grad[0, 0])
print("numeric  dL/da[0,0]:", (hi - lo) / (2 * step))

# --- a complete training step: two-blob classification ----------------------
n = 200
x = np.concatenate([rng.normal(-1.5, 1.0, (n, 8)), rng.normal(1.5, 1.0, (n, 8))])
y = np.concatenate([np.zeros(n, dtype=int), np.ones(n, dtype=int)])

w1 = Parameter(rng.uniform(-0.5, 0.5, (8, 16)))
b1 = Parameter(np.zeros(16))
w2 = Parameter(rng.uniform(-0.5, 0.5, (16, 2)))
b2 = Parameter(np.zeros(2))
params = [w1, b1, w2, b2]

for it in range(60):
    h = ad.relu(ad.add(ad.matmul(Tensor(x), w1), b1))
    logits = ad.add(ad.matmul(h, w2), b2)
    ce = ad.softmax_cross_entropy(logits, y)
    ce.backward()
    ad.sgd_step(params, lr=0.2)
    if it % 20 == 0:
        acc = (logits.data.argmax(1) == y).mean()
        print(f"iter {it:3d}  ce={ce.item():.4f}  train_acc={acc:.3f}")

final = ad.add(ad.matmul(ad.relu(ad.add(ad.matmul(Tensor(x), w1), b1)), w2), b2)
print("final train accuracy:", (final.data.argmax(1) == y).mean())
