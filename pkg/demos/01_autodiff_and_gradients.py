"""Tour of the tensor core: the tape, parameter store, and gradient checking.

Run:  python3 demos/01_autodiff_and_gradients.py
"""

import numpy as np

from icurisk import autodiff as ad
from icurisk.autodiff import ParamStore, Tensor
from icurisk.gradcheck import check_gradients

rng = np.random.default_rng(0)

# Tensors wrap float64 numpy arrays.  Operations on them are recorded on a
# dynamic tape whenever a trainable tensor participates.
store = ParamStore()
W = store.add("W", rng.normal(size=(3, 2)) * 0.5)
b = store.add("b", np.zeros(2))
x = Tensor(rng.normal(size=(4, 3)))  # plain data: no gradient slot

hidden = ad.tanh(ad.add(ad.matmul(x, W), b))
loss = ad.tmean(ad.mul(hidden, hidden))
print("loss value:", loss.item())

# backward() replays the tape in reverse topological order and fills the
# gradient slot of every parameter that participated.
ad.backward(loss, store)
print("dL/db =", b.grad)

# The finite-difference checker uses forward passes only, so it is an
# independent oracle for every hand-written backward rule.
worst = check_gradients(lambda: ad.tmean(ad.mul(ad.tanh(ad.add(ad.matmul(x, W), b)), ad.tanh(ad.add(ad.matmul(x, W), b)))), store)
print("worst relative error per parameter:", {k: f"{v:.2e}" for k, v in worst.items()})

# Repeated backward passes are bit-identical, and parameters that do not
# participate keep an exactly-zero gradient.
idle = store.add("idle", np.ones(3))
ad.backward(loss, store)
first = W.grad.copy()
ad.backward(loss, store)
print("deterministic backward:", np.array_equal(first, W.grad))
print("non-participating gradient is zero:", np.all(idle.grad == 0.0))

# Checkpoints round-trip parameters exactly (float64 via repr).
import tempfile, os

with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "params.json")
    ad.save_params(store, path)
    loaded = ad.load_params(path)
    print("checkpoint bit-identical:", all(np.array_equal(loaded[k], t.data) for k, t in store.items()))
