"""Learnable spline edges: the building block of the KAN encoders.

Every edge of a KAN layer carries its own univariate function, a cubic
B-spline over a shared uniform grid plus an optional SiLU base term; a node
just sums its incoming edges.

Run:  python3 demos/02_spline_edges.py
"""

import numpy as np

from icurisk import kan
from icurisk.autodiff import ParamStore, Tensor

grid = np.linspace(-3.0, 3.0, 9)  # 8 intervals, cubic -> 11 basis functions

# Partition of unity: inside the grid the basis functions sum to one.
xs = np.linspace(-3, 3, 7)
basis = kan.bspline_basis(xs, grid, 3)
print("basis shape:", basis.shape)
print("row sums   :", np.round(basis.sum(axis=-1), 12))

# A single edge can be fitted to an arbitrary univariate target by least
# squares on its coefficients.
fit_grid = np.linspace(-1.0, 1.0, 17)
xd = np.linspace(-1, 1, 400)
coeff = kan.fit_spline_coefficients(xd, np.sin(3 * xd), fit_grid, 3)
edge = kan.SplineEdge(fit_grid, coeff, 3)
print("max |spline - sin(3x)| :", f"{np.max(np.abs(edge(xd) - np.sin(3 * xd))):.2e}")

# Outside the grid the spline continues linearly from the boundary, so
# standardized inputs that occasionally escape the grid stay well-behaved.
print("edge at 1.0 / 2.0 / 4.0:", [round(float(edge(v)), 4) for v in (1.0, 2.0, 4.0)])

# A layer is an n_out x n_in grid of such edges; output j sums edge (j, i)
# applied to input i.  The same values fall out of a double loop over
# scalar edge evaluations.
store = ParamStore()
layer = kan.KanLayer(store, "demo", n_in=3, n_out=2, rng=np.random.default_rng(1))
x = np.random.default_rng(2).uniform(-2, 2, size=(1, 3))
out = layer.forward(Tensor(x)).data[0]
by_hand = [
    sum(kan.edge_eval(layer.edge(q, p), x[0, p]) for p in range(3)) for q in range(2)
]
print("layer forward  :", np.round(out, 6))
print("edge-sum oracle:", np.round(by_hand, 6))

# Two stacked layers compose; the constant-data encoder uses exactly this.
second = kan.KanLayer(store, "demo2", n_in=2, n_out=2, rng=np.random.default_rng(3))
h = kan.encode(Tensor(x), [layer, second])
print("two-layer output:", np.round(h.data[0], 6))
