"""Kolmogorov-Arnold layers: a learnable B-spline function on every edge.

Nodes only sum their incoming edge outputs, so a layer is the function
matrix {phi_qp} applied to the input vector.  Each edge is a cubic B-spline
over a shared uniform grid plus an optional SiLU base term (residual form;
switch it off for a pure-spline layer).  Inputs that leave the grid are
evaluated by linear extrapolation from the boundary value and slope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor

__all__ = [
    "bspline_basis",
    "bspline_basis_derivative",
    "fit_spline_coefficients",
    "SplineEdge",
    "edge_eval",
    "KanLayer",
    "encode",
]


def _extended_knots(grid: np.ndarray, order: int) -> np.ndarray:
    h = grid[1] - grid[0]
    left = grid[0] + h * np.arange(-order, 0)
    right = grid[-1] + h * np.arange(1, order + 1)
    return np.concatenate([left, grid, right])


def _raw_basis(x: np.ndarray, knots: np.ndarray, order: int) -> np.ndarray:
    """Cox-de Boor over a flat x array; returns (len(x), len(knots)-order-1)."""
    b = ((x[:, None] >= knots[None, :-1]) & (x[:, None] < knots[None, 1:])).astype(np.float64)
    for d in range(1, order + 1):
        left = (x[:, None] - knots[None, : -(d + 1)]) / (knots[d:-1] - knots[: -(d + 1)])
        right = (knots[None, d + 1 :] - x[:, None]) / (knots[d + 1 :] - knots[1:-d])
        b = left * b[:, :-1] + right * b[:, 1:]
    return b


def _raw_basis_derivative(x: np.ndarray, knots: np.ndarray, order: int) -> np.ndarray:
    if order == 0:
        return np.zeros((x.size, len(knots) - 1))
    lower = _raw_basis(x, knots, order - 1)
    i = np.arange(len(knots) - order - 1)
    d1 = knots[i + order] - knots[i]
    d2 = knots[i + order + 1] - knots[i + 1]
    return order * (lower[:, :-1] / d1 - lower[:, 1:] / d2)


def bspline_basis(x, grid: np.ndarray, order: int) -> np.ndarray:
    """Basis values for scalar or array x; trailing axis has grid_size+order entries.

    Inside the grid the basis is the usual nonnegative partition of unity;
    outside, each basis function is continued linearly from the boundary.
    """
    grid = np.asarray(grid, dtype=np.float64)
    xa = np.asarray(x, dtype=np.float64)
    flat = xa.reshape(-1)
    knots = _extended_knots(grid, order)
    clamped = np.clip(flat, grid[0], grid[-1])
    b = _raw_basis(clamped, knots, order)
    overshoot = flat - clamped
    if np.any(overshoot != 0.0):
        b = b + _raw_basis_derivative(clamped, knots, order) * overshoot[:, None]
    return b.reshape(*xa.shape, b.shape[-1])


def bspline_basis_derivative(x, grid: np.ndarray, order: int) -> np.ndarray:
    """d/dx of bspline_basis; constant (boundary slope) beyond the grid."""
    grid = np.asarray(grid, dtype=np.float64)
    xa = np.asarray(x, dtype=np.float64)
    flat = xa.reshape(-1)
    knots = _extended_knots(grid, order)
    clamped = np.clip(flat, grid[0], grid[-1])
    d = _raw_basis_derivative(clamped, knots, order)
    return d.reshape(*xa.shape, d.shape[-1])


def fit_spline_coefficients(xs, ys, grid, order: int) -> np.ndarray:
    """Least-squares spline coefficients so that basis(xs) @ c ~ ys."""
    a = bspline_basis(np.asarray(xs, dtype=np.float64), np.asarray(grid), order)
    coeff, *_ = np.linalg.lstsq(a, np.asarray(ys, dtype=np.float64), rcond=None)
    return coeff


def _silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


@dataclass
class SplineEdge:
    """One edge function phi(x) = base_weight*silu(x) + spline_weight * c . B(x)."""

    grid: np.ndarray
    coefficients: np.ndarray
    order: int
    base_weight: float = 0.0
    spline_weight: float = 1.0

    def __post_init__(self):
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("spline grid must be strictly increasing")
        expected = len(self.grid) - 1 + self.order
        if self.coefficients.shape != (expected,):
            raise ValueError(
                f"need {expected} coefficients for {len(self.grid) - 1} intervals "
                f"at order {self.order}, got {self.coefficients.shape}"
            )

    def __call__(self, x):
        return edge_eval(self, x)


def edge_eval(edge: SplineEdge, x):
    """Evaluate one edge at scalar or array x (plain numpy, no tape)."""
    xa = np.asarray(x, dtype=np.float64)
    spline = bspline_basis(xa, edge.grid, edge.order) @ edge.coefficients
    return edge.base_weight * _silu(xa) + edge.spline_weight * spline


def _spline_apply(x: Tensor, coeff: Tensor, grid: np.ndarray, order: int) -> Tensor:
    """Taped contraction: out[b,q] = sum_{p,m} coeff[q,p,m] * B_m(x[b,p])."""
    basis = bspline_basis(x.data, grid, order)  # (B, n_in, M)
    out = np.einsum("bpm,qpm->bq", basis, coeff.data)

    def bwd(g):
        if coeff.requires_grad:
            coeff.grad += np.einsum("bq,bpm->qpm", g, basis)
        if x.requires_grad:
            dbasis = bspline_basis_derivative(x.data, grid, order)
            slope = np.einsum("bpm,qpm->bqp", dbasis, coeff.data)
            x.grad += np.einsum("bq,bqp->bp", g, slope)

    return ad.make_op(out, (x, coeff), bwd)


class KanLayer:
    """An n_out x n_in grid of spline edges over one shared uniform grid."""

    def __init__(
        self,
        store: ParamStore,
        prefix: str,
        n_in: int,
        n_out: int,
        rng: np.random.Generator,
        grid_size: int = 8,
        spline_order: int = 3,
        grid_range: float = 3.0,
        base_activation: bool = True,
    ):
        if n_in < 1 or n_out < 1:
            raise ValueError("KanLayer needs n_in >= 1 and n_out >= 1")
        self.n_in = n_in
        self.n_out = n_out
        self.grid = np.linspace(-grid_range, grid_range, grid_size + 1)
        self.order = spline_order
        self.base_activation = base_activation
        n_basis = grid_size + spline_order

        scale = 1.0 / np.sqrt(n_in)
        self.coeff = store.add(
            f"{prefix}.coeff", rng.uniform(-0.1, 0.1, size=(n_out, n_in, n_basis)) * scale
        )
        self.spline_w = store.add(f"{prefix}.spline_w", np.ones((n_out, n_in)))
        self.base_w = store.add(
            f"{prefix}.base_w", rng.uniform(-1.0, 1.0, size=(n_out, n_in)) * np.sqrt(3.0) * scale
        )

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"expected input (batch, {self.n_in}), got {x.shape}")
        scaled = ad.mul(ad.reshape(self.spline_w, (self.n_out, self.n_in, 1)), self.coeff)
        out = _spline_apply(x, scaled, self.grid, self.order)
        if self.base_activation:
            out = ad.add(out, ad.matmul(ad.silu(x), ad.transpose(self.base_w)))
        return out

    def edge(self, q: int, p: int) -> SplineEdge:
        """Detached view of the (q, p) edge for inspection and oracles."""
        return SplineEdge(
            grid=self.grid,
            coefficients=self.coeff.data[q, p].copy(),
            order=self.order,
            base_weight=float(self.base_w.data[q, p]) if self.base_activation else 0.0,
            spline_weight=float(self.spline_w.data[q, p]),
        )

    def n_params(self) -> int:
        return self.coeff.data.size + self.spline_w.data.size + self.base_w.data.size


def encode(x: Tensor, layers) -> Tensor:
    """Compose KAN layers left to right (two layers for the constant encoder)."""
    out = x
    for layer in layers:
        out = layer.forward(out)
    return out
