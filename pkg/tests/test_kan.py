"""Spline-edge and KAN-layer verification.

Basis values are checked against a direct recursive Cox-de Boor oracle,
layer outputs against double loops over scalar edge evaluations, and the
two-layer composition against the expanded nested-sum form.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icurisk import autodiff as ad
from icurisk import kan
from icurisk.autodiff import ParamStore, Tensor
from icurisk.gradcheck import check_gradients

GRID = np.linspace(-3.0, 3.0, 9)  # 8 intervals


def recursive_cox_de_boor(i, k, x, knots):
    """Textbook recursion, scalar, deliberately slow."""
    if k == 0:
        return 1.0 if knots[i] <= x < knots[i + 1] else 0.0
    left = right = 0.0
    if knots[i + k] != knots[i]:
        left = (x - knots[i]) / (knots[i + k] - knots[i]) * recursive_cox_de_boor(i, k - 1, x, knots)
    if knots[i + k + 1] != knots[i + 1]:
        right = (
            (knots[i + k + 1] - x)
            / (knots[i + k + 1] - knots[i + 1])
            * recursive_cox_de_boor(i + 1, k - 1, x, knots)
        )
    return left + right


def make_layer(n_in, n_out, seed, **kw):
    store = ParamStore()
    layer = kan.KanLayer(store, "L", n_in, n_out, np.random.default_rng(seed), **kw)
    return store, layer


class TestBasis:
    def test_partition_of_unity_interior(self):
        x = np.linspace(-3.0, 3.0, 601)
        b = kan.bspline_basis(x, GRID, 3)
        np.testing.assert_allclose(b.sum(axis=-1), 1.0, atol=1e-12)

    def test_nonnegative_inside_grid(self):
        x = np.linspace(-3.0, 3.0, 601)
        assert kan.bspline_basis(x, GRID, 3).min() >= 0.0

    def test_order_zero_is_interval_indicator(self):
        b = kan.bspline_basis(np.array([-2.9, 0.1, 2.9]), GRID, 0)
        assert b.shape == (3, 8)
        np.testing.assert_array_equal(b.sum(axis=-1), 1.0)
        assert set(np.unique(b)) == {0.0, 1.0}

    @given(st.floats(min_value=-2.999, max_value=2.999), st.integers(0, 3))
    @settings(max_examples=60, deadline=None)
    def test_matches_recursive_definition(self, x, order):
        h = GRID[1] - GRID[0]
        knots = np.concatenate(
            [GRID[0] + h * np.arange(-order, 0), GRID, GRID[-1] + h * np.arange(1, order + 1)]
        )
        expected = [
            recursive_cox_de_boor(i, order, x, knots) for i in range(len(knots) - order - 1)
        ]
        got = kan.bspline_basis(x, GRID, order)
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_linear_extrapolation_outside_grid(self):
        # beyond the boundary each basis value continues with constant slope
        eps = 1e-6
        edge_val = kan.bspline_basis(3.0, GRID, 3)
        slope = (kan.bspline_basis(3.0, GRID, 3) - kan.bspline_basis(3.0 - eps, GRID, 3)) / eps
        far = kan.bspline_basis(4.5, GRID, 3)
        np.testing.assert_allclose(far, edge_val + 1.5 * slope, atol=1e-5)
        # extrapolated values still sum to one: the slopes sum to zero
        np.testing.assert_allclose(far.sum(), 1.0, atol=1e-10)

    def test_derivative_matches_finite_differences(self):
        x = np.linspace(-2.8, 2.8, 41)
        eps = 1e-6
        numeric = (kan.bspline_basis(x + eps, GRID, 3) - kan.bspline_basis(x - eps, GRID, 3)) / (
            2 * eps
        )
        np.testing.assert_allclose(kan.bspline_basis_derivative(x, GRID, 3), numeric, atol=1e-8)


class TestSplineEdge:
    def test_zero_edge_is_zero_everywhere(self):
        edge = kan.SplineEdge(GRID, np.zeros(11), 3, base_weight=0.0)
        np.testing.assert_array_equal(edge(np.linspace(-5, 5, 21)), 0.0)

    def test_least_squares_fit_of_sine(self):
        grid = np.linspace(-1.0, 1.0, 17)  # 16 intervals
        xs = np.linspace(-1.0, 1.0, 400)
        coeff = kan.fit_spline_coefficients(xs, np.sin(xs), grid, 3)
        edge = kan.SplineEdge(grid, coeff, 3)
        assert np.max(np.abs(edge(xs) - np.sin(xs))) < 1e-3

    def test_coefficient_count_enforced(self):
        with pytest.raises(ValueError, match="coefficients"):
            kan.SplineEdge(GRID, np.zeros(10), 3)

    def test_grid_must_increase(self):
        with pytest.raises(ValueError, match="increasing"):
            kan.SplineEdge(np.array([0.0, 0.0, 1.0]), np.zeros(5), 3)


class TestKanLayer:
    def test_one_by_one_equals_single_edge(self):
        store, layer = make_layer(1, 1, seed=0)
        xs = np.linspace(-2.5, 2.5, 17)
        out = layer.forward(Tensor(xs[:, None])).data[:, 0]
        np.testing.assert_allclose(out, kan.edge_eval(layer.edge(0, 0), xs), atol=1e-12)

    def test_zero_layer_outputs_zero(self):
        store, layer = make_layer(3, 2, seed=1)
        layer.coeff.data[:] = 0.0
        layer.base_w.data[:] = 0.0
        out = layer.forward(Tensor(np.random.default_rng(2).normal(size=(4, 3))))
        np.testing.assert_array_equal(out.data, np.zeros((4, 2)))

    def test_matches_double_loop_over_edges(self):
        store, layer = make_layer(3, 2, seed=3)
        rng = np.random.default_rng(4)
        x = rng.uniform(-2.5, 2.5, size=(5, 3))
        got = layer.forward(Tensor(x)).data
        expected = np.zeros((5, 2))
        for b in range(5):
            for q in range(2):
                expected[b, q] = sum(
                    kan.edge_eval(layer.edge(q, p), x[b, p]) for p in range(3)
                )
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_additive_across_edges(self):
        store, layer = make_layer(4, 3, seed=5)
        x = np.random.default_rng(6).uniform(-2, 2, size=(6, 4))
        full = layer.forward(Tensor(x)).data
        q0, p0 = 1, 2
        contribution = kan.edge_eval(layer.edge(q0, p0), x[:, p0])
        layer.coeff.data[q0, p0] = 0.0
        layer.base_w.data[q0, p0] = 0.0
        without = layer.forward(Tensor(x)).data
        expected = full.copy()
        expected[:, q0] -= contribution
        np.testing.assert_allclose(without, expected, atol=1e-12)

    def test_gradients_pass_finite_differences(self):
        store, layer = make_layer(3, 2, seed=7)
        store.add("x", np.random.default_rng(8).uniform(-2.0, 2.0, size=(4, 3)))

        def f():
            return ad.tsum(ad.tanh(layer.forward(store["x"])))

        check_gradients(f, store)

    def test_gradients_with_base_disabled(self):
        store, layer = make_layer(2, 2, seed=9, base_activation=False)
        store.add("x", np.random.default_rng(10).uniform(-2.0, 2.0, size=(3, 2)))

        def f():
            return ad.tsum(layer.forward(store["x"]))

        check_gradients(f, store)

    def test_gradient_through_extrapolation_region(self):
        store, layer = make_layer(2, 1, seed=11)
        store.add("x", np.array([[4.2, -5.1], [3.5, 6.0]]))

        def f():
            return ad.tsum(layer.forward(store["x"]))

        check_gradients(f, store)


def expanded_double_sum(layers, x_vec):
    """The nested-sum form of a two-layer KAN, one scalar edge at a time."""
    l0, l1 = layers
    inner = [
        sum(kan.edge_eval(l0.edge(j, i), x_vec[i]) for i in range(l0.n_in))
        for j in range(l0.n_out)
    ]
    return np.array(
        [
            sum(kan.edge_eval(l1.edge(q, j), inner[j]) for j in range(l1.n_in))
            for q in range(l1.n_out)
        ]
    )


class TestTwoLayerComposition:
    def test_composition_equals_expanded_double_sum(self):
        store = ParamStore()
        rng = np.random.default_rng(12)
        l0 = kan.KanLayer(store, "l0", 3, 4, rng)
        l1 = kan.KanLayer(store, "l1", 4, 2, rng)
        for _ in range(20):
            x = rng.uniform(-2.5, 2.5, size=3)
            composed = kan.encode(Tensor(x[None, :]), [l0, l1]).data[0]
            np.testing.assert_allclose(composed, expanded_double_sum([l0, l1], x), atol=1e-12)

    def test_zero_layers_give_zero(self):
        store = ParamStore()
        rng = np.random.default_rng(13)
        l0 = kan.KanLayer(store, "l0", 2, 3, rng)
        l1 = kan.KanLayer(store, "l1", 3, 2, rng)
        for layer in (l0, l1):
            layer.coeff.data[:] = 0.0
            layer.base_w.data[:] = 0.0
        out = kan.encode(Tensor(np.ones((2, 2))), [l0, l1])
        np.testing.assert_array_equal(out.data, np.zeros((2, 2)))

    def test_identity_fit_passes_input_through(self):
        store = ParamStore()
        rng = np.random.default_rng(14)
        layers = [
            kan.KanLayer(store, f"l{i}", 2, 2, rng, base_activation=False) for i in range(2)
        ]
        xs = np.linspace(-2.9, 2.9, 300)
        ident = kan.fit_spline_coefficients(xs, xs, GRID, 3)
        for layer in layers:
            layer.coeff.data[:] = 0.0
            layer.spline_w.data[:] = 1.0
            for d in range(2):
                layer.coeff.data[d, d] = ident
        x = rng.uniform(-2.0, 2.0, size=(5, 2))
        out = kan.encode(Tensor(x), layers).data
        np.testing.assert_allclose(out, x, atol=1e-9)


class TestHeadShape:
    def test_single_output_layer_behaves_like_row_of_edges(self):
        store, head = make_layer(5, 1, seed=15)
        x = np.random.default_rng(16).uniform(-2, 2, size=(3, 5))
        got = head.forward(Tensor(x)).data[:, 0]
        expected = [
            sum(kan.edge_eval(head.edge(0, p), x[b, p]) for p in range(5)) for b in range(3)
        ]
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_zero_head_gives_zero_logit(self):
        store, head = make_layer(4, 1, seed=17)
        head.coeff.data[:] = 0.0
        head.base_w.data[:] = 0.0
        out = head.forward(Tensor(np.random.default_rng(18).normal(size=(2, 4))))
        np.testing.assert_array_equal(out.data, np.zeros((2, 1)))
