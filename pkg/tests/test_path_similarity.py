"""
Unit tests for walk counting and Feature Spacing.
"""

import itertools
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graph_core import Graph
from path_similarity import (
    WeightScheme,
    access_value,
    default_weights,
    enumerate_walks,
    feature_spacing_matrix,
    feature_spacing_to_landmarks,
    iter_walks,
    list_walks,
    resolve_p_max,
    transition_probability,
    walk_count_dp,
)
from utils import ArgumentError, UnknownNodeError, WalkCountOverflowError


def _random_graph(seed: int, max_nodes: int = 6) -> Graph:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, max_nodes + 1))
    density = rng.uniform(0.1, 0.9)
    arcs = [(a, b) for a in range(n) for b in range(n) if a != b and rng.random() < density]
    return Graph.from_arcs(arcs, directed=True, nodes=range(n))


def _oracle(g: Graph, ws: WeightScheme) -> np.ndarray:
    """Feature Spacing from explicit walk enumeration."""
    ids = [int(v) for v in g.node_ids]
    h = np.zeros((g.n, g.n))
    for i, a in enumerate(ids):
        inventory = enumerate_walks(g, a, ws.p_max)
        for j, b in enumerate(ids):
            h[i, j] = access_value(inventory, b, ws)
    off = ~np.eye(g.n, dtype=bool)
    low, high = h[off].min(), h[off].max()
    if not high > low:
        return np.zeros_like(h)
    values = (h - low) / (high - low)
    values[~off] = 0.0
    return values


@pytest.fixture
def triangle():
    return Graph.from_arcs([(0, 1), (1, 2), (2, 0)], directed=False)


@pytest.fixture
def path3():
    return Graph.from_arcs([(0, 1), (1, 2)], directed=False)


class TestWeightScheme:
    """Test cases for weight validation."""

    def test_default_halving(self):
        """Test the default halving weights."""
        assert default_weights(3).weights == (0.5, 0.25, 0.125)
        assert default_weights(3).total == 0.875

    @pytest.mark.parametrize("values", [(0.5, 0.5), (0.25, 0.5), (0.5, 0.0), (0.5, float("inf"))])
    def test_rejects_invalid(self, values):
        """Test rejection of invalid weights."""
        with pytest.raises(ArgumentError):
            WeightScheme.from_values(values)

    def test_length_mismatch(self):
        """Test weights of the wrong length."""
        with pytest.raises(ArgumentError):
            WeightScheme(p_max=3, weights=(0.5, 0.25))


class TestResolvePMax:
    """Test cases for the effective walk length."""

    def test_default_capped(self):
        """Test the default maximum walk length."""
        assert resolve_p_max(None, 100) == 4
        assert resolve_p_max(None, 5) == 3
        assert resolve_p_max(None, 3) == 1
        assert resolve_p_max(None, 2) == 1

    def test_explicit_above_cap_warns(self, caplog):
        """Test the warning for a long explicit walk length."""
        with caplog.at_level(logging.WARNING, logger="path_similarity"):
            assert resolve_p_max(4, 3) == 4
        assert "exceeds" in caplog.text

    def test_rejects_zero(self):
        """Test rejection of a zero walk length."""
        with pytest.raises(ArgumentError):
            resolve_p_max(0, 10)


class TestWalks:
    """Test cases for walk enumeration and counting."""

    def test_breadth_first_order(self):
        """Test breadth-first walk listing order."""
        g = Graph.from_arcs([(0, 1), (1, 2), (0, 2)])
        assert list(iter_walks(g, 0, 2)) == [(0, 1), (0, 2), (0, 1, 2)]

    def test_list_walks_limit(self):
        """Test the walk listing limit."""
        g = Graph.from_arcs([(0, 1), (1, 2)])
        assert list_walks(g, 0, 2) == [[0, 1], [0, 1, 2]]
        assert list_walks(g, 0, 2, limit=1) == [[0, 1]]

    def test_unknown_source(self):
        """Test walks from an unknown node."""
        g = Graph.from_arcs([(0, 1)])
        with pytest.raises(UnknownNodeError):
            walk_count_dp(g, 5, 2)

    def test_triangle_counts(self, triangle):
        """Test walk counts on a triangle."""
        inventory = walk_count_dp(triangle, 0, 4)
        assert [inventory.total(l) for l in range(1, 5)] == [2, 4, 8, 16]
        assert [inventory.count(l, 1) for l in range(1, 5)] == [1, 1, 3, 5]
        assert [inventory.count(l, 0) for l in range(1, 5)] == [0, 2, 2, 6]

    def test_exhaustive_four_node_graphs(self):
        """Test walk counts on every four-node digraph."""
        pairs = [(a, b) for a in range(4) for b in range(4) if a != b]
        for mask in range(1 << len(pairs)):
            arcs = [pair for bit, pair in enumerate(pairs) if mask >> bit & 1]
            g = Graph.from_arcs(arcs, directed=True, nodes=range(4))
            for a in range(4):
                assert walk_count_dp(g, a, 3).same_counts(enumerate_walks(g, a, 3))

    def test_overflow_detected(self):
        """Test walk count overflow."""
        n = 50
        g = Graph.from_arcs([(a, b) for a in range(n) for b in range(n) if a != b])
        with pytest.raises(WalkCountOverflowError):
            walk_count_dp(g, 0, 10)
        with pytest.raises(WalkCountOverflowError):
            feature_spacing_matrix(g, default_weights(10))


class TestTransitionProbability:
    """Test cases for per-length probabilities."""

    def test_stochastic_rows(self):
        """Test transition rows sum to one."""
        for seed in range(30):
            g = _random_graph(seed)
            for a in g.node_ids:
                inventory = walk_count_dp(g, int(a), 3)
                for length in range(1, 4):
                    total = sum(transition_probability(inventory, int(b), length) for b in g.node_ids)
                    expected = 1.0 if inventory.total(length) > 0 else 0.0
                    assert total == pytest.approx(expected)

    def test_sink_is_zero(self):
        """Test transitions out of a sink."""
        g = Graph.from_arcs([(0, 1)])
        assert transition_probability(walk_count_dp(g, 1, 2), 0, 1) == 0.0

    def test_length_out_of_range(self, triangle):
        """Test a walk length out of range."""
        inventory = walk_count_dp(triangle, 0, 2)
        with pytest.raises(ArgumentError):
            transition_probability(inventory, 1, 3)

    def test_triangle_access_value(self, triangle):
        """Test the access value on a triangle."""
        inventory = walk_count_dp(triangle, 0, 2)
        assert access_value(inventory, 1, default_weights(2)) == pytest.approx(0.3125)


class TestFeatureSpacing:
    """Test cases for the normalized matrix."""

    def test_matches_enumeration_oracle(self):
        """Test the matrix against walk enumeration."""
        for seed in range(200):
            g = _random_graph(seed)
            ws = default_weights(int(np.random.default_rng(seed + 1000).integers(1, 4)))
            matrix = feature_spacing_matrix(g, ws)
            np.testing.assert_allclose(matrix.values, _oracle(g, ws), atol=1e-12)

    def test_range_and_extremes(self):
        """Test values lie in [0, 1] and reach both ends."""
        for seed in range(20):
            matrix = feature_spacing_matrix(_random_graph(seed), default_weights(2))
            off = ~np.eye(matrix.values.shape[0], dtype=bool)
            assert matrix.values.min() >= 0.0
            assert matrix.values.max() <= 1.0
            if not matrix.degenerate:
                assert matrix.values[off].min() == 0.0
                assert matrix.values[off].max() == 1.0

    def test_triangle_is_degenerate(self, triangle):
        """Test the degenerate triangle matrix."""
        matrix = feature_spacing_matrix(triangle, default_weights(2))
        off = ~np.eye(3, dtype=bool)
        assert matrix.degenerate
        np.testing.assert_allclose(matrix.h_values[off], 0.3125)
        assert not matrix.values.any()

    def test_path_values(self, path3):
        """Test values on a directed path."""
        matrix = feature_spacing_matrix(path3, default_weights(2))
        assert matrix.h_values[0, 1] == pytest.approx(0.5)
        assert matrix.h_values[0, 2] == pytest.approx(0.125)
        assert matrix.h_values[1, 0] == pytest.approx(0.25)
        assert matrix.similarity(0, 1) == pytest.approx(1.0)
        assert matrix.similarity(2, 1) == pytest.approx(1.0)
        assert matrix.similarity(0, 2) == pytest.approx(0.0)
        assert matrix.similarity(1, 0) == pytest.approx(1 / 3)

    def test_monotone_in_walk_length(self):
        """Test monotonicity in walk length."""
        for seed in range(30):
            g = _random_graph(seed)
            previous = feature_spacing_matrix(g, default_weights(1)).h_values
            for p in range(2, 5):
                current = feature_spacing_matrix(g, default_weights(p)).h_values
                assert np.all(current >= previous - 1e-15)
                previous = current

    def test_symmetrized_is_symmetric(self):
        """Test the symmetrized matrix."""
        g = _random_graph(3)
        matrix = feature_spacing_matrix(g, default_weights(2), symmetrize=True)
        np.testing.assert_allclose(matrix.h_values, matrix.h_values.T, atol=1e-15)
        assert matrix.metadata()["symmetric"] is True

    def test_needs_two_nodes(self):
        """Test a one-node graph."""
        with pytest.raises(ArgumentError):
            feature_spacing_matrix(Graph.from_arcs([], nodes=[0]), default_weights(1))

    def test_thread_count_does_not_change_output(self):
        """Test thread-count independence."""
        g = _random_graph(11, max_nodes=40)
        ws = default_weights(3)
        single = feature_spacing_matrix(g, ws, block_size=4, threads=1)
        many = feature_spacing_matrix(g, ws, block_size=4, threads=8)
        assert np.array_equal(single.values, many.values)

    def test_block_size_does_not_change_output(self):
        """Test block-size independence."""
        g = _random_graph(12, max_nodes=40)
        ws = default_weights(3)
        np.testing.assert_allclose(
            feature_spacing_matrix(g, ws, block_size=1).values,
            feature_spacing_matrix(g, ws, block_size=256).values,
            rtol=0, atol=1e-15,
        )


class TestLandmarks:
    """Test cases for landmark columns."""

    def test_all_nodes_equals_full_matrix(self):
        """Test landmarks on every node give the full matrix."""
        g = _random_graph(5)
        ws = default_weights(2)
        full = feature_spacing_matrix(g, ws)
        landmarks = feature_spacing_to_landmarks(g, ws, [int(v) for v in g.node_ids])
        assert landmarks.is_full
        assert np.array_equal(full.values, landmarks.values)

    def test_subset_columns(self):
        """Test landmark columns."""
        g = _random_graph(6)
        ws = default_weights(2)
        full = feature_spacing_matrix(g, ws)
        chosen = [int(g.node_ids[-1]), int(g.node_ids[0])]
        matrix = feature_spacing_to_landmarks(g, ws, chosen)
        assert matrix.values.shape == (g.n, 2)
        np.testing.assert_allclose(matrix.h_values, full.h_values[:, [g.n - 1, 0]])

    @pytest.mark.parametrize("landmarks", [[], [0, 0]])
    def test_rejects_bad_landmarks(self, landmarks):
        """Test rejection of invalid landmarks."""
        with pytest.raises(ArgumentError):
            feature_spacing_to_landmarks(_random_graph(1), default_weights(1), landmarks)


@settings(max_examples=40, deadline=None)
@given(
    arcs=st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=1, max_size=20),
    p_max=st.integers(1, 3),
)
def test_property_dynamic_programming_matches_enumeration(arcs, p_max):
    """Test walk counting against enumeration on random graphs."""
    g = Graph.from_arcs(arcs)
    for a in g.node_ids:
        assert walk_count_dp(g, int(a), p_max).same_counts(enumerate_walks(g, int(a), p_max))
