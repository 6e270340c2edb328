"""
Tests for customer loading, synthetic customers and feature impact scoring.
"""

from io import BytesIO

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clustering import Assignment
from quality_scoring import (
    FEATURE_NAMES,
    REFERENCE_IMPACTS,
    CustomerRecord,
    SeparationSpec,
    absent_features,
    active_features,
    cluster_customers,
    customers_frame,
    feature_impact,
    load_customers,
    reference_impact_report,
    standardize,
    synth_customers,
    synth_customers_with_labels,
)
from utils import ArgumentError, ParseError


SUBSET = ("frequent_visits", "various_visits", "activity_days", "conversion_rate")


def _csv(text: str) -> BytesIO:
    return BytesIO(text.encode("utf-8"))


def _records(rows, features):
    return [CustomerRecord(f"c{i}", dict(zip(features, row))) for i, row in enumerate(rows)]


@st.composite
def scored_customers(draw):
    n = draw(st.integers(4, 20))
    rows = draw(st.lists(st.lists(st.integers(0, 50), min_size=4, max_size=4), min_size=n, max_size=n))
    labels = draw(st.lists(st.integers(0, 2), min_size=n, max_size=n).filter(lambda ls: len(set(ls)) >= 2))
    return [[float(v) for v in row] for row in rows], np.array(labels)


def _impacts(rows, labels):
    return feature_impact(_records(rows, SUBSET), Assignment(np.asarray(labels), 0.0)).impacts


class TestLoadCustomers:
    """Test cases for customer CSV parsing."""

    def test_subset_of_features(self):
        """Test loading a feature subset."""
        records = load_customers(_csv("customer_id,various_visits,activity_days\na,3,10\nb,4,12\n"))
        assert [r.customer_id for r in records] == ["a", "b"]
        assert records[1].features == {"activity_days": 12.0, "various_visits": 4.0}
        assert active_features(records) == ["activity_days", "various_visits"]
        assert len(absent_features(records)) == 10

    def test_signed_feature_may_be_negative(self):
        """Test the signed social role feature."""
        records = load_customers(_csv("customer_id,social_network_role\na,-2\n"))
        assert records[0].features["social_network_role"] == -2.0

    def test_negative_count(self):
        """Test rejection of a negative count."""
        with pytest.raises(ParseError, match="line 3, column 'direct_purchases'"):
            load_customers(_csv("customer_id,direct_purchases\na,1\nb,-1\n"))

    def test_non_numeric(self):
        """Test rejection of a non-numeric cell."""
        with pytest.raises(ParseError, match="line 2, column 'activity_days'"):
            load_customers(_csv("customer_id,activity_days\na,many\n"))

    def test_missing_value(self):
        """Test rejection of a missing value."""
        with pytest.raises(ParseError, match="missing value"):
            load_customers(_csv("customer_id,activity_days\na,\n"))

    def test_unknown_column(self):
        """Test rejection of an unknown column."""
        with pytest.raises(ParseError, match="unknown column 'shoe_size'"):
            load_customers(_csv("customer_id,shoe_size\na,42\n"))

    def test_missing_id_column(self):
        """Test a header without the id column."""
        with pytest.raises(ParseError, match="header"):
            load_customers(_csv("activity_days\n1\n"))

    def test_frame_round_trip(self):
        """Test customers survive a CSV write and read."""
        records = synth_customers(3, 5, SeparationSpec(features=SUBSET))
        buffer = BytesIO(customers_frame(records).to_csv(index=False).encode("utf-8"))
        loaded = load_customers(buffer)
        assert [r.customer_id for r in loaded] == [r.customer_id for r in records]
        for original, again in zip(records, loaded):
            assert again.features == pytest.approx(original.features)


class TestSynthCustomers:
    """Test cases for the synthetic generator."""

    def test_reproducible(self):
        """Test synthetic customer reproducibility."""
        spec = SeparationSpec(separation={"various_visits": 5.0})
        first = synth_customers(11, 40, spec)
        second = synth_customers(11, 40, spec)
        assert [r.features for r in first] == [r.features for r in second]

    def test_balanced_labels(self):
        """Test balanced planted labels."""
        _, labels = synth_customers_with_labels(0, 30, SeparationSpec(n_clusters=3))
        assert np.bincount(labels).tolist() == [10, 10, 10]

    def test_counts_non_negative(self):
        """Test non-negative synthetic counts."""
        records = synth_customers(1, 200, SeparationSpec(noise_scale=5.0))
        for name in FEATURE_NAMES:
            if name != "social_network_role":
                assert min(r.features[name] for r in records) >= 0.0

    @pytest.mark.parametrize("spec", [
        SeparationSpec(n_clusters=0),
        SeparationSpec(noise_scale=0.0),
        SeparationSpec(separation={"shoe_size": 1.0}),
        SeparationSpec(separation={"various_visits": -1.0}),
        SeparationSpec(separation={"various_visits": 1.0}, features=("activity_days",)),
    ])
    def test_invalid_spec(self, spec):
        """Test rejection of invalid separation specs."""
        with pytest.raises(ArgumentError):
            synth_customers(0, 10, spec)


class TestStandardize:
    """Test cases for z-scoring."""

    def test_constant_feature_keeps_unit_scale(self):
        """Test unit scale for a constant feature."""
        records = _records([[1.0, 5.0], [3.0, 5.0]], ["activity_days", "various_visits"])
        matrix, scaling = standardize(records)
        assert scaling.scales == (1.0, 1.0)
        assert matrix.tolist() == [[-1.0, 0.0], [1.0, 0.0]]


class TestFeatureImpact:
    """Test cases for between-cluster variance shares."""

    def test_decomposition_adds_up(self):
        """Test between plus within equals total."""
        records = synth_customers(2, 120, SeparationSpec(n_clusters=3, separation={"activity_days": 4.0}))
        report = feature_impact(records, cluster_customers(records, 3, seed=2))
        for name, parts in report.decomposition.items():
            assert parts["ssb"] + parts["ssw"] == pytest.approx(parts["sst"], abs=1e-9)

    def test_constant_feature_scores_zero(self):
        """Test zero impact for a constant feature."""
        records = _records([[0.0, 7.0], [1.0, 7.0], [10.0, 7.0], [11.0, 7.0]], ["activity_days", "various_visits"])
        report = feature_impact(records, Assignment(np.array([0, 0, 1, 1]), 0.0))
        assert report.impacts["various_visits"] == 0.0
        assert report.impacts["activity_days"] == pytest.approx(100.0 * 100.0 / 101.0)
        assert report.ordering == ["activity_days", "various_visits"]

    def test_needs_two_clusters(self):
        """Test impact with one cluster."""
        records = _records([[0.0], [1.0]], ["activity_days"])
        with pytest.raises(ArgumentError):
            feature_impact(records, Assignment(np.array([0, 0]), 0.0))

    def test_planted_clusters_recovered(self):
        """Test recovery of planted customer clusters."""
        spec = SeparationSpec(separation={name: 10.0 for name in FEATURE_NAMES})
        records, labels = synth_customers_with_labels(5, 12, spec)
        found = cluster_customers(records, 2, seed=5).labels
        assert len(set(found.tolist())) == 2
        assert len({(int(a), int(b)) for a, b in zip(labels, found)}) == 2

    def test_planted_feature_ranks_first(self):
        """Test the separated feature ranks first."""
        spec = SeparationSpec(separation={"frequent_visits": 10.0}, features=SUBSET)
        for seed in range(50):
            records = synth_customers(seed, 200, spec)
            report = feature_impact(records, cluster_customers(records, 2, seed=seed))
            top, runner_up = report.ordering[:2]
            assert top == "frequent_visits"
            assert report.impacts[top] > report.impacts[runner_up]

    def test_plot_rows(self):
        """Test impact plot rows."""
        records = _records([[0.0], [1.0], [9.0], [10.0]], ["various_visits"])
        report = feature_impact(records, Assignment(np.array([0, 0, 1, 1]), 0.0))
        assert report.plot_rows() == [
            {"feature": "various_visits", "name": "various visits", "impact_pct": report.impacts["various_visits"]}
        ]

    @settings(max_examples=60, deadline=None)
    @given(data=scored_customers(), relabel=st.permutations([0, 1, 2]))
    def test_property_relabeling_clusters_keeps_impacts(self, data, relabel):
        """Test impacts under cluster relabeling."""
        rows, labels = data
        before = _impacts(rows, labels)
        after = _impacts(rows, np.asarray(relabel)[labels] + 10)
        for name in SUBSET:
            assert after[name] == pytest.approx(before[name], abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(data=scored_customers(), shuffle_seed=st.integers(0, 2**32 - 1))
    def test_property_record_order_keeps_impacts(self, data, shuffle_seed):
        """Test impacts under record permutation."""
        rows, labels = data
        order = np.random.default_rng(shuffle_seed).permutation(len(rows))
        before = _impacts(rows, labels)
        after = _impacts([rows[i] for i in order], labels[order])
        for name in SUBSET:
            assert after[name] == pytest.approx(before[name], abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(
        data=scored_customers(),
        column=st.integers(0, 3),
        scale=st.floats(0.5, 20.0),
        shift=st.floats(-100.0, 100.0),
    )
    def test_property_affine_rescaling_keeps_impacts(self, data, column, scale, shift):
        """Test impacts under affine rescaling of a feature."""
        rows, labels = data
        rescaled = [[scale * v + shift if j == column else v for j, v in enumerate(row)] for row in rows]
        before = _impacts(rows, labels)
        after = _impacts(rescaled, labels)
        for name in SUBSET:
            assert after[name] == pytest.approx(before[name], rel=1e-6, abs=1e-6)

    @settings(max_examples=60, deadline=None)
    @given(data=scored_customers(), pair=st.permutations([0, 1, 2, 3]))
    def test_property_swapping_columns_swaps_impacts(self, data, pair):
        """Test that swapping two features swaps their impacts."""
        rows, labels = data
        i, j = pair[:2]
        swapped = [list(row) for row in rows]
        for row in swapped:
            row[i], row[j] = row[j], row[i]
        before = _impacts(rows, labels)
        after = _impacts(swapped, labels)
        assert after[SUBSET[i]] == pytest.approx(before[SUBSET[j]], abs=1e-9)
        assert after[SUBSET[j]] == pytest.approx(before[SUBSET[i]], abs=1e-9)
        for k in set(range(4)) - {i, j}:
            assert after[SUBSET[k]] == pytest.approx(before[SUBSET[k]], abs=1e-9)


class TestReferenceImpacts:
    """Test cases for the published impact table."""

    def test_ordering(self):
        """Test the published impact ordering."""
        report = reference_impact_report()
        assert report.ordering[0] == "various_visits"
        assert report.ordering == sorted(REFERENCE_IMPACTS, key=lambda f: -REFERENCE_IMPACTS[f])
        assert len(report.absent_features) == 6
        assert report.to_dict()["standardization"] is None
