import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgf.core import MultivariateSeries
from cgf.errors import DegenerateUniverse, EmptyRuleBase
from cgf.fuzzy import (ChenModel, FuzzySet, RuleBase, chen_forecast, fit_partitions, fuzzify, fuzzify_values,
                       generate_rules, grid_partition, load_partitions, make_label, membership, parse_label,
                       save_partitions)


def test_labels():
    assert make_label(3, 12) == 'f3_12'
    assert parse_label('f3_12') == (3, 12)


class TestGridPartition:

    def test_three_sets(self):
        lv = grid_partition([0.0, 3.0, 10.0], K=3, margin_fraction=0.0)
        np.testing.assert_allclose(lv.centers, [0.0, 5.0, 10.0])
        assert (lv.sets[1].left, lv.sets[1].right) == (0.0, 10.0)
        assert lv.labels == ['f0_0', 'f0_1', 'f0_2']

    def test_margin_widens_universe(self):
        lv = grid_partition([0.0, 10.0], K=3, margin_fraction=0.1)
        assert lv.universe == (-1.0, 11.0)

    def test_thirty_sets_overlap(self):
        lv = grid_partition(np.random.default_rng(0).normal(size=200), K=30)
        assert len(lv) == 30
        for a, b in zip(lv.sets, lv.sets[1:]):
            assert a.right > b.left

    def test_constant(self):
        with pytest.raises(DegenerateUniverse):
            grid_partition([4.0, 4.0, 4.0])

    def test_variable_index_in_labels(self):
        lvs = fit_partitions(MultivariateSeries(np.random.default_rng(1).normal(size=(50, 2)), ('a', 'b')), K=4)
        assert lvs[1].labels[0] == 'f1_0'


class TestMembership:

    def setup_method(self, method):
        self.fset = FuzzySet('f0_1', 5.0, 0.0, 10.0)

    def test_apex(self):
        assert membership(5.0, self.fset) == 1.0

    def test_half_way(self):
        assert membership(2.5, self.fset) == 0.5

    def test_outside(self):
        assert membership(11.0, self.fset) == 0.0

    def test_vectorized_matches_scalar(self):
        lv = grid_partition([0.0, 10.0], K=3, margin_fraction=0.0)
        for x in [0.5, 2.5, 5.0, 7.1]:
            np.testing.assert_allclose(lv.memberships([x])[0], [membership(x, s) for s in lv.sets])


class TestFuzzify:

    def setup_method(self, method):
        self.lv = grid_partition([0.0, 10.0], K=11, margin_fraction=0.0)

    def test_on_center_is_one_hot(self):
        fs = fuzzify_values([2.0], self.lv)
        expected = np.zeros(11)
        expected[2] = 1.0
        np.testing.assert_allclose(fs.memberships[0], expected)
        assert fs.labels == ['f0_2']

    def test_tie_goes_to_lower_set(self):
        fs = fuzzify_values([2.5], self.lv)
        np.testing.assert_allclose(fs.memberships[0, 2:4], [0.5, 0.5])
        assert fs.label_at(0) == 'f0_2'

    def test_clamps_above_universe(self):
        fs = fuzzify_values([42.0], self.lv)
        assert fs.labels == ['f0_10']
        assert fs.memberships[0, -1] == 1.0

    def test_clamps_below_universe(self):
        assert fuzzify_values([-3.0], self.lv).labels == ['f0_0']

    def test_series_shape(self):
        series = MultivariateSeries(np.random.default_rng(2).normal(size=(30, 3)), ('a', 'b', 'c'))
        fuzzy = fuzzify(series, fit_partitions(series, K=5))
        assert [f.memberships.shape for f in fuzzy] == [(30, 5)] * 3

    @settings(max_examples=50)
    @given(st.integers(2, 40), st.floats(-100, 100), st.floats(1.0, 1e3), st.integers(0, 2 ** 32 - 1))
    def test_memberships_cover_the_universe(self, K, low, width, seed):
        lv = grid_partition([low, low + width], K=K)
        x = np.random.default_rng(seed).uniform(lv.universe[0], lv.universe[1], size=10000)
        m = lv.memberships(x)
        np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-9)
        positive = (m > 0).sum(axis=1)
        assert positive.min() >= 1
        assert positive.max() <= 2


class TestRules:

    def test_two_transitions(self):
        rules = generate_rules(['f0_1', 'f0_2', 'f0_1', 'f0_2'])
        assert rules.to_dict() == {'f0_1': ['f0_2'], 'f0_2': ['f0_1']}

    def test_self_loop(self):
        assert generate_rules(['f0_1', 'f0_1']).to_dict() == {'f0_1': ['f0_1']}

    def test_single_label(self):
        assert len(generate_rules(['f0_3'])) == 0

    def test_sorted_by_set_index(self):
        rules = generate_rules(['f0_10', 'f0_2', 'f0_9', 'f0_10'])
        assert list(rules.to_dict()) == ['f0_2', 'f0_9', 'f0_10']

    def test_unknown_label(self):
        with pytest.raises(KeyError):
            generate_rules(['f0_1', 'f0_99'], grid_partition([0.0, 1.0], K=3))

    def test_save(self, tmp_path):
        path = tmp_path / 'rules.json'
        generate_rules(['f0_0', 'f0_1']).save(str(path))
        assert json.loads(path.read_text()) == {'f0_0': ['f0_1']}


class TestChen:

    def setup_method(self, method):
        # centers 0, 1, 2, 3, 4
        self.lv = grid_partition([0.0, 4.0], K=5, margin_fraction=0.0)

    def test_single_rule_at_center(self):
        rules = RuleBase({'f0_1': {'f0_2'}})
        assert chen_forecast(1.0, self.lv, rules) == 2.0

    def test_two_active_rules(self):
        rules = RuleBase({'f0_0': {'f0_0'}, 'f0_1': {'f0_2'}})
        assert chen_forecast(0.5, self.lv, rules) == pytest.approx(0.5 * 0.0 + 0.5 * 2.0, abs=1e-12)

    def test_unseen_antecedent_falls_back_to_center(self):
        rules = RuleBase({'f0_0': {'f0_1'}})
        assert chen_forecast(3.0, self.lv, rules) == 3.0

    def test_empty_rule_base(self):
        with pytest.raises(EmptyRuleBase):
            chen_forecast(1.0, self.lv, RuleBase())

    def test_hand_computed_instance(self):
        # labels 0 1 2 1 0 2: f0_0 -> {1, 2}, f0_1 -> {0, 2}, f0_2 -> {1}
        model = ChenModel(K=3, margin_fraction=0.0).fit([0.0, 5.0, 10.0, 5.0, 0.0, 10.0])
        assert model.rules.to_dict() == {'f0_0': ['f0_1', 'f0_2'], 'f0_1': ['f0_0', 'f0_2'], 'f0_2': ['f0_1']}
        # memberships 0.5 / 0.5, midpoints 7.5 and 5
        assert model.forecast([2.5]) == [pytest.approx(6.25, abs=1e-12)]

    def test_literal_sum(self):
        model = ChenModel(K=3, margin_fraction=0.0, literal_sum=True).fit([0.0, 5.0, 10.0, 5.0, 0.0, 10.0])
        assert model.forecast([2.5]) == [pytest.approx(12.5, abs=1e-12)]

    def test_scale_equivariance(self):
        rng = np.random.default_rng(11)
        values = np.cumsum(rng.normal(size=60))
        probe = rng.uniform(values.min(), values.max(), size=20)
        base = np.array(ChenModel(K=7).fit(values).forecast(probe))
        for _ in range(100):
            a, b = rng.uniform(0.1, 10.0), rng.uniform(-100.0, 100.0)
            mapped = np.array(ChenModel(K=7).fit(a * values + b).forecast(a * probe + b))
            np.testing.assert_allclose(mapped, a * base + b, rtol=1e-9, atol=1e-9 * a)

    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=50), st.floats(-200, 200))
    def test_forecast_stays_within_centers(self, values, probe):
        if max(values) == min(values):
            return
        model = ChenModel(K=5).fit(values)
        forecast = model.forecast([probe])[0]
        assert model.lv.centers[0] - 1e-9 <= forecast <= model.lv.centers[-1] + 1e-9


def test_partitions_json(tmp_path):
    series = MultivariateSeries(np.random.default_rng(4).normal(size=(40, 2)), ('a', 'b'))
    lvs = fit_partitions(series, K=6)
    path = str(tmp_path / 'partitions.json')
    save_partitions(lvs, path)
    loaded = load_partitions(path)
    assert [lv.labels for lv in loaded] == [lv.labels for lv in lvs]
    np.testing.assert_array_equal(loaded[1].centers, lvs[1].centers)
