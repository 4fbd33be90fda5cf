import unittest

import numpy as np

from mixedbo import space as sp
from mixedbo.tests import utils


class TestParameterDescriptor(unittest.TestCase):

    def test_continuous_needs_ordered_bounds(self):
        with self.assertRaises(sp.InvalidParameter):
            sp.continuous('x', 1.0, 1.0)
        with self.assertRaises(sp.InvalidParameter):
            sp.ParameterDescriptor('x', sp.CONTINUOUS)

    def test_discrete_needs_integer_cardinality(self):
        with self.assertRaises(sp.InvalidParameter):
            sp.ordinal('o', 1)
        with self.assertRaises(sp.InvalidParameter):
            sp.categorical('c', 2.5)

    def test_binary_has_cardinality_two(self):
        self.assertEqual(sp.binary('b').cardinality, 2)

    def test_unknown_kind(self):
        with self.assertRaises(ValueError):
            sp.ParameterDescriptor('x', 'integer', cardinality=3)

    def test_names_are_unique(self):
        with self.assertRaises(sp.InvalidParameter):
            sp.SearchSpace([sp.binary('a'), sp.binary('a')])


class TestLayouts(unittest.TestCase):

    def setUp(self):
        self.space = utils.mixed_space()

    def test_effective_dim_counts_one_hot_columns(self):
        self.assertEqual(sp.effective_dim(self.space), 6)
        self.assertEqual(self.space.n_continuous, 1)
        self.assertEqual(self.space.n_discrete, 3)
        self.assertEqual(self.space.n_configurations, 24)

    def test_discretize(self):
        relaxed = np.array([0.7, 0.5, 2.5, 0.1, 0.8, 0.1])
        np.testing.assert_array_equal(sp.discretize(self.space, relaxed), [0.7, 1, 3, 1])

    def test_discretize_clips(self):
        relaxed = np.array([5.0, 1.7, 3.6, 0.0, 0.0, 0.9])
        np.testing.assert_array_equal(sp.discretize(self.space, relaxed), [2.0, 1, 3, 2])

    def test_discretize_rejects_wrong_width(self):
        with self.assertRaises(sp.LayoutMismatch):
            sp.discretize(self.space, np.zeros(4))

    def test_one_hot_encode(self):
        np.testing.assert_array_equal(sp.one_hot_encode(self.space, [0.5, 1, 2, 2]),
                                      [0.5, 1, 2, 0, 0, 1])

    def test_validate_reports_the_offending_coordinate(self):
        with self.assertRaises(sp.OutOfDomain) as ctx:
            sp.validate(self.space, [0.5, 1, 4, 0])
        self.assertEqual(ctx.exception.index, 2)
        self.assertEqual(ctx.exception.value, 4)

    def test_validate_rejects_fractional_discrete_values(self):
        with self.assertRaises(sp.OutOfDomain):
            sp.validate(self.space, [0.5, 0.5, 1, 0])

    def test_features_lie_in_the_unit_box(self):
        points = sp.sobol_init(self.space, 32, 3)
        F = sp.point_features(self.space, points)
        self.assertTrue(np.all(F >= 0) and np.all(F <= 1))
        np.testing.assert_allclose(sp.from_features(self.space, F),
                                   sp.one_hot_encode(self.space, points))

    def test_round_features_snaps_to_a_design(self):
        F = np.array([0.25, 0.4, 0.55, 0.2, 0.3, 0.1])
        expected = sp.point_features(self.space, [-0.25, 0, 2, 1])
        np.testing.assert_allclose(sp.round_features(self.space, F), expected)

    def test_split_and_combine(self):
        point = np.array([0.5, 1, 2, 2])
        x, z = sp.split(self.space, point)
        np.testing.assert_array_equal(x, [[0.5]])
        np.testing.assert_array_equal(z, [[1, 2, 2]])
        np.testing.assert_array_equal(sp.combine(self.space, x[0], z), [point])


class TestSampling(unittest.TestCase):

    def setUp(self):
        self.space = utils.mixed_space()

    def test_sobol_init_is_valid_and_seeded(self):
        first = sp.sobol_init(self.space, 20, 7)
        second = sp.sobol_init(self.space, 20, 7)
        self.assertEqual(first.shape, (20, 4))
        sp.validate(self.space, first)
        np.testing.assert_array_equal(first, second)

    def test_sobol_init_reaches_every_ordinal_level(self):
        points = sp.sobol_init(self.space, 64, 0)
        self.assertEqual(set(points[:, 2]), {0, 1, 2, 3})

    def test_sobol_init_balances_binaries(self):
        space = sp.SearchSpace([sp.continuous('x', 0.0, 1.0), sp.binary('a'), sp.binary('b')])
        points = sp.sobol_init(space, 4096, 3)
        for column in (1, 2):
            self.assertGreaterEqual(points[:, column].mean(), 0.45)
            self.assertLessEqual(points[:, column].mean(), 0.55)

    def test_sample_box_respects_the_box(self):
        box = self.space.unit_box()
        lower, upper = box.lower.copy(), box.upper.copy()
        lower[0], upper[0] = 0.5, 0.75
        lower[2], upper[2] = 0.3, 0.7
        points = sp.sample_box(self.space, 50, 1, sp.Box(lower, upper))
        self.assertTrue(np.all(points[:, 0] >= 0.5) and np.all(points[:, 0] <= 1.25))
        self.assertEqual(set(points[:, 2]), {1, 2})

    def test_enumerate_configurations(self):
        configs = sp.enumerate_configurations(self.space)
        self.assertEqual(configs.shape, (24, 3))
        self.assertEqual(len({tuple(c) for c in configs}), 24)

    def test_enumerate_configurations_cap(self):
        with self.assertRaises(sp.SpaceTooLarge):
            sp.enumerate_configurations(self.space, cap=10)

    def test_enumerate_without_discrete_parameters(self):
        space = sp.SearchSpace([sp.continuous('x', 0, 1)])
        self.assertEqual(sp.enumerate_configurations(space).shape, (1, 0))


class TestSpaceJson(unittest.TestCase):

    def test_round_trip(self):
        space = utils.mixed_space()
        self.assertEqual(sp.space_from_json(sp.space_to_json(space)), space)

    def test_schema_violation(self):
        doc = [{'name': 'x', 'kind': 'continuous', 'bounds': 'wide'}]
        with self.assertRaises(sp.InvalidParameter):
            sp.space_from_json(doc)
