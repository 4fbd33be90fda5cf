import json
import os
import shutil
import tempfile
import unittest
from unittest import mock

import attr
import numpy as np

from mixedbo import acqopt
from mixedbo import space as sp
from mixedbo import surrogate
from mixedbo.tests import utils

FAST = dict(restarts=3, raw_candidates=32, max_iterations=20, mc_samples=16,
            final_samples_per_restart=4, enumeration_raw_samples=16)


def fast_config(method, **overrides):
    options = dict(FAST, method=method, seed=3)
    options.update(overrides)
    return acqopt.AcqOptimizerConfig(**options)


class TestAcqOptimizerConfig(unittest.TestCase):

    def test_defaults(self):
        cfg = acqopt.AcqOptimizerConfig()
        self.assertEqual(cfg.method, acqopt.PR_ADAM)
        self.assertEqual(cfg.restarts, 20)
        self.assertEqual(cfg.mc_samples, 128)
        self.assertAlmostEqual(cfg.learning_rate, 0.025)

    def test_raw_candidates_cover_the_restarts(self):
        with self.assertRaises(ValueError):
            acqopt.AcqOptimizerConfig(restarts=10, raw_candidates=5)

    def test_rejects_bad_values(self):
        with self.assertRaises(ValueError):
            acqopt.AcqOptimizerConfig(method='random')
        with self.assertRaises(ValueError):
            acqopt.AcqOptimizerConfig(optimizer='lbfgs')
        with self.assertRaises(ValueError):
            acqopt.AcqOptimizerConfig(tau=0.0)
        with self.assertRaises(ValueError):
            acqopt.AcqOptimizerConfig(start_mass=1.0)


class TestBoltzmannSelect(unittest.TestCase):

    def test_fewer_candidates_than_restarts(self):
        chosen = acqopt.boltzmann_select([1.0, 2.0, 3.0], 3, 1.0, np.random.default_rng(0))
        np.testing.assert_array_equal(chosen, [0, 1, 2])

    def test_cold_limit_takes_the_best(self):
        utilities = [0.0, 5.0, 1.0, 9.0, 3.0]
        chosen = acqopt.boltzmann_select(utilities, 2, 1e-6, np.random.default_rng(1))
        self.assertEqual(set(chosen), {1, 3})

    def test_without_replacement_and_seeded(self):
        utilities = np.linspace(0.0, 1.0, 50)
        first = acqopt.boltzmann_select(utilities, 10, 1.0, np.random.default_rng(2))
        second = acqopt.boltzmann_select(utilities, 10, 1.0, np.random.default_rng(2))
        self.assertEqual(len(set(first)), 10)
        np.testing.assert_array_equal(first, second)

    def test_flat_utilities(self):
        chosen = acqopt.boltzmann_select(np.zeros(8), 4, 1.0, np.random.default_rng(3))
        self.assertEqual(len(set(chosen)), 4)


class TestOptimizeBranin(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.space, cls.af = utils.branin_ei(n=8, seed=0)

    def test_every_method_returns_a_valid_design(self):
        for method in acqopt.METHODS:
            result = acqopt.optimize(self.af, self.space, fast_config(method))
            sp.validate(self.space, result.point)
            self.assertAlmostEqual(result.af_value, self.af.evaluate(result.point))
            self.assertTrue(0 <= result.restart_index < FAST['restarts'] or
                            method == acqopt.ENUMERATION)

    def test_enumeration_keeps_the_best_configuration(self):
        result = acqopt.optimize_enumeration(self.af, self.space, fast_config(acqopt.ENUMERATION))
        for z in (0, 1):
            grid = np.column_stack([np.linspace(-5, 10, 301), np.full(301, z)])
            values, _ = self.af.points(grid)
            self.assertGreaterEqual(result.af_value, np.max(values) - 1e-6)

    def test_pr_saa_is_deterministic(self):
        cfg = fast_config(acqopt.PR_SAA)
        first = acqopt.optimize_pr(self.af, self.space, cfg)
        second = acqopt.optimize_pr(self.af, self.space, cfg)
        np.testing.assert_array_equal(first.point, second.point)
        self.assertEqual(first, second)

    def test_sga_optimizer(self):
        result = acqopt.optimize(self.af, self.space, fast_config(acqopt.PR_ADAM, optimizer='sga'))
        sp.validate(self.space, result.point)

    def test_results_stay_inside_a_box(self):
        box = self.space.unit_box()
        lower, upper = box.lower.copy(), box.upper.copy()
        lower[0], upper[0] = 0.2, 0.4
        box = sp.Box(lower, upper)
        for method in acqopt.METHODS:
            result = acqopt.optimize(self.af, self.space, fast_config(method), box)
            self.assertGreaterEqual(result.point[0], -2.0 - 1e-9)
            self.assertLessEqual(result.point[0], 1.0 + 1e-9)

    def test_trace_file(self):
        tmp = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, tmp)
        path = os.path.join(tmp, 'trace.jsonl')
        cfg = fast_config(acqopt.PR_ADAM, restarts=2, max_iterations=5, trace_path=path)
        acqopt.optimize(self.af, self.space, cfg)
        with open(path) as handle:
            lines = [json.loads(line) for line in handle]
        self.assertEqual(len(lines), 10)
        self.assertEqual(set(lines[0]), {'restart', 'step', 'po_value', 'grad_norm'})
        self.assertEqual([line['step'] for line in lines[:5]], [1, 2, 3, 4, 5])


class TestExactRound(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.space, cls.af = utils.branin_ei(n=8, seed=1)

    def test_difference_is_zero_inside_a_rounding_cell(self):
        F = np.array([0.5, 0.2])
        _, grad = acqopt.exact_round_objective(self.af, self.space, F, fd_step=0.1)
        self.assertEqual(grad[1], 0.0)

    def test_difference_across_the_cell(self):
        F = np.array([0.5, 0.2])
        _, grad = acqopt.exact_round_objective(self.af, self.space, F, fd_step=0.51)
        up = self.af.evaluate([2.5, 1])
        down = self.af.evaluate([2.5, 0])
        self.assertAlmostEqual(grad[1], (up - down) / 1.02)

    def test_value_is_taken_at_the_rounded_design(self):
        value, grad = acqopt.exact_round_objective(self.af, self.space, np.array([0.5, 0.7]), 0.51)
        self.assertAlmostEqual(value, self.af.evaluate([2.5, 1]))
        _, analytic = self.af.features(sp.point_features(self.space, [2.5, 1]), with_grad=True)
        self.assertAlmostEqual(grad[0], analytic[0, 0])

    def test_straight_through_passes_the_analytic_gradient(self):
        F = np.array([0.5, 0.7])
        _, grad = acqopt.exact_round_objective(self.af, self.space, F, 0.51, straight_through=True)
        _, analytic = self.af.features(sp.point_features(self.space, [2.5, 1]), with_grad=True)
        np.testing.assert_allclose(grad, analytic[0])

    def test_fd_steps_scale_with_ordinal_levels(self):
        steps = acqopt.fd_steps(utils.mixed_space(), 0.51)
        np.testing.assert_allclose(steps, [0.0, 0.51, 0.17, 0.51, 0.51, 0.51])


class TestMixedSpace(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.space = utils.mixed_space()
        cls.mixed = utils.ei_function(cls.space, utils.fitted_model(cls.space, n=12, seed=5))
        cls.onehot = utils.ei_function(
            cls.space, utils.fitted_model(cls.space, n=12, seed=5, structure=surrogate.ONEHOT))

    def test_continuous_relaxation_needs_a_one_hot_kernel(self):
        with self.assertRaises(acqopt.KernelIncompatible):
            acqopt.optimize(self.mixed, self.space, fast_config(acqopt.CONT_RELAX))

    def test_continuous_relaxation_with_a_one_hot_kernel(self):
        result = acqopt.optimize(self.onehot, self.space, fast_config(acqopt.CONT_RELAX))
        sp.validate(self.space, result.point)

    def test_pr_methods_on_every_kind(self):
        for method in acqopt.PR_METHODS:
            result = acqopt.optimize(self.mixed, self.space, fast_config(method))
            sp.validate(self.space, result.point)
            self.assertAlmostEqual(result.af_value, self.mixed.evaluate(result.point))

    def test_pr_analytic_respects_the_enumeration_cap(self):
        with self.assertRaises(sp.SpaceTooLarge):
            acqopt.optimize(self.mixed, self.space,
                            fast_config(acqopt.PR_ANALYTIC, enumeration_cap=10))


class TestDegenerateSpaces(unittest.TestCase):

    def test_purely_discrete_enumeration_is_brute_force(self):
        space = sp.SearchSpace([sp.binary('b{}'.format(i)) for i in range(3)])
        af = utils.ei_function(space, utils.fitted_model(space, n=6, seed=0))
        with mock.patch('mixedbo.acqopt.minimize') as minimize:
            result = acqopt.optimize_enumeration(af, space, fast_config(acqopt.ENUMERATION))
        minimize.assert_not_called()
        values, _ = af.points(sp.enumerate_configurations(space))
        self.assertAlmostEqual(result.af_value, float(np.max(values)))

    def test_purely_continuous_pr(self):
        space = sp.SearchSpace([sp.continuous('x', -1.0, 1.0), sp.continuous('y', 0.0, 2.0)])
        af = utils.ei_function(space, utils.fitted_model(space, n=8, seed=2))
        for method in acqopt.PR_METHODS:
            result = acqopt.optimize(af, space, fast_config(method))
            sp.validate(space, result.point)


class TestRestarts(unittest.TestCase):

    def setUp(self):
        self.space, self.af = utils.branin_ei(n=6, seed=2)

    def test_aborted_restart_is_skipped(self):
        def run(index, start, rng):
            if index == 0:
                raise acqopt.NonFiniteGradient("nan")
            return start[None, :], None

        starts = sp.sobol_init(self.space, 2, 0)
        result = acqopt._run_restarts(self.af, self.space, 'test', starts, [0, 1], run)
        self.assertEqual(result.restart_index, 1)

    def test_every_restart_aborted(self):
        def run(index, start, rng):
            raise acqopt.NonFiniteGradient("nan")

        starts = sp.sobol_init(self.space, 2, 0)
        with self.assertRaises(acqopt.NoCandidate):
            acqopt._run_restarts(self.af, self.space, 'test', starts, [0, 1], run)

    def test_candidate_results_compare_by_value_and_restart(self):
        first = acqopt.CandidateResult(np.array([1.0, 0.0]), 0.5, 2)
        self.assertEqual(first, attr.evolve(first, point=np.array([2.0, 1.0])))
