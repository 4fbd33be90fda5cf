import numpy as np
import singer

from mixedbo import acquisition
from mixedbo import harness
from mixedbo import problems
from mixedbo import space as sp
from mixedbo import surrogate

LOGGER = singer.get_logger()


def mixed_space():
    return sp.SearchSpace([sp.continuous('x', -1.0, 2.0),
                           sp.binary('b'),
                           sp.ordinal('o', 4),
                           sp.categorical('c', 3)])


def binary_space(n_binary=3):
    return sp.SearchSpace([sp.continuous('x', 0.0, 1.0)]
                          + [sp.binary('b{}'.format(i)) for i in range(n_binary)])


def smooth_objective(space, points):
    """A deterministic smooth function of the features, for fitting test models."""
    F = sp.point_features(space, points)
    weights = np.linspace(1.0, 2.0, F.shape[1])
    return np.sin(3.0 * F @ weights) + 0.5 * np.sum((F - 0.3) ** 2, axis=1)


def fitted_model(space, n=10, seed=0, structure=surrogate.MIXED, targets=None):
    points = sp.sobol_init(space, n, seed)
    if targets is None:
        targets = smooth_objective(space, points)
    data = surrogate.TrainingData.from_points(space, points, targets)
    return surrogate.fit_gp(data, space, seed, structure)


def branin_model(n=10, seed=0, structure=surrogate.MIXED):
    problem = problems.get_problem('branin_binary')
    points = sp.sobol_init(problem.space, n, seed)
    targets = [-problem.evaluate(p)[0] for p in points]
    data = surrogate.TrainingData.from_points(problem.space, points, targets)
    return problem.space, surrogate.fit_gp(data, problem.space, seed, structure)


def ei_function(space, model):
    incumbent = float(np.max(model.train_targets * model.target_std + model.target_mean))
    spec = acquisition.AcquisitionSpec(acquisition.EI, model, incumbent=incumbent)
    return acquisition.AcquisitionFunction(spec, space)


def branin_ei(n=10, seed=0, structure=surrogate.MIXED):
    space, model = branin_model(n, seed, structure)
    return space, ei_function(space, model)


def make_record(objectives, feasible=None, method='pr_adam', replicate=0):
    """A RunRecord on branin_binary with the given objective trace."""
    feasible = feasible or [True] * len(objectives)
    record = harness.RunRecord('branin_binary', method, replicate, 0, 'abc', 1)
    best = None
    for i, (objective, ok) in enumerate(zip(objectives, feasible)):
        if ok:
            best = objective if best is None else min(best, objective)
        record.iterations.append(harness.IterationRecord(
            i, [0.0, 0.0], objective, [] if ok else [-1.0], best, ok))
    return record


class TableAcquisition(object):
    """
    alpha(x, z) = table[z] + slope * sum(x), indexed by the tuple of discrete
    values; stands in for a fitted acquisition function.
    """

    def __init__(self, space, table, slope=0.0):
        self.space = space
        self.table = {tuple(int(v) for v in k): float(val) for k, val in table.items()}
        self.slope = slope
        self.calls = 0

    def __call__(self, x, z, with_grad=False):
        self.calls += 1
        z = np.atleast_2d(z)
        x = np.asarray(x, dtype=float)
        values = np.array([self.table[tuple(int(v) for v in row)] for row in z])
        values = values + self.slope * np.sum(x)
        grads = np.full((z.shape[0], self.space.n_continuous), self.slope) if with_grad else None
        return values, grads
