"""
Synthetic mixed-domain benchmarks. Every problem is minimized; discrete
parameters carry indices 0..C-1 which each objective maps onto its own
value grid.
"""
import functools
import math

import attr
import numpy as np
import singer
from scipy.optimize import minimize_scalar

from mixedbo import space as sp

LOGGER = singer.get_logger()

BRANIN_GRID_POINTS = 2001
F1_OPT_CLAMP = 1000.0


class UnknownProblem(Exception):
    pass


@attr.s(frozen=True)
class Problem(object):
    id = attr.ib()
    space = attr.ib()
    evaluator = attr.ib()
    optimum = attr.ib(default=None)
    noise_sd = attr.ib(default=0.0)
    n_constraints = attr.ib(default=0)

    @noise_sd.validator
    def _check_noise(self, attribute, value):
        if value < 0:
            raise ValueError("noise_sd must be non-negative, got {}".format(value))

    def evaluate(self, point, rng=None):
        """(objective, constraints) at a design point; constraints are feasible when >= 0."""
        point = np.asarray(point, dtype=float)
        sp.validate(self.space, point)
        objective, constraints = self.evaluator(point)
        if self.noise_sd > 0 and rng is not None:
            objective += rng.normal(0.0, self.noise_sd)
        return float(objective), tuple(float(c) for c in constraints)


def _unconstrained(fn):
    @functools.wraps(fn)
    def evaluator(point):
        return fn(point), ()
    return evaluator


def grid_values(cardinality, lower, upper):
    return np.linspace(lower, upper, cardinality)


# -- Ackley ------------------------------------------------------------------

def ackley(v, a=20.0, b=0.2, c=2 * math.pi):
    v = np.asarray(v, dtype=float)
    return float(-a * math.exp(-b * math.sqrt(np.mean(v ** 2)))
                 - math.exp(np.mean(np.cos(c * v))) + a + math.e)


def ackley13_space():
    return sp.SearchSpace([sp.binary('b{}'.format(i)) for i in range(10)]
                          + [sp.continuous('x{}'.format(i), -1.0, 1.0) for i in range(3)])


ACKLEY13_SPACE = ackley13_space()


def ackley13(point):
    """13-d Ackley whose first ten coordinates are binaries on {-1, 1}."""
    point = np.asarray(point, dtype=float)
    sp.validate(ACKLEY13_SPACE, point)
    return ackley(np.concatenate([2.0 * point[:10] - 1.0, point[10:]]))


def make_ackley13(seed=0):
    optimum = 20.0 * (1.0 - math.exp(-0.2 * math.sqrt(10.0 / 13.0)))
    return Problem('ackley13', ACKLEY13_SPACE, _unconstrained(ackley13), optimum)


# -- mixed-integer sphere ----------------------------------------------------

F1_CARDINALITIES = (2, 2, 3, 3, 5, 5, 7, 7)
F1_CONTINUOUS = 8
F1_BOUND = 5.0


def sphere(v, x_opt, f_opt):
    v = np.asarray(v, dtype=float)
    return float(np.sum((v - x_opt) ** 2) + f_opt)


@attr.s(frozen=True)
class SphereInstance(object):
    x_opt = attr.ib(eq=False)
    f_opt = attr.ib()


@functools.lru_cache(maxsize=None)
def sphere_instance(seed):
    """Seeded optimum location on [-4, 4]^16 and offset from a clamped, rounded Cauchy draw."""
    rng = np.random.default_rng(seed)
    x_opt = rng.uniform(-4.0, 4.0, len(F1_CARDINALITIES) + F1_CONTINUOUS)
    cauchy = 100.0 * math.tan(math.pi * (rng.uniform() - 0.5))
    f_opt = float(round(min(max(cauchy, -F1_OPT_CLAMP), F1_OPT_CLAMP)))
    return SphereInstance(x_opt, f_opt)


def mixed_int_f1_space():
    discrete = [sp.binary('z{}'.format(i)) if c == 2 else sp.ordinal('z{}'.format(i), c)
                for i, c in enumerate(F1_CARDINALITIES)]
    return sp.SearchSpace(discrete + [sp.continuous('x{}'.format(i), -F1_BOUND, F1_BOUND)
                                      for i in range(F1_CONTINUOUS)])


MIXED_INT_F1_SPACE = mixed_int_f1_space()


def _f1_values(point):
    point = np.asarray(point, dtype=float)
    discrete = [grid_values(c, -F1_BOUND, F1_BOUND)[int(z)]
                for c, z in zip(F1_CARDINALITIES, point[:len(F1_CARDINALITIES)])]
    return np.concatenate([discrete, point[len(F1_CARDINALITIES):]])


def mixed_int_f1(point, seed=0):
    sp.validate(MIXED_INT_F1_SPACE, point)
    instance = sphere_instance(seed)
    return sphere(_f1_values(point), instance.x_opt, instance.f_opt)


def mixed_int_f1_optimum(seed=0):
    instance = sphere_instance(seed)
    gaps = [np.min((grid_values(c, -F1_BOUND, F1_BOUND) - x) ** 2)
            for c, x in zip(F1_CARDINALITIES, instance.x_opt)]
    return float(instance.f_opt + np.sum(gaps))


def make_mixed_int_f1(seed=0):
    return Problem('mixed_int_f1', MIXED_INT_F1_SPACE,
                   _unconstrained(functools.partial(mixed_int_f1, seed=seed)),
                   mixed_int_f1_optimum(seed))


# -- Rosenbrock --------------------------------------------------------------

ROSENBROCK_ORDINALS = 6
ROSENBROCK_LEVELS = 4
ROSENBROCK_BOUNDS = (-5.0, 10.0)


def rosenbrock(v):
    v = np.asarray(v, dtype=float)
    return float(np.sum(100.0 * (v[1:] - v[:-1] ** 2) ** 2 + (v[:-1] - 1.0) ** 2))


def rosenbrock10_space():
    lo, hi = ROSENBROCK_BOUNDS
    return sp.SearchSpace([sp.ordinal('z{}'.format(i), ROSENBROCK_LEVELS)
                           for i in range(ROSENBROCK_ORDINALS)]
                          + [sp.continuous('x{}'.format(i), lo, hi) for i in range(4)])


ROSENBROCK10_SPACE = rosenbrock10_space()


def rosenbrock10(point):
    point = np.asarray(point, dtype=float)
    sp.validate(ROSENBROCK10_SPACE, point)
    levels = grid_values(ROSENBROCK_LEVELS, *ROSENBROCK_BOUNDS)
    values = levels[point[:ROSENBROCK_ORDINALS].astype(int)]
    return rosenbrock(np.concatenate([values, point[ROSENBROCK_ORDINALS:]]))


def make_rosenbrock10(seed=0):
    return Problem('rosenbrock10', ROSENBROCK10_SPACE, _unconstrained(rosenbrock10))


# -- Branin with a binary second axis ---------------------------------------

BRANIN_X0 = (-5.0, 10.0)
BRANIN_X1_HIGH = 15.0


def branin(x0, x1):
    b = 5.1 / (4 * math.pi ** 2)
    c = 5 / math.pi
    t = 1 / (8 * math.pi)
    return (x1 - b * x0 ** 2 + c * x0 - 6) ** 2 + 10 * (1 - t) * np.cos(x0) + 10


def branin_binary_space():
    return sp.SearchSpace([sp.continuous('x0', *BRANIN_X0), sp.binary('z0')])


BRANIN_BINARY_SPACE = branin_binary_space()


def branin_binary(point):
    """Branin on x0 with the binary selecting x1 = 0 or x1 = 15."""
    sp.validate(BRANIN_BINARY_SPACE, point)
    return float(branin(point[0], BRANIN_X1_HIGH * point[1]))


def branin_binary_optimum():
    """Dense grid over each binary slice, refined by a bounded scalar search."""
    grid = np.linspace(BRANIN_X0[0], BRANIN_X0[1], BRANIN_GRID_POINTS)
    step = grid[1] - grid[0]
    best = math.inf
    for z in (0, 1):
        values = branin(grid, BRANIN_X1_HIGH * z)
        x = grid[int(np.argmin(values))]
        result = minimize_scalar(lambda v: branin(v, BRANIN_X1_HIGH * z), method='bounded',
                                 bounds=(max(x - step, BRANIN_X0[0]), min(x + step, BRANIN_X0[1])))
        best = min(best, float(np.min(values)), float(result.fun))
    return best


def make_branin_binary(seed=0):
    return Problem('branin_binary', BRANIN_BINARY_SPACE, _unconstrained(branin_binary),
                   branin_binary_optimum())


# -- constrained toy ---------------------------------------------------------

TOY_TARGET = np.array([1.5, 1.5])
TOY_BOUND = 2.0
TOY_LEVELS = 4


def toy_constrained_space():
    return sp.SearchSpace([sp.continuous('x0', -TOY_BOUND, TOY_BOUND),
                           sp.continuous('x1', -TOY_BOUND, TOY_BOUND),
                           sp.binary('b'),
                           sp.ordinal('o', TOY_LEVELS)])


TOY_CONSTRAINED_SPACE = toy_constrained_space()


def toy_constrained(point):
    """Quadratic objective; feasible inside the unit disk around the origin."""
    point = np.asarray(point, dtype=float)
    sp.validate(TOY_CONSTRAINED_SPACE, point)
    x = point[:2]
    objective = float(np.sum((x - TOY_TARGET) ** 2) + 0.5 * point[2] + 0.25 * (point[3] - 2) ** 2)
    return objective, (float(1.0 - np.sum(x ** 2)),)


def toy_constrained_optimum():
    # the closest feasible x to the target sits on the unit circle
    return (float(np.linalg.norm(TOY_TARGET)) - 1.0) ** 2


def make_toy_constrained(seed=0):
    return Problem('toy_constrained', TOY_CONSTRAINED_SPACE, toy_constrained,
                   toy_constrained_optimum(), n_constraints=1)


PROBLEMS = {
    'ackley13': make_ackley13,
    'mixed_int_f1': make_mixed_int_f1,
    'rosenbrock10': make_rosenbrock10,
    'branin_binary': make_branin_binary,
    'toy_constrained': make_toy_constrained,
}


def get_problem(problem_id, seed=0, noise_sd=0.0):
    if problem_id not in PROBLEMS:
        raise UnknownProblem("Unknown problem '{}'; choose from {}"
                             .format(problem_id, ', '.join(sorted(PROBLEMS))))
    problem = PROBLEMS[problem_id](seed)
    return attr.evolve(problem, noise_sd=noise_sd) if noise_sd else problem
