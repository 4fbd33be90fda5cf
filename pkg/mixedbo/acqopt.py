"""
Acquisition maximization over mixed spaces.

Every method returns a CandidateResult whose point is a valid design and
whose af_value is the acquisition function re-evaluated at that point.
Continuous coordinates are optimized in feature units (the unit box, or the
trust-region box when one is given); PR methods additionally optimize the
raw distribution parameters phi of reparam.
"""
import json

import attr
import numpy as np
import singer
from scipy.optimize import minimize

from mixedbo import reparam
from mixedbo import space as sp
from mixedbo import surrogate

LOGGER = singer.get_logger()

PR_ADAM = 'pr_adam'
PR_SAA = 'pr_saa'
PR_ANALYTIC = 'pr_analytic'
CONT_RELAX = 'cont_relax'
EXACT_ROUND_FD = 'exact_round_fd'
EXACT_ROUND_STE = 'exact_round_ste'
ENUMERATION = 'enumeration'
PR_METHODS = (PR_ADAM, PR_SAA, PR_ANALYTIC)
METHODS = PR_METHODS + (CONT_RELAX, EXACT_ROUND_FD, EXACT_ROUND_STE, ENUMERATION)

ADAM = 'adam'
SGA = 'sga'

ADAM_BETAS = (0.9, 0.999)
ADAM_EPSILON = 1e-8
SGA_DECAY = 0.7
BOLTZMANN_SPREAD = 6.0
LINE_SEARCH_HALVINGS = 6


class AcquisitionOptimizationError(Exception):
    pass

class NonFiniteGradient(AcquisitionOptimizationError):
    pass

class KernelIncompatible(AcquisitionOptimizationError):
    pass

class NoCandidate(AcquisitionOptimizationError):
    pass


def _positive(instance, attribute, value):
    if not value > 0:
        raise ValueError("{} must be positive, got {}".format(attribute.name, value))


@attr.s(frozen=True)
class AcqOptimizerConfig(object):
    method = attr.ib(default=PR_ADAM, validator=attr.validators.in_(METHODS))
    restarts = attr.ib(default=20, validator=_positive)
    max_iterations = attr.ib(default=200, validator=_positive)
    mc_samples = attr.ib(default=128, validator=_positive)
    learning_rate = attr.ib(default=1.0 / 40, validator=_positive)
    tau = attr.ib(default=reparam.DEFAULT_TAU, validator=_positive)
    raw_candidates = attr.ib(default=1024, validator=_positive)
    boltzmann_temperature = attr.ib(default=1.0, validator=_positive)
    seed = attr.ib(default=0)
    # in units of one ordinal step; binary and one-hot columns use it as is
    fd_step = attr.ib(default=0.51, validator=_positive)
    final_samples_per_restart = attr.ib(default=8, validator=_positive)
    optimizer = attr.ib(default=ADAM, validator=attr.validators.in_((ADAM, SGA)))
    baseline_decay = attr.ib(default=reparam.BASELINE_DECAY)
    start_mass = attr.ib(default=0.75)
    enumeration_cap = attr.ib(default=sp.ENUMERATION_CAP, validator=_positive)
    enumeration_restarts = attr.ib(default=2, validator=_positive)
    enumeration_raw_samples = attr.ib(default=64, validator=_positive)
    trace_path = attr.ib(default=None)

    def __attrs_post_init__(self):
        if self.raw_candidates < self.restarts:
            raise ValueError("raw_candidates ({}) must be at least restarts ({})"
                             .format(self.raw_candidates, self.restarts))
        if not 0 < self.start_mass < 1:
            raise ValueError("start_mass must lie in (0, 1), got {}".format(self.start_mass))


@attr.s(frozen=True)
class CandidateResult(object):
    point = attr.ib(eq=False)
    af_value = attr.ib()
    restart_index = attr.ib()
    trajectory = attr.ib(default=None, eq=False)


class OptimizerTrace(object):
    """Appends {restart, step, po_value, grad_norm} lines to a JSONL file when a path is set."""

    def __init__(self, path):
        self.path = path
        self._file = None

    def __enter__(self):
        if self.path:
            self._file = open(self.path, 'a')
        return self

    def __exit__(self, *exc_info):
        if self._file:
            self._file.close()
            self._file = None

    def record(self, restart, step, value, grad):
        if self._file is None:
            return
        self._file.write(json.dumps({'restart': restart, 'step': step,
                                     'po_value': float(value),
                                     'grad_norm': float(np.linalg.norm(grad))}) + '\n')


def _seeds(cfg):
    """One child seed for the Boltzmann candidates plus one per restart."""
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts + 1)
    return children[0], children[1:]


def _continuous_map(space):
    cols = space.continuous_columns
    return space.feature_scale[cols], space.feature_offset[cols]


def _to_x(space, u):
    scale, offset = _continuous_map(space)
    x = (u - offset) / scale
    return np.clip(x, space.lower, space.upper)


def _continuous_bounds(space, box):
    cols = space.continuous_columns
    return box.lower[cols], box.upper[cols]


def _check_finite(value, grad):
    if not (np.isfinite(value) and np.all(np.isfinite(grad))):
        raise NonFiniteGradient("Objective {} or gradient is not finite".format(value))


def boltzmann_select(utilities, k, temperature, rng):
    """
    Draw k indices without replacement with probability proportional to
    exp(eta * standardized utility); eta maps the standardized spread to 6.
    """
    utilities = np.asarray(utilities, dtype=float)
    n = utilities.shape[0]
    if k >= n:
        return np.arange(n)
    finite = np.isfinite(utilities)
    utilities = np.where(finite, utilities, np.min(utilities[finite]) if finite.any() else 0.0)
    std = np.std(utilities)
    z = (utilities - np.mean(utilities)) / std if std > 0 else np.zeros(n)
    spread = np.max(z) - np.min(z)
    eta = BOLTZMANN_SPREAD / spread if spread > 0 else 0.0
    keys = eta * z / temperature + rng.gumbel(size=n)
    return np.argsort(-keys, kind='stable')[:k]


def boltzmann_init(af, space, cfg, box=None):
    """Starting design points for the restarts, picked from raw_candidates Sobol designs."""
    seed, _ = _seeds(cfg)
    rng = np.random.default_rng(seed)
    candidates = sp.sample_box(space, cfg.raw_candidates, rng, box)
    utilities, _ = af.points(candidates)
    return candidates[boltzmann_select(utilities, cfg.restarts, cfg.boltzmann_temperature, rng)]


def _select(af, space, candidates, method):
    """Argmax of the true AF over (restart, points, trajectory) triples, ties to the lowest restart."""
    best = None
    for restart, points, trajectory in candidates:
        values, _ = af.points(points)
        i = int(np.argmax(values))
        if best is None or values[i] > best[0]:
            best = (values[i], restart, points[i], trajectory)
    if best is None:
        raise NoCandidate("Every {} restart was aborted".format(method))
    _, restart, point, trajectory = best
    sp.validate(space, point)
    result = CandidateResult(point, af.evaluate(point), restart, trajectory)
    LOGGER.info("%s selected restart %s with acquisition value %.6g",
                method, restart, result.af_value)
    return result


def _run_restarts(af, space, method, starts, seeds, run_restart):
    candidates = []
    for index, (start, seed) in enumerate(zip(starts, seeds)):
        try:
            points, trajectory = run_restart(index, start, np.random.default_rng(seed))
        except NonFiniteGradient as exc:
            LOGGER.warning("%s restart %s aborted: %s", method, index, exc)
            continue
        candidates.append((index, points, trajectory))
    return _select(af, space, candidates, method)


# -- probabilistic reparameterization ---------------------------------------

@attr.s
class _PRProblem(object):
    """Packs (u, phi) into one bounded vector for the PR optimizers."""
    af = attr.ib()
    space = attr.ib()
    cfg = attr.ib()
    box = attr.ib()

    def __attrs_post_init__(self):
        self.n_u = self.space.n_continuous
        u_lo, u_hi = _continuous_bounds(self.space, self.box)
        phi_lo, phi_hi = reparam.raw_bounds(self.space, self.box)
        self.lower = np.concatenate([u_lo, phi_lo])
        self.upper = np.concatenate([u_hi, phi_hi])
        self.scale, _ = _continuous_map(self.space)

    def start(self, point):
        x, z = sp.split(self.space, point)
        u = x[0] * self.scale + _continuous_map(self.space)[1]
        raw = reparam.concentrated_raw(self.space, z[0], self.cfg.start_mass, self.cfg.tau)
        return np.clip(np.concatenate([u, raw.values]), self.lower, self.upper)

    def unpack(self, params):
        x = _to_x(self.space, params[:self.n_u])
        return x, reparam.RawParams(self.space, params[self.n_u:], self.cfg.tau)

    def pack_grad(self, grad_x, grad_phi):
        return np.concatenate([grad_x / self.scale, grad_phi])

    def mc(self, params, samples_for, baseline_value):
        x, raw = self.unpack(params)
        theta, _ = reparam.transform(raw)
        samples = samples_for(theta)
        value, g_phi, g_x = reparam.mc_estimates(self.af, self.space, x, raw, samples,
                                                 baseline_value)
        grad = self.pack_grad(g_x, g_phi)
        _check_finite(value, grad)
        return value, grad

    def analytic(self, params):
        x, raw = self.unpack(params)
        value, g_phi, g_x = reparam.analytic_po(self.af, self.space, x, raw, self.cfg.enumeration_cap)
        grad = self.pack_grad(g_x, g_phi)
        _check_finite(value, grad)
        return value, grad

    def final_points(self, params, rng):
        x, raw = self.unpack(params)
        theta, _ = reparam.transform(raw)
        zs = np.vstack([reparam.sample(theta, self.cfg.final_samples_per_restart, rng),
                        reparam.mode(theta)[None, :]])
        return sp.clip_to_box(self.space, sp.combine(self.space, x, zs), self.box)


def _ascent_step(cfg, step, params, grad, moments):
    if cfg.optimizer == SGA:
        return params + cfg.learning_rate * step ** -SGA_DECAY * grad
    b1, b2 = ADAM_BETAS
    m, v = moments
    m[:] = b1 * m + (1 - b1) * grad
    v[:] = b2 * v + (1 - b2) * grad ** 2
    m_hat = m / (1 - b1 ** step)
    v_hat = v / (1 - b2 ** step)
    return params + cfg.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPSILON)


def _pr_stochastic(problem, trace):
    cfg = problem.cfg

    def run(index, start, rng):
        params = problem.start(start)
        moments = (np.zeros_like(params), np.zeros_like(params))
        baseline = reparam.BaselineState(decay=cfg.baseline_decay)
        trajectory = []

        def samples_for(theta):
            return reparam.sample(theta, cfg.mc_samples, rng)

        for step in range(1, cfg.max_iterations + 1):
            value, grad = problem.mc(params, samples_for, baseline.value)
            baseline = reparam.update_baseline(baseline, value)
            params = np.clip(_ascent_step(cfg, step, params, grad, moments),
                             problem.lower, problem.upper)
            trajectory.append(value)
            trace.record(index, step, value, grad)
        return problem.final_points(params, rng), trajectory
    return run


def _pr_saa(problem, trace):
    cfg = problem.cfg

    def run(index, start, rng):
        base = reparam.draw_base_samples(cfg.mc_samples, problem.space.n_discrete,
                                         int(rng.integers(2 ** 31)))

        def samples_for(theta):
            return reparam.saa_sample(theta, base)

        def objective(params):
            # the batch mean is the baseline on a fixed sample set
            return problem.mc(params, samples_for, None)

        params = problem.start(start)
        value, grad = objective(params)
        trajectory = [value]
        for step in range(1, cfg.max_iterations + 1):
            norm = np.max(np.abs(grad))
            if norm == 0:
                break
            direction = grad / norm
            accepted = None
            rate = cfg.learning_rate
            for _ in range(LINE_SEARCH_HALVINGS + 1):
                trial = np.clip(params + rate * direction, problem.lower, problem.upper)
                trial_value, trial_grad = objective(trial)
                if trial_value >= value:
                    accepted = (trial, trial_value, trial_grad)
                    break
                rate /= 2
            if accepted is None:
                break
            params, value, grad = accepted
            trajectory.append(value)
            trace.record(index, step, value, grad)
        return problem.final_points(params, rng), trajectory
    return run


def _pr_analytic(problem, trace):
    cfg = problem.cfg
    bounds = list(zip(problem.lower, problem.upper))

    def run(index, start, rng):
        trajectory = []

        def objective(params):
            value, grad = problem.analytic(params)
            trajectory.append(value)
            return -value, -grad

        result = minimize(objective, problem.start(start), jac=True, method='L-BFGS-B',
                          bounds=bounds, options={'maxiter': cfg.max_iterations})
        trace.record(index, result.nit, -result.fun, result.jac)
        return problem.final_points(result.x, rng), trajectory
    return run


def optimize_pr(af, space, cfg, box=None):
    """pr_adam, pr_saa or pr_analytic: ascend the probabilistic objective over (x, phi)."""
    if cfg.method not in PR_METHODS:
        raise ValueError("optimize_pr does not handle {}".format(cfg.method))
    if cfg.method == PR_ANALYTIC and space.n_configurations > cfg.enumeration_cap:
        raise sp.SpaceTooLarge("{} discrete configurations exceed the enumeration cap of {}"
                               .format(space.n_configurations, cfg.enumeration_cap))
    box = box or space.unit_box()
    problem = _PRProblem(af, space, cfg, box)
    starts = boltzmann_init(af, space, cfg, box)
    _, seeds = _seeds(cfg)
    runner = {PR_ADAM: _pr_stochastic, PR_SAA: _pr_saa, PR_ANALYTIC: _pr_analytic}[cfg.method]
    with OptimizerTrace(cfg.trace_path) as trace:
        return _run_restarts(af, space, cfg.method, starts, seeds, runner(problem, trace))


# -- relaxed-feature methods -------------------------------------------------

def _check_kernel(af, space):
    models = (af.spec.objective_model,) + tuple(af.spec.constraint_models)
    has_categorical = any(p.kind == sp.CATEGORICAL for p in space.parameters)
    if has_categorical and any(m.kernel.structure == surrogate.MIXED for m in models):
        raise KernelIncompatible("Continuous relaxation needs a one-hot Matern surrogate; "
                                 "the categorical kernel only accepts discrete inputs")


def _lbfgs_features(space, cfg, box, objective):
    bounds = list(zip(box.lower, box.upper))

    def run(index, start, rng):
        F0 = np.clip(sp.point_features(space, start), box.lower, box.upper)

        def negated(F):
            value, grad = objective(F)
            _check_finite(value, grad)
            return -value, -grad

        result = minimize(negated, F0, jac=True, method='L-BFGS-B', bounds=bounds,
                          options={'maxiter': cfg.max_iterations})
        point = sp.discretize(space, sp.from_features(space, result.x))
        return sp.clip_to_box(space, point, box)[None, :], None
    return run


def optimize_cont_relax(af, space, cfg, box=None):
    _check_kernel(af, space)
    box = box or space.unit_box()

    def objective(F):
        value, grad = af.features(F, with_grad=True)
        return float(value[0]), grad[0]

    starts = boltzmann_init(af, space, cfg, box)
    _, seeds = _seeds(cfg)
    return _run_restarts(af, space, CONT_RELAX, starts, seeds,
                         _lbfgs_features(space, cfg, box, objective))


def fd_steps(space, fd_step):
    """Central-difference step per discrete feature column."""
    steps = np.zeros(space.effective_dim)
    for p, sl in zip(space.parameters, space.relaxed_slices):
        if p.kind == sp.ORDINAL:
            steps[sl] = fd_step / (p.cardinality - 1)
        elif p.is_discrete:
            steps[sl] = fd_step
    return steps


def exact_round_objective(af, space, F, fd_step, box=None, straight_through=False):
    """
    alpha at the rounded features and its gradient: analytic for continuous
    columns, and for discrete columns either central differences of the
    rounded objective or the analytic gradient passed straight through.
    """
    F = np.asarray(F, dtype=float)
    value, grad = af.features(sp.round_features(space, F, box), with_grad=True)
    value, grad = float(value[0]), grad[0].copy()
    if straight_through:
        return value, grad
    cols = space.discrete_columns
    if cols.size == 0:
        return value, grad
    steps = fd_steps(space, fd_step)[cols]
    shifted = np.repeat(F[None, :], 2 * cols.size, axis=0)
    rows = np.arange(cols.size)
    shifted[rows, cols] += steps
    shifted[cols.size + rows, cols] -= steps
    values, _ = af.features(sp.round_features(space, shifted, box))
    grad[cols] = (values[:cols.size] - values[cols.size:]) / (2.0 * steps)
    return value, grad


def optimize_exact_round(af, space, cfg, box=None, straight_through=False):
    box = box or space.unit_box()

    def objective(F):
        return exact_round_objective(af, space, F, cfg.fd_step, box, straight_through)

    method = EXACT_ROUND_STE if straight_through else EXACT_ROUND_FD
    starts = boltzmann_init(af, space, cfg, box)
    _, seeds = _seeds(cfg)
    return _run_restarts(af, space, method, starts, seeds,
                         _lbfgs_features(space, cfg, box, objective))


def optimize_exact_round_ste(af, space, cfg, box=None):
    return optimize_exact_round(af, space, cfg, box, straight_through=True)


# -- enumeration -------------------------------------------------------------

def _maximize_continuous(af, space, cfg, z, box, seed):
    """Best continuous part for a fixed discrete configuration."""
    scale, offset = _continuous_map(space)
    lo, hi = _continuous_bounds(space, box)
    u = lo + sp.sobol_uniforms(space.n_continuous, cfg.enumeration_raw_samples, seed) * (hi - lo)
    values, _ = af.points(sp.combine(space, _to_x(space, u), z))
    order = np.argsort(-values, kind='stable')[:cfg.enumeration_restarts]

    def negated(u_vec):
        value, grad = af(_to_x(space, u_vec), z[None, :], with_grad=True)
        return -float(value[0]), -grad[0] / scale

    best_x, best_value = _to_x(space, u[order[0]]), values[order[0]]
    for i in order:
        result = minimize(negated, u[i], jac=True, method='L-BFGS-B',
                          bounds=list(zip(lo, hi)), options={'maxiter': cfg.max_iterations})
        if np.isfinite(result.fun) and -result.fun > best_value:
            best_x, best_value = _to_x(space, result.x), -result.fun
    return best_x


def optimize_enumeration(af, space, cfg, box=None):
    """Gold standard: every discrete configuration, continuous part optimized per configuration."""
    box = box or space.unit_box()
    configs = sp.enumerate_configurations(space, cfg.enumeration_cap, box)
    if space.n_continuous == 0:
        points = sp.combine(space, np.zeros(0), configs)
        return _select(af, space, [(0, points, None)], ENUMERATION)
    seed = int(np.random.SeedSequence(cfg.seed).generate_state(1)[0])
    points = np.vstack([sp.combine(space, _maximize_continuous(af, space, cfg, z, box, seed), z)
                        for z in configs])
    points = sp.clip_to_box(space, points, box)
    return _select(af, space, [(i, p[None, :], None) for i, p in enumerate(points)], ENUMERATION)


def optimize(af, space, cfg, box=None):
    LOGGER.debug("Optimizing acquisition with %s (%s restarts)", cfg.method, cfg.restarts)
    if cfg.method in PR_METHODS:
        return optimize_pr(af, space, cfg, box)
    if cfg.method == CONT_RELAX:
        return optimize_cont_relax(af, space, cfg, box)
    if cfg.method == EXACT_ROUND_FD:
        return optimize_exact_round(af, space, cfg, box)
    if cfg.method == EXACT_ROUND_STE:
        return optimize_exact_round_ste(af, space, cfg, box)
    return optimize_enumeration(af, space, cfg, box)
