"""
The outer Bayesian-optimization loop, replications, regret and export.

Problems are minimized; the surrogate is fitted to the negated objective so
acquisition functions maximize. Constraint models are fitted on raw
constraint values, feasible when >= 0.
"""
import csv
import glob
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor

import attr
import backoff
import numpy as np
import singer
import singer.metrics as metrics
from singer import Transformer
from singer import utils
from singer.transform import SchemaMismatch

from mixedbo import acqopt
from mixedbo import acquisition
from mixedbo import problems
from mixedbo import space as sp
from mixedbo import surrogate
from mixedbo import trustregion

LOGGER = singer.get_logger()

CSV_COLUMNS = ('method', 'problem', 'replicate', 'iteration', 'objective', 'incumbent',
               'feasible', 'regret_log10', 'wall_time_s')
CSV = 'csv'
JSONL = 'jsonl'

REGRET_SHIFT = 0.1
MAX_INIT = 20
FIT_TRIES = 3
WORKERS_ENV = 'MIXEDBO_WORKERS'


class ConfigError(Exception):
    pass

class EmptyHistory(Exception):
    pass


def _acquisition_kind(value):
    return acquisition.ALIASES.get(value, value)


def _at_least(minimum):
    def check(instance, attribute, value):
        if value < minimum:
            raise ValueError("{} must be at least {}, got {}".format(attribute.name, minimum, value))
    return check


@attr.s(frozen=True)
class ExperimentConfig(object):
    problem = attr.ib(default='branin_binary')
    method = attr.ib(default=acqopt.PR_ADAM, validator=attr.validators.in_(acqopt.METHODS))
    trust_region = attr.ib(default=False)
    acquisition = attr.ib(default=acquisition.EI, converter=_acquisition_kind,
                          validator=attr.validators.in_(acquisition.KINDS))
    n_init = attr.ib(default=None)
    n_iterations = attr.ib(default=20, validator=_at_least(0))
    replications = attr.ib(default=1, validator=_at_least(1))
    seed = attr.ib(default=0)
    output_dir = attr.ib(default=None)
    # AcqOptimizerConfig overrides
    optimizer = attr.ib(factory=dict)
    problem_seed = attr.ib(default=0)
    record_wall_time = attr.ib(default=True)
    noise_sd = attr.ib(default=0.0, validator=_at_least(0))

    @property
    def label(self):
        return self.method + '+tr' if self.trust_region else self.method

    def optimizer_config(self, seed):
        try:
            return acqopt.AcqOptimizerConfig(method=self.method, seed=seed, **self.optimizer)
        except (TypeError, ValueError) as exc:
            raise ConfigError("Invalid optimizer settings {}: {}".format(self.optimizer, exc))


def config_to_json(cfg):
    return attr.asdict(cfg)


def config_from_json(doc):
    try:
        with Transformer() as transformer:
            clean = transformer.transform(doc, sp.load_schema('experiment_config'))
    except SchemaMismatch as exc:
        raise ConfigError("Experiment config does not match its schema: {}".format(exc))
    unknown = set(doc) - set(attr.fields_dict(ExperimentConfig))
    if unknown:
        raise ConfigError("Unknown experiment config keys: {}".format(', '.join(sorted(unknown))))
    unknown = set(doc.get('optimizer') or {}) - set(attr.fields_dict(acqopt.AcqOptimizerConfig))
    if unknown:
        raise ConfigError("Unknown optimizer keys: {}".format(', '.join(sorted(unknown))))
    try:
        return ExperimentConfig(**clean)
    except (TypeError, ValueError) as exc:
        raise ConfigError("Invalid experiment config: {}".format(exc))


def load_config(path):
    return config_from_json(utils.load_json(path))


def config_hash(cfg):
    doc = config_to_json(cfg)
    doc.pop('output_dir', None)
    canonical = json.dumps(doc, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


@attr.s
class IterationRecord(object):
    iteration = attr.ib()
    point = attr.ib()
    objective = attr.ib()
    constraints = attr.ib()
    incumbent = attr.ib()
    feasible = attr.ib()
    wall_time_s = attr.ib(default=0.0)
    tr_length = attr.ib(default=None)
    fallback = attr.ib(default=False)
    iteration_time_s = attr.ib(default=0.0)
    # trust-region state the proposal was made in
    tr_successes = attr.ib(default=None)
    tr_failures = attr.ib(default=None)
    tr_restart = attr.ib(default=None)


@attr.s
class RunRecord(object):
    problem = attr.ib()
    method = attr.ib()
    replicate = attr.ib()
    seed = attr.ib()
    config_hash = attr.ib()
    n_init = attr.ib()
    iterations = attr.ib(factory=list)
    problem_seed = attr.ib(default=0)

    @property
    def incumbents(self):
        return [it.incumbent for it in self.iterations]

    @property
    def objectives(self):
        return [it.objective for it in self.iterations]


def default_n_init(space):
    return min(MAX_INIT, 2 * space.effective_dim)


def _rank(objective, constraints):
    """Feasibility-first ordering key: feasible points by objective, infeasible by violation."""
    violation = sum(max(0.0, -c) for c in constraints)
    return (1, violation) if violation > 0 else (0, objective)


def _log_refit(details):
    LOGGER.warning("GP fit failed; retrying (attempt %s)", details['tries'] + 1)


@backoff.on_exception(backoff.constant,
                      surrogate.FitFailure,
                      max_tries=FIT_TRIES,
                      interval=0,
                      jitter=None,
                      on_backoff=_log_refit)
def fit_model(data, space, structure, rng):
    """Fit a GP, drawing a fresh fit seed from rng on every attempt."""
    return surrogate.fit_gp(data, space, int(rng.integers(2 ** 31)), structure)


def _incumbent_value(targets, feasible):
    if feasible.any():
        return float(np.max(targets[feasible]))
    return float(np.min(targets) - np.std(targets))


def build_acquisition(cfg, problem, points, objectives, constraints, iteration, rng):
    space = problem.space
    structure = surrogate.ONEHOT if cfg.method == acqopt.CONT_RELAX else surrogate.MIXED
    points = np.asarray(points, dtype=float)
    targets = -np.asarray(objectives, dtype=float)
    model = fit_model(surrogate.TrainingData.from_points(space, points, targets),
                      space, structure, rng)
    feasible = np.array([all(c >= 0 for c in cs) for cs in constraints])
    if cfg.acquisition == acquisition.UCB:
        spec = acquisition.AcquisitionSpec(
            acquisition.UCB, model, beta=acquisition.ucb_beta(iteration, space.effective_dim))
    elif cfg.acquisition == acquisition.EI:
        spec = acquisition.AcquisitionSpec(acquisition.EI, model,
                                           incumbent=_incumbent_value(targets, feasible))
    else:
        values = np.asarray(constraints, dtype=float)
        constraint_models = [
            fit_model(surrogate.TrainingData.from_points(space, points, values[:, j]),
                      space, structure, rng)
            for j in range(problem.n_constraints)]
        spec = acquisition.AcquisitionSpec(acquisition.CONSTRAINED_EI, model,
                                           incumbent=_incumbent_value(targets, feasible),
                                           constraint_models=constraint_models)
    return acquisition.AcquisitionFunction(spec, space)


def _propose(cfg, problem, history, state, iteration, rng):
    """(design point, candidate-generation seconds, fell back to Sobol)."""
    points, objectives, constraints = history
    try:
        af = build_acquisition(cfg, problem, points, objectives, constraints, iteration, rng)
        opt_cfg = cfg.optimizer_config(int(rng.integers(2 ** 31)))
        with metrics.job_timer('candidate_generation') as timer:
            if state is not None:
                result = trustregion.constrained_optimize(af, problem.space, opt_cfg, state)
            else:
                result = acqopt.optimize(af, problem.space, opt_cfg)
            elapsed = timer.elapsed()
    except (acqopt.AcquisitionOptimizationError, surrogate.FitFailure) as exc:
        LOGGER.warning("Iteration %s: acquisition optimization failed (%s); "
                       "evaluating a Sobol point instead", iteration, exc)
        return sp.sample_box(problem.space, 1, rng)[0], 0.0, True
    return result.point, elapsed if cfg.record_wall_time else 0.0, False


def run_bo(cfg, replicate_index):
    problem = problems.get_problem(cfg.problem, cfg.problem_seed, cfg.noise_sd)
    space = problem.space
    if cfg.acquisition == acquisition.CONSTRAINED_EI and problem.n_constraints == 0:
        raise ConfigError("Constrained EI needs a problem with constraints; {} has none"
                          .format(problem.id))
    n_init = cfg.n_init or default_n_init(space)
    init_seed, loop_seed, noise_seed = np.random.SeedSequence([cfg.seed, replicate_index]).spawn(3)
    rng = np.random.default_rng(loop_seed)
    noise_rng = np.random.default_rng(noise_seed)
    record = RunRecord(problem.id, cfg.label, replicate_index, cfg.seed, config_hash(cfg), n_init,
                       problem_seed=cfg.problem_seed)
    LOGGER.info("Starting %s on %s, replicate %s (%s initial points, %s iterations)",
                cfg.label, problem.id, replicate_index, n_init, cfg.n_iterations)

    points, objectives, constraints = [], [], []
    best = [None]

    def observe(point, wall_time=0.0, state=None, fallback=False, timer=None):
        objective, cons = problem.evaluate(point, noise_rng)
        counter.increment()
        key = _rank(objective, cons)
        improved = best[0] is None or key < best[0][0]
        if improved:
            best[0] = (key, np.asarray(point, dtype=float))
        points.append(np.asarray(point, dtype=float))
        objectives.append(objective)
        constraints.append(cons)
        feasible_so_far = [o for o, c in zip(objectives, constraints) if all(v >= 0 for v in c)]
        incumbent = min(feasible_so_far) if feasible_so_far else None
        iteration_time = timer.elapsed() if timer is not None and cfg.record_wall_time else 0.0
        tr = ((state.base_length, state.success_count, state.failure_count, state.restart_flag)
              if state is not None else (None, None, None, None))
        record.iterations.append(IterationRecord(
            len(record.iterations), [float(v) for v in point], objective, list(cons), incumbent,
            all(v >= 0 for v in cons), wall_time, tr[0], fallback, iteration_time, *tr[1:]))
        return improved

    with metrics.record_counter(problem.id) as counter:
        for point in sp.sobol_init(space, n_init, np.random.default_rng(init_seed)):
            observe(point)

        state = trustregion.init_state(space) if cfg.trust_region else None
        for t in range(1, cfg.n_iterations + 1):
            if state is not None:
                state = trustregion.with_center(state, best[0][1])
            with metrics.job_timer('bo_iteration') as timer:
                try:
                    point, wall_time, fallback = _propose(
                        cfg, problem, (points, objectives, constraints), state, t, rng)
                except Exception:
                    LOGGER.error("%s on %s, replicate %s failed at iteration %s",
                                 cfg.label, problem.id, replicate_index, t)
                    raise
                improved = observe(point, wall_time, state, fallback, timer)
            if state is not None:
                state = (trustregion.restart_state(state) if state.restart_flag
                         else trustregion.tr_update(state, improved))
            last = record.iterations[-1]
            LOGGER.info("Iteration %s: objective %.6g, incumbent %s%s", t, last.objective,
                        last.incumbent,
                        ", trust region %.4g" % state.base_length if state is not None else "")
    return record


def compute_regret(records, f_star=None):
    """
    log10(incumbent - (f* - 0.1)) per iteration and record. Without f_star
    the best feasible incumbent across all records stands in; iterations
    before the first feasible point use the worst pooled objective.
    """
    if not records or any(not r.iterations for r in records):
        raise EmptyHistory("Regret needs at least one record with evaluations")
    if f_star is None:
        incumbents = [v for r in records for v in r.incumbents if v is not None]
        pool = incumbents or [v for r in records for v in r.objectives]
        f_star = min(pool)
    reference = f_star - REGRET_SHIFT
    worst = max(v for r in records for v in r.objectives)
    series = []
    for r in records:
        values = []
        for incumbent in r.incumbents:
            gap = (worst if incumbent is None else incumbent) - reference
            if gap <= 0:
                raise ValueError("f* = {} lies above an observed incumbent {}"
                                 .format(f_star, incumbent))
            values.append(math.log10(gap))
        series.append(values)
    return series


@attr.s(frozen=True)
class RegretBand(object):
    mean = attr.ib(eq=False)
    standard_error = attr.ib(eq=False)

    @property
    def lower(self):
        return self.mean - 2.0 * self.standard_error

    @property
    def upper(self):
        return self.mean + 2.0 * self.standard_error


def aggregate(series):
    """Pointwise mean and standard error across replications."""
    values = np.asarray(series, dtype=float)
    if values.ndim != 2:
        raise ValueError("Replications must share one series length")
    n = values.shape[0]
    if n < 2:
        LOGGER.warning("A single replication has no standard error; reporting a zero-width band")
        return RegretBand(values.mean(axis=0), np.zeros(values.shape[1]))
    return RegretBand(values.mean(axis=0), values.std(axis=0, ddof=1) / math.sqrt(n))


def record_to_json(record):
    doc = attr.asdict(record)
    with Transformer() as transformer:
        return transformer.transform(doc, sp.load_schema('run_record'))


def record_from_json(doc):
    with Transformer() as transformer:
        doc = transformer.transform(doc, sp.load_schema('run_record'))
    iterations = [IterationRecord(**it) for it in doc.pop('iterations')]
    return RunRecord(iterations=iterations, **doc)


def _csv_value(value):
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    return value


def export(records, fmt, path, f_star=None):
    if fmt == CSV:
        regrets = compute_regret(records, f_star)
        with open(path, 'w', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(CSV_COLUMNS)
            for record, series in zip(records, regrets):
                for it, regret in zip(record.iterations, series):
                    writer.writerow([_csv_value(v) for v in (
                        record.method, record.problem, record.replicate, it.iteration,
                        it.objective, it.incumbent, it.feasible, regret, it.wall_time_s)])
    elif fmt == JSONL:
        with open(path, 'w') as handle:
            for record in records:
                handle.write(json.dumps(record_to_json(record), sort_keys=True) + '\n')
    else:
        raise ValueError("Unknown export format '{}'".format(fmt))
    LOGGER.info("Wrote %s records to %s", len(records), path)
    return path


def load_records(path):
    """RunRecords from a JSONL file, or from every .jsonl file of a directory."""
    paths = sorted(glob.glob(os.path.join(path, '*.jsonl'))) if os.path.isdir(path) else [path]
    records = []
    for name in paths:
        with open(name) as handle:
            records.extend(record_from_json(json.loads(line)) for line in handle if line.strip())
    return records


def _workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, 1)))
    except ValueError:
        raise ConfigError("{} must be an integer, got {}"
                          .format(WORKERS_ENV, os.environ.get(WORKERS_ENV)))


def run_experiment(cfg):
    """All replications of one configuration, exported when output_dir is set."""
    replicates = list(range(cfg.replications))
    workers = min(_workers(), len(replicates))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_bo, [cfg] * len(replicates), replicates))
    else:
        records = [run_bo(cfg, r) for r in replicates]

    if cfg.output_dir:
        os.makedirs(cfg.output_dir, exist_ok=True)
        stem = os.path.join(cfg.output_dir, '{}_{}'.format(cfg.problem, cfg.label))
        f_star = problems.get_problem(cfg.problem, cfg.problem_seed).optimum
        # noisy observations can fall below the noise-free optimum
        f_star = min([f_star] + [v for r in records for v in r.incumbents if v is not None])
        export(records, CSV, stem + '.csv', f_star)
        export(records, JSONL, stem + '.jsonl')
    return records
