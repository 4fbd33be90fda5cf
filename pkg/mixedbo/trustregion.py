"""
Trust region over the continuous parameters and the ordinals with at least
three levels. Side lengths live in feature units and are scaled per
dimension by the surrogate's lengthscales; binaries, two-level ordinals and
categoricals are never restricted.
"""
import attr
import numpy as np
import singer

from mixedbo import acqopt
from mixedbo import space as sp
from mixedbo import surrogate

LOGGER = singer.get_logger()

LENGTH_INIT = 0.8
LENGTH_MIN = 0.5 ** 7
LENGTH_MAX = 1.6
SUCCESS_TOLERANCE = 3
MIN_FAILURE_TOLERANCE = 4


@attr.s(frozen=True)
class TrustRegionState(object):
    base_length = attr.ib(default=LENGTH_INIT)
    center = attr.ib(default=None, eq=False)
    success_count = attr.ib(default=0)
    failure_count = attr.ib(default=0)
    success_tolerance = attr.ib(default=SUCCESS_TOLERANCE)
    failure_tolerance = attr.ib(default=MIN_FAILURE_TOLERANCE)
    restart_flag = attr.ib(default=False)

    def __attrs_post_init__(self):
        if self.success_count < 0 or self.failure_count < 0:
            raise ValueError("Trust region counters must be non-negative")
        if self.success_count and self.failure_count:
            raise ValueError("Success and failure counters cannot both be nonzero")


def region_params(space):
    """Indices of the parameters a trust region restricts."""
    return tuple(i for i, p in enumerate(space.parameters)
                 if p.kind == sp.CONTINUOUS or (p.kind == sp.ORDINAL and p.cardinality >= 3))


def init_state(space, center=None):
    return TrustRegionState(center=center,
                            failure_tolerance=max(MIN_FAILURE_TOLERANCE, len(region_params(space))))


def restart_state(state):
    return attr.evolve(state, base_length=LENGTH_INIT, success_count=0, failure_count=0,
                       restart_flag=False)


def with_center(state, center):
    return attr.evolve(state, center=None if center is None else np.asarray(center, dtype=float))


def tr_box(state, space, model):
    """The trust region as a feature-space Box around state.center."""
    box = space.unit_box()
    params = region_params(space)
    if state.center is None or not params:
        return box
    cols = [space.relaxed_slices[i].start for i in params]
    lengthscales = surrogate.feature_lengthscales(model.kernel)[cols]
    weights = lengthscales / np.exp(np.mean(np.log(lengthscales)))
    center = sp.point_features(space, state.center)[cols]
    half = weights * state.base_length / 2.0
    lower, upper = box.lower.copy(), box.upper.copy()
    lower[cols] = np.clip(center - half, 0.0, 1.0)
    upper[cols] = np.clip(center + half, 0.0, 1.0)
    return sp.Box(lower, upper)


def tr_bounds(state, space, model):
    """
    {parameter index: (low, high)} for restricted parameters: original units
    for continuous ones, inclusive index ranges for ordinals.
    """
    box = tr_box(state, space, model)
    lows = sp.from_features(space, box.lower)
    highs = sp.from_features(space, box.upper)
    ordinal_ranges = dict(zip((b.param for b in space.discrete_blocks),
                              sp.discrete_ranges(space, box)))
    bounds = {}
    for i in region_params(space):
        p = space.parameters[i]
        if p.kind == sp.CONTINUOUS:
            col = space.relaxed_slices[i].start
            bounds[i] = (max(lows[col], p.bounds[0]), min(highs[col], p.bounds[1]))
        else:
            bounds[i] = ordinal_ranges[i]
    return bounds


def tr_update(state, improved):
    success, failure = (state.success_count + 1, 0) if improved else (0, state.failure_count + 1)
    length = state.base_length
    if success == state.success_tolerance:
        length = min(2.0 * length, LENGTH_MAX)
        success = 0
        LOGGER.info("Trust region expanded to %.4g", length)
    elif failure == state.failure_tolerance:
        length /= 2.0
        failure = 0
        LOGGER.info("Trust region shrunk to %.4g", length)
    restart = length < LENGTH_MIN
    if restart:
        LOGGER.info("Trust region collapsed below %.4g; flagging a restart", LENGTH_MIN)
    return attr.evolve(state, base_length=length, success_count=success,
                       failure_count=failure, restart_flag=restart)


def constrained_optimize(af, space, cfg, state):
    """
    Run the configured acquisition optimizer inside the trust region. A
    collapsed region yields a fresh Sobol design instead; the caller resets
    the state.
    """
    if state.restart_flag:
        point = sp.sample_box(space, 1, cfg.seed)[0]
        return acqopt.CandidateResult(point, af.evaluate(point), 0, None)
    box = tr_box(state, space, af.spec.objective_model)
    return acqopt.optimize(af, space, cfg, box)
