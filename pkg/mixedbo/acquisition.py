"""
Analytic acquisition functions on GP posteriors. Everything here maximizes.
"""
import math

import attr
import numpy as np
import singer
from scipy.stats import norm

from mixedbo import space as sp
from mixedbo import surrogate

LOGGER = singer.get_logger()

EI = 'ei'
CONSTRAINED_EI = 'constrained_ei'
UCB = 'ucb'
KINDS = (EI, CONSTRAINED_EI, UCB)

# accepted on the command line
ALIASES = {'ei': EI, 'cei': CONSTRAINED_EI, 'constrained_ei': CONSTRAINED_EI, 'ucb': UCB}

SIGMA_FLOOR = 1e-9
UCB_BETA_SCALE = 0.2


@attr.s(frozen=True)
class AcquisitionSpec(object):
    kind = attr.ib(validator=attr.validators.in_(KINDS))
    objective_model = attr.ib()
    incumbent = attr.ib(default=None)
    beta = attr.ib(default=None)
    constraint_models = attr.ib(default=(), converter=tuple)

    def __attrs_post_init__(self):
        if self.kind in (EI, CONSTRAINED_EI) and self.incumbent is None:
            raise ValueError("{} needs an incumbent".format(self.kind))
        if self.kind == UCB and (self.beta is None or self.beta <= 0):
            raise ValueError("UCB needs beta > 0, got {}".format(self.beta))
        if self.kind == CONSTRAINED_EI and not self.constraint_models:
            raise ValueError("Constrained EI needs at least one constraint model")
        if self.kind != CONSTRAINED_EI and self.constraint_models:
            raise ValueError("Only constrained EI takes constraint models")


def ucb_beta(iteration, d_eff):
    if iteration < 1:
        raise ValueError("Iterations are counted from 1, got {}".format(iteration))
    return UCB_BETA_SCALE * d_eff * math.log(2.0 * iteration)


def _sigma(post, with_grad):
    sigma = np.sqrt(post.variance)
    d_sigma = None
    if with_grad:
        d_sigma = post.d_variance / (2.0 * np.maximum(sigma, SIGMA_FLOOR))[:, None]
        d_sigma[sigma < SIGMA_FLOOR] = 0.0
    return sigma, d_sigma


def expected_improvement(mean, sigma, incumbent):
    """Closed-form EI and its partials with respect to mean and sigma."""
    mean, sigma = np.asarray(mean, dtype=float), np.asarray(sigma, dtype=float)
    improvement = mean - incumbent
    safe = np.maximum(sigma, SIGMA_FLOOR)
    u = improvement / safe
    cdf, pdf = norm.cdf(u), norm.pdf(u)
    value = safe * (u * cdf + pdf)
    d_mean, d_sigma = cdf, pdf
    tiny = sigma < SIGMA_FLOOR
    value = np.where(tiny, np.maximum(improvement, 0.0), value)
    d_mean = np.where(tiny, (improvement > 0).astype(float), d_mean)
    d_sigma = np.where(tiny, 0.0, d_sigma)
    return value, d_mean, d_sigma


def _evaluate_features(spec, F, with_grad):
    post = surrogate.predict(spec.objective_model, F, with_grad)
    sigma, d_sigma = _sigma(post, with_grad)
    if spec.kind == UCB:
        root_beta = math.sqrt(spec.beta)
        value = post.mean + root_beta * sigma
        grad = post.d_mean + root_beta * d_sigma if with_grad else None
        return value, grad

    value, dv_dmean, dv_dsigma = expected_improvement(post.mean, sigma, spec.incumbent)
    grad = None
    if with_grad:
        grad = dv_dmean[:, None] * post.d_mean + dv_dsigma[:, None] * d_sigma
    for model in spec.constraint_models:
        c_post = surrogate.predict(model, F, with_grad)
        c_sigma, c_dsigma = _sigma(c_post, with_grad)
        safe = np.maximum(c_sigma, SIGMA_FLOOR)
        u = c_post.mean / safe
        feasible = norm.cdf(u)
        if with_grad:
            du = c_post.d_mean / safe[:, None] - (c_post.mean / safe ** 2)[:, None] * c_dsigma
            d_feasible = norm.pdf(u)[:, None] * du
            grad = grad * feasible[:, None] + value[:, None] * d_feasible
        value = value * feasible
    return value, grad


@attr.s(frozen=True)
class AcquisitionFunction(object):
    """
    Binds a spec to its space. The optimizers call it through three views:
    feature vectors, design points, and (continuous part, discrete batch).
    """
    spec = attr.ib()
    space = attr.ib()

    def features(self, F, with_grad=False):
        return _evaluate_features(self.spec, np.atleast_2d(F), with_grad)

    def points(self, points, with_grad=False):
        """Values at design points; gradients with respect to continuous coordinates."""
        value, grad = self.features(sp.point_features(self.space, points), with_grad)
        if with_grad:
            cols = self.space.continuous_columns
            grad = grad[:, cols] * self.space.feature_scale[cols]
        return value, grad

    def __call__(self, x, z, with_grad=False):
        """alpha(x, z_i) for one continuous part x and a batch of discrete parts z."""
        return self.points(sp.combine(self.space, x, z), with_grad)

    def evaluate(self, point):
        return float(self.points(point)[0][0])


def evaluate(spec, space, point, with_grad_x=False):
    af = AcquisitionFunction(spec, space)
    value, grad = af.points(point, with_grad_x)
    if with_grad_x:
        return float(value[0]), grad[0]
    return float(value[0]), None
