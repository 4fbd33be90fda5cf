"""
Probabilistic reparameterization of the discrete parameters.

Each discrete parameter gets an independent distribution p(z|theta):
Bernoulli(theta) for binaries, floor(theta) + Bernoulli(theta - floor(theta))
for ordinals and Categorical(theta) for categoricals. Unconstrained raw
parameters phi map to theta through temperature-tau sigmoid/softmax
transforms so every probability stays positive. theta and phi share the
"discrete-relaxed" layout of space.discrete_blocks: one column per binary
and ordinal, C columns per categorical.

The probabilistic objective E_{Z~p(Z|theta)}[alpha(x, Z)] is available
exactly by enumeration and as Monte-Carlo estimates whose theta-gradient is
the score-function estimator with a scalar baseline.
"""
import itertools

import attr
import numpy as np
import singer
from scipy.special import expit, logit, softmax

from mixedbo import space as sp

LOGGER = singer.get_logger()

CHUNK_SIZE = 32
BASELINE_DECAY = 0.7
DEFAULT_TAU = 0.1
SIMPLEX_TOLERANCE = 1e-9
CELL_MARGIN = 1e-9


class ZeroProbability(Exception):
    pass


def _float_vector(values):
    return np.atleast_1d(np.asarray(values, dtype=float)).copy()


def _check_layout(space, values):
    width = int(sum(b.columns.stop - b.columns.start for b in space.discrete_blocks))
    if values.shape != (width,):
        raise sp.LayoutMismatch("Expected {} discrete-relaxed columns, got shape {}"
                                .format(width, values.shape))


@attr.s(frozen=True)
class RawParams(object):
    space = attr.ib()
    values = attr.ib(converter=_float_vector, eq=False)
    tau = attr.ib(default=DEFAULT_TAU)

    def __attrs_post_init__(self):
        _check_layout(self.space, self.values)
        if not self.tau > 0:
            raise ValueError("tau must be positive, got {}".format(self.tau))
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Raw parameters must be finite")


@attr.s(frozen=True)
class DistributionParams(object):
    space = attr.ib()
    values = attr.ib(converter=_float_vector, eq=False)

    def __attrs_post_init__(self):
        _check_layout(self.space, self.values)
        for block in self.space.discrete_blocks:
            theta = self.values[block.columns]
            if block.kind == sp.CATEGORICAL:
                if np.any(theta < 0) or abs(theta.sum() - 1.0) > SIMPLEX_TOLERANCE:
                    raise ValueError("Categorical theta must lie on the simplex: {}".format(theta))
            else:
                upper = 1 if block.kind == sp.BINARY else block.cardinality - 1
                if not 0 <= theta[0] <= upper:
                    raise ValueError("theta {} outside [0, {}]".format(theta[0], upper))


@attr.s(frozen=True)
class BaselineState(object):
    value = attr.ib(default=0.0)
    decay = attr.ib(default=BASELINE_DECAY)
    initialized = attr.ib(default=False)

    @decay.validator
    def _check_decay(self, attribute, value):
        if not 0 < value < 1:
            raise ValueError("Baseline decay must lie in (0, 1), got {}".format(value))


@attr.s(frozen=True)
class BaseSampleSet(object):
    uniforms = attr.ib(eq=False)
    seed = attr.ib()


def draw_base_samples(n, d_z, seed):
    return BaseSampleSet(sp.sobol_uniforms(d_z, n, seed), seed)


def raw_bounds(space, box=None):
    """Box for phi: [0, 1] for binary/categorical, the (box-narrowed) index range for ordinals."""
    width = sum(b.columns.stop - b.columns.start for b in space.discrete_blocks)
    lower, upper = np.zeros(width), np.ones(width)
    for block, (lo, hi) in zip(space.discrete_blocks, sp.discrete_ranges(space, box)):
        if block.kind == sp.ORDINAL:
            lower[block.columns], upper[block.columns] = lo, hi
    return lower, upper


def _ordinal_floor(phi, cardinality):
    # the last cell is [C-2, C-1] so theta never leaves [0, C-1]
    return np.minimum(np.floor(phi), cardinality - 2)


def transform(raw):
    """theta = g(phi) together with the Jacobian d theta / d phi."""
    space, phi, tau = raw.space, raw.values, raw.tau
    theta = np.empty_like(phi)
    jac = np.zeros((phi.size, phi.size))
    for block in space.discrete_blocks:
        cols = block.columns
        if block.kind == sp.CATEGORICAL:
            t = softmax((phi[cols] - 0.5) / tau)
            theta[cols] = t
            jac[cols, cols] = (np.diag(t) - np.outer(t, t)) / tau
            continue
        value = phi[cols.start]
        base = 0.0
        if block.kind == sp.ORDINAL:
            value = np.clip(value, 0, block.cardinality - 1)
            base = _ordinal_floor(value, block.cardinality)
        s = expit((value - base - 0.5) / tau)
        theta[cols.start] = base + s
        jac[cols.start, cols.start] = s * (1.0 - s) / tau
    return DistributionParams(space, theta), jac


def _cell_offset(offset):
    # phi stays in its [0, 1] box or ordinal cell; larger tau caps the reachable mass
    return float(np.clip(offset, -0.5, 0.5 - CELL_MARGIN))


def concentrated_raw(space, z0, mass=0.75, tau=DEFAULT_TAU):
    """phi whose transform puts `mass` on z0 in every component, or as much as tau allows."""
    z0 = np.asarray(z0, dtype=int).ravel()
    width = sum(b.columns.stop - b.columns.start for b in space.discrete_blocks)
    phi = np.empty(width)
    for block, z in zip(space.discrete_blocks, z0):
        cols = block.columns
        if block.kind == sp.BINARY:
            phi[cols.start] = 0.5 + _cell_offset(tau * logit(mass if z == 1 else 1.0 - mass))
        elif block.kind == sp.ORDINAL:
            if z < block.cardinality - 1:
                phi[cols.start] = z + 0.5 + _cell_offset(tau * logit(1.0 - mass))
            else:
                phi[cols.start] = z - 0.5 + _cell_offset(tau * logit(mass))
        else:
            probs = np.full(block.cardinality, (1.0 - mass) / (block.cardinality - 1))
            probs[z] = mass
            logs = np.log(probs)
            offsets = tau * (logs - logs.mean())
            spread = np.max(np.abs(offsets))
            if spread > 0.5:
                offsets *= 0.5 / spread
            phi[cols] = 0.5 + offsets
    return RawParams(space, phi, tau)


def _as_configs(space, z):
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != space.n_discrete:
        raise sp.LayoutMismatch("Expected {} discrete values, got shape {}"
                                .format(space.n_discrete, z.shape))
    return z, single


def _probabilities(theta, z):
    """Joint p(z|theta) per row and the score vectors; rows with p = 0 get a zero score."""
    space = theta.space
    n = z.shape[0]
    probs = np.ones(n)
    scores = np.zeros((n, theta.values.size))
    with np.errstate(divide='ignore', invalid='ignore'):
        for b, block in enumerate(space.discrete_blocks):
            cols = block.columns
            zb = z[:, b].astype(int)
            if block.kind == sp.CATEGORICAL:
                t = theta.values[cols]
                p = t[zb]
                score = -np.ones((n, block.cardinality))
                score[np.arange(n), zb] += 1.0 / p
            else:
                t = theta.values[cols.start]
                base = np.floor(t) if block.kind == sp.ORDINAL else 0.0
                frac = t - base
                up, down = zb == base + 1, zb == base
                p = np.where(up, frac, np.where(down, 1.0 - frac, 0.0))
                score = np.where(up, 1.0 / frac, np.where(down, -1.0 / (1.0 - frac), 0.0))[:, None]
            probs *= p
            scores[:, cols] = score
    zero = probs <= 0
    scores[zero] = 0.0
    return probs, scores


def log_prob(theta, z):
    """log p(z|theta) and its score; raises ZeroProbability for impossible designs."""
    z, single = _as_configs(theta.space, z)
    probs, scores = _probabilities(theta, z)
    if np.any(probs <= 0):
        raise ZeroProbability("p(z|theta) = 0 for z = {}".format(z[np.argmax(probs <= 0)]))
    logp = np.log(probs)
    if single:
        return float(logp[0]), scores[0]
    return logp, scores


def _inverse_cdf(theta, uniforms):
    space = theta.space
    out = np.empty((uniforms.shape[0], space.n_discrete))
    for b, block in enumerate(space.discrete_blocks):
        u = uniforms[:, b]
        cols = block.columns
        if block.kind == sp.CATEGORICAL:
            cumulative = np.cumsum(theta.values[cols])
            index = np.sum(u[:, None] >= cumulative[None, :], axis=1)
            out[:, b] = np.minimum(index, block.cardinality - 1)
        else:
            t = theta.values[cols.start]
            base = np.floor(t) if block.kind == sp.ORDINAL else 0.0
            out[:, b] = base + (u < t - base)
    return out


def sample(theta, n, rng):
    if n < 1:
        raise ValueError("Need at least one sample, got {}".format(n))
    return _inverse_cdf(theta, rng.random((n, theta.space.n_discrete)))


def saa_sample(theta, base):
    if base.uniforms.ndim != 2 or base.uniforms.shape[1] != theta.space.n_discrete:
        raise sp.LayoutMismatch("Base samples have shape {}, expected (N, {})"
                                .format(base.uniforms.shape, theta.space.n_discrete))
    return _inverse_cdf(theta, base.uniforms)


def mode(theta):
    """Most probable discrete configuration."""
    space = theta.space
    out = np.empty(space.n_discrete)
    for b, block in enumerate(space.discrete_blocks):
        cols = block.columns
        if block.kind == sp.CATEGORICAL:
            out[b] = np.argmax(theta.values[cols])
        else:
            t = theta.values[cols.start]
            base = np.floor(t) if block.kind == sp.ORDINAL else 0.0
            out[b] = base + (t - base > 0.5)
    return out


def _support(theta):
    choices = []
    for block in theta.space.discrete_blocks:
        if block.kind == sp.CATEGORICAL:
            choices.append(range(block.cardinality))
        elif block.kind == sp.BINARY:
            choices.append((0, 1))
        else:
            base = int(np.floor(theta.values[block.columns.start]))
            choices.append(tuple(v for v in (base, base + 1) if v < block.cardinality))
    if not choices:
        return np.zeros((1, 0))
    return np.array(list(itertools.product(*choices)), dtype=float)


def _resolve(theta):
    if isinstance(theta, RawParams):
        return transform(theta)
    return theta, None


def _chain(jac, grad_theta):
    return grad_theta if jac is None else jac.T @ grad_theta


def evaluate_chunked(af, x, z, with_grad=False):
    values, grads = [], []
    for start in range(0, z.shape[0], CHUNK_SIZE):
        v, g = af(x, z[start:start + CHUNK_SIZE], with_grad)
        values.append(v)
        grads.append(g)
    values = np.concatenate(values)
    return values, (np.concatenate(grads) if with_grad else None)


def analytic_po(af, space, x, theta, cap=sp.ENUMERATION_CAP):
    """
    Exact probabilistic objective by enumeration, with gradients wrt theta
    (or phi when given RawParams) and wrt the continuous part x.
    """
    if space.n_configurations > cap:
        raise sp.SpaceTooLarge("{} discrete configurations exceed the enumeration cap of {}"
                               .format(space.n_configurations, cap))
    theta, jac = _resolve(theta)
    configs = _support(theta)
    probs, scores = _probabilities(theta, configs)
    keep = probs > 0
    configs, probs, scores = configs[keep], probs[keep], scores[keep]
    values, grads = evaluate_chunked(af, x, configs, with_grad=True)
    value = float(probs @ values)
    grad_theta = (probs * values) @ scores
    grad_x = probs @ grads
    return value, _chain(jac, grad_theta), grad_x


def mc_po(af, space, x, theta, samples):
    samples, _ = _as_configs(space, samples)
    values, _ = evaluate_chunked(af, x, samples)
    return float(np.mean(values))


def mc_estimates(af, space, x, theta, samples, baseline_value=0.0):
    """
    One pass over a batch: (PO estimate, theta- or phi-gradient, x-gradient).
    The estimate is the batch mean of alpha; the baseline only enters the
    theta-gradient, and None uses that batch mean itself.
    """
    theta, jac = _resolve(theta)
    samples, _ = _as_configs(space, samples)
    values, grads = evaluate_chunked(af, x, samples, with_grad=True)
    _, scores = _probabilities(theta, samples)
    batch_mean = float(np.mean(values))
    if baseline_value is None:
        baseline_value = batch_mean
    grad_theta = np.mean((values - baseline_value)[:, None] * scores, axis=0)
    grad_x = np.mean(grads, axis=0)
    return batch_mean, _chain(jac, grad_theta), grad_x


def mc_po_grad(af, space, x, theta, samples, baseline):
    baseline_value = baseline.value if baseline.initialized else 0.0
    _, grad_theta, grad_x = mc_estimates(af, space, x, theta, samples, baseline_value)
    return grad_theta, grad_x


def update_baseline(state, batch_mean_af):
    if not state.initialized:
        return attr.evolve(state, value=float(batch_mean_af), initialized=True)
    value = state.decay * state.value + (1.0 - state.decay) * float(batch_mean_af)
    return attr.evolve(state, value=value)


def mape(af, space, xs, thetas, n_samples, rng):
    """
    Mean absolute percentage error of N-sample MC estimates against the
    exact objective, normalized by the largest exact value.
    """
    exact, estimates = [], []
    for x, theta in zip(xs, thetas):
        exact.append(analytic_po(af, space, x, theta)[0])
        estimates.append(mc_po(af, space, x, theta, sample(theta, n_samples, rng)))
    exact, estimates = np.array(exact), np.array(estimates)
    return 100.0 * float(np.mean(np.abs(exact - estimates))) / float(np.max(np.abs(exact)))
