"""
Exact Gaussian-process regression over mixed inputs.

Kernels operate on feature vectors (see space.to_features). The default
structure multiplies an isotropic Matern-5/2 over the binary columns with an
ARD Matern-5/2 over ordinal and continuous columns, and mixes that with an
overlap kernel over categoricals as k_cat * k_ord + k_cat + k_ord. The
"matern_onehot" structure is a single ARD Matern-5/2 over every feature
column, categorical one-hot columns included, and is what continuous
relaxation needs.
"""
import math

import attr
import numpy as np
import scipy.linalg
import singer
from scipy.optimize import minimize

from mixedbo import space as sp

LOGGER = singer.get_logger()

MIXED = 'mixed_sum_product'
ONEHOT = 'matern_onehot'
STRUCTURES = (MIXED, ONEHOT)

SQRT5 = math.sqrt(5.0)
LOG_2PI = math.log(2.0 * math.pi)

BOUNDS = {
    'lengthscale': (0.005, 10.0),
    'cat_weight': (0.01, 20.0),
    'outputscale': (0.01, 100.0),
    'noise': (1e-6, 1.0),
    'mean': (-10.0, 10.0),
}

JITTER_FACTORS = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
VARIANCE_FLOOR = 1e-12
FIT_RESTARTS = 5
FIT_ITERATIONS = 100
DEFAULT_NOISE = 1e-2
# returned to L-BFGS-B when a trial point cannot be factorized
FAILED_OBJECTIVE = 1e25


class DimensionMismatch(Exception):
    pass

class CholeskyFailure(Exception):
    pass

class FitFailure(Exception):
    pass


@attr.s(frozen=True)
class KernelLayout(object):
    structure = attr.ib(validator=attr.validators.in_(STRUCTURES))
    dim = attr.ib()
    binary_cols = attr.ib(converter=tuple)
    ard_cols = attr.ib(converter=tuple)
    cat_blocks = attr.ib(converter=tuple)

    @property
    def has_ordinal_term(self):
        return bool(self.binary_cols or self.ard_cols)

    @property
    def has_cat_term(self):
        return bool(self.cat_blocks)

    @property
    def n_outputscales(self):
        return 3 if self.has_cat_term and self.has_ordinal_term else 1


def make_layout(space, structure=MIXED):
    if structure == ONEHOT:
        return KernelLayout(ONEHOT, space.effective_dim, (), range(space.effective_dim), ())
    binary_cols, ard_cols, cat_blocks = [], [], []
    for p, sl in zip(space.parameters, space.relaxed_slices):
        if p.kind == sp.BINARY:
            binary_cols.append(sl.start)
        elif p.kind == sp.CATEGORICAL:
            cat_blocks.append((sl.start, sl.stop))
        else:
            ard_cols.append(sl.start)
    return KernelLayout(MIXED, space.effective_dim, binary_cols, ard_cols, cat_blocks)


def _float_array(values):
    return np.atleast_1d(np.asarray(values, dtype=float))


@attr.s(frozen=True)
class KernelConfig(object):
    layout = attr.ib()
    lengthscales = attr.ib(converter=_float_array, eq=False)
    outputscales = attr.ib(converter=_float_array, eq=False)
    cat_weights = attr.ib(converter=_float_array, eq=False)
    binary_lengthscale = attr.ib(default=None)

    def __attrs_post_init__(self):
        if len(self.lengthscales) != len(self.layout.ard_cols):
            raise DimensionMismatch("Expected {} lengthscales, got {}"
                                    .format(len(self.layout.ard_cols), len(self.lengthscales)))
        if len(self.cat_weights) != len(self.layout.cat_blocks):
            raise DimensionMismatch("Expected {} categorical weights, got {}"
                                    .format(len(self.layout.cat_blocks), len(self.cat_weights)))
        if len(self.outputscales) != self.layout.n_outputscales:
            raise DimensionMismatch("Expected {} outputscales, got {}"
                                    .format(self.layout.n_outputscales, len(self.outputscales)))
        if self.layout.binary_cols and self.binary_lengthscale is None:
            raise DimensionMismatch("Binary columns need a binary lengthscale")
        positive = [self.lengthscales, self.outputscales, self.cat_weights]
        if self.layout.binary_cols:
            positive.append([self.binary_lengthscale])
        if any(np.any(np.asarray(v) <= 0) for v in positive):
            raise ValueError("Kernel hyperparameters must be positive")

    @property
    def structure(self):
        return self.layout.structure

    @property
    def n_params(self):
        return (int(bool(self.layout.binary_cols)) + len(self.lengthscales)
                + len(self.cat_weights) + len(self.outputscales))

    def to_vector(self):
        """Log-hyperparameters: [binary lengthscale], lengthscales, cat weights, outputscales."""
        head = [self.binary_lengthscale] if self.layout.binary_cols else []
        return np.log(np.concatenate([head, self.lengthscales, self.cat_weights,
                                      self.outputscales]))

    def with_vector(self, log_values):
        values = np.exp(np.asarray(log_values, dtype=float))
        pos = 0
        binary_lengthscale = None
        if self.layout.binary_cols:
            binary_lengthscale = float(values[0])
            pos = 1
        n_ls, n_cat = len(self.lengthscales), len(self.cat_weights)
        return KernelConfig(self.layout,
                            values[pos:pos + n_ls],
                            values[pos + n_ls + n_cat:],
                            values[pos + n_ls:pos + n_ls + n_cat],
                            binary_lengthscale)

    def vector_bounds(self):
        kinds = (['lengthscale'] * (int(bool(self.layout.binary_cols)) + len(self.lengthscales))
                 + ['cat_weight'] * len(self.cat_weights)
                 + ['outputscale'] * len(self.outputscales))
        return [tuple(math.log(b) for b in BOUNDS[k]) for k in kinds]

    def prior_variance(self):
        return float(np.sum(self.outputscales))


def default_kernel(space, structure=MIXED):
    layout = make_layout(space, structure)
    return KernelConfig(layout,
                        np.ones(len(layout.ard_cols)),
                        np.ones(layout.n_outputscales),
                        np.ones(len(layout.cat_blocks)),
                        1.0 if layout.binary_cols else None)


def _matern52(r):
    return (1.0 + SQRT5 * r + 5.0 / 3.0 * r ** 2) * np.exp(-SQRT5 * r)

def _matern52_slope(r):
    # -(dk/dr) / r, finite at r = 0
    return 5.0 / 3.0 * (1.0 + SQRT5 * r) * np.exp(-SQRT5 * r)


def _evaluate(cfg, A, B, param_grads=False, input_grads=False):
    """Kernel matrix plus optional d/dlog-hyperparameter and d/dA gradients."""
    layout = cfg.layout
    n, m, dim = A.shape[0], B.shape[0], layout.dim
    ones = np.ones((n, m))

    ord_value, ord_pgrads = ones, []
    ord_igrad = np.zeros((n, m, dim)) if input_grads else None
    if layout.binary_cols:
        cols = list(layout.binary_cols)
        diff = A[:, None, cols] - B[None, :, cols]
        ls = cfg.binary_lengthscale
        r = np.sqrt(np.sum(diff ** 2, axis=2)) / ls
        value, slope = _matern52(r), _matern52_slope(r)
        ord_value = value
        if param_grads:
            ord_pgrads.append(slope * r ** 2)
        if input_grads:
            ord_igrad[:, :, cols] = -slope[:, :, None] * diff / ls ** 2
    if layout.ard_cols:
        cols = list(layout.ard_cols)
        ls = cfg.lengthscales
        diff = A[:, None, cols] - B[None, :, cols]
        scaled = diff ** 2 / ls ** 2
        r = np.sqrt(np.sum(scaled, axis=2))
        value, slope = _matern52(r), _matern52_slope(r)
        if param_grads:
            ord_pgrads = [g * value for g in ord_pgrads]
            ord_pgrads.extend(ord_value * slope * scaled[:, :, j] for j in range(len(cols)))
        if input_grads:
            ord_igrad *= value[:, :, None]
            ord_igrad[:, :, cols] = (ord_value * -slope)[:, :, None] * diff / ls ** 2
        ord_value = ord_value * value

    cat_value, cat_pgrads = ones, []
    cat_igrad = np.zeros((n, m, dim)) if input_grads else None
    if layout.cat_blocks:
        exponent = np.zeros((n, m))
        overlaps = []
        for (start, stop), w in zip(layout.cat_blocks, cfg.cat_weights):
            overlap = A[:, start:stop] @ B[:, start:stop].T
            overlaps.append(overlap)
            exponent += w * (overlap - 1.0)
        cat_value = np.exp(exponent)
        if param_grads:
            cat_pgrads = [cat_value * w * (s - 1.0) for s, w in zip(overlaps, cfg.cat_weights)]
        if input_grads:
            for (start, stop), w in zip(layout.cat_blocks, cfg.cat_weights):
                cat_igrad[:, :, start:stop] = (cat_value * w)[:, :, None] * B[None, :, start:stop]

    s = cfg.outputscales
    if layout.has_cat_term and layout.has_ordinal_term:
        K = s[0] * cat_value * ord_value + s[1] * cat_value + s[2] * ord_value
        ord_weight = s[0] * cat_value + s[2]
        cat_weight = s[0] * ord_value + s[1]
        scale_terms = [s[0] * cat_value * ord_value, s[1] * cat_value, s[2] * ord_value]
    elif layout.has_cat_term:
        K = s[0] * cat_value
        ord_weight, cat_weight = 0.0, s[0]
        scale_terms = [K]
    else:
        K = s[0] * ord_value
        ord_weight, cat_weight = s[0], 0.0
        scale_terms = [K]

    pgrads = None
    if param_grads:
        pgrads = ([ord_weight * g for g in ord_pgrads]
                  + [cat_weight * g for g in cat_pgrads]
                  + scale_terms)
    igrad = None
    if input_grads:
        igrad = (np.asarray(ord_weight)[..., None] * ord_igrad
                 + np.asarray(cat_weight)[..., None] * cat_igrad)
    return K, pgrads, igrad


def kernel_matrix(cfg, A, B):
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    if A.shape[1] != cfg.layout.dim or B.shape[1] != cfg.layout.dim:
        raise DimensionMismatch("Kernel expects {} feature columns, got {} and {}"
                                .format(cfg.layout.dim, A.shape[1], B.shape[1]))
    return _evaluate(cfg, A, B)[0]


def build_kernel_matrix(cfg, space, A, B):
    try:
        return kernel_matrix(cfg, sp.point_features(space, A), sp.point_features(space, B))
    except sp.LayoutMismatch as exc:
        raise DimensionMismatch(str(exc))


def feature_lengthscales(cfg):
    """Per-feature-column lengthscale; NaN for categorical columns."""
    out = np.full(cfg.layout.dim, np.nan)
    if cfg.layout.binary_cols:
        out[list(cfg.layout.binary_cols)] = cfg.binary_lengthscale
    if cfg.layout.ard_cols:
        out[list(cfg.layout.ard_cols)] = cfg.lengthscales
    return out


def cholesky(K):
    n = K.shape[0]
    base = max(np.trace(K) / n, VARIANCE_FLOOR)
    eye = np.eye(n)
    for factor in JITTER_FACTORS:
        jitter = factor * base
        try:
            L = scipy.linalg.cholesky(K + jitter * eye, lower=True)
        except (np.linalg.LinAlgError, ValueError):
            LOGGER.debug("Cholesky failed with jitter %s", jitter)
            continue
        if factor != JITTER_FACTORS[0]:
            LOGGER.warning("Cholesky needed escalated jitter %s", jitter)
        return L, jitter
    raise CholeskyFailure("Cholesky failed for a {0}x{0} matrix after jitter {1}"
                          .format(n, JITTER_FACTORS[-1] * base))


@attr.s(frozen=True)
class TrainingData(object):
    points = attr.ib(eq=False)
    features = attr.ib(eq=False)
    targets = attr.ib(eq=False)

    @classmethod
    def from_points(cls, space, points, targets):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        targets = np.asarray(targets, dtype=float).ravel()
        if points.shape[0] != targets.shape[0]:
            raise DimensionMismatch("{} points but {} targets"
                                    .format(points.shape[0], targets.shape[0]))
        return cls(points, sp.point_features(space, points), targets)

    def __len__(self):
        return self.targets.shape[0]


def log_marginal_likelihood(cfg, mean, noise, data):
    """
    Exact Gaussian LML and its gradient with respect to
    [cfg.to_vector(), log noise, mean].
    """
    if len(data) < 1:
        raise ValueError("The marginal likelihood needs at least one observation")
    X, y = data.features, data.targets
    n = y.shape[0]
    K, pgrads, _ = _evaluate(cfg, X, X, param_grads=True)
    L, _ = cholesky(K + noise * np.eye(n))
    resid = y - mean
    alpha = scipy.linalg.cho_solve((L, True), resid)
    value = -0.5 * resid @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI

    K_inv = scipy.linalg.cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - K_inv
    grad = [0.5 * np.sum(W * dK) for dK in pgrads]
    grad.append(0.5 * noise * np.trace(W))
    grad.append(np.sum(alpha))
    return float(value), np.array(grad)


@attr.s(frozen=True)
class GPModel(object):
    space = attr.ib()
    kernel = attr.ib()
    mean_constant = attr.ib()
    noise_variance = attr.ib()
    train_points = attr.ib(eq=False)
    train_features = attr.ib(eq=False)
    train_targets = attr.ib(eq=False)
    target_mean = attr.ib()
    target_std = attr.ib()
    cholesky_factor = attr.ib(eq=False)
    alpha = attr.ib(eq=False)
    jitter = attr.ib(default=0.0)
    degenerate = attr.ib(default=False)


@attr.s(frozen=True)
class Posterior(object):
    mean = attr.ib(eq=False)
    variance = attr.ib(eq=False)
    d_mean = attr.ib(default=None, eq=False)
    d_variance = attr.ib(default=None, eq=False)


def build_model(space, kernel, mean_constant, noise_variance, points, targets,
                target_mean=0.0, target_std=1.0, degenerate=False):
    """Condition a GP with fixed hyperparameters on raw targets."""
    data = TrainingData.from_points(space, points, targets)
    standardized = (data.targets - target_mean) / target_std
    K = kernel_matrix(kernel, data.features, data.features)
    L, jitter = cholesky(K + noise_variance * np.eye(len(data)))
    alpha = scipy.linalg.cho_solve((L, True), standardized - mean_constant)
    return GPModel(space, kernel, float(mean_constant), float(noise_variance),
                   data.points, data.features, standardized, float(target_mean),
                   float(target_std), L, alpha, jitter, degenerate)


def _random_start(cfg, rng):
    lows, highs = zip(*cfg.vector_bounds())
    kernel_vec = rng.uniform(lows, highs)
    noise_lo, noise_hi = (math.log(b) for b in BOUNDS['noise'])
    return np.concatenate([kernel_vec, [rng.uniform(noise_lo, noise_hi), 0.0]])


def fit_gp(data, space, seed, structure=MIXED):
    """
    Fit a GP to raw targets by multi-start L-BFGS-B on the log-marginal
    likelihood of the standardized targets.
    """
    if len(data) < 2:
        raise FitFailure("Fitting needs at least 2 observations, got {}".format(len(data)))
    y = data.targets
    target_mean, target_std = float(np.mean(y)), float(np.std(y))
    degenerate = target_std < 1e-12
    if degenerate:
        LOGGER.warning("Targets are constant; fitting with unit target scale")
        target_std = 1.0
    standardized = attr.evolve(data, targets=(y - target_mean) / target_std)

    template = default_kernel(space, structure)
    n_kernel = template.n_params
    bounds = template.vector_bounds() + [tuple(math.log(b) for b in BOUNDS['noise']),
                                         BOUNDS['mean']]
    lows, highs = (np.array(b) for b in zip(*bounds))
    rng = np.random.default_rng(seed)
    starts = [np.clip(np.concatenate([template.to_vector(), [math.log(DEFAULT_NOISE), 0.0]]),
                      lows, highs)]
    starts.extend(_random_start(template, rng) for _ in range(FIT_RESTARTS - 1))

    def objective(vec):
        cfg = template.with_vector(vec[:n_kernel])
        noise = math.exp(vec[n_kernel])
        try:
            value, grad = log_marginal_likelihood(cfg, vec[n_kernel + 1], noise, standardized)
        except CholeskyFailure:
            return FAILED_OBJECTIVE, np.zeros_like(vec)
        return -value, -grad

    best = None
    for index, start in enumerate(starts):
        first_value, _ = objective(start)
        if first_value >= FAILED_OBJECTIVE:
            LOGGER.warning("GP fit restart %s failed at its starting point", index)
            continue
        result = minimize(objective, start, jac=True, method='L-BFGS-B', bounds=bounds,
                          options={'maxiter': FIT_ITERATIONS})
        if result.fun >= FAILED_OBJECTIVE or not np.all(np.isfinite(result.x)):
            continue
        if best is None or result.fun < best.fun:
            best = result
    if best is None:
        raise FitFailure("All {} GP fitting restarts failed".format(len(starts)))

    vec = best.x
    kernel = template.with_vector(vec[:n_kernel])
    LOGGER.debug("Fitted GP: -LML %.4f, noise %.3g", best.fun, math.exp(vec[n_kernel]))
    return build_model(space, kernel, vec[n_kernel + 1], math.exp(vec[n_kernel]),
                       data.points, data.targets, target_mean, target_std, degenerate)


def predict(model, features, with_gradients=False):
    """Posterior in original target units; gradients are with respect to features."""
    F = np.atleast_2d(np.asarray(features, dtype=float))
    if F.shape[1] != model.kernel.layout.dim:
        raise DimensionMismatch("Model expects {} feature columns, got {}"
                                .format(model.kernel.layout.dim, F.shape[1]))
    Kq, _, dK = _evaluate(model.kernel, F, model.train_features, input_grads=with_gradients)
    L = model.cholesky_factor
    mean = model.mean_constant + Kq @ model.alpha
    v = scipy.linalg.solve_triangular(L, Kq.T, lower=True)
    variance = np.maximum(model.kernel.prior_variance() - np.sum(v ** 2, axis=0), VARIANCE_FLOOR)

    scale = model.target_std
    d_mean = d_variance = None
    if with_gradients:
        d_mean = np.einsum('qnd,n->qd', dK, model.alpha) * scale
        w = scipy.linalg.cho_solve((L, True), Kq.T)
        d_variance = -2.0 * np.einsum('qnd,nq->qd', dK, w) * scale ** 2
        floored = variance <= VARIANCE_FLOOR
        d_variance[floored] = 0.0
    return Posterior(mean * scale + model.target_mean, variance * scale ** 2, d_mean, d_variance)


def posterior(model, points, with_gradients=False):
    """Posterior at design points; gradients are with respect to continuous coordinates."""
    space = model.space
    post = predict(model, sp.point_features(space, points), with_gradients)
    if not with_gradients:
        return post
    cols = space.continuous_columns
    factor = space.feature_scale[cols]
    return attr.evolve(post, d_mean=post.d_mean[:, cols] * factor,
                       d_variance=post.d_variance[:, cols] * factor)


def model_to_json(model):
    cfg = model.kernel
    return {
        'structure': cfg.structure,
        'lengthscales': cfg.lengthscales.tolist(),
        'binary_lengthscale': cfg.binary_lengthscale,
        'cat_weights': cfg.cat_weights.tolist(),
        'outputscales': cfg.outputscales.tolist(),
        'mean_constant': model.mean_constant,
        'noise_variance': model.noise_variance,
        'target_mean': model.target_mean,
        'target_std': model.target_std,
        'degenerate': model.degenerate,
        'space': sp.space_to_json(model.space),
        'train_points': model.train_points.tolist(),
        'train_targets': (model.train_targets * model.target_std + model.target_mean).tolist(),
    }


def model_from_json(doc):
    space = sp.space_from_json(doc['space'])
    kernel = KernelConfig(make_layout(space, doc['structure']), doc['lengthscales'],
                          doc['outputscales'], doc['cat_weights'], doc.get('binary_lengthscale'))
    return build_model(space, kernel, doc['mean_constant'], doc['noise_variance'],
                       doc['train_points'], doc['train_targets'], doc['target_mean'],
                       doc['target_std'], doc.get('degenerate', False))
