"""
Mixed search spaces and the vector layouts every other module builds on.

A design point is a 1-d float array with one entry per parameter: continuous
values in their original units, discrete values as integral indices
0..C-1. A relaxed point follows the relaxation layout (one column per
continuous, binary and ordinal parameter, C columns per categorical). The
models and optimizers work on "features", the relaxed layout mapped affinely
into the unit box.
"""
import functools
import itertools
import math
import os
import warnings

import attr
import numpy as np
import singer
from scipy.stats import qmc
from singer import Transformer
from singer import utils
from singer.transform import SchemaMismatch

LOGGER = singer.get_logger()

CONTINUOUS = 'continuous'
BINARY = 'binary'
ORDINAL = 'ordinal'
CATEGORICAL = 'categorical'
KINDS = (CONTINUOUS, BINARY, ORDINAL, CATEGORICAL)

ENUMERATION_CAP = 4096


class InvalidParameter(ValueError):
    pass

class LayoutMismatch(Exception):
    pass

class SpaceTooLarge(Exception):
    pass

class OutOfDomain(Exception):
    def __init__(self, index, value):
        super().__init__("Coordinate {} has out-of-domain value {}".format(index, value))
        self.index = index
        self.value = value


def get_abs_path(path):
    return os.path.join(os.path.dirname(os.path.realpath(__file__)), path)

def load_schema(name):
    return utils.load_json(get_abs_path('schemas/{}.json'.format(name)))


@attr.s(frozen=True)
class ParameterDescriptor(object):
    name = attr.ib()
    kind = attr.ib(validator=attr.validators.in_(KINDS))
    bounds = attr.ib(default=None)
    cardinality = attr.ib(default=None)

    def __attrs_post_init__(self):
        if self.kind == CONTINUOUS:
            if self.bounds is None or len(self.bounds) != 2 or not self.bounds[0] < self.bounds[1]:
                raise InvalidParameter("{}: continuous parameters need lower < upper, got {}"
                                       .format(self.name, self.bounds))
            object.__setattr__(self, 'bounds', (float(self.bounds[0]), float(self.bounds[1])))
            object.__setattr__(self, 'cardinality', None)
        elif self.kind == BINARY:
            if self.cardinality not in (None, 2):
                raise InvalidParameter("{}: binary parameters have cardinality 2".format(self.name))
            object.__setattr__(self, 'cardinality', 2)
            object.__setattr__(self, 'bounds', None)
        else:
            if self.cardinality is None or int(self.cardinality) != self.cardinality \
               or self.cardinality < 2:
                raise InvalidParameter("{}: {} parameters need an integer cardinality >= 2, got {}"
                                       .format(self.name, self.kind, self.cardinality))
            object.__setattr__(self, 'cardinality', int(self.cardinality))
            object.__setattr__(self, 'bounds', None)

    @property
    def is_discrete(self):
        return self.kind != CONTINUOUS

    @property
    def width(self):
        """Number of relaxed columns the parameter occupies."""
        return self.cardinality if self.kind == CATEGORICAL else 1


def continuous(name, lower, upper):
    return ParameterDescriptor(name, CONTINUOUS, bounds=(lower, upper))

def binary(name):
    return ParameterDescriptor(name, BINARY)

def ordinal(name, cardinality):
    return ParameterDescriptor(name, ORDINAL, cardinality=cardinality)

def categorical(name, cardinality):
    return ParameterDescriptor(name, CATEGORICAL, cardinality=cardinality)


@attr.s(frozen=True)
class DiscreteBlock(object):
    """One discrete parameter's slot inside the discrete-relaxed (theta) layout."""
    param = attr.ib()
    kind = attr.ib()
    cardinality = attr.ib()
    columns = attr.ib()


@attr.s(frozen=True)
class Box(object):
    """Axis-aligned bounds in feature coordinates."""
    lower = attr.ib(converter=lambda v: np.asarray(v, dtype=float), eq=False)
    upper = attr.ib(converter=lambda v: np.asarray(v, dtype=float), eq=False)


@attr.s(frozen=True)
class SearchSpace(object):
    parameters = attr.ib(converter=tuple)

    def __attrs_post_init__(self):
        if not self.parameters:
            raise InvalidParameter("A search space needs at least one parameter")
        names = [p.name for p in self.parameters]
        if len(set(names)) != len(names):
            raise InvalidParameter("Parameter names must be unique: {}".format(names))

    def __len__(self):
        return len(self.parameters)

    @functools.cached_property
    def continuous_params(self):
        return tuple(i for i, p in enumerate(self.parameters) if not p.is_discrete)

    @functools.cached_property
    def discrete_params(self):
        return tuple(i for i, p in enumerate(self.parameters) if p.is_discrete)

    @functools.cached_property
    def relaxed_slices(self):
        slices, start = [], 0
        for p in self.parameters:
            slices.append(slice(start, start + p.width))
            start += p.width
        return tuple(slices)

    @functools.cached_property
    def effective_dim(self):
        return sum(p.width for p in self.parameters)

    @functools.cached_property
    def continuous_columns(self):
        return np.array([self.relaxed_slices[i].start for i in self.continuous_params], dtype=int)

    @functools.cached_property
    def discrete_columns(self):
        cols = [np.arange(self.relaxed_slices[i].start, self.relaxed_slices[i].stop)
                for i in self.discrete_params]
        return np.concatenate(cols).astype(int) if cols else np.zeros(0, dtype=int)

    @functools.cached_property
    def discrete_blocks(self):
        blocks, start = [], 0
        for i in self.discrete_params:
            p = self.parameters[i]
            blocks.append(DiscreteBlock(i, p.kind, p.cardinality,
                                        slice(start, start + p.width)))
            start += p.width
        return tuple(blocks)

    @functools.cached_property
    def cardinalities(self):
        return np.array([self.parameters[i].cardinality for i in self.discrete_params], dtype=int)

    @functools.cached_property
    def lower(self):
        return np.array([self.parameters[i].bounds[0] for i in self.continuous_params])

    @functools.cached_property
    def upper(self):
        return np.array([self.parameters[i].bounds[1] for i in self.continuous_params])

    @property
    def n_continuous(self):
        return len(self.continuous_params)

    @property
    def n_discrete(self):
        return len(self.discrete_params)

    @functools.cached_property
    def n_configurations(self):
        return math.prod(int(c) for c in self.cardinalities)

    @functools.cached_property
    def feature_scale(self):
        scale = np.ones(self.effective_dim)
        for p, sl in zip(self.parameters, self.relaxed_slices):
            if p.kind == CONTINUOUS:
                scale[sl] = 1.0 / (p.bounds[1] - p.bounds[0])
            elif p.kind == ORDINAL:
                scale[sl] = 1.0 / (p.cardinality - 1)
        return scale

    @functools.cached_property
    def feature_offset(self):
        offset = np.zeros(self.effective_dim)
        for p, sl in zip(self.parameters, self.relaxed_slices):
            if p.kind == CONTINUOUS:
                offset[sl] = -p.bounds[0] / (p.bounds[1] - p.bounds[0])
        return offset

    def unit_box(self):
        return Box(np.zeros(self.effective_dim), np.ones(self.effective_dim))


def effective_dim(space):
    return space.effective_dim


def _as_batch(values, width, what):
    arr = np.asarray(values, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise LayoutMismatch("{} has shape {}, expected (..., {})".format(what, arr.shape, width))
    return arr, single


def _validate_batch(space, points):
    for i, p in enumerate(space.parameters):
        col = points[:, i]
        if p.kind == CONTINUOUS:
            bad = ~np.isfinite(col) | (col < p.bounds[0]) | (col > p.bounds[1])
        else:
            bad = (col != np.round(col)) | (col < 0) | (col > p.cardinality - 1)
        if bad.any():
            raise OutOfDomain(i, col[np.argmax(bad)])


def validate(space, point):
    points, _ = _as_batch(point, len(space), "Design point")
    _validate_batch(space, points)


def discretize(space, relaxed):
    r, single = _as_batch(relaxed, space.effective_dim, "Relaxed point")
    out = np.empty((r.shape[0], len(space)))
    for i, (p, sl) in enumerate(zip(space.parameters, space.relaxed_slices)):
        block = r[:, sl]
        if p.kind == CONTINUOUS:
            out[:, i] = np.clip(block[:, 0], p.bounds[0], p.bounds[1])
        elif p.kind == CATEGORICAL:
            out[:, i] = np.argmax(block, axis=1)
        else:
            # round half up; the open upper edge C - 0.5 clamps to C - 1
            out[:, i] = np.clip(np.floor(block[:, 0] + 0.5), 0, p.cardinality - 1)
    return out[0] if single else out


def one_hot_encode(space, point):
    points, single = _as_batch(point, len(space), "Design point")
    _validate_batch(space, points)
    out = np.zeros((points.shape[0], space.effective_dim))
    for i, (p, sl) in enumerate(zip(space.parameters, space.relaxed_slices)):
        if p.kind == CATEGORICAL:
            rows = np.arange(points.shape[0])
            out[rows, sl.start + points[:, i].astype(int)] = 1.0
        else:
            out[:, sl.start] = points[:, i]
    return out[0] if single else out


def to_features(space, relaxed):
    return np.asarray(relaxed, dtype=float) * space.feature_scale + space.feature_offset

def from_features(space, features):
    return (np.asarray(features, dtype=float) - space.feature_offset) / space.feature_scale

def point_features(space, points):
    return to_features(space, one_hot_encode(space, points))

def round_features(space, features, box=None):
    """Snap feature vectors to the features of their discretized design."""
    points = discretize(space, from_features(space, features))
    if box is not None:
        points = clip_to_box(space, points, box)
    return point_features(space, points)


def split(space, points):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return points[:, list(space.continuous_params)], points[:, list(space.discrete_params)]

def combine(space, x, z):
    z = np.atleast_2d(np.asarray(z, dtype=float))
    x = np.asarray(x, dtype=float)
    n = max(z.shape[0], x.shape[0] if x.ndim == 2 else 1)
    out = np.empty((n, len(space)))
    out[:, list(space.continuous_params)] = np.broadcast_to(x, (n, space.n_continuous))
    out[:, list(space.discrete_params)] = np.broadcast_to(z, (n, space.n_discrete))
    return out


def discrete_ranges(space, box=None):
    """Inclusive index range per discrete parameter; boxes only narrow ordinals."""
    ranges = []
    for block in space.discrete_blocks:
        lo, hi = 0, block.cardinality - 1
        if box is not None and block.kind == ORDINAL:
            col = space.relaxed_slices[block.param].start
            scale = block.cardinality - 1
            lo = max(lo, int(math.ceil(box.lower[col] * scale - 1e-9)))
            hi = min(hi, int(math.floor(box.upper[col] * scale + 1e-9)))
            hi = max(hi, lo)
        ranges.append((lo, hi))
    return ranges


def clip_to_box(space, points, box):
    points, single = _as_batch(points, len(space), "Design point")
    points = points.copy()
    cols = space.continuous_columns
    lower = np.maximum(from_features(space, box.lower)[cols], space.lower)
    upper = np.minimum(from_features(space, box.upper)[cols], space.upper)
    idx = list(space.continuous_params)
    points[:, idx] = np.clip(points[:, idx], lower, upper)
    for block, (lo, hi) in zip(space.discrete_blocks, discrete_ranges(space, box)):
        points[:, block.param] = np.clip(points[:, block.param], lo, hi)
    return points[0] if single else points


def sobol_uniforms(dim, n, seed):
    if dim == 0:
        return np.zeros((n, 0))
    sampler = qmc.Sobol(d=dim, scramble=True, seed=seed)
    with warnings.catch_warnings():
        # non power-of-two draws are fine for initialization
        warnings.simplefilter('ignore')
        return sampler.random(n)


def sample_box(space, n, seed, box=None):
    if n < 1:
        raise ValueError("Need at least one point, got {}".format(n))
    box = box or space.unit_box()
    u = sobol_uniforms(space.effective_dim, n, seed)
    relaxed = np.empty_like(u)
    ranges = dict(zip((b.param for b in space.discrete_blocks), discrete_ranges(space, box)))
    for i, (p, sl) in enumerate(zip(space.parameters, space.relaxed_slices)):
        if p.kind == CONTINUOUS:
            lo = box.lower[sl.start] * (p.bounds[1] - p.bounds[0]) + p.bounds[0]
            hi = box.upper[sl.start] * (p.bounds[1] - p.bounds[0]) + p.bounds[0]
            relaxed[:, sl] = lo + u[:, sl] * (hi - lo)
        elif p.kind == ORDINAL:
            lo, hi = ranges[i]
            relaxed[:, sl] = lo - 0.5 + u[:, sl] * (hi - lo + 1)
        else:
            relaxed[:, sl] = u[:, sl]
    return discretize(space, relaxed)


def sobol_init(space, n, seed):
    return sample_box(space, n, seed)


def enumerate_configurations(space, cap=ENUMERATION_CAP, box=None):
    ranges = discrete_ranges(space, box)
    total = math.prod(hi - lo + 1 for lo, hi in ranges)
    if total > cap:
        raise SpaceTooLarge("{} discrete configurations exceed the enumeration cap of {}"
                            .format(total, cap))
    if not ranges:
        return np.zeros((1, 0))
    grid = itertools.product(*(range(lo, hi + 1) for lo, hi in ranges))
    return np.array(list(grid), dtype=float)


def space_to_json(space):
    doc = []
    for p in space.parameters:
        entry = {'name': p.name, 'kind': p.kind}
        if p.kind == CONTINUOUS:
            entry['bounds'] = list(p.bounds)
        elif p.kind != BINARY:
            entry['cardinality'] = p.cardinality
        doc.append(entry)
    return doc


def space_from_json(doc):
    try:
        with Transformer() as transformer:
            doc = transformer.transform(doc, load_schema('search_space'))
    except SchemaMismatch as exc:
        raise InvalidParameter("Search space document does not match its schema: {}".format(exc))
    return SearchSpace([ParameterDescriptor(entry.get('name'), entry.get('kind'),
                                            bounds=entry.get('bounds'),
                                            cardinality=entry.get('cardinality'))
                        for entry in doc])
