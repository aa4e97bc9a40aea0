"""Model configuration: arrivals, environment, service, resources, numerics."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np
from scipy.sparse.csgraph import connected_components

from .distributions import DistributionSpec
from .errors import (
    GridError,
    ImproperKernel,
    ModelError,
    ModelIndexError,
    NonGenerator,
    Reducible,
    ValidationError,
)

GENERATOR_TOL = 1e-10
PROB_TOL = 1e-10

Label = tuple  # K-tuple of nonnegative ints


@dataclass(frozen=True, eq=False)
class MMAPBlock:
    """Characteristic matrices of the MMAP in one environment state."""

    D0: np.ndarray
    batches: Mapping[Label, np.ndarray]

    @property
    def D(self) -> np.ndarray:
        out = np.array(self.D0, dtype=float)
        for mat in self.batches.values():
            out = out + mat
        return out


@dataclass(frozen=True, eq=False)
class MMAPSpec:
    phase_count: int
    type_count: int
    blocks: tuple[MMAPBlock, ...]
    initial_phase: np.ndarray | None = None

    def block(self, state: int) -> MMAPBlock:
        if not 0 <= state < len(self.blocks):
            raise ModelIndexError(f"environment state {state} out of range")
        return self.blocks[state]

    @property
    def labels(self) -> list[Label]:
        seen: dict[Label, None] = {}
        for b in self.blocks:
            for h in b.batches:
                seen.setdefault(h, None)
        return list(seen)


@dataclass(frozen=True)
class KernelEntry:
    """One entry ``Q_ij(t) = prob * dist.cdf(t)`` of the semi-Markov kernel."""

    prob: float
    dist: DistributionSpec


@dataclass(frozen=True, eq=False)
class SemiMarkovEnvironment:
    """Semi-Markov environment; every jump is a catastrophe.

    A single-state environment with an empty kernel is *absorbing*: the
    environment never jumps and no catastrophe ever happens.
    """

    state_count: int
    kernel: Mapping[tuple[int, int], KernelEntry]
    initial_distribution: np.ndarray

    @property
    def absorbing(self) -> bool:
        return len(self.kernel) == 0

    @property
    def transition_matrix(self) -> np.ndarray:
        p = np.zeros((self.state_count, self.state_count))
        for (i, j), e in self.kernel.items():
            p[i, j] += e.prob
        return p

    def kernel_cdf(self, t, left=False) -> np.ndarray:
        """``Q(t)`` on an array of times, shape ``t.shape + (S, S)``."""
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (self.state_count, self.state_count))
        for (i, j), e in self.kernel.items():
            out[..., i, j] += e.prob * (e.dist.cdf_left(t) if left else e.dist.cdf(t))
        return out

    def sojourn_cdf(self, state: int, t, left=False) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        for (i, _), e in self.kernel.items():
            if i == state:
                out = out + e.prob * (e.dist.cdf_left(t) if left else e.dist.cdf(t))
        return out

    def sojourn_survival(self, state: int, t, left=False) -> np.ndarray:
        return 1.0 - self.sojourn_cdf(state, t, left=left)

    @property
    def mean_sojourn(self) -> np.ndarray:
        eta = np.zeros(self.state_count)
        if self.absorbing:
            return np.full(self.state_count, np.inf)
        for (i, _), e in self.kernel.items():
            eta[i] += e.prob * e.dist.mean
        return eta

    def sojourn_tail_point(self, state: int, eps: float = 1e-10) -> float:
        """A time beyond which the sojourn survival of ``state`` is at most ``eps``."""
        return max(
            (e.dist.tail_point(eps / len(self.kernel)) for (i, _), e in self.kernel.items() if i == state),
            default=np.inf,
        )

    def atoms(self) -> list[float]:
        return [a for e in self.kernel.values() for a in e.dist.atoms()]


@dataclass(frozen=True, eq=False)
class ServiceResourceModel:
    """Service laws per (type, state) and resource laws per type.

    ``service[r][i]`` is the service law of type ``r`` in state ``i``;
    ``arrival[r]`` and ``departure[r]`` are tuples of ``k`` independent
    component laws for the arrival and departure resource vectors.
    """

    service: tuple[tuple[DistributionSpec, ...], ...]
    arrival: tuple[tuple[DistributionSpec, ...], ...] = ()
    departure: tuple[tuple[DistributionSpec, ...], ...] = ()

    @property
    def resource_dim(self) -> int:
        if self.arrival:
            return len(self.arrival[0])
        if self.departure:
            return len(self.departure[0])
        return 0

    def arrival_lst(self, r: int, s) -> np.ndarray:
        """Joint LST of the type-``r`` arrival resource at ``s`` (last axis = component)."""
        return _product_lst(self.arrival[r] if self.arrival else (), s)

    def departure_lst(self, r: int, s) -> np.ndarray:
        return _product_lst(self.departure[r] if self.departure else (), s)

    def arrival_mean(self, r: int) -> np.ndarray:
        return np.array([d.mean for d in self.arrival[r]]) if self.arrival else np.zeros(0)


def _product_lst(dists, s):
    s = np.asarray(s)
    out = np.ones(s.shape[:-1], dtype=complex)
    for c, d in enumerate(dists):
        out = out * d.lst(s[..., c])
    return out


@dataclass(frozen=True)
class NumericSettings:
    horizon: float = 10.0
    step: float = 0.01


@dataclass(frozen=True, eq=False)
class ModelConfig:
    mmap: MMAPSpec
    environment: SemiMarkovEnvironment
    service_resources: ServiceResourceModel
    initial_customers: tuple[int, ...] = ()
    numeric: NumericSettings = field(default_factory=NumericSettings)

    def __eq__(self, other):
        if not isinstance(other, ModelConfig):
            return NotImplemented
        from .modelio import config_to_dict

        return config_to_dict(self) == config_to_dict(other)

    __hash__ = None


# -- derived quantities -----------------------------------------------------


def is_irreducible(mat: np.ndarray) -> bool:
    adj = (np.abs(mat) > 0).astype(int)
    np.fill_diagonal(adj, 0)
    n, _ = connected_components(adj, directed=True, connection="strong")
    return n == 1


def stationary_vector(gen: np.ndarray) -> np.ndarray:
    """Solve ``x gen = 0, x e = 1`` for an irreducible generator ``gen``."""
    m = gen.shape[0]
    if m == 1:
        return np.ones(1)
    if not is_irreducible(gen):
        raise Reducible("generator has more than one communicating class")
    a = np.vstack([gen.T, np.ones((1, m))])
    b = np.zeros(m + 1)
    b[-1] = 1.0
    x, *_ = np.linalg.lstsq(a, b, rcond=None)
    return x


@dataclass(frozen=True, eq=False)
class ValidatedModel:
    """A configuration that passed :func:`validate_model`, plus derived constants."""

    config: ModelConfig

    @property
    def mmap(self) -> MMAPSpec:
        return self.config.mmap

    @property
    def env(self) -> SemiMarkovEnvironment:
        return self.config.environment

    @property
    def service(self) -> ServiceResourceModel:
        return self.config.service_resources

    @property
    def K(self) -> int:
        return self.config.mmap.type_count

    @property
    def m(self) -> int:
        return self.config.mmap.phase_count

    @property
    def S(self) -> int:
        return self.config.environment.state_count

    @property
    def k(self) -> int:
        return self.config.service_resources.resource_dim

    @cached_property
    def generators(self) -> tuple[np.ndarray, ...]:
        return tuple(b.D for b in self.mmap.blocks)

    @cached_property
    def transition_matrix(self) -> np.ndarray:
        return self.env.transition_matrix

    @cached_property
    def mean_sojourn(self) -> np.ndarray:
        return self.env.mean_sojourn

    @property
    def initial_customers(self) -> np.ndarray:
        h0 = self.config.initial_customers
        return np.asarray(h0 if h0 else (0,) * self.K, dtype=int)

    def stationary_phase(self, state: int) -> np.ndarray:
        return stationary_vector(self.generators[state])

    def initial_phase(self, state: int) -> np.ndarray:
        """Phase law at time zero when the environment starts in ``state``."""
        if self.mmap.initial_phase is not None:
            return np.asarray(self.mmap.initial_phase, dtype=float)
        return self.stationary_phase(state)


def _check_matrix(name, mat, m, errors):
    mat = np.asarray(mat, dtype=float)
    if mat.shape != (m, m):
        errors.append(ModelIndexError(f"{name} has shape {mat.shape}, expected {(m, m)}"))
        return None
    return mat


def _check_probability_vector(name, vec, n, errors):
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (n,):
        errors.append(ModelIndexError(f"{name} has length {vec.size}, expected {n}"))
    elif np.any(vec < 0) or abs(vec.sum() - 1.0) > PROB_TOL:
        errors.append(ModelError(f"{name} is not a probability vector: {vec.tolist()}"))


def validate_model(config: ModelConfig) -> ValidatedModel:
    """Check every structural invariant of ``config``.

    Returns a :class:`ValidatedModel` when all checks pass; otherwise raises
    :class:`ValidationError` whose ``errors`` attribute lists every
    violation found (not just the first).
    """
    errors: list[ModelError] = []
    mmap, env, sr = config.mmap, config.environment, config.service_resources
    m, K, S = mmap.phase_count, mmap.type_count, env.state_count

    if m < 1 or K < 1 or S < 1:
        errors.append(ModelIndexError(f"phase, type and state counts must be positive, got {(m, K, S)}"))
        raise ValidationError(errors)

    if len(mmap.blocks) != S:
        errors.append(ModelIndexError(f"mmap has {len(mmap.blocks)} state blocks but environment has {S} states"))
    for i, block in enumerate(mmap.blocks):
        d0 = _check_matrix(f"D0[{i}]", block.D0, m, errors)
        if d0 is None:
            continue
        if np.any(np.diag(d0) >= 0):
            errors.append(NonGenerator(f"D0[{i}] must have strictly negative diagonal"))
        off = d0 - np.diag(np.diag(d0))
        if np.any(off < 0):
            errors.append(NonGenerator(f"D0[{i}] has negative off-diagonal entries"))
        total = d0.copy()
        for h, mat in block.batches.items():
            if len(h) != K or any((not isinstance(x, (int, np.integer))) or x < 0 for x in h) or sum(h) == 0:
                errors.append(ModelIndexError(f"batch label {h} in state {i} is not a nonzero {K}-vector of nonnegative integers"))
            mat = _check_matrix(f"D{list(h)}[{i}]", mat, m, errors)
            if mat is None:
                continue
            if np.any(mat < 0):
                errors.append(NonGenerator(f"D{list(h)}[{i}] has negative entries"))
            total = total + mat
        rows = total.sum(axis=1)
        if np.max(np.abs(rows)) > GENERATOR_TOL:
            errors.append(NonGenerator(f"row sums of D in state {i} are {rows.tolist()}, expected 0"))
    if mmap.initial_phase is not None:
        _check_probability_vector("initial_phase", mmap.initial_phase, m, errors)

    for (i, j), e in env.kernel.items():
        if not (0 <= i < S and 0 <= j < S):
            errors.append(ModelIndexError(f"kernel entry ({i}, {j}) outside state range 0..{S - 1}"))
        if e.prob < 0:
            errors.append(ImproperKernel(f"kernel entry ({i}, {j}) has negative probability {e.prob}"))
    if env.absorbing:
        if S != 1:
            errors.append(ImproperKernel("an empty kernel is only allowed for a single-state environment"))
    else:
        p = np.zeros((S, S))
        for (i, j), e in env.kernel.items():
            if 0 <= i < S and 0 <= j < S:
                p[i, j] += e.prob
        for i, total in enumerate(p.sum(axis=1)):
            if abs(total - 1.0) > PROB_TOL:
                errors.append(ImproperKernel(f"kernel row {i} sums to {total:.12g}, expected 1"))
    _check_probability_vector("environment initial distribution", env.initial_distribution, S, errors)

    if len(sr.service) != K:
        errors.append(ModelIndexError(f"service has {len(sr.service)} types, expected {K}"))
    for r, row in enumerate(sr.service):
        if len(row) != S:
            errors.append(ModelIndexError(f"service of type {r} has {len(row)} states, expected {S}"))
    kdim = sr.resource_dim
    for name, table in (("arrival", sr.arrival), ("departure", sr.departure)):
        if table and len(table) != K:
            errors.append(ModelIndexError(f"{name} resources given for {len(table)} types, expected {K}"))
        for r, comps in enumerate(table):
            if len(comps) != kdim:
                errors.append(ModelIndexError(f"{name} resource of type {r} has {len(comps)} components, expected {kdim}"))
    if (sr.arrival and not sr.departure) or (sr.departure and not sr.arrival):
        errors.append(ModelIndexError("arrival and departure resources must be given together"))

    h0 = config.initial_customers
    if h0 and (len(h0) != K or any(x < 0 for x in h0)):
        errors.append(ModelIndexError(f"initial_customers must be {K} nonnegative integers, got {list(h0)}"))

    num = config.numeric
    if not num.step > 0:
        errors.append(GridError(f"numeric step must be positive, got {num.step}"))
    elif num.horizon < 0:
        errors.append(GridError(f"numeric horizon must be nonnegative, got {num.horizon}"))
    else:
        ratio = num.horizon / num.step
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            errors.append(GridError(f"horizon {num.horizon} is not a multiple of step {num.step}"))

    if errors:
        raise ValidationError(errors)
    return ValidatedModel(config)
