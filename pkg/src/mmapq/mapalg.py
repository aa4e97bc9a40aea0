"""Generator-level algebra of a marked MAP in a fixed environment state."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import DomainError, GridError
from .grid import Grid
from .model import MMAPSpec, stationary_vector

Z_TOL = 1e-12


def as_z(z, K: int, check: bool = True) -> np.ndarray:
    """Coerce ``z`` to a complex K-vector, checking it lies in the closed unit polydisc."""
    z = np.asarray(z, dtype=complex)
    if z.ndim == 0:
        z = np.full(K, z)
    if z.shape[-1] != K:
        raise DomainError(f"expected {K} z-coordinates, got shape {z.shape}")
    if check and np.any(np.abs(z) > 1.0 + Z_TOL):
        raise DomainError(f"z must satisfy |z_r| <= 1, got {z}")
    return z


def label_power(z: np.ndarray, h) -> np.ndarray:
    """``prod_r z_r ** h_r`` over the last axis of ``z``."""
    return np.prod(z ** np.asarray(h), axis=-1)


def generator_pgf(mmap: MMAPSpec, state: int, z) -> np.ndarray:
    """``D(z) = D0 + sum_h z^h D_h`` for environment state ``state``."""
    z = as_z(z, mmap.type_count)
    block = mmap.block(state)
    out = np.array(block.D0, dtype=complex)
    for h, mat in block.batches.items():
        out = out + label_power(z, h) * mat
    return out


def stationary_phase(mmap: MMAPSpec, state: int) -> np.ndarray:
    """Stationary law of the phase process: ``pi D = 0``, ``pi e = 1``."""
    return stationary_vector(mmap.block(state).D)


def counting_pgf(mmap: MMAPSpec, state: int, z, t: float) -> np.ndarray:
    """Matrix PGF ``exp(D(z) t)`` of the arrival counts over ``[0, t)``."""
    if t < 0:
        raise DomainError(f"t must be nonnegative, got {t}")
    return expm(generator_pgf(mmap, state, z) * t)


@dataclass(frozen=True)
class CountingMoments:
    mean: float
    variance: float
    t: float
    label: tuple
    theta: np.ndarray


def _deflated(D: np.ndarray, pi: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    # (D - e pi)^{-1} rhs via a linear solve
    m = D.shape[0]
    return np.linalg.solve(D - np.outer(np.ones(m), pi), rhs)


def counting_moments(mmap: MMAPSpec, state: int, h, t: float, theta=None) -> CountingMoments:
    """Mean and variance of the number of type-``h`` batches in ``[0, t)``.

    ``theta`` is the initial phase law (stationary by default).  The variance
    expression assumes a stationary start; for another ``theta`` it is still
    evaluated as written and a warning is issued.
    """
    if t < 0:
        raise DomainError(f"t must be nonnegative, got {t}")
    h = tuple(h)
    block = mmap.block(state)
    D = block.D
    m = D.shape[0]
    pi = stationary_phase(mmap, state)
    theta = pi if theta is None else np.asarray(theta, dtype=float)
    Dh = np.asarray(block.batches.get(h, np.zeros((m, m))), dtype=float)
    e = np.ones(m)
    lam = float(pi @ Dh @ e)
    eDt = expm(D * t)
    I = np.eye(m)
    x = _deflated(D, pi, Dh @ e)
    mean = lam * t + float(theta @ (eDt - I) @ x)
    lin = lam - 2 * lam**2 - 2 * float(pi @ Dh @ x)
    quad = 2 * float(pi @ Dh @ _deflated(D, pi, (eDt - I) @ x))
    variance = lin * t + quad
    if not np.allclose(theta, pi, atol=1e-12):
        warnings.warn(
            "counting_moments: the variance expression assumes a stationary initial phase",
            stacklevel=2,
        )
    return CountingMoments(mean=mean, variance=variance, t=t, label=h, theta=theta)


@dataclass(frozen=True)
class ArrivalRates:
    batch: dict  # label -> stationary batch rate
    per_type: np.ndarray  # customers of each type per unit time
    batches_total: float

    @property
    def customers_total(self) -> float:
        return float(self.per_type.sum())


def arrival_rates(mmap: MMAPSpec, state: int) -> ArrivalRates:
    block = mmap.block(state)
    pi = stationary_phase(mmap, state)
    e = np.ones(mmap.phase_count)
    batch = {h: float(pi @ np.asarray(mat) @ e) for h, mat in block.batches.items()}
    per_type = np.zeros(mmap.type_count)
    for h, rate in batch.items():
        per_type += np.asarray(h, dtype=float) * rate
    return ArrivalRates(batch=batch, per_type=per_type, batches_total=float(sum(batch.values())))


def _retention_at(p, t: float, K: int) -> np.ndarray:
    vals = []
    if callable(p) or np.ndim(p) == 0:
        p = [p] * K
    for pr in p:
        vals.append(float(pr(t)) if callable(pr) else float(pr))
    vals = np.asarray(vals)
    if np.any(vals < 0) or np.any(vals > 1):
        raise DomainError(f"retention probabilities must lie in [0, 1], got {vals}")
    return vals


def thinned_generator_pgf(mmap: MMAPSpec, state: int, z, p, t: float) -> np.ndarray:
    """Batch part of the generator of the Bernoulli-thinned process at time ``t``.

    Each type-``r`` customer is retained with probability ``p[r]`` (a number
    or a callable of time) and marked with ``z[r]``.  ``D0`` is *not*
    included.
    """
    K = mmap.type_count
    z = as_z(z, K)
    pt = _retention_at(p, t, K)
    bracket = 1.0 - pt + z * pt
    m = mmap.phase_count
    out = np.zeros((m, m), dtype=complex)
    for h, mat in mmap.block(state).batches.items():
        out = out + label_power(bracket, h) * mat
    return out


def _retention_grid(p, grid: Grid, K: int) -> np.ndarray:
    """Retention probabilities sampled on ``grid``, shape ``(n + 1, K)``."""
    times = grid.times
    if callable(p) or np.ndim(p) == 0:
        p = [p] * K
    elif isinstance(p, np.ndarray) and p.ndim == 2:
        p = list(p.T)
    cols = []
    for pr in p:
        if callable(pr):
            col = np.array([float(pr(t)) for t in times])
        else:
            arr = np.asarray(pr, dtype=float)
            if arr.ndim == 0:
                col = np.full(times.shape, float(arr))
            elif arr.shape == times.shape:
                col = arr
            else:
                raise GridError(f"retention samples have length {arr.size}, grid has {times.size} nodes")
        cols.append(col)
    vals = np.stack(cols, axis=-1)
    if np.any(vals < 0) or np.any(vals > 1):
        raise DomainError("retention probabilities must lie in [0, 1]")
    return vals


def thinned_counting_pgf(mmap: MMAPSpec, state: int, z, p, t: float, step: float = 0.01) -> np.ndarray:
    """PGF of the thinned counting process: exp of the integrated thinned generator.

    The integral runs over the grid of spacing ``step`` (``t`` must be a
    node) with the composite trapezoid rule.  ``p`` may be numbers, callables
    of time, or arrays sampled on that grid.
    """
    K = mmap.type_count
    z = as_z(z, K)
    grid = Grid(step, t)
    pv = _retention_grid(p, grid, K)
    bracket = 1.0 - pv + z * pv  # (n + 1, K)
    block = mmap.block(state)
    m = mmap.phase_count
    gen = np.broadcast_to(np.asarray(block.D0, dtype=complex), (len(pv), m, m)).copy()
    for h, mat in block.batches.items():
        gen += label_power(bracket, h)[:, None, None] * mat
    if grid.n == 0:
        return np.eye(m, dtype=complex)
    integral = 0.5 * step * (gen[:-1] + gen[1:]).sum(axis=0)
    return expm(integral)
