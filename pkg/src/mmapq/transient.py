"""Joint transforms of busy servers, served counts and resources in one state.

Transforms are ``m x m`` matrices indexed ``[initial phase, phase at t]``.
Two solution routes are offered:

``closed_form``
    exponential of the integral of ``D0 + S(u)`` over ``[0, t]`` (Simpson
    per grid panel); exact only when the integrand matrices commute.
``ode``
    the linear system ``dA/dt = (D0 + S(t)) A``, ``A(0) = I``, stepped with
    classical RK4 on the grid.  For one-phase models this coincides with
    ``closed_form`` (which is then its exact solution).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import expm

from .distributions import DistributionSpec
from .errors import DomainError, NonProbability
from .grid import Grid, GridMatrixFunction, check_atoms
from .mapalg import Z_TOL, label_power
from .model import ModelConfig, ValidatedModel, validate_model

METHODS = ("ode", "closed_form")


def ensure_validated(model) -> ValidatedModel:
    if isinstance(model, ValidatedModel):
        return model
    if isinstance(model, ModelConfig):
        return validate_model(model)
    raise TypeError(f"expected a model, got {type(model).__name__}")


@dataclass(frozen=True, eq=False)
class TransformPoint:
    """Evaluation coordinates of the joint transform.

    ``z1`` marks customers in service, ``z2`` served customers, ``s1`` the
    resources in the system and ``s2`` the served resources.
    """

    z1: np.ndarray
    z2: np.ndarray
    s1: np.ndarray
    s2: np.ndarray

    @classmethod
    def make(cls, K: int, k: int, z1=1.0, z2=1.0, s1=0.0, s2=0.0, check: bool = True) -> "TransformPoint":
        def vec(x, n, kind):
            a = np.asarray(x, dtype=kind)
            return np.full(n, a, dtype=kind) if a.ndim == 0 else a

        pt = cls(vec(z1, K, complex), vec(z2, K, complex), vec(s1, k, complex), vec(s2, k, complex))
        if pt.z1.shape != (K,) or pt.z2.shape != (K,) or pt.s1.shape != (k,) or pt.s2.shape != (k,):
            raise DomainError(f"transform point does not match K={K}, k={k}")
        if check:
            pt.check()
        return pt

    @classmethod
    def neutral(cls, K: int, k: int) -> "TransformPoint":
        return cls.make(K, k)

    @classmethod
    def for_model(cls, model, **kw) -> "TransformPoint":
        model = ensure_validated(model)
        return cls.make(model.K, model.k, **kw)

    def check(self) -> None:
        if np.any(np.abs(self.z1) > 1 + Z_TOL) or np.any(np.abs(self.z2) > 1 + Z_TOL):
            raise DomainError("z1 and z2 must lie in the closed unit polydisc")
        for s in (self.s1, self.s2):
            if np.any(s.real < 0) or np.any(s.imag != 0):
                raise DomainError("s1 and s2 must be nonnegative reals")


@dataclass(frozen=True)
class _Points:
    """A batch of ``P`` transform points stored as arrays ``(P, K)`` / ``(P, k)``."""

    z1: np.ndarray
    z2: np.ndarray
    s1: np.ndarray
    s2: np.ndarray

    @classmethod
    def of(cls, *pts: TransformPoint) -> "_Points":
        return cls(*(np.stack([getattr(p, f) for p in pts]) for f in ("z1", "z2", "s1", "s2")))

    @classmethod
    def in_service(cls, z1: np.ndarray, s1: np.ndarray) -> "_Points":
        """Points with ``z2 = 1``, ``s2 = 0``; ``z1`` is ``(P, K)``, ``s1`` is ``(P, k)``."""
        z1 = np.asarray(z1, dtype=complex)
        s1 = np.asarray(s1, dtype=complex)
        return cls(z1, np.ones_like(z1), s1, np.zeros_like(s1))

    def __len__(self):
        return len(self.z1)


def _service_cdfs(service: Sequence[DistributionSpec], times: np.ndarray, left: bool) -> np.ndarray:
    return np.stack([d.cdf_left(times) if left else d.cdf(times) for d in service], axis=-1)


def _marks(service, arrival_lst, departure_lst, pts: _Points, times, left=False) -> np.ndarray:
    """Per-customer mark probability of each type, shape ``(P, N, K)``.

    ``arrival_lst``/``departure_lst`` are ``(P, K)`` arrays of resource LSTs.
    """
    B = _service_cdfs(service, times, left)[None]  # (1, N, K)
    served = (pts.z2 * departure_lst)[:, None, :]
    present = (pts.z1 * arrival_lst)[:, None, :]
    return served * B + present * (1.0 - B)


def _resource_lsts(model: ValidatedModel, pts: _Points):
    sr = model.service
    F = np.stack([sr.arrival_lst(r, pts.s1) for r in range(model.K)], axis=-1)
    G = np.stack([sr.departure_lst(r, pts.s2) for r in range(model.K)], axis=-1)
    return F, G


def _batch_sum(batches: Mapping, marks: np.ndarray, m: int) -> np.ndarray:
    """``sum_h D_h prod_r marks_r ** h_r``; ``marks`` is ``(..., K)``."""
    out = np.zeros(marks.shape[:-1] + (m, m), dtype=complex)
    for h, mat in batches.items():
        out += label_power(marks, h)[..., None, None] * np.asarray(mat)
    return out


@dataclass
class _Generators:
    """Full generator ``D0 + S`` at node right limits, node left limits and midpoints."""

    right: np.ndarray  # (P, N + 1, m, m)
    left: np.ndarray  # (P, N + 1, m, m)
    mid: np.ndarray  # (P, N, m, m)


def _state_generators(model: ValidatedModel, state: int, pts: _Points, grid: Grid) -> _Generators:
    block = model.mmap.block(state)
    service = [model.service.service[r][state] for r in range(model.K)]
    check_atoms(service, grid.step)
    F, G = _resource_lsts(model, pts)
    D0 = np.asarray(block.D0, dtype=complex)
    out = []
    for times, left in ((grid.times, False), (grid.times, True), (grid.midpoints, False)):
        marks = _marks(service, F, G, pts, times, left)
        out.append(D0 + _batch_sum(block.batches, marks, model.m))
    return _Generators(*out)


def _expm(a: np.ndarray) -> np.ndarray:
    if a.shape[-1] == 1:
        return np.exp(a)
    return expm(a)


def _propagate(gens: _Generators, step: float, method: str) -> np.ndarray:
    """Solve for the transform at every node; returns ``(P, N + 1, m, m)``."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    right, left, mid = gens.right, gens.left, gens.mid
    P, N1, m, _ = right.shape
    if method == "closed_form" or m == 1:
        integral = np.zeros_like(right)
        if N1 > 1:
            # Simpson per panel, using the one-sided limits at the panel ends
            panels = (step / 6.0) * (right[:, :-1] + 4.0 * mid + left[:, 1:])
            integral[:, 1:] = np.cumsum(panels, axis=1)
        return _expm(integral)
    out = np.empty_like(right)
    A = np.broadcast_to(np.eye(m, dtype=complex), (P, m, m)).copy()
    out[:, 0] = A
    h = step
    for n in range(N1 - 1):
        k1 = right[:, n] @ A
        k2 = mid[:, n] @ (A + 0.5 * h * k1)
        k3 = mid[:, n] @ (A + 0.5 * h * k2)
        k4 = left[:, n + 1] @ (A + h * k3)
        A = A + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[:, n + 1] = A
    return out


def state_paths(model: ValidatedModel, state: int, pts: _Points, grid: Grid, method: str = "ode") -> np.ndarray:
    """Transforms for a batch of points at every node of ``grid``: ``(P, N + 1, m, m)``."""
    return _propagate(_state_generators(model, state, pts, grid), grid.step, method)


def _grid_for(model: ValidatedModel, t: float, step) -> Grid:
    if t < 0:
        raise DomainError(f"t must be nonnegative, got {t}")
    return Grid(model.config.numeric.step if step is None else step, t)


def service_kernel(model, state: int, pt: TransformPoint, t: float) -> np.ndarray:
    """Batch-arrival kernel ``S_i(z1, z2, s1, s2, t)`` (``D0`` excluded)."""
    model = ensure_validated(model)
    pt.check()
    if t < 0:
        raise DomainError(f"t must be nonnegative, got {t}")
    pts = _Points.of(pt)
    F, G = _resource_lsts(model, pts)
    service = [model.service.service[r][state] for r in range(model.K)]
    marks = _marks(service, F, G, pts, np.array([t]))
    return _batch_sum(model.mmap.block(state).batches, marks, model.m)[0, 0]


def transient_path(model, state: int, pt: TransformPoint, grid: Grid | None = None, method: str = "ode") -> GridMatrixFunction:
    """The joint transform at every node of ``grid`` (default: the model's numeric grid)."""
    model = ensure_validated(model)
    pt.check()
    if grid is None:
        grid = Grid(model.config.numeric.step, model.config.numeric.horizon)
    vals = state_paths(model, state, _Points.of(pt), grid, method)[0]
    return GridMatrixFunction(grid.step, vals)


def transient_transform(model, state: int, pt: TransformPoint, t: float, method: str = "ode", step=None) -> np.ndarray:
    """Joint transform of (in service, served, resources in system, served resources) at ``t``.

    The system starts empty; rows index the initial phase.  ``t`` must be a
    multiple of ``step`` (default: the model's numeric step).
    """
    model = ensure_validated(model)
    pt.check()
    grid = _grid_for(model, t, step)
    return state_paths(model, state, _Points.of(pt), grid, method)[0, -1]


def busy_servers_transform(model, state: int, z1, s1, t: float, method: str = "ode", step=None) -> np.ndarray:
    """PGF of busy servers jointly with the LST of resources in the system."""
    model = ensure_validated(model)
    pt = TransformPoint.make(model.K, model.k, z1=z1, s1=s1)
    return transient_transform(model, state, pt, t, method, step)


def served_transform(model, state: int, z2, s2, t: float, method: str = "ode", step=None) -> np.ndarray:
    """PGF of served customers jointly with the LST of served resources over ``[0, t)``."""
    model = ensure_validated(model)
    pt = TransformPoint.make(model.K, model.k, z2=z2, s2=s2)
    return transient_transform(model, state, pt, t, method, step)


def initial_customers_factor(model, state: int, pt: TransformPoint, t: float, h0) -> complex:
    """Contribution of ``h0`` customers present at time zero.

    They are marked only through service completion (``z2``, ``s2``); while
    still in service they contribute a factor one.
    """
    model = ensure_validated(model)
    h0 = np.asarray(h0, dtype=int)
    if h0.shape != (model.K,) or np.any(h0 < 0):
        raise DomainError(f"h0 must be {model.K} nonnegative integers, got {h0}")
    pts = _Points.of(pt)
    _, G = _resource_lsts(model, pts)
    factor = 1.0 + 0j
    for r in range(model.K):
        B = float(model.service.service[r][state].cdf(t))
        factor *= (pt.z2[r] * G[0, r] * B + (1.0 - B)) ** int(h0[r])
    return factor


def initial_customers_transform(model, state: int, pt: TransformPoint, t: float, h0=None, method: str = "ode", step=None) -> np.ndarray:
    """Joint transform when ``h0`` customers (default: the model's) are present at time zero."""
    model = ensure_validated(model)
    if h0 is None:
        h0 = model.initial_customers
    return initial_customers_factor(model, state, pt, t, h0) * transient_transform(model, state, pt, t, method, step)


# -- renewal (general interarrival) input -----------------------------------


def _renewal_input_path(batch_law: Mapping, interarrival: DistributionSpec, service: Sequence[DistributionSpec],
                        pt: TransformPoint, grid: Grid, arrival=(), departure=()) -> np.ndarray:
    from .model import _product_lst

    K = len(service)
    check_atoms(list(service) + [interarrival], grid.step)
    F = np.array([[_product_lst(arrival[r], pt.s1) if arrival else 1.0 for r in range(K)]])
    G = np.array([[_product_lst(departure[r], pt.s2) if departure else 1.0 for r in range(K)]])
    pts = _Points.of(pt)

    def batch_kernel(left):
        marks = _marks(service, F, G, pts, grid.times, left)[0]  # (N + 1, K)
        out = np.zeros(len(marks), dtype=complex)
        for n, prob in batch_law.items():
            out += prob * label_power(marks, n)
        return out

    phi, phi_left = batch_kernel(False), batch_kernel(True)
    A = interarrival.cdf(grid.times)
    A_left = interarrival.cdf_left(grid.times)
    atom = A - A_left
    cont = A_left[1:] - A[:-1]  # continuous mass of panel k
    N = grid.n
    x = np.zeros(N + 1, dtype=complex)
    x[0] = 1.0 - A[0]
    x[0] /= 1.0 - atom[0] * phi[0]
    for n in range(1, N + 1):
        rest = 1.0 - A[n]
        # atoms at u_k, k >= 1
        k = np.arange(1, n + 1)
        rest += np.dot(atom[k], phi[n - k] * x[n - k])
        # continuous panels: left end -> node n-k (left limit), right end -> node n-k-1
        kc = np.arange(1, n)
        rest += 0.5 * np.dot(cont[kc], phi_left[n - kc] * x[n - kc])
        kc = np.arange(0, n)
        rest += 0.5 * np.dot(cont[kc], phi[n - kc - 1] * x[n - kc - 1])
        x[n] = rest / (1.0 - atom[0] * phi[n] - 0.5 * cont[0] * phi_left[n])
    return x


def renewal_input_transform(batch_law: Mapping, interarrival: DistributionSpec, service: Sequence[DistributionSpec],
                            pt: TransformPoint, t: float, step: float = 0.01, arrival=(), departure=()) -> complex:
    """Joint transform for batches arriving at renewal epochs.

    ``batch_law`` maps K-vectors to probabilities, ``interarrival`` is the
    law of the times between batches, ``service[r]`` the type-``r`` service
    law, and ``arrival``/``departure`` optional per-type resource laws.  The
    first-batch renewal equation is discretized by product-integration
    trapezoid on the grid of spacing ``step``.
    """
    total = sum(batch_law.values())
    if abs(total - 1.0) > 1e-10 or any(v < 0 for v in batch_law.values()):
        raise NonProbability(f"batch law sums to {total}, expected 1")
    if any(sum(n) == 0 for n in batch_law):
        raise NonProbability("batch law puts mass on the empty batch")
    pt.check()
    return _renewal_input_path(batch_law, interarrival, service, pt, Grid(step, t), arrival, departure)[-1]


# -- batch-service collapses --------------------------------------------------


def batch_service_pgf(mmap, state: int, B0: DistributionSpec, z, t: float, mode: str = "whole_batch",
                      step: float = 0.01, method: str = "closed_form") -> np.ndarray:
    """PGF of batches (``whole_batch``) or customers (``same_batch_service``) in service.

    ``whole_batch``: every batch is served as a single customer with law
    ``B0``.  ``same_batch_service``: every customer of a batch is served
    independently with the common law ``B0``; the count is of customers.
    """
    z = complex(np.asarray(z).reshape(-1)[0]) if np.ndim(z) else complex(z)
    if abs(z) > 1 + Z_TOL:
        raise DomainError(f"|z| must be <= 1, got {z}")
    if t < 0:
        raise DomainError(f"t must be nonnegative, got {t}")
    grid = Grid(step, t)
    check_atoms([B0], step)
    block = mmap.block(state)
    m = mmap.phase_count
    if mode == "whole_batch":
        collapsed = {1: sum(np.asarray(mat) for mat in block.batches.values())}
    elif mode == "same_batch_service":
        collapsed = {}
        for h, mat in block.batches.items():
            n = int(sum(h))
            collapsed[n] = collapsed.get(n, 0) + np.asarray(mat)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    D0 = np.asarray(block.D0, dtype=complex)

    def gen(times, left):
        B = B0.cdf_left(times) if left else B0.cdf(times)
        mark = B + z * (1.0 - B)
        out = np.broadcast_to(D0, (len(times), m, m)).copy()
        for n, mat in collapsed.items():
            out += (mark**n)[:, None, None] * mat
        return out[None]

    gens = _Generators(gen(grid.times, False), gen(grid.times, True), gen(grid.midpoints, False))
    return _propagate(gens, step, method)[0, -1]
