"""Markov-renewal machinery for the semi-Markov environment with catastrophes.

Every environment jump empties the system.  A transform ``L`` of the
catastrophe model is then a renewal mixture of the no-catastrophe transform
``P`` of each state:

    L_i(t) = (1 - F_i(t)) P_i(t) + sum_j int_0^t (1 - F_j(t - u)) P_j(t - u) dH_ij(u)

where ``H`` is the Markov renewal function of the environment.  The
operators here work on grid samples of ``P`` with arbitrary trailing
dimensions, so the same code serves PGFs, LSTs, PMFs and means.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import fft

from .errors import DomainError, NotExponential, TruncationError
from .grid import Grid, GridMatrixFunction, check_atoms
from .model import SemiMarkovEnvironment, ValidatedModel, stationary_vector

TAIL_EPS = 1e-10


# -- Markov renewal function -------------------------------------------------


@dataclass(frozen=True, eq=False)
class RenewalSolution:
    """``H_ij(t)`` on a grid: expected entries into ``j`` during ``(0, t]`` from ``i``.

    ``atoms[n]`` is the jump of ``H`` at node ``n``; the left limit at a node
    is ``H - atoms``.
    """

    step: float
    values: np.ndarray  # (N + 1, S, S)
    atoms: np.ndarray  # (N + 1, S, S)
    initial: np.ndarray  # p0

    @property
    def grid(self) -> Grid:
        return Grid(self.step, (len(self.values) - 1) * self.step)

    @property
    def H(self) -> GridMatrixFunction:
        return GridMatrixFunction(self.step, self.values)

    @property
    def left(self) -> np.ndarray:
        return self.values - self.atoms

    @property
    def weighted(self) -> np.ndarray:
        """``H_j(t) = sum_k p0_k H_kj(t)``, shape ``(N + 1, S)``."""
        return np.einsum("k,nkj->nj", self.initial, self.values)

    def at(self, t: float) -> np.ndarray:
        return self.values[self.grid.index(t)]

    @property
    def continuous_increments(self) -> np.ndarray:
        """Mass of ``dH`` strictly inside each panel, shape ``(N, S, S)``."""
        return self.left[1:] - self.values[:-1]


def renewal_matrix(env: SemiMarkovEnvironment, grid: Grid) -> RenewalSolution:
    """Solve ``H = Q + dQ * H`` by product-integration trapezoid.

    Atoms of the kernel (deterministic sojourns) must lie on grid nodes;
    they are convolved exactly, so purely atomic kernels give the exact
    renewal counts.
    """
    S = env.state_count
    N = grid.n
    if env.absorbing:
        z = np.zeros((N + 1, S, S))
        return RenewalSolution(grid.step, z, z.copy(), np.asarray(env.initial_distribution, float))
    check_atoms([e.dist for e in env.kernel.values()], grid.step)
    Q = env.kernel_cdf(grid.times)
    aQ = Q - env.kernel_cdf(grid.times, left=True)
    cQ = env.kernel_cdf(grid.times[1:], left=True) - Q[:-1]  # (N, S, S)
    I = np.eye(S)

    aH = np.zeros_like(Q)
    lhs_atom = I - aQ[0]
    for n in range(N + 1):
        rhs = aQ[n] + np.einsum("kij,kjl->il", aQ[1 : n + 1], aH[n - 1 :: -1][:n]) if n else aQ[0].copy()
        aH[n] = np.linalg.solve(lhs_atom, rhs)

    H = np.zeros_like(Q)
    Hl = np.zeros_like(Q)
    H[0] = aH[0]
    lhs = I - aQ[0] - (0.5 * cQ[0] if N else 0.0)
    for n in range(1, N + 1):
        rhs = Q[n] - 0.5 * cQ[0] @ aH[n]
        rhs += np.einsum("kij,kjl->il", aQ[1 : n + 1], H[n - 1 :: -1])
        if n > 1:
            rhs += 0.5 * np.einsum("kij,kjl->il", cQ[1:n], Hl[n - 1 : 0 : -1])
        rhs += 0.5 * np.einsum("kij,kjl->il", cQ[:n], H[n - 1 :: -1])
        H[n] = np.linalg.solve(lhs, rhs)
        Hl[n] = H[n] - aH[n]
    return RenewalSolution(grid.step, H, aH, np.asarray(env.initial_distribution, float))


# -- stationary weights -------------------------------------------------------


@dataclass(frozen=True)
class StationaryWeights:
    eta: np.ndarray  # mean sojourn per state
    rho: np.ndarray  # embedded-chain stationary law
    q: np.ndarray  # time-stationary state weights


def stationary_weights(env: SemiMarkovEnvironment) -> StationaryWeights:
    if env.absorbing:
        one = np.ones(1)
        return StationaryWeights(np.full(1, np.inf), one, one)
    P = env.transition_matrix
    rho = stationary_vector(P - np.eye(env.state_count))
    eta = env.mean_sojourn
    w = eta * rho
    return StationaryWeights(eta, rho, w / w.sum())


# -- catastrophe-model operators ----------------------------------------------


def _survivals(env: SemiMarkovEnvironment, times: np.ndarray):
    S = env.state_count
    right = np.stack([env.sojourn_survival(i, times) for i in range(S)], axis=1)
    left = np.stack([env.sojourn_survival(i, times, left=True) for i in range(S)], axis=1)
    return right, left  # (N + 1, S)


def _expand(w: np.ndarray, ndim: int) -> np.ndarray:
    return w.reshape(w.shape + (1,) * (ndim - w.ndim))


def _conv_contract(kernel: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``out[n, i, ...] = sum_k sum_j kernel[k, i, j] g[n - k, j, ...]`` for ``n <= N``."""
    N1 = len(g)
    L = fft.next_fast_len(2 * N1)
    kf = fft.fft(kernel, L, axis=0)
    gf = fft.fft(g.reshape(N1, g.shape[1], -1), L, axis=0)
    out = fft.ifft(np.einsum("fij,fjp->fip", kf, gf), axis=0)[:N1]
    if np.isrealobj(kernel) and np.isrealobj(g):
        out = out.real
    return out.reshape((N1, kernel.shape[1]) + g.shape[2:])


@dataclass(frozen=True, eq=False)
class CatastropheTransient:
    per_state: np.ndarray  # (N + 1, S, ...): L_i(t_n)
    mixed: np.ndarray  # (N + 1, ...): sum_i p0_i L_i(t_n)
    step: float

    def at(self, t: float, state: int | None = None):
        n = Grid(self.step, (len(self.mixed) - 1) * self.step).index(t)
        return self.mixed[n] if state is None else self.per_state[n, state]


def catastrophe_transform_transient(base, env: SemiMarkovEnvironment, step: float, first=None,
                                    renewal: RenewalSolution | None = None) -> CatastropheTransient:
    """Renewal mixture of per-state no-catastrophe values.

    ``base`` has shape ``(N + 1, S, ...)``: the no-catastrophe transform of
    each state on the grid, used after every catastrophe.  ``first``
    (default ``base``) is used up to the first catastrophe, which allows a
    different starting law (initial phase, initial customers).
    """
    base = np.asarray(base)
    first = base if first is None else np.asarray(first)
    N1, S = base.shape[:2]
    grid = Grid(step, (N1 - 1) * step)
    if S != env.state_count:
        raise DomainError(f"base has {S} states, environment has {env.state_count}")
    if renewal is None:
        renewal = renewal_matrix(env, grid)
    elif len(renewal.values) < N1 or abs(renewal.step - step) > 1e-15:
        raise DomainError("renewal solution does not cover the grid of the base values")
    surv, surv_left = _survivals(env, grid.times)
    nd = base.ndim
    out = _expand(surv, nd) * first
    if not env.absorbing:
        g = _expand(surv, nd) * base
        g_left = _expand(surv_left, nd) * base
        g_left[0] = 0
        aH = renewal.atoms[:N1]
        cH = np.zeros_like(aH)
        cH[:-1] = renewal.continuous_increments[: N1 - 1]
        conv = _conv_contract(aH, g) + 0.5 * _conv_contract(cH, g_left)
        shifted = _conv_contract(cH, g)
        conv[1:] += 0.5 * shifted[:-1]
        out = out + conv
    mixed = np.tensordot(renewal.initial, np.moveaxis(out, 1, 0), axes=1)
    return CatastropheTransient(out, mixed, step)


def stationary_horizon(env: SemiMarkovEnvironment, step: float, eps: float = TAIL_EPS) -> float:
    """Smallest grid node beyond which every sojourn survival is below ``eps``."""
    if env.absorbing:
        raise DomainError("an absorbing environment has no sojourn tail")
    tail = max(env.sojourn_tail_point(i, eps) for i in range(env.state_count))
    return Grid(step, 0.0).extended(tail).horizon


def check_tail(env: SemiMarkovEnvironment, horizon: float, eps: float = TAIL_EPS) -> float:
    """Return the largest sojourn survival at ``horizon``; raise if above ``eps``."""
    worst = max(float(env.sojourn_survival(i, horizon)) for i in range(env.state_count))
    if worst >= eps:
        raise TruncationError(f"sojourn survival {worst:.3g} at horizon {horizon} exceeds {eps:g}")
    return worst


def catastrophe_transform_stationary(base, env: SemiMarkovEnvironment, step: float,
                                     weights: StationaryWeights | None = None):
    """``sum_i (q_i / eta_i) int_0^inf (1 - F_i(u)) P_i(u) du`` from grid samples.

    ``base`` has shape ``(N + 1, S, ...)`` and must reach past the sojourn
    tails (see :func:`stationary_horizon`); otherwise
    :class:`TruncationError` is raised.
    """
    base = np.asarray(base)
    N1, S = base.shape[:2]
    check_tail(env, (N1 - 1) * step)
    weights = stationary_weights(env) if weights is None else weights
    times = np.arange(N1) * step
    surv, surv_left = _survivals(env, times)
    nd = base.ndim
    panels = 0.5 * step * (_expand(surv[:-1], nd) * base[:-1] + _expand(surv_left[1:], nd) * base[1:])
    integral = panels.sum(axis=0)  # (S, ...)
    # self-normalised: the same rule applied to 1 - F_i replaces the exact
    # mean sojourn, so the neutral argument gives 1 to round-off
    eta = 0.5 * step * (surv[:-1] + surv_left[1:]).sum(axis=0)
    w = weights.q / eta
    return np.tensordot(w, integral, axes=1)


# -- exponential sojourns -----------------------------------------------------


def sojourn_rates(env: SemiMarkovEnvironment) -> np.ndarray:
    """Rates ``v_i`` when every sojourn is exponential and independent of the target."""
    rates = np.zeros(env.state_count)
    for i in range(env.state_count):
        rs = {e.dist.params["rate"] for (a, _), e in env.kernel.items() if a == i and e.dist.family == "exponential"}
        fams = [e.dist.family for (a, _), e in env.kernel.items() if a == i]
        if not fams or len(rs) != 1 or len(fams) != sum(f == "exponential" for f in fams):
            raise NotExponential(f"sojourn in state {i} is not a single exponential law")
        rates[i] = float(rs.pop())
    return rates


@dataclass(frozen=True, eq=False)
class ExponentialSojournTransforms:
    rates: np.ndarray
    transition: np.ndarray
    weights: StationaryWeights
    step: float
    base: np.ndarray
    first: np.ndarray

    def laplace_base(self, sigma, which="base") -> np.ndarray:
        """Laplace transform of the grid samples at ``sigma`` per state, trapezoid rule."""
        vals = self.base if which == "base" else self.first
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (vals.shape[1],))
        times = np.arange(len(vals)) * self.step
        w = np.exp(-np.outer(times, sigma))  # (N + 1, S)
        f = _expand(w, vals.ndim) * vals
        return 0.5 * self.step * (f[:-1] + f[1:]).sum(axis=0)

    @property
    def stationary(self):
        v = self.rates
        lt = self.laplace_base(v)
        norm = self._laplace_ones(v)  # trapezoid of e^{-v u}; exactly 1/v in the limit
        return np.tensordot(self.weights.q / norm, lt, axes=1)

    def _laplace_ones(self, sigma) -> np.ndarray:
        times = np.arange(len(self.base)) * self.step
        w = np.exp(-np.outer(times, sigma))
        return 0.5 * self.step * (w[:-1] + w[1:]).sum(axis=0)

    def laplace(self, s: float):
        """Laplace transform in ``t`` of ``L_i(t)`` at ``s > 0``, per starting state."""
        if not s > 0:
            raise DomainError("the Laplace argument must be positive")
        v = self.rates
        qt = self.transition * (v / (v + s))[:, None]
        h = np.linalg.solve((np.eye(len(v)) - qt).T, qt.T).T  # qt (I - qt)^{-1}
        first = self.laplace_base(s + v, "first")
        later = self.laplace_base(s + v)
        return first + np.tensordot(h, later, axes=1)


def exponential_sojourn_transforms(base, env: SemiMarkovEnvironment, step: float, first=None) -> ExponentialSojournTransforms:
    """Laplace-domain catastrophe transforms for exponential sojourns.

    ``base`` (and optional ``first``) are grid samples ``(N + 1, S, ...)``
    that must reach past the sojourn tails.
    """
    rates = sojourn_rates(env)
    base = np.asarray(base)
    check_tail(env, (len(base) - 1) * step)
    return ExponentialSojournTransforms(rates, env.transition_matrix, stationary_weights(env), step, base,
                                        base if first is None else np.asarray(first))


# -- queue-level transforms ---------------------------------------------------


PHASE_SEMANTICS = ("keep", "reset")


def _phase_laws(model: ValidatedModel, phase_reset: str):
    if phase_reset not in PHASE_SEMANTICS:
        raise ValueError(f"phase_reset must be one of {PHASE_SEMANTICS}")
    pis = [model.stationary_phase(i) for i in range(model.S)]
    thetas = [model.initial_phase(i) for i in range(model.S)]
    if phase_reset == "keep" and not model.env.absorbing:
        same_D = all(np.allclose(model.generators[0], D, atol=1e-12) for D in model.generators)
        theta_pi = all(np.allclose(t, p, atol=1e-12) for t, p in zip(thetas, pis))
        if not (same_D and theta_pi):
            warnings.warn(
                "phase law after a catastrophe is approximated by the stationary phase law of the new state",
                stacklevel=3,
            )
    return np.array(thetas), np.array(pis)


def _state_scalars(model, pts, grid, method, phase_reset):
    """First-period and post-catastrophe scalar transforms, each ``(N + 1, S, P)``."""
    from .transient import state_paths

    thetas, pis = _phase_laws(model, phase_reset)
    e = np.ones(model.m)
    first, base = [], []
    for i in range(model.S):
        paths = state_paths(model, i, pts, grid, method)  # (P, N + 1, m, m)
        col = paths @ e  # (P, N + 1, m)
        first.append(col @ thetas[i])
        base.append(col @ pis[i])
    first = np.stack(first, axis=1).transpose(2, 1, 0)
    base = np.stack(base, axis=1).transpose(2, 1, 0)
    return first, base


def _initial_customer_factors(model: ValidatedModel, pts, grid: Grid) -> np.ndarray:
    """``(N + 1, S, P)`` factor of the ``h0`` initial customers (first period only)."""
    from .transient import _resource_lsts

    h0 = model.initial_customers
    out = np.ones((grid.n + 1, model.S, len(pts)), dtype=complex)
    if not h0.any():
        return out
    _, G = _resource_lsts(model, pts)  # (P, K)
    for i in range(model.S):
        for r in range(model.K):
            if h0[r] == 0:
                continue
            B = model.service.service[r][i].cdf(grid.times)[:, None]
            out[:, i, :] *= (pts.z2[None, :, r] * G[None, :, r] * B + (1.0 - B)) ** int(h0[r])
    return out


def queue_transform_transient(model: ValidatedModel, pts, grid: Grid, method: str = "ode",
                              phase_reset: str = "keep") -> CatastropheTransient:
    """Catastrophe-model transform at a batch of points, trailing axis ``P``."""
    first, base = _state_scalars(model, pts, grid, method, phase_reset)
    first = first * _initial_customer_factors(model, pts, grid)
    return catastrophe_transform_transient(base, model.env, grid.step, first=first)


def service_tail_point(model: ValidatedModel, eps: float = 1e-12) -> float:
    return max(d.tail_point(eps) for row in model.service.service for d in row)


def queue_transform_stationary(model: ValidatedModel, pts, step: float | None = None, method: str = "ode",
                               phase_reset: str = "keep", horizon: float | None = None,
                               richardson: bool = True) -> np.ndarray:
    """Long-run transform at a batch of points, shape ``(P,)``.

    With ``richardson`` the grid integral is repeated at half the step and
    the two values are extrapolated to remove the leading ``O(step**2)``
    error.
    """
    step = model.config.numeric.step if step is None else step

    def once(h):
        if model.env.absorbing:
            T = horizon if horizon is not None else Grid(h, 0.0).extended(service_tail_point(model)).horizon
            grid = Grid(h, Grid(h, 0.0).extended(T).horizon)
            _, base = _state_scalars(model, pts, grid, method, phase_reset)
            return base[-1, 0]
        T = stationary_horizon(model.env, h) if horizon is None else Grid(h, 0.0).extended(horizon).horizon
        grid = Grid(h, T)
        _, base = _state_scalars(model, pts, grid, method, phase_reset)
        return catastrophe_transform_stationary(base, model.env, h)

    coarse = once(step)
    if not richardson:
        return coarse
    fine = once(step / 2)
    return (4.0 * fine - coarse) / 3.0


__all__ = [
    "RenewalSolution",
    "renewal_matrix",
    "StationaryWeights",
    "stationary_weights",
    "CatastropheTransient",
    "catastrophe_transform_transient",
    "catastrophe_transform_stationary",
    "stationary_horizon",
    "check_tail",
    "sojourn_rates",
    "ExponentialSojournTransforms",
    "exponential_sojourn_transforms",
    "queue_transform_transient",
    "queue_transform_stationary",
]
