"""Distributions and scalar performance measures extracted from the transforms."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import DomainError, NotDegenerate, NotNormalized
from .grid import Grid, cumulative_trapezoid
from .model import ValidatedModel
from .renewal import (
    catastrophe_transform_stationary,
    catastrophe_transform_transient,
    queue_transform_stationary,
    queue_transform_transient,
    stationary_horizon,
    stationary_weights,
)
from .transient import _marks, _Points, _resource_lsts, ensure_validated

FD_STEP = 1e-3
PMF_CLIP = -1e-9
NORM_TOL = 1e-6


# -- PGF inversion ------------------------------------------------------------


@dataclass(frozen=True)
class PMF:
    probs: np.ndarray
    tail: float  # 1 - sum(probs)

    @property
    def mean(self) -> float:
        return float(np.arange(len(self.probs)) @ self.probs)


def _call_pgf(pgf: Callable, z: np.ndarray) -> np.ndarray:
    try:
        # a scalar-only evaluator would silently squeeze a length-1 array
        with warnings.catch_warnings():
            warnings.simplefilter("error", DeprecationWarning)
            vals = np.asarray(pgf(z), dtype=complex)
        if vals.shape == z.shape:
            return vals
    except (TypeError, ValueError, DeprecationWarning):
        pass
    return np.array([complex(pgf(x)) for x in z])


def default_n_max(mean: float) -> int:
    mean = max(float(mean), 0.0)
    return int(math.ceil(mean + 10.0 * math.sqrt(mean)))


def pgf_to_pmf(pgf: Callable, n_max: int | None = None, mean: float | None = None) -> PMF:
    """Invert a PGF by the discrete Fourier transform on the unit circle.

    ``pgf`` maps complex ``z`` (an array when vectorized, else scalars) to
    the PGF value.  Without ``n_max`` the truncation point is
    ``ceil(mean + 10 sqrt(mean))``, the mean being estimated from the PGF
    near ``z = 1`` when not supplied.
    """
    one = _call_pgf(pgf, np.array([1.0 + 0j]))[0]
    if abs(one - 1.0) > NORM_TOL:
        raise NotNormalized(f"pgf(1) = {one}, expected 1")
    if n_max is None:
        if mean is None:
            h = 1e-4
            v = _call_pgf(pgf, np.array([1 - h, 1 - 2 * h], dtype=complex)).real
            mean = (4 * (one.real - v[0]) - (one.real - v[1])) / (2 * h)
        n_max = default_n_max(mean)
    if n_max < 0:
        raise DomainError("n_max must be nonnegative")
    M = max(64, 1 << int(math.ceil(math.log2(2 * (n_max + 1)))))
    w = np.exp(2j * np.pi * np.arange(M) / M)
    vals = _call_pgf(pgf, w)
    p = (np.fft.fft(vals) / M).real[: n_max + 1]
    p[(p < 0) & (p >= PMF_CLIP)] = 0.0
    return PMF(p, float(1.0 - p.sum()))


# -- finite-difference derivatives -------------------------------------------


def _fd_offsets(h: float = FD_STEP):
    return np.array([h, -h, h / 2, -h / 2])


def _richardson_derivative(vals: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences at ``h`` and ``h/2`` along axis 0, extrapolated."""
    d1 = (vals[0] - vals[1]) / (2 * h)
    d2 = (vals[2] - vals[3]) / h
    return (4 * d2 - d1) / 3


def _z_derivative_points(model: ValidatedModel, h=FD_STEP) -> _Points:
    K, k = model.K, model.k
    z = []
    for r in range(K):
        for d in _fd_offsets(h):
            zr = np.ones(K, dtype=complex)
            zr[r] += d
            z.append(zr)
    return _Points.in_service(np.array(z), np.zeros((len(z), k)))


def _s_derivative_points(model: ValidatedModel, h=FD_STEP) -> _Points:
    K, k = model.K, model.k
    s = []
    for c in range(k):
        for d in _fd_offsets(h):
            sc = np.zeros(k, dtype=complex)
            sc[c] = d
            s.append(sc)
    return _Points.in_service(np.ones((len(s), K)), np.array(s))


@dataclass(frozen=True, eq=False)
class TransientMeans:
    times: np.ndarray
    in_service: np.ndarray  # (N + 1, K)
    resources: np.ndarray  # (N + 1, k)


def _grouped_derivative(vals: np.ndarray) -> np.ndarray:
    """Derivative from points grouped in fours along the last axis (see ``_fd_offsets``)."""
    grouped = vals.reshape(vals.shape[:-1] + (-1, 4))
    return _richardson_derivative(np.moveaxis(grouped, -1, 0))


def _mean_curves(model, pts, grid, method, phase_reset, route) -> np.ndarray:
    """``(N + 1, n)`` derivatives for ``n`` groups of four finite-difference points."""
    if len(pts) == 0:
        return np.zeros((grid.n + 1, 0))
    if route == "transform":
        vals = queue_transform_transient(model, pts, grid, method, phase_reset).mixed.real
        return _grouped_derivative(vals)
    if route == "mixture":
        from .renewal import _initial_customer_factors, _state_scalars

        first, base = _state_scalars(model, pts, grid, method, phase_reset)
        first = first * _initial_customer_factors(model, pts, grid)
        dfirst = _grouped_derivative(first.real)
        dbase = _grouped_derivative(base.real)
        return catastrophe_transform_transient(dbase, model.env, grid.step, first=dfirst).mixed
    raise ValueError(f"unknown route {route!r}")


def transient_queue_means(model, grid: Grid | None = None, method: str = "ode", phase_reset: str = "keep",
                          route: str = "transform") -> TransientMeans:
    """Mean busy servers per type and mean resources in the system on the grid.

    ``route="transform"`` differentiates the catastrophe-model transform;
    ``route="mixture"`` differentiates the no-catastrophe transforms and then
    mixes the means with the renewal operator.  The two agree to round-off.
    """
    model = ensure_validated(model)
    if grid is None:
        grid = Grid(model.config.numeric.step, model.config.numeric.horizon)
    omega = _mean_curves(model, _z_derivative_points(model), grid, method, phase_reset, route)
    delta = -_mean_curves(model, _s_derivative_points(model), grid, method, phase_reset, route)
    return TransientMeans(grid.times, omega, delta)


# -- stationary KPIs ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StationaryKPIs:
    L_q: np.ndarray  # per type
    L_los: np.ndarray  # per type, mean destroyed at a catastrophe epoch
    L_los_rate: np.ndarray  # per type, destroyed per unit time
    delta: np.ndarray  # (K, k) mean resources in the system per type
    q: np.ndarray
    rates: np.ndarray  # (S, K) customer arrival rate per state and type

    @property
    def L_q_total(self) -> float:
        return float(self.L_q.sum())

    @property
    def L_los_total(self) -> float:
        return float(self.L_los.sum())

    @property
    def L_los_rate_total(self) -> float:
        return float(self.L_los_rate.sum())

    @property
    def delta_total(self) -> np.ndarray:
        return self.delta.sum(axis=0)


def _kpi_integrals(model: ValidatedModel, h: float):
    """Per (state, type): ``int (1-F) int_0^u (1-B)`` and ``int (1-F)(1-B)``."""
    env = model.env
    T = stationary_horizon(env, h)
    grid = Grid(h, T)
    t = grid.times
    I_q = np.zeros((model.S, model.K))
    I_los = np.zeros((model.S, model.K))
    for j in range(model.S):
        F = env.sojourn_survival(j, t)
        Fl = env.sojourn_survival(j, t, left=True)
        for r in range(model.K):
            B = model.service.service[r][j]
            sb, sbl = B.survival(t), B.survival_left(t)
            m = cumulative_trapezoid(sb, sbl, h)
            I_q[j, r] = 0.5 * h * np.sum(F[:-1] * m[:-1] + Fl[1:] * m[1:])
            I_los[j, r] = 0.5 * h * np.sum(F[:-1] * sb[:-1] + Fl[1:] * sbl[1:])
    return I_q, I_los


def state_type_rates(model: ValidatedModel) -> np.ndarray:
    from .mapalg import arrival_rates

    return np.array([arrival_rates(model.mmap, j).per_type for j in range(model.S)])


def stationary_kpis(model, step: float | None = None) -> StationaryKPIs:
    """Long-run mean queue, destroyed customers and resources.

    Integrals are computed on the grid with step ``step`` (default: the
    model's) and at half that step, then Richardson-extrapolated.
    """
    model = ensure_validated(model)
    lam = state_type_rates(model)
    cbar = np.array([model.service.arrival_mean(r) for r in range(model.K)]).reshape(model.K, model.k)
    if model.env.absorbing:
        gbar = np.array([model.service.service[r][0].mean for r in range(model.K)])
        Lq = lam[0] * gbar
        zero = np.zeros(model.K)
        return StationaryKPIs(Lq, zero, zero.copy(), Lq[:, None] * cbar, np.ones(1), lam)
    h = model.config.numeric.step if step is None else step
    c1, l1 = _kpi_integrals(model, h)
    c2, l2 = _kpi_integrals(model, h / 2)
    I_q = (4 * c2 - c1) / 3
    I_los = (4 * l2 - l1) / 3
    w = stationary_weights(model.env)
    Lq = np.einsum("j,jr,jr->r", w.q / w.eta, lam, I_q)
    Lrate = np.einsum("j,jr,jr->r", w.q / w.eta, lam, I_los)
    Llos = np.einsum("j,jr,jr->r", w.rho, lam, I_los)
    return StationaryKPIs(Lq, Llos, Lrate, Lq[:, None] * cbar, w.q, lam)


def stationary_pgf(model, z, method: str = "ode", phase_reset: str = "keep", type_index: int | None = None,
                   step: float | None = None) -> np.ndarray:
    """Long-run PGF of busy servers (all types, or one type) at an array of ``z``."""
    model = ensure_validated(model)
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    Z = np.ones((len(z), model.K), dtype=complex)
    if type_index is None:
        Z[:] = z[:, None]
    else:
        Z[:, type_index] = z
    pts = _Points.in_service(Z, np.zeros((len(z), model.k)))
    return queue_transform_stationary(model, pts, step, method, phase_reset)


def stationary_mean_from_pgf(model, method: str = "ode", phase_reset: str = "keep", step=None) -> float:
    """Total long-run mean busy servers by differentiating the stationary PGF."""
    vals = stationary_pgf(model, 1.0 + _fd_offsets(), method, phase_reset, step=step).real
    return float(_richardson_derivative(vals))


def stationary_pmf(model, n_max: int | None = None, method: str = "ode", phase_reset: str = "keep",
                   type_index: int | None = None, step=None) -> PMF:
    model = ensure_validated(model)
    if n_max is None:
        kp = stationary_kpis(model, step)
        mean = kp.L_q_total if type_index is None else float(kp.L_q[type_index])
        n_max = default_n_max(mean)
    return pgf_to_pmf(lambda z: stationary_pgf(model, z, method, phase_reset, type_index, step), n_max)


# -- degenerate (batch-Poisson) special case ---------------------------------


@dataclass(frozen=True)
class DegenerateInput:
    alpha: np.ndarray  # per state
    batch_law: tuple  # per state: dict label -> probability


def degenerate_form(model: ValidatedModel) -> DegenerateInput:
    """Recover ``alpha_i`` and ``p(h)`` when ``D0 = -alpha I`` and ``D_h = alpha p(h) I``."""
    m = model.m
    I = np.eye(m)
    alphas, laws = [], []
    for i in range(model.S):
        blk = model.mmap.block(i)
        alpha = -float(blk.D0[0, 0])
        if not np.allclose(blk.D0, -alpha * I, atol=1e-12, rtol=0):
            raise NotDegenerate(f"D0 in state {i} is not a multiple of the identity")
        law = {}
        for h, mat in blk.batches.items():
            c = float(mat[0, 0])
            if not np.allclose(mat, c * I, atol=1e-12, rtol=0):
                raise NotDegenerate(f"D{list(h)} in state {i} is not a multiple of the identity")
            if c:
                law[h] = c / alpha
        alphas.append(alpha)
        laws.append(law)
    return DegenerateInput(np.array(alphas), tuple(laws))


@dataclass(frozen=True, eq=False)
class MGIResult:
    times: np.ndarray
    per_state: np.ndarray  # (N + 1, S, P) no-catastrophe PGFs
    transient: np.ndarray  # (N + 1, P) catastrophe-model PGF mixed over p0
    stationary: np.ndarray | None  # (P,)
    L_los: np.ndarray | None  # per type


def _mgi_exponent(model, deg, state, pts, grid) -> np.ndarray:
    """``int_0^t (1 - D_i(z, u)) du`` on the grid, ``(N + 1, P)``."""
    service = [model.service.service[r][state] for r in range(model.K)]
    F, G = _resource_lsts(model, pts)
    law = deg.batch_law[state]

    def dtil(times, left=False):
        marks = _marks(service, F, G, pts, times, left)  # (P, n, K)
        out = np.zeros(marks.shape[:2], dtype=complex)
        for h, p in law.items():
            out += p * np.prod(marks ** np.asarray(h), axis=-1)
        return (1.0 - out).T

    # Simpson per panel, as in the transform solver
    panels = (grid.step / 6.0) * (dtil(grid.times[:-1]) + 4.0 * dtil(grid.midpoints) + dtil(grid.times[1:], True))
    out = np.zeros((grid.n + 1, len(pts)), dtype=complex)
    out[1:] = np.cumsum(panels, axis=0)
    return out


def _mgi_losses(model, deg, h) -> np.ndarray:
    """Mean destroyed per catastrophe and type: ``sum_j rho_j lam_jr int (1-F_j)(1-B_jr)``."""
    w = stationary_weights(model.env)
    t = Grid(h, stationary_horizon(model.env, h)).times
    los = np.zeros(model.K)
    for j in range(model.S):
        rate = deg.alpha[j] * sum(p * np.asarray(hh, float) for hh, p in deg.batch_law[j].items())
        F, Fl = model.env.sojourn_survival(j, t), model.env.sojourn_survival(j, t, left=True)
        for r in range(model.K):
            B = model.service.service[r][j]
            integral = 0.5 * h * np.sum(F[:-1] * B.survival(t[:-1]) + Fl[1:] * B.survival_left(t[1:]))
            los[r] += w.rho[j] * rate[r] * integral
    return los


def mgi_special_case(model, z, grid: Grid | None = None, stationary: bool = True) -> MGIResult:
    """Scalar-exponent PGFs for an MMAP that is a batch-Poisson process in every state.

    ``z`` is a ``(P, K)`` array of busy-server marks.  Returns the
    no-catastrophe PGFs per state, their catastrophe mixture and (when the
    environment admits one) the long-run PGF together with the destroyed
    means per catastrophe.
    """
    model = ensure_validated(model)
    deg = degenerate_form(model)
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    pts = _Points.in_service(z, np.zeros((len(z), model.k)))
    if grid is None:
        grid = Grid(model.config.numeric.step, model.config.numeric.horizon)

    def per_state(g):
        return np.stack([np.exp(-deg.alpha[i] * _mgi_exponent(model, deg, i, pts, g)) for i in range(model.S)], axis=1)

    P = per_state(grid)
    trans = catastrophe_transform_transient(P, model.env, grid.step).mixed
    stat = None
    los = None
    if stationary and not model.env.absorbing:
        h = grid.step
        g = Grid(h, stationary_horizon(model.env, h))
        stat = catastrophe_transform_stationary(per_state(g), model.env, h)
        los = (4 * _mgi_losses(model, deg, h / 2) - _mgi_losses(model, deg, h)) / 3
    return MGIResult(grid.times, P, trans, stat, los)


# -- reports and comparison targets ---------------------------------------------


class Key(NamedTuple):
    """Label of a reported quantity; ``None`` fields do not apply."""

    quantity: str
    type_index: int | None = None
    env_state: int | None = None
    t: float | None = None


def fmt_point(x: float) -> str:
    return repr(float(x))


def pgf_key(z: float, t: float) -> Key:
    return Key(f"in_service_pgf[z={fmt_point(z)}]", None, None, t)


def lst_key(s: float, t: float) -> Key:
    return Key(f"resource_lst[s={fmt_point(s)}]", None, None, t)


def mean_cycle(model: ValidatedModel) -> float:
    """Mean time between catastrophes in the long run (``inf`` without catastrophes)."""
    if model.env.absorbing:
        return math.inf
    w = stationary_weights(model.env)
    return float(w.rho @ w.eta)


def stationary_targets_valid(model: ValidatedModel, horizon: float) -> bool:
    return not model.env.absorbing and horizon >= 20 * mean_cycle(model)


@dataclass(frozen=True, eq=False)
class PerformanceReport:
    horizon: float
    method: str
    means: TransientMeans
    kpis: StationaryKPIs
    pgf: dict = field(default_factory=dict)  # z -> value at the horizon
    lst: dict = field(default_factory=dict)  # s -> value at the horizon
    pmf: PMF | None = None

    def rows(self, stationary: bool = True) -> dict:
        """Flat ``Key -> value`` mapping of every reported quantity."""
        T = self.horizon
        out = {}
        for r, v in enumerate(self.means.in_service[-1]):
            out[Key("in_service_mean", r, None, T)] = float(v)
        for c, v in enumerate(self.means.resources[-1]):
            out[Key(f"resource_mean[{c}]", None, None, T)] = float(v)
        for z, v in self.pgf.items():
            out[pgf_key(z, T)] = float(np.real(v))
        for s, v in self.lst.items():
            out[lst_key(s, T)] = float(np.real(v))
        if stationary:
            kp = self.kpis
            for r in range(len(kp.L_q)):
                out[Key("L_q", r)] = float(kp.L_q[r])
                out[Key("L_los", r)] = float(kp.L_los[r])
                out[Key("L_los_rate", r)] = float(kp.L_los_rate[r])
                for c in range(kp.delta.shape[1]):
                    out[Key(f"delta[{c}]", r)] = float(kp.delta[r, c])
            out[Key("L_q")] = kp.L_q_total
            out[Key("L_los")] = kp.L_los_total
            out[Key("L_los_rate")] = kp.L_los_rate_total
            for c, v in enumerate(kp.delta_total):
                out[Key(f"delta[{c}]")] = float(v)
        return out

    def info_rows(self) -> dict:
        """Quantities with no simulation counterpart."""
        out = {}
        for i, v in enumerate(self.kpis.q):
            out[Key("q", None, i)] = float(v)
        for i, row in enumerate(self.kpis.rates):
            for r, v in enumerate(row):
                out[Key("lambda", r, i)] = float(v)
        if self.pmf is not None:
            for n, p in enumerate(self.pmf.probs):
                out[Key(f"pmf[n={n}]")] = float(p)
            out[Key("pmf_tail")] = self.pmf.tail
        return out


def performance_report(model, horizon: float | None = None, z_points=(), s_points=(), method: str = "ode",
                       phase_reset: str = "keep", pmf: bool = False, step: float | None = None) -> PerformanceReport:
    """Evaluate transient means and transforms at ``horizon`` plus every stationary KPI."""
    model = ensure_validated(model)
    step = model.config.numeric.step if step is None else step
    T = model.config.numeric.horizon if horizon is None else horizon
    grid = Grid(step, T)
    means = transient_queue_means(model, grid, method, phase_reset)
    kpis = stationary_kpis(model, step)
    pgf, lst = {}, {}
    z_points, s_points = list(z_points), list(s_points)
    if z_points or s_points:
        Z = [np.full(model.K, z) for z in z_points] + [np.ones(model.K)] * len(s_points)
        S = [np.zeros(model.k)] * len(z_points) + [np.full(model.k, s) for s in s_points]
        pts = _Points.in_service(np.array(Z, dtype=complex), np.array(S, dtype=complex).reshape(len(Z), model.k))
        vals = queue_transform_transient(model, pts, grid, method, phase_reset).mixed[-1]
        pgf = {float(z): vals[i] for i, z in enumerate(z_points)}
        lst = {float(s): vals[len(z_points) + i] for i, s in enumerate(s_points)}
    dist = stationary_pmf(model, method=method, phase_reset=phase_reset, step=step) if pmf else None
    return PerformanceReport(T, method, means, kpis, pgf, lst, dist)
