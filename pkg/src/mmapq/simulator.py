"""Discrete-event Monte-Carlo oracle for the full model.

Each replication runs one sample path on ``[0, T]`` with its own
:class:`random.Random` streams.  Stream seeds come from
``numpy.random.SeedSequence(seed, spawn_key=(rep,))``, so replication
``rep`` draws the same numbers whichever worker runs it.
"""

from __future__ import annotations

import bisect
import heapq
import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConservationError, DomainError, ExplosionGuard, LabelMismatch
from .measures import Key, PerformanceReport, lst_key, pgf_key, stationary_targets_valid
from .transient import ensure_validated

DEFAULT_EVENT_CAP = 10_000_000

_DEPART, _CATASTROPHE, _PHASE = 0, 1, 2


@dataclass
class SimulationState:
    """Snapshot handed to an observer after every event."""

    clock: float
    phase: int
    env_state: int
    kind: int
    arrived: list  # N(t) per type
    served: list  # M(t) per type
    destroyed: list  # per type
    in_service: list  # N_s(t) per type (initial customers excluded)
    initial_in_service: list
    alpha: list
    beta: list


@dataclass
class _Tables:
    """Per-model lookup tables shared by all replications."""

    K: int
    k: int
    S: int
    hold: list  # hold[i][p]: total outgoing rate of phase p in state i
    cum: list  # cum[i][p]: cumulative outcome probabilities
    outcomes: list  # outcomes[i][p]: list of (label or None, next phase)
    env_cum: list  # env_cum[i]: cumulative embedded-chain probabilities
    env_next: list  # env_next[i]: list of (j, dist)
    pi: list  # stationary phase law per state (cumulative)
    theta: list  # initial phase law per state (cumulative)
    p0: list  # cumulative initial environment law
    absorbing: bool


def _cumulative(p) -> list:
    c = list(np.cumsum(np.asarray(p, dtype=float)))
    c[-1] = 1.0
    return c


def _tables(model) -> _Tables:
    m, S = model.m, model.S
    hold, cum, outcomes = [], [], []
    for i in range(S):
        blk = model.mmap.block(i)
        hi, ci, oi = [], [], []
        for p in range(m):
            rates, outs = [], []
            for q in range(m):
                if q != p and blk.D0[p, q] > 0:
                    rates.append(float(blk.D0[p, q]))
                    outs.append((None, q))
            for h, mat in blk.batches.items():
                for q in range(m):
                    if mat[p, q] > 0:
                        rates.append(float(mat[p, q]))
                        outs.append((tuple(int(x) for x in h), q))
            total = -float(blk.D0[p, p])
            hi.append(total)
            ci.append(_cumulative(np.array(rates) / sum(rates)) if rates else [1.0])
            oi.append(outs or [(None, p)])
        hold.append(hi)
        cum.append(ci)
        outcomes.append(oi)
    env = model.env
    env_cum, env_next = [], []
    for i in range(S):
        entries = [(j, e) for (a, j), e in sorted(env.kernel.items()) if a == i and e.prob > 0]
        env_cum.append(_cumulative([e.prob for _, e in entries]) if entries else [1.0])
        env_next.append([(j, e.dist) for j, e in entries])
    return _Tables(
        K=model.K,
        k=model.k,
        S=S,
        hold=hold,
        cum=cum,
        outcomes=outcomes,
        env_cum=env_cum,
        env_next=env_next,
        pi=[_cumulative(model.stationary_phase(i)) for i in range(S)],
        theta=[_cumulative(model.initial_phase(i)) for i in range(S)],
        p0=_cumulative(env.initial_distribution),
        absorbing=env.absorbing,
    )


@dataclass
class _RepResult:
    in_service: list  # arrivals still in service (initial customers excluded)
    initial_in_service: list
    served: list
    alpha: list
    beta: list
    avg_in_service: list  # time average over the window
    avg_alpha: list  # (K, k) time average of alpha split by type
    destroyed: list
    destroyed_window: list
    catastrophes_window: int
    kept: list
    events: int


def _replication(model, tab: _Tables, T: float, seed: int, rep: int, phase_reset: str, keep_prob,
                 event_cap: int, check: bool, observer: Callable | None) -> _RepResult:
    ss = np.random.SeedSequence(seed, spawn_key=(rep,))
    main_seed, thin_seed = (int(c.generate_state(2, np.uint64)[0]) for c in ss.spawn(2))
    rng = random.Random(main_seed)
    thin = random.Random(thin_seed)
    rnd, expo = rng.random, rng.expovariate
    bisect_right = bisect.bisect_right

    K, k = tab.K, tab.k
    sr = model.service
    serv = [[sr.service[r][i].sampler(rng) for r in range(K)] for i in range(tab.S)]
    arr = [[d.sampler(rng) for d in sr.arrival[r]] for r in range(K)] if k else [[] for _ in range(K)]
    dep = [[d.sampler(rng) for d in sr.departure[r]] for r in range(K)] if k else [[] for _ in range(K)]
    env_samplers = [[(j, d.sampler(rng)) for j, d in nxt] for nxt in tab.env_next]

    w0 = 0.5 * T
    arrived = [0] * K
    served = [0] * K
    destroyed = [0] * K
    destroyed_w = [0] * K
    cats_w = 0
    ins = [0] * K
    init_ins = [0] * K
    alpha = [0.0] * k
    alpha_type = [[0.0] * k for _ in range(K)]
    beta = [0.0] * k
    area_ins = [0.0] * K
    area_alpha = [[0.0] * k for _ in range(K)]
    kept = [0] * K
    h0 = [int(x) for x in model.initial_customers]

    env = bisect_right(tab.p0, rnd())
    phase = bisect_right(tab.theta[env], rnd())
    t = 0.0
    heap: list = []
    seq = 0
    for r in range(K):
        for _ in range(h0[r]):
            heapq.heappush(heap, (serv[env][r](), seq, r, None))
            seq += 1
        init_ins[r] = h0[r]

    def next_env_time(now, i):
        if tab.absorbing:
            return math.inf, i
        j, draw = env_samplers[i][bisect_right(tab.env_cum[i], rnd())]
        return now + draw(), j

    def next_phase_time(now, i, p):
        rate = tab.hold[i][p]
        return now + expo(rate) if rate > 0 else math.inf

    t_env, env_to = next_env_time(0.0, env)
    t_phase = next_phase_time(0.0, env, phase)
    events = 0
    while True:
        t_dep = heap[0][0] if heap else math.inf
        if t_dep <= t_env and t_dep <= t_phase:
            kind, t_next = _DEPART, t_dep
        elif t_env <= t_phase:
            kind, t_next = _CATASTROPHE, t_env
        else:
            kind, t_next = _PHASE, t_phase
        if t_next > T:
            t_next = T
            kind = None
        # accumulate time averages over [w0, T]
        lo = t if t > w0 else w0
        if t_next > lo:
            dt = t_next - lo
            for r in range(K):
                area_ins[r] += ins[r] * dt
                if k:
                    ar, at = area_alpha[r], alpha_type[r]
                    for c in range(k):
                        ar[c] += at[c] * dt
        t = t_next
        if kind is None:
            break
        events += 1
        if events > event_cap:
            raise ExplosionGuard(f"replication {rep} exceeded {event_cap} events")

        if kind == _DEPART:
            _, _, r, zeta = heapq.heappop(heap)
            served[r] += 1
            if zeta is None:
                init_ins[r] -= 1
            else:
                ins[r] -= 1
                at = alpha_type[r]
                for c in range(k):
                    # clamp float round-off so alpha stays nonnegative
                    alpha[c] = max(alpha[c] - zeta[c], 0.0)
                    at[c] = max(at[c] - zeta[c], 0.0)
            for c in range(k):
                beta[c] += dep[r][c]()
        elif kind == _CATASTROPHE:
            in_window = t >= w0
            if in_window:
                cats_w += 1
            for r in range(K):
                gone = ins[r] + init_ins[r]
                destroyed[r] += gone
                if in_window:
                    destroyed_w[r] += gone
                ins[r] = 0
                init_ins[r] = 0
                if k:
                    alpha_type[r] = [0.0] * k
            if k:
                alpha = [0.0] * k
            heap = []
            env = env_to
            if phase_reset == "reset":
                phase = bisect_right(tab.pi[env], rnd())
            t_env, env_to = next_env_time(t, env)
            t_phase = next_phase_time(t, env, phase)
        else:
            label, phase = tab.outcomes[env][phase][bisect_right(tab.cum[env][phase], rnd())]
            if label is not None:
                for r in range(K):
                    n = label[r]
                    if not n:
                        continue
                    arrived[r] += n
                    ins[r] += n
                    sampler = serv[env][r]
                    at = alpha_type[r]
                    for _ in range(n):
                        zeta = tuple(f() for f in arr[r])
                        for c in range(k):
                            alpha[c] += zeta[c]
                            at[c] += zeta[c]
                        heapq.heappush(heap, (t + sampler(), seq, r, zeta))
                        seq += 1
                        if keep_prob is not None and thin.random() < keep_prob[r]:
                            kept[r] += 1
            t_phase = next_phase_time(t, env, phase)

        if check:
            for r in range(K):
                if arrived[r] + h0[r] != served[r] + ins[r] + init_ins[r] + destroyed[r]:
                    raise ConservationError(
                        f"replication {rep}, t={t}: type {r} arrivals {arrived[r]} + initial {h0[r]} != "
                        f"served {served[r]} + in service {ins[r] + init_ins[r]} + destroyed {destroyed[r]}"
                    )
        if observer is not None:
            observer(SimulationState(t, phase, env, kind, list(arrived), list(served), list(destroyed), list(ins),
                                     list(init_ins), list(alpha), list(beta)))

    span = T - w0
    avg_ins = [a / span if span > 0 else float(ins[r]) for r, a in enumerate(area_ins)]
    avg_alpha = [[a / span if span > 0 else alpha_type[r][c] for c, a in enumerate(row)] for r, row in enumerate(area_alpha)]
    return _RepResult(
        in_service=ins,
        initial_in_service=init_ins,
        served=served,
        alpha=alpha,
        beta=beta,
        avg_in_service=avg_ins,
        avg_alpha=avg_alpha,
        destroyed=destroyed,
        destroyed_window=destroyed_w,
        catastrophes_window=cats_w,
        kept=kept,
        events=events,
    )


def _run_chunk(args):
    config, T, seed, reps, phase_reset, keep_prob, event_cap, check = args
    model = ensure_validated(config)
    tab = _tables(model)
    return [_replication(model, tab, T, seed, rep, phase_reset, keep_prob, event_cap, check, None) for rep in reps]


# -- estimates ----------------------------------------------------------------


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    replications: int
    seed: int


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = len(x)
    mean = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return mean, se


def _ratio_se(y: np.ndarray, x: np.ndarray) -> tuple[float, float]:
    """Ratio of means ``sum y / sum x`` with its delta-method standard error."""
    n = len(x)
    xbar = float(np.mean(x))
    if xbar == 0:
        return math.nan, math.nan
    ratio = float(np.sum(y) / np.sum(x))
    if n < 2:
        return ratio, math.nan
    resid = y - ratio * x
    return ratio, float(np.std(resid, ddof=1) / (xbar * math.sqrt(n)))


@dataclass(frozen=True, eq=False)
class EstimateSet:
    """Raw per-replication samples plus estimators for every simulated quantity."""

    horizon: float
    replications: int
    seed: int
    phase_reset: str
    in_service: np.ndarray  # (R, K) at the horizon, arrivals only
    initial_in_service: np.ndarray  # (R, K) initial customers still in service
    served: np.ndarray  # (R, K)
    alpha: np.ndarray  # (R, k)
    beta: np.ndarray  # (R, k)
    avg_in_service: np.ndarray  # (R, K) over [T/2, T]
    avg_alpha: np.ndarray  # (R, K, k)
    destroyed: np.ndarray  # (R, K) over [0, T]
    destroyed_window: np.ndarray  # (R, K) over [T/2, T]
    catastrophes_window: np.ndarray  # (R,)
    kept: np.ndarray  # (R, K)
    events: np.ndarray  # (R,)
    stationary_valid: bool = False
    window: float = field(default=0.0)

    def _est(self, samples) -> Estimate:
        v, se = _mean_se(np.asarray(samples, dtype=float))
        return Estimate(v, se, self.replications, self.seed)

    def in_service_pgf(self, z: float) -> Estimate:
        return self._est(float(z) ** self.in_service.sum(axis=1))

    def resource_lst(self, s: float) -> Estimate:
        return self._est(np.exp(-float(s) * self.alpha.sum(axis=1)))

    def kept_pgf(self, z) -> Estimate:
        """``E[prod_r z_r ** kept_r]`` over replications."""
        z = np.broadcast_to(np.asarray(z, dtype=float), (self.kept.shape[1],))
        return self._est(np.prod(z ** self.kept, axis=1))

    def destroyed_per_catastrophe(self, type_index=None) -> Estimate:
        y = self.destroyed_window.sum(axis=1) if type_index is None else self.destroyed_window[:, type_index]
        v, se = _ratio_se(y.astype(float), self.catastrophes_window.astype(float))
        return Estimate(v, se, self.replications, self.seed)

    def rows(self, z_points=(), s_points=()) -> dict:
        """``Key -> Estimate`` for every quantity the analytic report also produces."""
        T = self.horizon
        K = self.in_service.shape[1]
        k = self.alpha.shape[1]
        out = {}
        for r in range(K):
            out[Key("in_service_mean", r, None, T)] = self._est(self.in_service[:, r])
        for c in range(k):
            out[Key(f"resource_mean[{c}]", None, None, T)] = self._est(self.alpha[:, c])
        for z in z_points:
            out[pgf_key(z, T)] = self.in_service_pgf(z)
        for s in s_points:
            out[lst_key(s, T)] = self.resource_lst(s)
        if self.stationary_valid:
            for r in range(K):
                out[Key("L_q", r)] = self._est(self.avg_in_service[:, r])
                out[Key("L_los", r)] = self.destroyed_per_catastrophe(r)
                out[Key("L_los_rate", r)] = self._est(self.destroyed_window[:, r] / self.window)
                for c in range(k):
                    out[Key(f"delta[{c}]", r)] = self._est(self.avg_alpha[:, r, c])
            out[Key("L_q")] = self._est(self.avg_in_service.sum(axis=1))
            out[Key("L_los")] = self.destroyed_per_catastrophe()
            out[Key("L_los_rate")] = self._est(self.destroyed_window.sum(axis=1) / self.window)
            for c in range(k):
                out[Key(f"delta[{c}]")] = self._est(self.avg_alpha[:, :, c].sum(axis=1))
        return out


def simulate(model, horizon: float, replications: int, seed: int, phase_reset: str = "keep", keep_prob=None,
             event_cap: int = DEFAULT_EVENT_CAP, check: bool = True, workers: int = 1,
             observer: Callable | None = None) -> EstimateSet:
    """Run ``replications`` independent paths on ``[0, horizon]``.

    ``phase_reset`` selects whether the arrival phase is kept at a
    catastrophe (``keep``) or redrawn from the stationary phase law of the
    new state (``reset``).  ``keep_prob`` (per type) enables Bernoulli
    thinning of arrivals; kept counts are recorded separately and do not
    affect the path.  ``observer`` receives a :class:`SimulationState` after
    every event (single worker only).
    """
    model = ensure_validated(model)
    if replications < 1:
        raise DomainError("replications must be at least 1")
    if horizon < 0:
        raise DomainError("horizon must be nonnegative")
    if phase_reset not in ("keep", "reset"):
        raise DomainError(f"phase_reset must be 'keep' or 'reset', got {phase_reset!r}")
    if keep_prob is not None:
        keep_prob = [float(p) for p in np.broadcast_to(np.asarray(keep_prob, dtype=float), (model.K,))]
        if any(p < 0 or p > 1 for p in keep_prob):
            raise DomainError("retention probabilities must lie in [0, 1]")
    T = float(horizon)
    if workers > 1 and observer is None:
        chunks = [list(range(w, replications, workers)) for w in range(workers)]
        args = [(model.config, T, seed, c, phase_reset, keep_prob, event_cap, check) for c in chunks]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_run_chunk, args))
        results = [None] * replications
        for c, part in zip(chunks, parts):
            for rep, res in zip(c, part):
                results[rep] = res
    else:
        tab = _tables(model)
        results = [
            _replication(model, tab, T, seed, rep, phase_reset, keep_prob, event_cap, check, observer)
            for rep in range(replications)
        ]

    def col(name, shape):
        return np.array([getattr(r, name) for r in results], dtype=float).reshape((replications,) + shape)

    K, k = model.K, model.k
    return EstimateSet(
        horizon=T,
        replications=replications,
        seed=seed,
        phase_reset=phase_reset,
        in_service=col("in_service", (K,)),
        initial_in_service=col("initial_in_service", (K,)),
        served=col("served", (K,)),
        alpha=col("alpha", (k,)),
        beta=col("beta", (k,)),
        avg_in_service=col("avg_in_service", (K,)),
        avg_alpha=col("avg_alpha", (K, k)),
        destroyed=col("destroyed", (K,)),
        destroyed_window=col("destroyed_window", (K,)),
        catastrophes_window=col("catastrophes_window", ()),
        kept=col("kept", (K,)),
        events=col("events", ()).astype(int),
        stationary_valid=stationary_targets_valid(model, T),
        window=T / 2,
    )


# -- comparison -----------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonRow:
    key: Key
    analytic: float
    estimate: float
    stderr: float
    z: float
    passed: bool


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple
    threshold: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def failures(self) -> list:
        return [r for r in self.rows if not r.passed]


def z_score(analytic: float, estimate: float, stderr: float) -> float:
    diff = analytic - estimate
    if stderr > 0:
        return diff / stderr
    return 0.0 if diff == 0 else math.copysign(math.inf, diff)


def compare(estimates, analytic, z_threshold: float = 3.0) -> ComparisonReport:
    """z-scores of analytic values against simulation estimates.

    ``estimates`` maps keys to :class:`Estimate`; ``analytic`` maps the same
    keys to numbers (a :class:`PerformanceReport` is flattened with
    :meth:`PerformanceReport.rows`).  Every analytic key needs an estimate.
    """
    if isinstance(analytic, PerformanceReport):
        analytic = analytic.rows()
    missing = [key for key in analytic if key not in estimates]
    if missing:
        raise LabelMismatch(f"no simulation estimate for {missing}")
    rows = []
    for key, value in analytic.items():
        est = estimates[key]
        z = z_score(float(value), est.value, est.stderr)
        rows.append(ComparisonRow(key, float(value), est.value, est.stderr, z, bool(abs(z) <= z_threshold)))
    return ComparisonReport(tuple(rows), z_threshold)
