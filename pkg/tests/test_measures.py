import cmath
import math

import numpy as np
import pytest
from scipy import stats

from mmapq import (
    Grid,
    KernelEntry,
    MMAPBlock,
    MMAPSpec,
    ModelConfig,
    NumericSettings,
    SemiMarkovEnvironment,
    ServiceResourceModel,
    deterministic,
    erlang,
    exponential,
    load_fixture,
    mgi_special_case,
    performance_report,
    pgf_to_pmf,
    stationary_kpis,
    stationary_pmf,
    transient_queue_means,
    uniform,
    validate_model,
)
from mmapq.errors import NotDegenerate, NotNormalized
from mmapq.measures import (
    Key,
    _richardson_derivative,
    mean_cycle,
    stationary_mean_from_pgf,
    stationary_pgf,
    stationary_targets_valid,
)
from mmapq.renewal import queue_transform_stationary, queue_transform_transient
from mmapq.transient import _Points

from conftest import D0_EX, D1_EX, poisson_model, single_state_env

CAT = dict(env=single_state_env(exponential(0.5)))


@pytest.fixture(scope="module")
def mm_cat():
    return poisson_model(2.0, exponential(1.0), env=single_state_env(exponential(0.5)), horizon=2.0)


def batch_model(env=None, horizon=3.0, step=0.01):
    alpha = 1.5
    I = np.eye(1)
    blk = MMAPBlock(-alpha * I, {(1, 0): 0.6 * alpha * I, (0, 2): 0.4 * alpha * I})
    sr = ServiceResourceModel(((exponential(1.0),), (uniform(0.1, 0.9),)))
    env = env or single_state_env(exponential(0.8))
    return validate_model(ModelConfig(MMAPSpec(1, 2, (blk,)), env, sr, (), NumericSettings(horizon, step)))


# -- pgf_to_pmf ----------------------------------------------------------------


def test_pmf_examples():
    assert pgf_to_pmf(lambda z: z**3, 5).probs == pytest.approx([0, 0, 0, 1, 0, 0], abs=1e-14)
    assert pgf_to_pmf(lambda z: np.ones_like(z), 3).probs == pytest.approx([1, 0, 0, 0], abs=1e-14)
    p = pgf_to_pmf(lambda z: np.exp(z - 1), 10)
    assert np.abs(p.probs - stats.poisson.pmf(np.arange(11), 1.0)).max() < 1e-10
    assert p.probs[2] == pytest.approx(0.183940, abs=1e-6)


def test_pmf_scalar_evaluator_and_default_truncation():
    p = pgf_to_pmf(lambda z: cmath.exp(4.0 * (z - 1)))
    assert len(p.probs) == math.ceil(4 + 10 * 2) + 1
    assert p.tail < 1e-9
    assert p.mean == pytest.approx(4.0, abs=1e-8)


def test_pmf_rejects_unnormalized():
    with pytest.raises(NotNormalized):
        pgf_to_pmf(lambda z: 0.9 * z, 4)


def test_pmf_clips_round_off_only():
    p = pgf_to_pmf(lambda z: (0.5 + 0.5 * z) ** 2, 4)
    assert np.all(p.probs >= 0)
    assert p.probs[:3] == pytest.approx([0.25, 0.5, 0.25], abs=1e-14)


# -- finite differences --------------------------------------------------------


def test_fd_orders():
    f = np.exp
    errs_plain, errs_rich = [], []
    for h in (0.1, 0.05, 0.025):
        x = np.array([h, -h, h / 2, -h / 2])
        errs_plain.append(abs((f(h) - f(-h)) / (2 * h) - 1))
        errs_rich.append(abs(_richardson_derivative(f(x), h) - 1))
    assert errs_plain[0] / errs_plain[1] == pytest.approx(4, rel=0.05)
    assert errs_rich[0] / errs_rich[1] == pytest.approx(16, rel=0.05)
    assert errs_rich[1] / errs_rich[2] == pytest.approx(16, rel=0.05)


# -- transient means -----------------------------------------------------------


def test_transient_mean_mm_inf(mm1):
    tm = transient_queue_means(mm1, Grid(0.01, 1.0))
    assert tm.in_service[0, 0] == 0.0
    assert tm.in_service[-1, 0] == pytest.approx(1 - math.exp(-1), abs=1e-8)
    assert np.abs(tm.in_service[:, 0] - (1 - np.exp(-tm.times))).max() < 1e-8


def test_transient_mean_with_catastrophes_tends_to_limit():
    M = poisson_model(1.0, exponential(1.0), env=single_state_env(exponential(1.0)), horizon=20.0, step=0.02)
    tm = transient_queue_means(M)
    # the renewal convolution is second order: about 5e-5 at this step
    assert tm.in_service[-1, 0] == pytest.approx(0.5, abs=1e-4)
    # closed form: (1 - e^{-2t}) / 2
    assert np.abs(tm.in_service[:, 0] - 0.5 * (1 - np.exp(-2 * tm.times))).max() < 1e-4


def test_transient_mean_routes_agree():
    M = validate_model(load_fixture("two_state"))
    g = Grid(0.01, 2.0)
    a = transient_queue_means(M, g, route="transform")
    b = transient_queue_means(M, g, route="mixture")
    assert np.abs(a.in_service - b.in_service).max() < 1e-8
    assert np.abs(a.resources - b.resources).max() < 1e-8


def test_resource_mean_mm_inf():
    M = poisson_model(1.0, exponential(1.0), arrival=((exponential(2.0),),), departure=((exponential(1.0),),),
                      horizon=1.0)
    tm = transient_queue_means(M)
    assert tm.resources[-1, 0] == pytest.approx(0.5 * (1 - math.exp(-1)), abs=1e-8)


# -- stationary KPIs -------------------------------------------------------------


def test_kpis_closed_form(mm_cat):
    kp = stationary_kpis(mm_cat)
    assert kp.L_q_total == pytest.approx(4 / 3, abs=1e-8)
    assert kp.L_los_total == pytest.approx(4 / 3, abs=1e-8)
    assert kp.L_los_rate_total == pytest.approx(2 / 3, abs=1e-8)
    assert kp.q == pytest.approx([1.0])


def test_delta_equals_lq_for_unit_resources():
    M = poisson_model(2.0, exponential(1.0), arrival=((deterministic(1.0),),), departure=((deterministic(1.0),),),
                      **CAT)
    kp = stationary_kpis(M)
    assert kp.delta[0, 0] == pytest.approx(kp.L_q[0], abs=1e-12)
    M3 = poisson_model(2.0, exponential(1.0), arrival=((exponential(1 / 3),),), departure=((deterministic(1.0),),),
                       **CAT)
    assert stationary_kpis(M3).delta[0, 0] == pytest.approx(4.0, abs=1e-7)


def test_absorbing_environment_kpis(mm1):
    kp = stationary_kpis(mm1)
    assert kp.L_q_total == pytest.approx(1.0, abs=1e-8)
    assert kp.L_los_total == 0.0


def test_little_consistency(mm_cat):
    kp = stationary_kpis(mm_cat)
    assert stationary_mean_from_pgf(mm_cat) == pytest.approx(kp.L_q_total, abs=1e-5)
    M = validate_model(load_fixture("two_state"))
    assert stationary_mean_from_pgf(M) == pytest.approx(stationary_kpis(M).L_q_total, abs=1e-5)


def test_stationary_pmf(mm_cat):
    p = stationary_pmf(mm_cat)
    assert np.all(p.probs >= 0)
    assert p.probs.sum() == pytest.approx(1.0, abs=1e-6)
    assert p.mean == pytest.approx(4 / 3, rel=1e-4)


def test_stationary_pgf_per_type():
    M = batch_model()
    full = stationary_pgf(M, [0.5])[0]
    t0 = stationary_pgf(M, [0.5], type_index=0)[0]
    t1 = stationary_pgf(M, [0.5], type_index=1)[0]
    assert 0 < full.real < min(t0.real, t1.real) < 1


def test_mean_cycle(mm_cat, mm1):
    assert mean_cycle(mm_cat) == pytest.approx(2.0)
    assert mean_cycle(mm1) == math.inf
    assert stationary_targets_valid(mm_cat, 40.0) and not stationary_targets_valid(mm_cat, 39.0)
    assert mean_cycle(validate_model(load_fixture("two_state"))) == pytest.approx(0.482, abs=1e-3)


# -- batch-Poisson special case --------------------------------------------------


def test_mgi_examples(mm1):
    r = mgi_special_case(mm1, np.array([[0.0], [1.0]]), Grid(0.01, 1.0), stationary=False)
    assert r.transient[-1, 0].real == pytest.approx(math.exp(-(1 - math.exp(-1))), abs=1e-5)
    assert np.allclose(r.transient[:, 1], 1.0)
    assert r.stationary is None


def test_mgi_matches_generic_pipeline():
    M = batch_model()
    rng = np.random.default_rng(7)
    z = rng.uniform(0, 1, size=(20, 2))
    g = Grid(0.01, 3.0)
    r = mgi_special_case(M, z, g)
    pts = _Points.in_service(z, np.zeros((20, 0)))
    generic = queue_transform_transient(M, pts, g).mixed
    assert np.abs(r.transient - generic).max() < 1e-8
    stat = queue_transform_stationary(M, pts, richardson=False)
    assert np.abs(r.stationary - stat).max() < 1e-8
    assert np.allclose(r.L_los, stationary_kpis(M).L_los, atol=1e-8)


def test_mgi_rejects_non_degenerate():
    blk = MMAPBlock(D0_EX, {(1,): D1_EX})
    M = validate_model(ModelConfig(MMAPSpec(2, 1, (blk,)), single_state_env(exponential(1.0)),
                                   ServiceResourceModel(((exponential(1.0),),)), (), NumericSettings(1.0, 0.01)))
    with pytest.raises(NotDegenerate):
        mgi_special_case(M, np.array([[0.5]]))


# -- reports ----------------------------------------------------------------------


def test_performance_report_rows(mm_cat):
    rep = performance_report(mm_cat, z_points=[0.0, 0.5], s_points=[1.0], pmf=True)
    rows = rep.rows()
    assert rows[Key("L_q")] == pytest.approx(4 / 3, abs=1e-8)
    assert rows[Key("L_q", 0)] == rows[Key("L_q")]
    assert Key("in_service_pgf[z=0.5]", None, None, 2.0) in rows
    assert Key("resource_lst[s=1.0]", None, None, 2.0) in rows
    info = rep.info_rows()
    assert info[Key("q", None, 0)] == 1.0
    assert info[Key("lambda", 0, 0)] == pytest.approx(2.0)
    assert abs(info[Key("pmf_tail")]) < 1e-6
    assert Key("L_q") not in rep.rows(stationary=False)
