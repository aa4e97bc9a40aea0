import math
import warnings

import numpy as np
import pytest
from scipy.linalg import expm

from mmapq import (
    DomainError,
    MMAPBlock,
    MMAPSpec,
    arrival_rates,
    counting_moments,
    counting_pgf,
    generator_pgf,
    stationary_phase,
    thinned_counting_pgf,
    thinned_generator_pgf,
)
from mmapq.errors import GridError

from conftest import D0_EX, D1_EX, map_spec

POISSON = MMAPSpec(1, 1, (MMAPBlock(np.array([[-2.0]]), {(1,): np.array([[2.0]])}),))
BURSTY = map_spec(np.array([[-5.0, 1.0], [0.5, -1.0]]), np.array([[4.0, 0.0], [0.0, 0.5]]))


def test_generator_pgf_examples():
    assert np.allclose(generator_pgf(map_spec(), 0, 1.0), D0_EX + D1_EX)
    assert generator_pgf(POISSON, 0, 0.5)[0, 0] == pytest.approx(-1.0)
    assert np.allclose(generator_pgf(map_spec(), 0, 0.0), D0_EX)
    with pytest.raises(DomainError):
        generator_pgf(POISSON, 0, 1.1)


def test_stationary_phase_examples():
    sym = map_spec(np.array([[-2.0, 1.0], [1.0, -2.0]]), np.eye(2))
    assert np.allclose(stationary_phase(sym, 0), [0.5, 0.5])
    two = map_spec(np.array([[-3.0, 2.0], [1.0, -2.0]]), np.diag([1.0, 1.0]))
    assert np.allclose(stationary_phase(two, 0), [1 / 3, 2 / 3])
    assert np.allclose(stationary_phase(POISSON, 0), [1.0])


def test_counting_pgf_examples():
    assert np.allclose(counting_pgf(map_spec(), 0, 0.3, 0.0), np.eye(2))
    assert counting_pgf(POISSON, 0, 0.5, 1.0)[0, 0].real == pytest.approx(math.exp(-1), abs=1e-12)
    sym = map_spec(np.array([[-1.5, 1.0], [1.0, -1.5]]), 0.5 * np.eye(2))
    P = counting_pgf(sym, 0, 1.0, 10.0)
    # eigen-decomposition: 1/2 +- e^{-2t}/2
    assert np.allclose(P, 0.5 + 0.5 * math.exp(-20) * np.array([[1, -1], [-1, 1]]), atol=1e-12)


@pytest.mark.parametrize("t", [0.1, 1.0, 10.0])
def test_row_stochastic_at_one(t):
    P = counting_pgf(BURSTY, 0, 1.0, t)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(P.real >= -1e-12)


def test_bounded_on_unit_circle():
    z = np.exp(2j * np.pi * np.arange(64) / 64)
    for zz in z:
        assert np.abs(counting_pgf(BURSTY, 0, zz, 1.3)).max() <= 1 + 1e-12


def test_semigroup():
    for z in (0.2, 0.7 + 0.1j, -0.5):
        lhs = counting_pgf(BURSTY, 0, z, 1.7)
        rhs = counting_pgf(BURSTY, 0, z, 0.5) @ counting_pgf(BURSTY, 0, z, 1.2)
        assert np.abs(lhs - rhs).max() < 1e-8


def _fd_moments(mmap, t, theta, h=1e-4):
    blk = mmap.block(0)
    D0, D1 = blk.D0, blk.batches[(1,)]
    e = np.ones(len(D0))

    def f(z):
        return float(theta @ expm((D0 + z * D1) * t) @ e)

    def d1(hh):
        return (f(1 + hh) - f(1 - hh)) / (2 * hh)

    def d2(hh):
        return (f(1 + hh) - 2 * f(1) + f(1 - hh)) / hh**2

    m1 = (4 * d1(h / 2) - d1(h)) / 3
    m2 = (4 * d2(h / 2) - d2(h)) / 3
    return m1, m2 + m1 - m1**2


@pytest.mark.parametrize("t", [0.5, 2.0, 10.0])
def test_moments_match_finite_differences(t):
    pi = stationary_phase(BURSTY, 0)
    mo = counting_moments(BURSTY, 0, (1,), t)
    mean, var = _fd_moments(BURSTY, t, pi)
    assert mo.mean == pytest.approx(mean, rel=1e-4)
    assert mo.variance == pytest.approx(var, rel=1e-4)
    lam = arrival_rates(BURSTY, 0).per_type[0]
    assert mo.mean == pytest.approx(lam * t, rel=1e-12)


def test_poisson_moments():
    mo = counting_moments(POISSON, 0, (1,), 3.0)
    assert mo.mean == pytest.approx(6.0) and mo.variance == pytest.approx(6.0)
    zero = counting_moments(BURSTY, 0, (1,), 0.0)
    assert zero.mean == pytest.approx(0.0, abs=1e-14) and zero.variance == pytest.approx(0.0, abs=1e-14)


def test_nonstationary_start_mean_exact_and_warns():
    theta = np.array([1.0, 0.0])
    with pytest.warns(UserWarning):
        mo = counting_moments(BURSTY, 0, (1,), 2.0, theta=theta)
    mean, _ = _fd_moments(BURSTY, 2.0, theta)
    assert mo.mean == pytest.approx(mean, rel=1e-6)


def test_arrival_rates():
    assert arrival_rates(POISSON, 0).per_type[0] == pytest.approx(2.0)
    pairs = MMAPSpec(1, 1, (MMAPBlock(np.array([[-3.0]]), {(2,): np.array([[3.0]])}),))
    r = arrival_rates(pairs, 0)
    assert r.per_type[0] == pytest.approx(6.0) and r.batches_total == pytest.approx(3.0)
    pi = stationary_phase(map_spec(), 0)
    assert arrival_rates(map_spec(), 0).per_type[0] == pytest.approx(pi @ D1_EX @ np.ones(2))


def test_thinned_generator():
    mm = map_spec()
    z = 0.4
    assert np.allclose(thinned_generator_pgf(mm, 0, z, 1.0, 0.3), generator_pgf(mm, 0, z) - D0_EX)
    assert np.allclose(thinned_generator_pgf(mm, 0, z, 0.0, 0.3), D1_EX)
    assert thinned_generator_pgf(POISSON, 0, 0.0, 0.25, 1.0)[0, 0] == pytest.approx(1.5)
    with pytest.raises(DomainError):
        thinned_generator_pgf(POISSON, 0, 0.0, 1.5, 1.0)


def test_thinned_counting():
    assert np.allclose(thinned_counting_pgf(BURSTY, 0, 0.3, 0.5, 0.0), np.eye(2))
    assert thinned_counting_pgf(POISSON, 0, 0.0, 0.5, 1.0)[0, 0].real == pytest.approx(math.exp(-1), abs=1e-12)
    assert np.allclose(thinned_counting_pgf(BURSTY, 0, 0.3, 1.0, 2.0), counting_pgf(BURSTY, 0, 0.3, 2.0), atol=1e-12)
    # time-varying retention, scalar case: exp(int 2 p(u) (z - 1) du)
    p = lambda u: 0.5 * (1 + math.sin(u)) * 0.9
    val = thinned_counting_pgf(POISSON, 0, 0.2, p, 2.0, step=0.001)[0, 0].real
    exact = math.exp(2 * 0.9 * 0.5 * (2 + 1 - math.cos(2)) * (0.2 - 1))
    assert val == pytest.approx(exact, abs=1e-6)
    with pytest.raises(GridError):
        thinned_counting_pgf(POISSON, 0, 0.2, 0.5, 1.005)


def test_nonstationary_variance_is_flagged_not_corrected():
    # the variance expression presumes a stationary start; away from it the
    # finite-difference oracle disagrees and the call warns
    theta = np.array([1.0, 0.0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mo = counting_moments(BURSTY, 0, (1,), 0.5, theta=theta)
    _, var = _fd_moments(BURSTY, 0.5, theta)
    assert abs(mo.variance / var - 1) > 0.1
