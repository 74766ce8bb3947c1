import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from l96rbm.errors import ConfigError, DivergenceError, ShapeError
from l96rbm.lorenz96 import (
    EnsembleState,
    InitialDistribution,
    OneLayerParams,
    TwoLayerParams,
    onelayer_rhs,
    physical_statistics,
    rk4_step,
    run_mc,
    sample_initial,
    twolayer_rhs,
)


def quad_u(u):
    return (np.roll(u, -1) - np.roll(u, 2)) * np.roll(u, 1)


def quad_v(v):
    return -(np.roll(v, -2) - np.roll(v, 1)) * np.roll(v, -1)


def loop_twolayer(u, v, p):
    """Site-by-site evaluation of the two-layer equations."""
    J, L, N = p.J, p.L, p.J * p.L
    hcb = p.h * p.c / p.b
    du = np.empty(J)
    dv = np.empty(N)
    for j in range(J):
        du[j] = (u[(j + 1) % J] - u[(j - 2) % J]) * u[(j - 1) % J] - u[j] + p.F
        du[j] -= hcb * sum(v[j * L + i] for i in range(L))
    for i in range(N):
        dv[i] = -p.c * p.b * (v[(i + 2) % N] - v[(i - 1) % N]) * v[(i + 1) % N] - p.c * v[i]
        dv[i] += hcb * u[i // L]
    return du, dv


# ---- params ---------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(J=5), dict(J=2), dict(dt=0.0), dict(dt=0.1, T=0.01)])
def test_onelayer_params_validation(kw):
    with pytest.raises(ConfigError):
        OneLayerParams(**kw)


@pytest.mark.parametrize("kw", [dict(L=1), dict(L=3), dict(c=0.0), dict(b=-1.0), dict(J=6, L=0)])
def test_twolayer_params_validation(kw):
    with pytest.raises(ConfigError):
        TwoLayerParams(**kw)


def test_ensemble_state_validation():
    with pytest.raises(ShapeError):
        EnsembleState(np.zeros((1, 8)))
    with pytest.raises(ShapeError):
        EnsembleState(np.zeros((3, 8)), np.zeros((2, 32)))


# ---- right-hand sides -----------------------------------------------------

def test_onelayer_rhs_examples():
    assert np.all(onelayer_rhs(np.zeros(8), 8.0) == 8.0)
    assert np.all(onelayer_rhs(np.full(8, 8.0), 8.0) == 0.0)


def test_onelayer_rhs_matches_site_loop(rng):
    u = rng.standard_normal(10)
    ref = [(u[(j + 1) % 10] - u[(j - 2) % 10]) * u[(j - 1) % 10] - u[j] + 3.0 for j in range(10)]
    assert np.allclose(onelayer_rhs(u, 3.0), ref, atol=1e-14)


def test_twolayer_rhs_examples(rng):
    p = TwoLayerParams(J=4, L=4, F=5.0)
    du, dv = twolayer_rhs(np.zeros(4), np.zeros(16), p)
    assert np.all(du == 5.0) and np.all(dv == 0.0)
    u = rng.standard_normal(4)
    v = rng.standard_normal(16)
    du, _ = twolayer_rhs(u, v, TwoLayerParams(J=4, L=4, F=5.0, h=0.0))
    assert np.array_equal(du, onelayer_rhs(u, 5.0))


def test_twolayer_rhs_matches_site_loop(rng):
    p = TwoLayerParams(J=8, L=4, F=10.0, c=4.0, b=10.0, h=1.0)
    u = rng.standard_normal(8)
    v = rng.standard_normal(32)
    du, dv = twolayer_rhs(u, v, p)
    ru, rv = loop_twolayer(u, v, p)
    assert np.allclose(du, ru, atol=1e-12) and np.allclose(dv, rv, atol=1e-12)


def test_twolayer_rhs_shape_error():
    with pytest.raises(ShapeError):
        twolayer_rhs(np.zeros(4), np.zeros(15), TwoLayerParams(J=4, L=4))


@given(arrays(float, st.sampled_from([4, 8, 40]), elements=st.floats(-50, 50)))
def test_quadratic_terms_conserve_energy(u):
    scale = np.sum(np.abs(u) ** 3) + 1e-300
    assert abs(np.sum(u * quad_u(u))) <= 1e-12 * scale
    assert abs(np.sum(u * quad_v(u))) <= 1e-12 * scale


# ---- RK4 ------------------------------------------------------------------

def test_rk4_examples():
    x = np.array([1.0, 2.0])
    assert np.array_equal(rk4_step(x, lambda s: np.zeros_like(s), 0.1), x)
    u1 = rk4_step(np.array([1.0]), lambda s: -s, 0.1)
    assert abs(u1[0] - np.exp(-0.1)) < 1e-7
    fixed = np.full(40, 8.0)
    assert np.array_equal(rk4_step(fixed, lambda s: onelayer_rhs(s, 8.0), 0.01), fixed)


def test_rk4_local_error_is_fifth_order():
    errs = [abs(rk4_step(np.array([1.0]), lambda s: -s, h)[0] - np.exp(-h)) for h in (0.2, 0.1)]
    assert 4.5 < np.log2(errs[0] / errs[1]) < 5.5


def test_rk4_tuple_state():
    out = rk4_step((np.array([1.0]), np.array([2.0])), lambda s: (-s[0], -2 * s[1]), 0.1)
    assert abs(out[0][0] - np.exp(-0.1)) < 1e-7 and abs(out[1][0] - 2 * np.exp(-0.2)) < 1e-5


def test_rk4_divergence_carries_time():
    with pytest.raises(DivergenceError) as info, np.errstate(over="ignore"):
        rk4_step(np.array([1e308]), lambda s: s * 1e10, 1.0, t=2.5)
    assert info.value.time == 3.5


# ---- Monte Carlo ----------------------------------------------------------

def test_identical_members_have_zero_variance():
    p = OneLayerParams(J=8, dt=1e-3, T=0.05)
    U = np.tile(4 + np.arange(8.0) / 10, (2, 1))
    s = run_mc(p, 2, seed=0, record_every=10, ensemble=EnsembleState(U))
    assert np.all(np.asarray(s.r) < 1e-20)


def test_run_mc_two_rows_for_single_step():
    s = run_mc(OneLayerParams(J=40, dt=1e-3, T=1e-3), 2, seed=1)
    assert len(s.times) == 2 and s.times == [0.0, 0.001]


def test_run_mc_rejects_single_member():
    with pytest.raises(ConfigError):
        run_mc(OneLayerParams(T=0.01), 1)


def test_run_mc_is_seed_deterministic():
    p = OneLayerParams(J=40, dt=1e-3, T=0.05)
    a = run_mc(p, 20, seed=7, record_every=10)
    b = run_mc(p, 20, seed=7, record_every=10)
    c = run_mc(p, 20, seed=8, record_every=10)
    assert np.array_equal(np.asarray(a.r), np.asarray(b.r)) and a.ubar == b.ubar
    assert not np.array_equal(np.asarray(a.r), np.asarray(c.r))


def test_run_mc_reports_diverging_member():
    p = OneLayerParams(J=8, dt=0.5, T=20.0)
    U = np.vstack([np.full(8, 4.0), 50 * np.array([1, -1, 2, -2, 1, -1, 2, -2.0])])
    with pytest.raises(DivergenceError) as info:
        run_mc(p, 2, ensemble=EnsembleState(U), record_every=1)
    assert info.value.member == 1 and info.value.time > 0


def test_initial_members_are_prefix_stable():
    p = OneLayerParams()
    a = sample_initial(p, 5, InitialDistribution(), 3)
    b = sample_initial(p, 12, InitialDistribution(), 3)
    assert np.array_equal(a.U, b.U[:5])


def test_initial_distribution_moments():
    p = TwoLayerParams(J=8, L=32, F=20.0)
    e = sample_initial(p, 4000, InitialDistribution(), 0)
    assert abs(e.U.mean() - 10.0) < 0.05 and abs(e.U.std() - 1.0) < 0.02
    assert abs(e.V.mean()) < 0.002 and abs(e.V.std() - 0.1) < 0.002


def test_physical_statistics_convention(rng):
    U = 2 + rng.standard_normal((50, 8))
    s = physical_statistics(U)
    Z = np.fft.rfft(U - U.mean(), axis=1)
    assert np.allclose(s["r"], np.var(Z, axis=0))
    assert s["ubar"] == pytest.approx(U.mean())


def test_statistical_homogeneity():
    p = OneLayerParams(J=40, F=8.0, dt=1e-3, T=2.0)
    M = 4000
    from l96rbm.lorenz96 import EnsembleState
    ens = sample_initial(p, M, InitialDistribution(), 11)
    U = ens.U.copy()
    run_mc(p, M, seed=11, record_every=2000, ensemble=EnsembleState(U))
    site_mean = U.mean(axis=0)
    se = U.std(axis=0) / np.sqrt(M)
    assert np.all(np.abs(site_mean - U.mean()) < 5 * se)
