import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from l96rbm.closure import StatState
from l96rbm.errors import AlignmentError, StateError
from l96rbm.statistics import (
    StatisticsSeries,
    empirical_moments,
    gaussian_fit,
    histogram1d,
    histogram2d,
    mean_error_norm,
    signed_sum,
    skewness,
    time_average,
    total_energy,
    tv_distance,
    variance_error_norm,
)


def series(times, ubar, r):
    s = StatisticsSeries()
    for t, u, rr in zip(times, ubar, r):
        s.append(t, u, rr, 0.0)
    return s


def test_signed_sum():
    assert signed_sum([1.0, 2.0, 3.0, 4.0, 5.0]) == 1 + 2 * (2 + 3 + 4) + 5
    assert np.array_equal(signed_sum(np.ones((3, 5))), np.full(3, 8.0))


def test_empirical_moments(rng):
    Z = rng.standard_normal((50, 4)) + 1j * rng.standard_normal((50, 4))
    m = empirical_moments(Z, triples=[(1, 2, 3)])
    assert np.allclose(m.mean, Z.mean(0))
    assert np.allclose(m.variance, [np.mean(np.abs(Z[:, k] - Z[:, k].mean()) ** 2) for k in range(4)])
    assert m.third[(1, 2, 3)] == pytest.approx(np.mean(Z[:, 1] * np.conj(Z[:, 2]) * np.conj(Z[:, 3])))
    with pytest.raises(StateError):
        empirical_moments(Z[:1])


def test_total_energy_examples():
    J = 40
    assert total_energy(StatState(2.0, np.zeros(J // 2 + 1))) == 4.0
    r = np.full(J // 2 + 1, 1.0)
    assert total_energy(StatState(0.0, r)) == pytest.approx(J / J ** 2)


def test_total_energy_matches_physical_energy(rng):
    """Ensemble-mean (1/J) sum_j u_j^2 equals ubar^2 + sum_k r_k / J^2."""
    J = 16
    U = 3 + rng.standard_normal((400, J)) * 2
    ubar = U.mean()
    Z = np.fft.rfft(U - ubar, axis=1)
    r = np.mean(np.abs(Z) ** 2, 0)
    assert total_energy(StatState(ubar, r)) == pytest.approx(np.mean(U ** 2), rel=1e-12)


def test_total_energy_twolayer(rng):
    J, L = 4, 4
    U = rng.standard_normal((300, J)) + 1
    V = rng.standard_normal((300, J * L)) * 0.3 + 0.2
    ub, vb = U.mean(), V.mean()
    r = np.mean(np.abs(np.fft.rfft(U - ub, axis=1)) ** 2, 0)
    rv = np.mean(np.abs(np.fft.rfft(V - vb, axis=1)) ** 2, 0)
    E = total_energy(StatState(ub, r, vb, rv, np.zeros_like(rv, complex)))
    assert E == pytest.approx(np.mean(U ** 2) + L * np.mean(V ** 2), rel=1e-12)


def test_histogram_flat_samples():
    x = (np.arange(6100) + 0.5) / 6100
    h = histogram1d(x, 61, (0.0, 1.0))
    assert h.counts.sum() == 6100 and np.all(h.counts == 100)
    assert np.allclose(h.density(), 1.0)


def test_histogram_clips_into_edge_bins():
    h = histogram1d([-5.0, 0.5, 5.0], 4, (0.0, 1.0))
    assert list(h.counts) == [1, 0, 1, 1]


def test_histogram_normal_density(rng):
    x = rng.standard_normal(200000)
    h = histogram1d(x, 61)
    e = h.edges[0]
    mid = 0.5 * (e[1:] + e[:-1])
    assert np.abs(h.density() - np.exp(-mid ** 2 / 2) / np.sqrt(2 * np.pi)).max() < 0.02


def test_histogram_errors():
    with pytest.raises(StateError):
        histogram1d([])
    with pytest.raises(ValueError):
        histogram1d([1.0], 5, (1.0, 0.0))
    with pytest.raises(StateError):
        histogram2d([1.0], [1.0, 2.0])


def test_histogram2d_counts(rng):
    h = histogram2d(rng.random(1000), rng.random(1000), 10, ((0, 1), (0, 1)))
    assert h.counts.sum() == 1000 and h.ndim == 2
    assert h.density().sum() * 0.01 == pytest.approx(1.0)


def test_gaussian_fit_examples():
    g = gaussian_fit([1.0, 3.0])
    assert (g.mean, g.variance, g.degenerate) == (2.0, 1.0, False)
    assert gaussian_fit([2.0, 2.0, 2.0]).degenerate
    with pytest.raises(StateError):
        gaussian_fit([1.0])


def test_skewness_sign(rng):
    assert skewness(rng.exponential(size=10000)) > 1.5
    assert skewness(-rng.exponential(size=10000)) < -1.5


def test_tv_distance():
    a = histogram1d([0.1, 0.2, 0.6, 0.7], 2, (0.0, 1.0))
    b = histogram1d([0.1, 0.1, 0.1, 0.7], 2, (0.0, 1.0))
    assert tv_distance(a, a) == 0.0
    assert tv_distance(a, b) == pytest.approx(0.25)
    c = histogram1d([5.0], 2, (4.0, 6.0))
    assert tv_distance(a, c) == pytest.approx(1.0)


@given(arrays(float, 50, elements=st.floats(-10, 10)), arrays(float, 50, elements=st.floats(-10, 10)))
def test_tv_distance_is_a_bounded_symmetric_metric(x, y):
    a, b = histogram1d(x, 11), histogram1d(y, 11)
    d = tv_distance(a, b)
    assert 0.0 <= d <= 1.0 + 1e-12
    assert d == pytest.approx(tv_distance(b, a))


def test_variance_error_norm_matches_loop(rng):
    times = [0.0, 0.5, 1.0]
    rm, rt = rng.random((3, 5)), rng.random((3, 5))
    m, t = series(times, [0] * 3, rm), series(times, [0] * 3, rt)
    ref = 0.0
    for s in range(3):
        for k in range(-3, 5):
            ref += abs(rm[s, abs(k)] - rt[s, abs(k)])
    assert variance_error_norm(m, t) == pytest.approx(ref / 3)
    assert variance_error_norm(m, t, t0=0.5) == pytest.approx(
        np.mean([signed_sum(np.abs(rm[s] - rt[s])) for s in (1, 2)]))


def test_constant_offset_errors():
    m = series([0.0, 1.0], [1.5, 2.5], np.ones((2, 3)) + 0.25)
    t = series([0.0, 1.0], [1.0, 2.0], np.ones((2, 3)))
    assert mean_error_norm(m, t) == pytest.approx(0.25)
    assert variance_error_norm(m, t) == pytest.approx(0.25 * 4)
    assert variance_error_norm(t, t) == 0.0


def test_alignment_uses_shared_times():
    m = series([0.0, 0.5, 1.0], [1, 9, 1], np.ones((3, 3)))
    t = series([0.0, 1.0], [1, 1], np.ones((2, 3)))
    assert mean_error_norm(m, t) == 0.0
    with pytest.raises(AlignmentError):
        mean_error_norm(m, series([0.25], [1], np.ones((1, 3))))
    with pytest.raises(AlignmentError):
        variance_error_norm(m, t, t0=5.0)
    with pytest.raises(AlignmentError):
        variance_error_norm(m, series([0.0], [1], np.ones((1, 5))))


def test_time_average_window():
    s = series([0.0, 1.0, 2.0, 3.0], [0, 1, 2, 3], np.zeros((4, 2)))
    assert time_average(s, "ubar", 1.0, 2.0) == 1.5
    with pytest.raises(AlignmentError):
        time_average(s, "ubar", 5.0)


def test_append_requires_increasing_times():
    s = series([0.0], [0], np.zeros((1, 2)))
    with pytest.raises(StateError):
        s.append(0.0, 0, np.zeros(2), 0.0)


def test_save_load_round_trip(tmp_path, rng):
    s = StatisticsSeries(meta={"config_hash": "abc", "seed": 3})
    for i in range(3):
        s.append(0.1 * i, rng.random(), rng.random(5), rng.random(), rng.random(), rng.random(9),
                 rng.random(9) + 1j * rng.random(9))
    s.add_samples("u0", rng.standard_normal(100))
    paths = s.save(tmp_path)
    assert {p.rsplit("/", 1)[1] for p in paths} == {"means.csv", "spectra.csv", "energy.csv", "hist_u0.csv"}
    b = StatisticsSeries.load(tmp_path)
    assert b.meta["config_hash"] == "abc"
    for name in ("times", "ubar", "vbar", "energy"):
        assert getattr(b, name) == getattr(s, name)
    assert np.array_equal(np.asarray(b.r), np.asarray(s.r))
    assert np.array_equal(np.asarray(b.rv), np.asarray(s.rv))
    assert np.array_equal(np.asarray(b.rx), np.asarray(s.rx))
    with open(tmp_path / "means.csv") as fh:
        assert fh.readline().startswith("# config_hash=abc seed=3")
