"""Physical-space Lorenz '96 models and the direct Monte-Carlo ensemble."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, DivergenceError, ShapeError
from .spectral import WavenumberGrid
from .statistics import StatisticsSeries, total_energy

__all__ = [
    "OneLayerParams",
    "TwoLayerParams",
    "InitialDistribution",
    "EnsembleState",
    "onelayer_rhs",
    "twolayer_rhs",
    "rk4_step",
    "member_streams",
    "sample_initial",
    "physical_statistics",
    "run_mc",
]


@dataclass(frozen=True)
class OneLayerParams:
    J: int = 40
    F: float = 8.0
    dt: float = 5e-4
    T: float = 10.0

    def __post_init__(self):
        WavenumberGrid(self.J)
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.T < self.dt:
            raise ConfigError(f"T={self.T} must be at least dt={self.dt}")

    @property
    def two_layer(self):
        return False


@dataclass(frozen=True)
class TwoLayerParams:
    J: int = 8
    L: int = 32
    F: float = 20.0
    c: float = 10.0
    b: float = 10.0
    h: float = 1.0
    dt: float = 5e-4
    T: float = 10.0

    def __post_init__(self):
        WavenumberGrid(self.J, self.L)
        if self.L < 2:
            raise ConfigError(f"two-layer model needs L >= 2, got {self.L}")
        if self.c <= 0 or self.b <= 0:
            raise ConfigError(f"c and b must be positive, got c={self.c}, b={self.b}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.T < self.dt:
            raise ConfigError(f"T={self.T} must be at least dt={self.dt}")

    @property
    def two_layer(self):
        return True

    @property
    def N(self):
        return self.J * self.L


@dataclass(frozen=True)
class InitialDistribution:
    """Independent Gaussian sites: ``u_j ~ N(u_mean, u_std^2)`` (``u_mean``
    defaults to ``F / 2``) and ``v_i ~ N(v_mean, v_std^2)``."""

    u_mean: float = None
    u_std: float = 1.0
    v_mean: float = 0.0
    v_std: float = 0.1

    def resolved_u_mean(self, F):
        return F / 2.0 if self.u_mean is None else float(self.u_mean)


@dataclass
class EnsembleState:
    U: np.ndarray
    V: np.ndarray = None
    seed: int = None

    def __post_init__(self):
        if self.U.ndim != 2 or self.U.shape[0] < 2:
            raise ShapeError(f"ensemble needs shape (M >= 2, J), got {self.U.shape}")
        if self.V is not None and self.V.shape[0] != self.U.shape[0]:
            raise ShapeError("large and small ensembles have different member counts")

    @property
    def M(self):
        return self.U.shape[0]


def onelayer_rhs(u, F):
    """``(u_{j+1} - u_{j-2}) u_{j-1} - u_j + F`` on a periodic ring (last axis)."""
    u = np.asarray(u, dtype=float)
    return (np.roll(u, -1, -1) - np.roll(u, 2, -1)) * np.roll(u, 1, -1) - u + F


def twolayer_rhs(u, v, params):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    J, L = params.J, params.L
    if u.shape[-1] != J or v.shape[-1] != J * L:
        raise ShapeError(f"expected lengths {J} and {J * L}, got {u.shape[-1]} and {v.shape[-1]}")
    hcb = params.h * params.c / params.b
    du = onelayer_rhs(u, params.F) - hcb * v.reshape(v.shape[:-1] + (J, L)).sum(axis=-1)
    cb = params.c * params.b
    dv = -cb * (np.roll(v, -2, -1) - np.roll(v, 1, -1)) * np.roll(v, -1, -1) - params.c * v
    dv = dv + hcb * np.repeat(u, L, axis=-1)
    return du, dv


def rk4_step(state, rhs, dt, t=0.0):
    """Classical RK4 step of ``dx/dt = rhs(x)``; ``state`` is an array or a
    tuple of arrays.  Raises :class:`DivergenceError` on non-finite output."""
    if isinstance(state, tuple):
        add = lambda x, a, k: tuple(xi + a * ki for xi, ki in zip(x, k))
        k1 = rhs(state)
        k2 = rhs(add(state, 0.5 * dt, k1))
        k3 = rhs(add(state, 0.5 * dt, k2))
        k4 = rhs(add(state, dt, k3))
        out = tuple(x + (dt / 6.0) * (a + 2 * b + 2 * c + d) for x, a, b, c, d in zip(state, k1, k2, k3, k4))
        finite = all(np.all(np.isfinite(x)) for x in out)
    else:
        k1 = rhs(state)
        k2 = rhs(state + 0.5 * dt * k1)
        k3 = rhs(state + 0.5 * dt * k2)
        k4 = rhs(state + dt * k3)
        out = state + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        finite = np.all(np.isfinite(out))
    if not finite:
        raise DivergenceError(f"non-finite state at t={t + dt:g}", t + dt)
    return out


def member_streams(seed, M):
    """One independent generator per member, spawned from the master seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(M)]


def sample_initial(params, M, init, seed):
    """Draw the initial ensemble; member ``i`` only depends on ``(seed, i)``,
    so the first ``m`` members agree for every ``M >= m``."""
    F = params.F
    J = params.J
    streams = member_streams(seed, M)
    u0 = init.resolved_u_mean(F)
    U = np.empty((M, J))
    V = np.empty((M, params.N)) if params.two_layer else None
    for i, g in enumerate(streams):
        U[i] = u0 + init.u_std * g.standard_normal(J)
        if V is not None:
            V[i] = init.v_mean + init.v_std * g.standard_normal(params.N)
    return EnsembleState(U, V, seed)


class _Stats:
    """Lightweight stand-in so :func:`total_energy` can read raw numbers."""

    def __init__(self, ubar, r, vbar=None, rv=None):
        self.ubar, self.r, self.vbar, self.rv = ubar, r, vbar, rv


def physical_statistics(U, V=None):
    """Mean, centered variance spectra and cross-covariance of a physical
    ensemble (moments divide by M)."""
    ubar = float(U.mean())
    Z = np.fft.rfft(U - ubar, axis=1)
    Zc = Z - Z.mean(axis=0)
    r = np.mean(np.abs(Zc) ** 2, axis=0)
    if V is None:
        return {"ubar": ubar, "r": r, "Z": Z}
    J = U.shape[1]
    vbar = float(V.mean())
    Y = np.fft.rfft(V - vbar, axis=1)
    Yc = Y - Y.mean(axis=0)
    rv = np.mean(np.abs(Yc) ** 2, axis=0)
    Zf = np.fft.fft(U - ubar, axis=1)
    Zfc = Zf - Zf.mean(axis=0)
    kk = np.arange(Y.shape[1]) % J
    rx = np.mean(Zfc[:, kk] * np.conj(Yc), axis=0)
    return {"ubar": ubar, "r": r, "Z": Z, "vbar": vbar, "rv": rv, "rx": rx, "Y": Y}


def record_physical(series, t, U, V=None, sample_vars=()):
    s = physical_statistics(U, V)
    E = total_energy(_Stats(s["ubar"], s["r"], s.get("vbar"), s.get("rv")))
    series.append(t, s["ubar"], s["r"], E, s.get("vbar"), s.get("rv"), s.get("rx"))
    for name in sample_vars:
        series.add_samples(name, sample_variable(name, s["Z"], U))


def sample_variable(name, Z, U=None):
    """Per-member values of a named observable: ``re_z<k>``, ``im_z<k>``,
    ``abs_z<k>`` or ``u<j>`` (physical site ``j``)."""
    if name.startswith("re_z"):
        return Z[:, int(name[4:])].real
    if name.startswith("im_z"):
        return Z[:, int(name[4:])].imag
    if name.startswith("abs_z"):
        return np.abs(Z[:, int(name[5:])])
    if name.startswith("u") and name[1:].isdigit():
        return U[:, int(name[1:])]
    raise ConfigError(f"unknown sample variable {name!r}")


def run_mc(params, M, init=None, seed=0, record_every=100, sample_vars=(), sample_from=np.inf,
           ensemble=None):
    """Integrate ``M`` independent trajectories with RK4 and record statistics
    every ``record_every`` steps.  Per-member samples of ``sample_vars`` are
    pooled at every record with ``t >= sample_from``."""
    if M < 2:
        raise ConfigError(f"Monte-Carlo ensemble needs M >= 2, got {M}")
    init = init or InitialDistribution()
    ens = ensemble or sample_initial(params, M, init, seed)
    U = np.ascontiguousarray(ens.U, dtype=float)
    V = None if ens.V is None else np.ascontiguousarray(ens.V, dtype=float)
    n_steps = int(round(params.T / params.dt))
    series = StatisticsSeries(meta={"seed": seed, "method": "mc", "M": M})
    dt = params.dt

    def record(step):
        t = step * dt
        names = sample_vars if t >= sample_from - 1e-12 else ()
        record_physical(series, t, U, V, names)

    record(0)
    step = 0
    while step < n_steps:
        n = min(record_every, n_steps - step)
        if V is None:
            blow = kernels.onelayer_advance(U, float(params.F), dt, n)
        else:
            blow = kernels.twolayer_advance(U, V, float(params.F), float(params.c), float(params.b),
                                            float(params.h), dt, n)
        bad = np.nonzero(blow >= 0)[0]
        if bad.size:
            i = int(bad[np.argmin(blow[bad])])
            t = (step + int(blow[i]) + 1) * dt
            raise DivergenceError(f"member {i} became non-finite at t={t:g}", t, member=i)
        step += n
        record(step)
    return series
