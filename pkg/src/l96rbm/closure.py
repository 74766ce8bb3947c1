"""Coupled stochastic-statistical closure for the one- and two-layer models.

The deterministic part (mean and variance spectra) is driven by third moments
estimated from an ensemble of stochastic Fourier coefficients, which in turn
feel the mean and spectra through quasilinear damping and the diagonal
``r`` correction.  All right-hand sides take a :class:`DriftPlans` bundle
describing which triads are summed and with what weights; the default is
the full (unbatched) sum, the random batch method swaps in sampled plans.
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DivergenceError, StateError
from .lorenz96 import InitialDistribution, sample_initial, sample_variable
from .spectral import (
    QuadraticPlan,
    full_plan,
    onelayer_coefficients,
    to_full,
    twolayer_coefficients,
)
from .statistics import StatisticsSeries, total_energy

__all__ = [
    "StatState",
    "StochEnsemble",
    "ClosureConfig",
    "DriftPlans",
    "coupling_table",
    "onelayer_table",
    "full_plans",
    "mean_rhs_onelayer",
    "stochastic_rhs_onelayer",
    "covariance_rhs_onelayer",
    "mean_rhs_twolayer",
    "stochastic_rhs_twolayer",
    "covariance_rhs_twolayer",
    "CoupledModel",
    "coupled_step",
    "initial_closure_state",
    "run_closure",
]


# ---------------------------------------------------------------------------
# state containers
# ---------------------------------------------------------------------------

@dataclass
class StatState:
    """Statistical mean(s) and half-layout variance spectra.

    ``rx[l] = <Z_{l mod J} conj(Y_l)>`` is the large-small cross covariance.
    """

    ubar: float
    r: np.ndarray
    vbar: float = None
    rv: np.ndarray = None
    rx: np.ndarray = None

    @property
    def two_layer(self):
        return self.rv is not None


@dataclass
class StochEnsemble:
    """Stochastic coefficients, one row per member (half layout)."""

    Z: np.ndarray
    Y: np.ndarray = None

    def __post_init__(self):
        if self.Z.ndim != 2 or self.Z.shape[0] < 1:
            raise StateError(f"ensemble must be a nonempty (M, modes) array, got {self.Z.shape}")

    @property
    def M(self):
        return self.Z.shape[0]


@dataclass(frozen=True)
class ClosureConfig:
    """``eps = inf`` switches the relaxation off; ``sigma`` gives additive
    noise amplitudes per stored large-scale mode (default none)."""

    eps: float = 0.1
    sigma: tuple = None
    dt: float = 5e-4
    T: float = 10.0
    M1: int = 100
    record_every: int = 100

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive (or inf), got {self.eps}")
        if self.sigma is not None and np.any(np.asarray(self.sigma) < 0):
            raise ConfigError("noise amplitudes must be nonnegative")
        if self.M1 < 2:
            raise ConfigError(f"need at least 2 stochastic members, got {self.M1}")

    @property
    def inv_eps(self):
        return 0.0 if np.isinf(self.eps) else 1.0 / self.eps


@dataclass
class DriftPlans:
    """Triad plans for one step.

    ``u``/``v`` are quadratic plans producing the large/small nonlinear terms
    (weights include the ``1/J`` and ``cb/(JL)`` factors), ``cross[l, k]``
    holds the weights of ``Y_l`` (full layout) in the ``Z_k`` coupling
    including ``conj(lambda_l)`` but not ``h c / b``.
    """

    u: QuadraticPlan
    v: QuadraticPlan = None
    cross: np.ndarray = None
    pattern_u: np.ndarray = None
    pattern_v: np.ndarray = None
    info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# tables and full plans
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _table(J, L=1, c=1.0, b=1.0, h=0.0):
    if L == 1:
        return onelayer_coefficients(J)
    return twolayer_coefficients(J, L, c, b, h)


def onelayer_table(J):
    return _table(J)


def coupling_table(params):
    if params.two_layer:
        return _table(params.J, params.L, float(params.c), float(params.b), float(params.h))
    return _table(params.J)


def full_cross(table):
    """Unbatched ``Z_k`` <- ``Y_l`` weights: ``conj(lambda_l) / L`` on ``l = k mod J``."""
    J, N, L = table.J, table.grid.N, table.L
    l = np.arange(N)
    cross = np.zeros((N, J // 2 + 1), dtype=complex)
    own = l % J <= J // 2
    cross[l[own], (l % J)[own]] = np.conj(table.lam[own]) / L
    return cross


@lru_cache(maxsize=32)
def _full_plans(J, L=1, c=1.0, b=1.0, h=0.0):
    table = _table(J, L, c, b, h)
    u = full_plan(table.gamma_u, J // 2 + 1, 1.0 / J)
    if L == 1:
        return DriftPlans(u)
    N = J * L
    v = full_plan(table.gamma_v, N // 2 + 1, c * b / N)
    return DriftPlans(u, v, full_cross(table))


def full_plans(params):
    if params.two_layer:
        return _full_plans(params.J, params.L, float(params.c), float(params.b), float(params.h))
    return _full_plans(params.J)


def _real_ends(dZ):
    dZ[..., 0] = dZ[..., 0].real
    dZ[..., -1] = dZ[..., -1].real
    return dZ


def _diag(plan, r, pattern):
    d = plan.diagonal(to_full(np.asarray(r, dtype=float)))
    return d[pattern] if pattern is not None else d[0]


def _damping_u(table, ubar, n):
    return table.damping_u(ubar)[:n]


# ---------------------------------------------------------------------------
# one-layer right-hand sides
# ---------------------------------------------------------------------------

def mean_rhs_onelayer(ubar, r, F, table=None):
    """``(1/J^2) sum_k gamma_k r_k - ubar + F`` over the signed spectrum."""
    r = np.asarray(r, dtype=float)
    J = 2 * (r.shape[-1] - 1)
    table = table or _table(J)
    flux = np.sum(table.gamma_u_diag * to_full(r)).real / J ** 2
    return flux - ubar + F


def _onelayer_stoch(Z, r, ubar, table, plans):
    nk = Z.shape[1]
    NL = plans.u.evaluate(to_full(Z), plans.pattern_u)
    diag = _diag(plans.u, r, plans.pattern_u)
    dZ = NL - diag - _damping_u(table, ubar, nk) * Z
    return _real_ends(dZ), NL


def stochastic_rhs_onelayer(Z, r, ubar, table=None, plans=None):
    """Increments of the one-layer stochastic coefficients (half layout)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=complex))
    J = 2 * (Z.shape[1] - 1)
    table = table or _table(J)
    plans = plans or _full_plans(J)
    return _onelayer_stoch(Z, r, ubar, table, plans)[0]


def _relax(inv_eps, emp, current):
    return inv_eps * (emp - current) if inv_eps else 0.0


def covariance_rhs_onelayer(r, Z, ubar, eps, table=None, plans=None, nl=None, sigma=None):
    """Variance-spectrum increments with third moments from the ensemble ``Z``.

    ``nl`` may pass precomputed quadratic terms of the members (the same
    ones the stochastic equation uses).
    """
    Z = np.asarray(Z, dtype=complex)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise StateError("covariance update needs a nonempty ensemble")
    r = np.asarray(r, dtype=float)
    nk = r.shape[0]
    J = 2 * (nk - 1)
    table = table or _table(J)
    if nl is None:
        plans = plans or _full_plans(J)
        nl = plans.u.evaluate(to_full(Z), plans.pattern_u)
    triad = 2.0 * np.mean(np.conj(Z) * nl, axis=0).real
    gk = table.gamma_u_diag[:nk].real
    inv_eps = 0.0 if np.isinf(eps) else 1.0 / eps
    dr = triad - 2.0 * (gk * ubar + 1.0) * r + _relax(inv_eps, np.mean(np.abs(Z) ** 2, axis=0), r)
    if sigma is not None:
        dr = dr + np.asarray(sigma, dtype=float) ** 2
    return dr


# ---------------------------------------------------------------------------
# two-layer right-hand sides
# ---------------------------------------------------------------------------

def mean_rhs_twolayer(ubar, vbar, ru, rv, params, table=None):
    table = table or coupling_table(params)
    J, N = params.J, params.N
    hcb = table.hcb
    du = np.sum(table.gamma_u_diag * to_full(np.asarray(ru, float))).real / J ** 2 - ubar + params.F
    du -= hcb * params.L * vbar
    cb = params.c * params.b
    dv = cb * np.sum(table.gamma_v_diag * to_full(np.asarray(rv, float))).real / N ** 2
    dv += -params.c * vbar + hcb * ubar
    return du, dv


def _twolayer_stoch(Z, Y, ru, rv, ubar, vbar, table, plans):
    J = table.J
    nk, nl = Z.shape[1], Y.shape[1]
    Zf, Yf = to_full(Z), to_full(Y)
    hcb = table.hcb
    NLu = plans.u.evaluate(Zf, plans.pattern_u)
    NLv = plans.v.evaluate(Yf, plans.pattern_v)
    du_diag = _diag(plans.u, ru, plans.pattern_u)
    dv_diag = _diag(plans.v, rv, plans.pattern_v)
    dZ = NLu - du_diag - _damping_u(table, ubar, nk) * Z - hcb * (Yf @ plans.cross)
    kk = np.arange(nl) % J
    dY = NLv - dv_diag - table.damping_v(vbar)[:nl] * Y + hcb * table.lam[:nl] * Zf[:, kk]
    return _real_ends(dZ), _real_ends(dY), NLu, NLv


def stochastic_rhs_twolayer(Z, Y, ru, rv, ubar, vbar, params, table=None, plans=None):
    """Increments ``(dZ, dY)`` of the two-layer stochastic coefficients."""
    Z = np.atleast_2d(np.asarray(Z, dtype=complex))
    Y = np.atleast_2d(np.asarray(Y, dtype=complex))
    if Z.shape[1] != params.J // 2 + 1 or Y.shape[1] != params.N // 2 + 1:
        raise StateError("mode arrays do not match the (J, L) grid")
    table = table or coupling_table(params)
    plans = plans or full_plans(params)
    return _twolayer_stoch(Z, Y, ru, rv, ubar, vbar, table, plans)[:2]


def covariance_rhs_twolayer(stat, ens, params, eps, table=None, plans=None, nl=None):
    """Increments ``(dr^u, dr^v, dr^x)``; ``nl = (NLu, NLv)`` may pass the
    members' quadratic terms."""
    Z = np.asarray(ens.Z, dtype=complex)
    Y = np.asarray(ens.Y, dtype=complex)
    if Z.shape[0] == 0 or Y is None or Y.shape[0] == 0:
        raise StateError("covariance update needs a nonempty ensemble with small scales")
    table = table or coupling_table(params)
    plans = plans or full_plans(params)
    if nl is None:
        nl = (plans.u.evaluate(to_full(Z), plans.pattern_u), plans.v.evaluate(to_full(Y), plans.pattern_v))
    NLu, NLv = nl
    inv_eps = 0.0 if np.isinf(eps) else 1.0 / eps
    Zk, NLk = paired_large(Z, NLu, table)
    return _twolayer_cov(stat, Z, NLu, Y, NLv, Zk, NLk, table, plans.cross, inv_eps)


def paired_large(Z, NLu, table):
    """Large-scale coefficient and quadratic term at ``l mod J`` for every
    stored small-scale ``l`` (members on axis 0)."""
    kk = np.arange(table.grid.n_small) % table.J
    return to_full(Z)[:, kk], to_full(NLu)[:, kk]


def _twolayer_cov(stat, Z, NLu, Y, NLv, Zk, NLk, table, cross, inv_eps):
    """Spectra increments.  ``Zk``/``NLk`` hold the large-scale values paired
    with each row of ``Y`` (the same member for the full ensemble, the owning
    sample for the reduced-order model)."""
    J, L, N = table.J, table.L, table.grid.N
    c, b, hcb = table.c, table.b, table.hcb
    ru, rv, rx = np.asarray(stat.r, float), np.asarray(stat.rv, float), np.asarray(stat.rx, complex)
    ubar, vbar = stat.ubar, stat.vbar
    nk, nl = ru.shape[0], rv.shape[0]
    gu = table.gamma_u_diag
    gv = table.gamma_v_diag
    rx_f = to_full(rx)

    dru = 2.0 * np.mean(np.conj(Z) * NLu, axis=0).real
    dru -= 2.0 * (gu[:nk].real * ubar + 1.0) * ru
    dru -= 2.0 * hcb * (np.conj(rx_f) @ cross).real
    dru += _relax(inv_eps, np.mean(np.abs(Z) ** 2, axis=0), ru)

    lam = table.lam[:nl]
    drv = 2.0 * np.mean(np.conj(Y) * NLv, axis=0).real
    drv -= 2.0 * c * (1.0 + b * gv[:nl].real * vbar) * rv
    drv += 2.0 * hcb * (lam * rx).real
    drv += _relax(inv_eps, np.mean(np.abs(Y) ** 2, axis=0), rv)

    kk = np.arange(nl) % J
    drx = np.mean(NLk * np.conj(Y), axis=0) + np.mean(Zk * np.conj(NLv), axis=0)
    drx -= (np.conj(gu[kk]) * ubar + c * b * gv[:nl] * vbar + 1.0 + c) * rx
    drx += hcb * np.conj(lam) * (to_full(ru)[kk] - rv / L)
    drx += _relax(inv_eps, np.mean(Zk * np.conj(Y), axis=0), rx)
    return dru, drv, _real_ends(drx)


# ---------------------------------------------------------------------------
# coupled model
# ---------------------------------------------------------------------------

class CoupledModel:
    """Mean, spectra and ensemble advanced together as one ODE system.

    The state is a dict of arrays with keys ``ubar, r, Z`` and, for the
    two-layer model, ``vbar, rv, rx, Y``.
    """

    def __init__(self, params, config):
        self.params = params
        self.config = config
        self.table = coupling_table(params)
        self.two_layer = params.two_layer

    # -- conversions ---------------------------------------------------------

    @staticmethod
    def pack(stat, ens):
        x = {"ubar": np.array(float(stat.ubar)), "r": np.array(stat.r, float), "Z": np.array(ens.Z, complex)}
        if stat.two_layer:
            x.update(vbar=np.array(float(stat.vbar)), rv=np.array(stat.rv, float),
                     rx=np.array(stat.rx, complex), Y=np.array(ens.Y, complex))
        return x

    @staticmethod
    def unpack(x):
        if "Y" in x:
            stat = StatState(float(x["ubar"]), x["r"], float(x["vbar"]), x["rv"], x["rx"])
            return stat, StochEnsemble(x["Z"], x["Y"])
        return StatState(float(x["ubar"]), x["r"]), StochEnsemble(x["Z"])

    # -- drift ---------------------------------------------------------------

    def drift(self, x, plans):
        if self.two_layer:
            return self._drift_twolayer(x, plans)
        ubar = float(x["ubar"])
        dZ, NL = _onelayer_stoch(x["Z"], x["r"], ubar, self.table, plans)
        dr = covariance_rhs_onelayer(x["r"], x["Z"], ubar, self.config.eps, self.table, nl=NL,
                                     sigma=self.config.sigma)
        du = mean_rhs_onelayer(ubar, x["r"], self.params.F, self.table)
        return {"ubar": np.array(du), "r": dr, "Z": dZ}

    def _drift_twolayer(self, x, plans):
        p, t = self.params, self.table
        ubar, vbar = float(x["ubar"]), float(x["vbar"])
        dZ, dY, NLu, NLv = _twolayer_stoch(x["Z"], x["Y"], x["r"], x["rv"], ubar, vbar, t, plans)
        stat = StatState(ubar, x["r"], vbar, x["rv"], x["rx"])
        Zk, NLk = paired_large(x["Z"], NLu, t)
        dru, drv, drx = _twolayer_cov(stat, x["Z"], NLu, x["Y"], NLv, Zk, NLk, t, plans.cross,
                                      self.config.inv_eps)
        if self.config.sigma is not None:
            dru = dru + np.asarray(self.config.sigma, dtype=float) ** 2
        du, dv = mean_rhs_twolayer(ubar, vbar, x["r"], x["rv"], p, t)
        return {"ubar": np.array(du), "r": dru, "Z": dZ, "vbar": np.array(dv), "rv": drv, "rx": drx, "Y": dY}

    # -- stepping ------------------------------------------------------------

    def step(self, x, plans, dt, t=0.0, noise_rng=None):
        """One RK4 step with ``plans`` held fixed across the stages, followed
        by the optional additive noise increment."""
        f = lambda y: self.drift(y, plans)
        k1 = f(x)
        k2 = f({n: x[n] + 0.5 * dt * k1[n] for n in x})
        k3 = f({n: x[n] + 0.5 * dt * k2[n] for n in x})
        k4 = f({n: x[n] + dt * k3[n] for n in x})
        out = {n: x[n] + (dt / 6.0) * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n]) for n in x}
        sigma = self.config.sigma
        if sigma is not None and noise_rng is not None:
            out["Z"] = out["Z"] + np.sqrt(dt) * np.asarray(sigma) * _complex_noise(noise_rng, out["Z"].shape)
        self.check(out, t + dt)
        return out

    def check(self, x, t):
        for name, arr in x.items():
            if not np.all(np.isfinite(arr)):
                raise DivergenceError(f"non-finite {name} at t={t:g}", t)
        for name in ("r", "rv"):
            if name in x and np.any(x[name] < 0):
                k = int(np.argmin(x[name]))
                raise DivergenceError(f"negative variance {name}[{k}]={x[name][k]:.3g} at t={t:g}", t)

    def statistics(self, x):
        stat, _ = self.unpack(x)
        return stat

    def plans(self):
        return full_plans(self.params)


def _complex_noise(rng, shape):
    xi = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    xi[..., 0] = np.sqrt(2.0) * xi[..., 0].real
    xi[..., -1] = np.sqrt(2.0) * xi[..., -1].real
    return xi


def coupled_step(stat, ens, config, params, plans=None, t=0.0, noise_rng=None):
    """One RK4 step of the full coupled closure; returns new ``(stat, ens)``."""
    model = CoupledModel(params, config)
    x = model.step(model.pack(stat, ens), plans or model.plans(), config.dt, t, noise_rng)
    return model.unpack(x)


def initial_closure_state(params, M1, init=None, seed=0):
    """Statistics of the initial distribution and the first ``M1`` members of
    the Monte-Carlo initial ensemble, projected onto Fourier modes."""
    init = init or InitialDistribution()
    ens = sample_initial(params, M1, init, seed)
    u0 = init.resolved_u_mean(params.F)
    J = params.J
    Z = np.fft.rfft(ens.U - u0, axis=1)
    r = np.full(J // 2 + 1, J * init.u_std ** 2)
    if not params.two_layer:
        return StatState(u0, r), StochEnsemble(Z)
    N = params.N
    Y = np.fft.rfft(ens.V - init.v_mean, axis=1)
    rv = np.full(N // 2 + 1, N * init.v_std ** 2)
    rx = np.zeros(N // 2 + 1, dtype=complex)
    return StatState(u0, r, init.v_mean, rv, rx), StochEnsemble(Z, Y)


def ensemble_samples(name, ubar, Z):
    """Per-member observable values; physical sites are rebuilt from modes."""
    if name.startswith("u") and name[1:].isdigit():
        j = int(name[1:])
        J = 2 * (Z.shape[1] - 1)
        phase = np.exp(2j * np.pi * np.arange(J) * j / J)
        return ubar + (to_full(Z) @ phase).real / J
    return sample_variable(name, Z)


def _record(series, model, x, t, sample_vars):
    stat = model.statistics(x)
    E = total_energy(stat)
    if stat.two_layer:
        series.append(t, stat.ubar, stat.r, E, stat.vbar, stat.rv, stat.rx)
    else:
        series.append(t, stat.ubar, stat.r, E)
    for name in sample_vars:
        series.add_samples(name, ensemble_samples(name, stat.ubar, x["Z"]))
    z0 = float(np.abs(np.mean(x["Z"][:, 0])))
    series.meta["max_abs_mean_z0"] = max(series.meta.get("max_abs_mean_z0", 0.0), z0)


def integrate(model, x, plan_source, n_steps, dt, record_every, seed=0, sample_vars=(),
              sample_from=np.inf, meta=None, resample_every=1):
    """Drive ``model`` for ``n_steps``; ``plan_source(rng)`` returns the plans
    of one step (``None`` for fixed full plans).

    On divergence the error carries the partial series as ``err.series``.
    """
    series = StatisticsSeries(meta=dict(meta or {}))
    ss = np.random.SeedSequence(seed)
    plan_rng, noise_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    fixed = model.plans() if plan_source is None else None

    def record(step):
        t = step * dt
        names = sample_vars if t >= sample_from - 1e-12 else ()
        _record(series, model, x, t, names)

    record(0)
    plans = fixed
    try:
        for step in range(n_steps):
            if fixed is None and step % resample_every == 0:
                plans = plan_source(plan_rng)
            x = model.step(x, plans, dt, step * dt, noise_rng)
            if (step + 1) % record_every == 0 or step + 1 == n_steps:
                record(step + 1)
    except DivergenceError as err:
        err.series = series
        raise
    return series, x


def run_closure(params, config, init=None, seed=0, sample_vars=(), sample_from=np.inf):
    """Full (unbatched) closure run from the shared initial ensemble."""
    stat, ens = initial_closure_state(params, config.M1, init, seed)
    model = CoupledModel(params, config)
    n_steps = int(round(config.T / config.dt))
    series, _ = integrate(model, model.pack(stat, ens), None, n_steps, config.dt, config.record_every,
                          seed, sample_vars, sample_from, {"seed": seed, "method": "closure"})
    return series
