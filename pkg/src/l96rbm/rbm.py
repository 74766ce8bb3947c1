"""Random batch method: partitions, rescaling and the batched closure steps.

Weighting used throughout: a sum ``(1/K) sum_m f(k, m)`` over ``K`` signed
wavenumbers is replaced by a sum over the batch ``B`` that contains ``k``.
The term ``m = k`` is always present and keeps weight ``1/K``; every other
member ``m`` of the batch gets ``(1/K)(K-1)/(|B|-1)``, the inverse of its
inclusion probability.  The batched drift is therefore unbiased for any
batch-size layout, and ``p = K`` reproduces the full sum exactly.
"""
from dataclasses import dataclass

import numpy as np

from .closure import (
    ClosureConfig,
    CoupledModel,
    DriftPlans,
    StatState,
    StochEnsemble,
    _diag,
    _real_ends,
    _twolayer_cov,
    covariance_rhs_onelayer,
    coupling_table,
    full_cross,
    initial_closure_state,
    integrate,
    onelayer_table,
    mean_rhs_twolayer,
    stochastic_rhs_onelayer,
)
from .errors import ConfigError, StateError
from .spectral import QuadraticPlan, to_full, wrap

__all__ = [
    "BatchPartition",
    "RbmConfig",
    "RescaleFactors",
    "sample_partition",
    "rescale_factors",
    "batch_plan",
    "batch_cross",
    "onelayer_plans",
    "twolayer_plans",
    "rbm_stoch_rhs_onelayer",
    "rbm_cov_rhs_onelayer",
    "rbm_step_full_twolayer",
    "ReducedOrderModel",
    "reduced_order_step",
    "run_rbm",
]


# ---------------------------------------------------------------------------
# partitions and factors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BatchPartition:
    """Disjoint batches covering a signed index set of size ``n``."""

    batches: tuple
    batch_size: int
    n: int

    def __post_init__(self):
        allidx = np.concatenate(self.batches)
        if allidx.size != self.n or np.unique(wrap(allidx, self.n)).size != self.n:
            raise StateError("batches must be a disjoint cover of the index set")

    @property
    def sizes(self):
        return np.array([len(b) for b in self.batches])

    def batch_ids(self):
        """Batch id of every index, looked up by ``index mod n``."""
        ids = np.empty(self.n, dtype=np.int64)
        for i, b in enumerate(self.batches):
            ids[np.asarray(b) % self.n] = i
        return ids

    def batch_of(self, k):
        return self.batches[self.batch_ids()[k % self.n]]

    def padded(self):
        """``(batches, max_size)`` array of indices mod ``n`` plus a validity mask."""
        width = int(self.sizes.max())
        out = np.zeros((len(self.batches), width), dtype=np.int64)
        mask = np.zeros_like(out, dtype=bool)
        for i, b in enumerate(self.batches):
            out[i, : len(b)] = np.asarray(b) % self.n
            mask[i, : len(b)] = True
        return out, mask


def sample_partition(index_set, batch_size, rng):
    """Shuffle ``index_set`` and cut it into consecutive batches.

    When the size is not a multiple of ``batch_size`` the last batch is
    shorter; a remainder of a single index is merged into the previous batch
    (a singleton cannot carry any off-diagonal term).
    """
    idx = np.asarray(index_set)
    K = idx.size
    if batch_size < 2 or batch_size > K:
        raise ConfigError(f"batch size must be in [2, {K}], got {batch_size}")
    perm = rng.permutation(idx)
    cuts = list(range(batch_size, K, batch_size))
    if cuts and K - cuts[-1] == 1:
        cuts.pop()
    return BatchPartition(tuple(np.split(perm, cuts)), int(batch_size), K)


@dataclass(frozen=True)
class RescaleFactors:
    K: int
    p: int
    c1: float
    c2: float
    cp: float = None
    cq: float = None
    cL: float = None
    kappa: int = None
    M2: int = None

    @property
    def lambda_scale(self):
        """Factor applied to the large-small coupling in the reduced-order model."""
        return None if self.kappa is None else float(np.sqrt(self.kappa))


def rescale_factors(K, p, J=None, L=None, q=None, M1=None, M2=None):
    """Batch scaling factors; with ``M1`` the reduced-order relation
    ``M1 / M2 = J L / (2 q)`` must hold with integer ``M2``."""
    if p < 2 or p > K:
        raise ConfigError(f"batch size p must be in [2, {K}], got {p}")
    c1 = K / p
    c2 = K * (K - 1) / (p * (p - 1))
    cp = cq = cL = kappa = None
    if J is not None:
        cp = (J - 1) / (J * (p - 1))
    if L is not None and q is not None:
        N = J * L
        if q < 2 or q > N:
            raise ConfigError(f"batch size q must be in [2, {N}], got {q}")
        cq = (N - 1) / (N * (q - 1))
        cL = (L - 1) / (L * (q - 1))
        if M1 is not None:
            if N % (2 * q):
                raise ConfigError(f"J*L={N} is not a multiple of 2q={2 * q}")
            kappa = N // (2 * q)
            if M2 is None:
                if (M1 * 2 * q) % N:
                    raise ConfigError(
                        f"M2 = M1*2q/(JL) = {M1 * 2 * q / N:g} is not an integer (M1={M1}, q={q}, JL={N})")
                M2 = M1 * 2 * q // N
            elif M1 != kappa * M2:
                raise ConfigError(f"M1/M2 = {M1}/{M2} does not equal JL/(2q) = {kappa}")
    return RescaleFactors(K, p, c1, c2, cp, cq, cL, kappa, M2)


@dataclass(frozen=True)
class RbmConfig:
    p: int = 5
    q: int = None
    M1: int = 100
    M2: int = None
    eps: float = 0.1
    dt: float = 5e-4
    T: float = 10.0
    resample_every: int = 1
    record_every: int = 100
    reduced: bool = False
    sigma: tuple = None

    def __post_init__(self):
        if self.p < 2:
            raise ConfigError(f"batch size p must be at least 2, got {self.p}")
        if self.q is not None and self.q < 2:
            raise ConfigError(f"batch size q must be at least 2, got {self.q}")
        if self.resample_every < 1:
            raise ConfigError(f"resample_every must be >= 1, got {self.resample_every}")

    def closure_config(self):
        return ClosureConfig(eps=self.eps, sigma=self.sigma, dt=self.dt, T=self.T, M1=self.M1,
                             record_every=self.record_every)


# ---------------------------------------------------------------------------
# plans
# ---------------------------------------------------------------------------

def _member_weights(a, mask, k, sizes, n):
    """Inverse inclusion weights relative to ``1/n``."""
    other = (n - 1) / np.maximum(sizes - 1, 1)
    w = np.where(a == (k % n)[:, None], 1.0, other[:, None])
    return np.where(mask, w, 0.0)


def batch_plan(partition, gamma, n_out, scale):
    """Batched convolution plan: output ``k`` sums ``m`` over the batch holding ``k``."""
    n = partition.n
    pad, mask = partition.padded()
    ids = partition.batch_ids()
    k = np.arange(n_out)
    rows = ids[k]
    a = pad[rows]
    m = mask[rows]
    b = (a - k[:, None]) % n
    w = scale * _member_weights(a, m, k, partition.sizes[rows], n) * gamma[a, b]
    return QuadraticPlan(a, b, np.where(m, w, 0.0), n)


def batch_cross(partition, table):
    """``Z_k`` <- ``Y_l`` weights restricted to the small-scale batch holding ``k``."""
    J, L, N = table.J, table.L, table.grid.N
    pad, mask = partition.padded()
    ids = partition.batch_ids()
    k = np.arange(J // 2 + 1)
    rows = ids[k]
    a = pad[rows]
    m = mask[rows] & (a % J == k[:, None])
    w = _member_weights(a, m, k, partition.sizes[rows], N) / L
    cross = np.zeros((N, J // 2 + 1), dtype=complex)
    kk = np.broadcast_to(k[:, None], a.shape)
    np.add.at(cross, (a[m], kk[m]), w[m] * np.conj(table.lam[a[m]]))
    return cross


def onelayer_plans(partition, table):
    J = table.J
    return DriftPlans(batch_plan(partition, table.gamma_u, J // 2 + 1, 1.0 / J),
                      info={"sizes_u": partition.sizes})


def twolayer_plans(large, small, table):
    J, N = table.J, table.grid.N
    u = batch_plan(large, table.gamma_u, J // 2 + 1, 1.0 / J)
    v = batch_plan(small, table.gamma_v, N // 2 + 1, table.c * table.b / N)
    return DriftPlans(u, v, batch_cross(small, table), info={"sizes_u": large.sizes, "sizes_v": small.sizes})


# ---------------------------------------------------------------------------
# one-layer batched right-hand sides
# ---------------------------------------------------------------------------

def rbm_stoch_rhs_onelayer(Z, partition, r, ubar, table=None):
    """Stochastic increments with triads restricted to each mode's batch."""
    J = 2 * (np.shape(Z)[-1] - 1)
    table = table or onelayer_table(J)
    return stochastic_rhs_onelayer(Z, r, ubar, table, onelayer_plans(partition, table))


def rbm_cov_rhs_onelayer(r, Z, partition, ubar, eps, table=None):
    J = 2 * (np.shape(Z)[-1] - 1)
    table = table or onelayer_table(J)
    return covariance_rhs_onelayer(r, Z, ubar, eps, table, onelayer_plans(partition, table))


# ---------------------------------------------------------------------------
# samplers used by the runner
# ---------------------------------------------------------------------------

class OneLayerSampler:
    def __init__(self, J, p):
        self.table = onelayer_table(J)
        self.signed = self.table.grid.signed_large
        self.p = p

    def __call__(self, rng):
        return onelayer_plans(sample_partition(self.signed, self.p, rng), self.table)


class TwoLayerSampler:
    def __init__(self, params, p, q):
        self.table = coupling_table(params)
        self.p, self.q = p, q

    def __call__(self, rng):
        g = self.table.grid
        large = sample_partition(g.signed_large, self.p, rng)
        small = sample_partition(g.signed_small, self.q, rng)
        return twolayer_plans(large, small, self.table)


def rbm_step_full_twolayer(stat, ens, partitions, params, config):
    """One RK4 step of the batched two-layer closure for a given
    ``(large, small)`` partition pair; returns ``(stat, ens)``."""
    model = CoupledModel(params, config)
    plans = twolayer_plans(partitions[0], partitions[1], model.table)
    x = model.step(model.pack(stat, ens), plans, config.dt)
    return model.unpack(x)


# ---------------------------------------------------------------------------
# reduced-order model
# ---------------------------------------------------------------------------

class ReducedOrderModel(CoupledModel):
    """``M1`` large-scale samples share ``M2`` small-scale copies.

    Each step every copy's signed small-scale set is cut into ``kappa``
    groups of ``2q`` indices and the ``M1 = kappa M2`` groups are dealt to
    the samples at random.  Sample ``i`` couples to the modes of its group
    with ``sqrt(kappa) lambda``; stored mode ``Y_l`` of a copy is advanced by
    the sample that owns the group containing ``+l``.
    """

    def __init__(self, params, config, p, q, M2):
        super().__init__(params, config)
        self.p, self.q, self.M2 = p, q, M2
        f = rescale_factors(params.J, p, params.J, params.L, q, config.M1, M2)
        self.kappa = f.kappa
        self.lam_scale = f.lambda_scale
        self.cross = full_cross(self.table)

    def plans_for(self, rng):
        t = self.table
        g = t.grid
        N, J, M1, M2, kappa = g.N, t.J, self.config.M1, self.M2, self.kappa
        size = N // kappa
        large = sample_partition(g.signed_large, self.p, rng)
        u = onelayer_plans(large, t).u
        # groups[c, j] = signed indices of group j in copy c
        groups = np.stack([rng.permutation(g.signed_small).reshape(kappa, size) for _ in range(M2)])
        deal = rng.permutation(M1)
        copy_of = deal // kappa
        group_of = deal % kappa
        owner = np.empty((M2, kappa), dtype=np.int64)
        owner[copy_of, group_of] = np.arange(M1)
        full = groups % N
        # per copy: group id of every full-layout index
        gid = np.empty((M2, N), dtype=np.int64)
        gid[np.arange(M2)[:, None, None], full] = np.arange(kappa)[None, :, None]
        l = np.arange(g.n_small)
        lgroup = gid[:, l]
        a = full[np.arange(M2)[:, None], lgroup]
        b = (a - l[None, :, None]) % N
        other = (N - 1) / (size - 1)
        w = np.where(a == l[None, :, None], 1.0, other) * (t.c * t.b / N) * t.gamma_v[a, b]
        v = QuadraticPlan(a, b, w, N)
        owner_l = owner[np.arange(M2)[:, None], lgroup]
        # sample side: the group of sample i, restricted to stored classes
        members = full[copy_of, group_of]
        cls = members % J
        keep = cls <= J // 2
        weight = np.where(keep, self.lam_scale * np.conj(t.lam[members]) / t.L, 0.0)
        return DriftPlans(u, v, None, None, np.arange(M2),
                          info={"copy_of": copy_of, "members": members, "cls": np.where(keep, cls, 0),
                                "weight": weight, "owner_l": owner_l, "sizes_u": large.sizes})

    def plans(self):  # pragma: no cover - reduced model always samples
        raise StateError("reduced-order model needs sampled plans")

    def drift(self, x, plans):
        t = self.table
        J, hcb = t.J, t.hcb
        info = plans.info
        ubar, vbar = float(x["ubar"]), float(x["vbar"])
        Z, Y = x["Z"], x["Y"]
        nk, nl = Z.shape[1], Y.shape[1]
        Zf, Yf = to_full(Z), to_full(Y)

        NLu = plans.u.evaluate(Zf)
        cross = np.zeros_like(Z)
        M1, width = info["members"].shape
        rows = np.repeat(np.arange(M1), width)
        vals = (info["weight"] * Yf[info["copy_of"][:, None], info["members"]]).ravel()
        np.add.at(cross, (rows, info["cls"].ravel()), vals)
        dZ = NLu - _diag(plans.u, x["r"], None) - t.damping_u(ubar)[:nk] * Z - hcb * cross

        NLv = plans.v.evaluate(Yf, plans.pattern_v)
        kk = np.arange(nl) % J
        owner = info["owner_l"]
        Zk = Zf[owner, kk[None, :]]
        dY = NLv - _diag(plans.v, x["rv"], plans.pattern_v) - t.damping_v(vbar)[:nl] * Y
        dY += hcb * self.lam_scale * t.lam[:nl] * Zk

        stat = StatState(ubar, x["r"], vbar, x["rv"], x["rx"])
        NLk = to_full(NLu)[owner, kk[None, :]]
        dru, drv, drx = _twolayer_cov(stat, Z, NLu, Y, NLv, Zk, NLk, t, self.cross, self.config.inv_eps)
        if self.config.sigma is not None:
            dru = dru + np.asarray(self.config.sigma, dtype=float) ** 2
        du, dv = mean_rhs_twolayer(ubar, vbar, x["r"], x["rv"], self.params, t)
        return {"ubar": np.array(du), "r": dru, "Z": _real_ends(dZ), "vbar": np.array(dv), "rv": drv,
                "rx": drx, "Y": _real_ends(dY)}


def reduced_order_step(stat, ens, params, config, p, q, M2, rng):
    """One reduced-order step with freshly drawn batches and groups."""
    model = ReducedOrderModel(params, config, p, q, M2)
    x = model.step(model.pack(stat, ens), model.plans_for(rng), config.dt)
    return model.unpack(x)


def initial_reduced_state(params, M1, M2, init=None, seed=0):
    """Large-scale samples as in the full runs; the ``M2`` small-scale copies
    are the small-scale parts of the first ``M2`` initial members."""
    stat, ens = initial_closure_state(params, M1, init, seed)
    return stat, StochEnsemble(ens.Z, ens.Y[:M2].copy())


def run_rbm(params, config, init=None, seed=0, sample_vars=(), sample_from=np.inf):
    """Random-batch closure run (full RBM, or reduced-order when
    ``config.reduced``)."""
    cc = config.closure_config()
    n_steps = int(round(config.T / config.dt))
    meta = {"seed": seed, "method": "rbm-reduced" if config.reduced else "rbm", "p": config.p}
    if not params.two_layer:
        rescale_factors(params.J, config.p)
        stat, ens = initial_closure_state(params, config.M1, init, seed)
        model = CoupledModel(params, cc)
        source = OneLayerSampler(params.J, config.p)
    elif not config.reduced:
        rescale_factors(params.J, config.p, params.J, params.L, config.q)
        stat, ens = initial_closure_state(params, config.M1, init, seed)
        model = CoupledModel(params, cc)
        source = TwoLayerSampler(params, config.p, config.q)
    else:
        f = rescale_factors(params.J, config.p, params.J, params.L, config.q, config.M1, config.M2)
        stat, ens = initial_reduced_state(params, config.M1, f.M2, init, seed)
        model = ReducedOrderModel(params, cc, config.p, config.q, f.M2)
        source = model.plans_for
        meta.update(kappa=f.kappa, M2=f.M2)
    series, _ = integrate(model, model.pack(stat, ens), source, n_steps, config.dt, config.record_every,
                          seed, sample_vars, sample_from, meta, config.resample_every)
    return series
