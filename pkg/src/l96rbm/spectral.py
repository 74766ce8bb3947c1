"""Fourier conventions, Hermitian mode storage and coupling tables.

Convention: ``u_j = mean + (1/J) * sum_k Z_k exp(2i pi k j / J)`` with sites
``j = 0..J-1``, i.e. ``Z = fft(u - mean)``.  Only ``k = 0..J/2`` is stored
("half" layout, same as ``numpy.fft.rfft``); the "full" layout is the
``numpy.fft.fft`` ordering and is what the right-hand sides work on.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, StateError
from .kernels import quad_sum

__all__ = [
    "WavenumberGrid",
    "CouplingTable",
    "QuadraticPlan",
    "full_plan",
    "wrap",
    "to_full",
    "to_half",
    "onelayer_gamma",
    "twolayer_gamma_v",
    "twolayer_lambda",
    "onelayer_coefficients",
    "twolayer_coefficients",
    "decompose_field",
    "reconstruct_field",
    "ensemble_modes",
]


def wrap(k, n):
    """Map integer wavenumbers into the signed set ``(-n/2, n/2]``."""
    return (np.asarray(k) + n // 2 - 1) % n - n // 2 + 1


def to_full(Z):
    """Extend half-layout modes (last axis ``n/2 + 1``) to the full fft layout."""
    Z = np.asarray(Z)
    return np.concatenate([Z, np.conj(Z[..., -2:0:-1])], axis=-1)


def to_half(Zf):
    n = Zf.shape[-1]
    return Zf[..., : n // 2 + 1]


@dataclass(frozen=True)
class WavenumberGrid:
    J: int
    L: int = 1

    def __post_init__(self):
        if int(self.J) != self.J or self.J < 4 or self.J % 2:
            raise ConfigError(f"J must be an even integer >= 4, got {self.J}")
        if int(self.L) != self.L or self.L < 1:
            raise ConfigError(f"L must be an integer >= 1, got {self.L}")
        if self.L > 1 and self.L % 2:
            raise ConfigError(f"L must be even for the two-layer grid, got {self.L}")

    @property
    def N(self):
        """Small-scale grid size ``J * L``."""
        return self.J * self.L

    @property
    def signed_large(self):
        return np.arange(-self.J // 2 + 1, self.J // 2 + 1)

    @property
    def signed_small(self):
        return np.arange(-self.N // 2 + 1, self.N // 2 + 1)

    @property
    def n_large(self):
        """Number of stored large-scale modes."""
        return self.J // 2 + 1

    @property
    def n_small(self):
        return self.N // 2 + 1

    def wrap_large(self, k):
        return wrap(k, self.J)

    def wrap_small(self, l):
        return wrap(l, self.N)


def _check_signed(k, n):
    if not (-n // 2 < k <= n // 2):
        raise IndexError(f"wavenumber {k} outside the signed set of size {n}")


def onelayer_gamma(m, n, J):
    """Triad coefficient of the one-layer model for signed wavenumbers ``m, n``."""
    _check_signed(m, J)
    _check_signed(n, J)
    th = 2 * np.pi / J
    return complex(np.exp(1j * th * (m + n)) - np.exp(-1j * th * (2 * m - n)))


def twolayer_gamma_v(p, q, J, L):
    N = J * L
    _check_signed(p, N)
    _check_signed(q, N)
    th = 2 * np.pi / N
    return complex(np.exp(-1j * th * (p + q)) - np.exp(1j * th * (2 * p - q)))


def twolayer_lambda(l, J, L):
    """Large-small coupling coefficient without the ``h c / b`` prefactor."""
    N = J * L
    _check_signed(l, N)
    if l % N == 0:
        return complex(L)
    if l % J == 0:
        return 0j
    return complex((1 - np.exp(-2j * np.pi * l / J)) / (1 - np.exp(-2j * np.pi * l / N)))


def _gamma_u_table(J):
    th = 2 * np.pi / J
    m = np.arange(J)[:, None]
    n = np.arange(J)[None, :]
    return np.exp(1j * th * (m + n)) - np.exp(-1j * th * (2 * m - n))


def _gamma_v_table(N):
    th = 2 * np.pi / N
    p = np.arange(N)[:, None]
    q = np.arange(N)[None, :]
    return np.exp(-1j * th * (p + q)) - np.exp(1j * th * (2 * p - q))


def _lambda_table(J, L):
    N = J * L
    l = np.arange(N)
    lam = np.full(N, complex(L))
    nz = l % N != 0
    lam[nz] = (1 - np.exp(-2j * np.pi * l[nz] / J)) / (1 - np.exp(-2j * np.pi * l[nz] / N))
    # exact zeros where J divides l
    lam[(l % J == 0) & nz] = 0.0
    return lam


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CouplingTable:
    """Coupling coefficients in full fft layout.

    ``gamma_u[m, n]`` and ``gamma_v[p, q]`` are indexed by wavenumber modulo
    the grid size (the coefficients are periodic), ``lam`` is stored without
    the ``h c / b`` prefactor.  The one-layer table has ``L = 1`` and no
    small-scale entries.
    """

    grid: WavenumberGrid
    c: float = 1.0
    b: float = 1.0
    h: float = 0.0
    gamma_u: np.ndarray = field(repr=False, default=None)
    gamma_v: np.ndarray = field(repr=False, default=None)
    lam: np.ndarray = field(repr=False, default=None)

    @property
    def J(self):
        return self.grid.J

    @property
    def L(self):
        return self.grid.L

    @property
    def hcb(self):
        return self.h * self.c / self.b

    @property
    def gamma_u_diag(self):
        return np.diagonal(self.gamma_u)

    @property
    def gamma_v_diag(self):
        return None if self.gamma_v is None else np.diagonal(self.gamma_v)

    def damping_u(self, ubar):
        """Quasilinear damping ``1 + conj(gamma_k) ubar`` in full layout."""
        return 1.0 + np.conj(self.gamma_u_diag) * ubar

    def damping_v(self, vbar):
        return self.c * (1.0 + self.b * np.conj(self.gamma_v_diag) * vbar)


def onelayer_coefficients(J):
    grid = WavenumberGrid(J, 1)
    return CouplingTable(grid, gamma_u=_frozen(_gamma_u_table(J)))


def twolayer_coefficients(J, L, c, b, h):
    """Coupling tables of the two-layer model; ``lam`` excludes ``h c / b``."""
    if c <= 0 or b <= 0:
        raise ConfigError(f"c and b must be positive, got c={c}, b={b}")
    grid = WavenumberGrid(J, L)
    return CouplingTable(
        grid,
        c=float(c),
        b=float(b),
        h=float(h),
        gamma_u=_frozen(_gamma_u_table(J)),
        gamma_v=_frozen(_gamma_v_table(grid.N)),
        lam=_frozen(_lambda_table(J, L)),
    )


def decompose_field(u, mean=None):
    """Split a real field (last axis = sites) into mean and half-layout modes.

    ``mean`` defaults to the spatial average of each field; pass the
    ensemble mean to keep the member-to-member spread of the zeroth mode.
    """
    u = np.asarray(u, dtype=float)
    if mean is None:
        mean = u.mean(axis=-1)
    mean = np.asarray(mean, dtype=float)
    Z = np.fft.rfft(u - mean[..., None] if mean.ndim else u - mean, axis=-1)
    return (mean if mean.ndim else float(mean)), Z


def reconstruct_field(mean, modes, tol=1e-12):
    """Inverse of :func:`decompose_field`."""
    Z = np.asarray(modes, dtype=complex)
    n = 2 * (Z.shape[-1] - 1)
    scale = np.linalg.norm(Z, axis=-1)
    resid = np.maximum(np.abs(Z[..., 0].imag), np.abs(Z[..., -1].imag))
    if np.any(resid > tol * np.maximum(scale, 1.0)):
        raise StateError("modes violate Hermitian symmetry (imaginary zeroth or Nyquist mode)")
    u = np.fft.irfft(Z, n=n, axis=-1)
    mean = np.asarray(mean, dtype=float)
    return u + (mean[..., None] if mean.ndim else mean)


def ensemble_modes(U):
    """Statistical mean and per-member modes of an ensemble ``(M, n)``.

    The mean is taken over members and sites, so the zeroth mode carries
    each member's offset from it.
    """
    mean = float(np.mean(U))
    return mean, np.fft.rfft(U - mean, axis=-1)


class QuadraticPlan:
    """Index/weight tables for batched quadratic mode sums.

    Evaluates ``out[i, o] = sum_j w[p, o, j] * Z[i, a[p, o, j]] * conj(Z[i, b[p, o, j]])
    - sum_m D[p, o, m] * r[m]`` where ``p = pattern[i]`` selects one of
    several index patterns (one per batch assignment) and the second sum is
    the diagonal correction for entries with ``a == b``.
    """

    def __init__(self, a, b, w, n):
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        w = np.asarray(w, dtype=np.complex128)
        if a.ndim == 2:
            a, b, w = a[None], b[None], w[None]
        self.a = np.ascontiguousarray(a)
        self.b = np.ascontiguousarray(b)
        self.w = np.ascontiguousarray(w)
        self.n = n
        self.n_out = a.shape[1]
        pp, oo, jj = np.nonzero((a == b) & (w != 0))
        self._diag = (pp, oo, a[pp, oo, jj], w[pp, oo, jj])

    @property
    def n_patterns(self):
        return self.a.shape[0]

    def diagonal(self, r_full):
        """``sum_j w[p, o, j] r[a[p, o, j]]`` over entries with ``a == b``,
        shape ``(patterns, outputs)``."""
        pp, oo, idx, w = self._diag
        out = np.zeros((self.n_patterns, self.n_out), dtype=np.complex128)
        np.add.at(out, (pp, oo), w * np.asarray(r_full)[idx])
        return out

    def evaluate(self, Zf, pattern=None, r_full=None):
        """Quadratic sums for every member; subtracts the diagonal ``r`` term
        when ``r_full`` is given."""
        if pattern is None:
            pattern = np.zeros(Zf.shape[0], dtype=np.int64)
        out = quad_sum(np.ascontiguousarray(Zf), pattern, self.a, self.b, self.w)
        if r_full is not None:
            out -= self.diagonal(r_full)[pattern]
        return out


def full_plan(gamma, n_out, scale):
    """Unbatched convolution plan: outputs ``k = 0..n_out-1``,
    ``sum_m scale * gamma[m, m-k] Z_m conj(Z_{m-k})``."""
    n = gamma.shape[0]
    k = np.arange(n_out)[:, None]
    m = np.arange(n)[None, :]
    a = np.broadcast_to(m, (n_out, n))
    b = (m - k) % n
    return QuadraticPlan(a, b, scale * gamma[a, b], n)
