"""Hot loops: ensemble RK4 for the physical L-96 models and batched triad sums.

Each kernel has a numba version (``*_nb``) and a pure-numpy version
(``*_np``).  The public names dispatch on :data:`l96rbm._jit.USE_NUMBA`;
both variants stay importable so they can be benchmarked against each other.
"""
import numpy as np

from ._jit import USE_NUMBA, numba

__all__ = [
    "onelayer_advance",
    "twolayer_advance",
    "quad_sum",
    "onelayer_advance_np",
    "twolayer_advance_np",
    "quad_sum_np",
]


# ---------------------------------------------------------------------------
# pure numpy
# ---------------------------------------------------------------------------

def _ol_rhs_np(U, F):
    return (np.roll(U, -1, axis=1) - np.roll(U, 2, axis=1)) * np.roll(U, 1, axis=1) - U + F


def onelayer_advance_np(U, F, dt, nsteps):
    """Advance every row of ``U`` by ``nsteps`` RK4 steps in place.

    Returns an int array with the (0-based) step at which each member first
    became non-finite, or -1.
    """
    blow = np.full(U.shape[0], -1, dtype=np.int64)
    for s in range(nsteps):
        k1 = _ol_rhs_np(U, F)
        k2 = _ol_rhs_np(U + 0.5 * dt * k1, F)
        k3 = _ol_rhs_np(U + 0.5 * dt * k2, F)
        k4 = _ol_rhs_np(U + dt * k3, F)
        U += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        bad = ~np.isfinite(U.sum(axis=1))
        if bad.any():
            blow[bad & (blow < 0)] = s
            return blow
    return blow


def _tl_rhs_np(U, V, F, c, b, h):
    M, J = U.shape
    L = V.shape[1] // J
    hcb = h * c / b
    du = (np.roll(U, -1, axis=1) - np.roll(U, 2, axis=1)) * np.roll(U, 1, axis=1) - U + F
    du -= hcb * V.reshape(M, J, L).sum(axis=2)
    dv = -c * b * (np.roll(V, -2, axis=1) - np.roll(V, 1, axis=1)) * np.roll(V, -1, axis=1) - c * V
    dv += hcb * np.repeat(U, L, axis=1)
    return du, dv


def twolayer_advance_np(U, V, F, c, b, h, dt, nsteps):
    blow = np.full(U.shape[0], -1, dtype=np.int64)
    for s in range(nsteps):
        a1, b1 = _tl_rhs_np(U, V, F, c, b, h)
        a2, b2 = _tl_rhs_np(U + 0.5 * dt * a1, V + 0.5 * dt * b1, F, c, b, h)
        a3, b3 = _tl_rhs_np(U + 0.5 * dt * a2, V + 0.5 * dt * b2, F, c, b, h)
        a4, b4 = _tl_rhs_np(U + dt * a3, V + dt * b3, F, c, b, h)
        U += (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        V += (dt / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        bad = ~np.isfinite(U.sum(axis=1) + V.sum(axis=1))
        if bad.any():
            blow[bad & (blow < 0)] = s
            return blow
    return blow


def quad_sum_np(Z, pidx, mi, ni, cw, chunk_elems=2_000_000):
    """``out[i, o] = sum_j cw[p, o, j] * Z[i, mi[p, o, j]] * conj(Z[i, ni[p, o, j]])``
    with ``p = pidx[i]``."""
    M = Z.shape[0]
    npat, n_out, P = mi.shape
    out = np.empty((M, n_out), dtype=np.complex128)
    step = max(1, chunk_elems // max(1, n_out * P))
    for s in range(0, M, step):
        rows = np.arange(s, min(M, s + step))
        if npat == 1:
            a = Z[s:s + len(rows)][:, mi[0]]
            b = Z[s:s + len(rows)][:, ni[0]]
            w = cw[0]
        else:
            p = pidx[rows]
            r = rows[:, None, None]
            a = Z[r, mi[p]]
            b = Z[r, ni[p]]
            w = cw[p]
        out[rows] = (w * a * np.conj(b)).sum(axis=-1)
    return out


# ---------------------------------------------------------------------------
# numba
# ---------------------------------------------------------------------------

if numba is not None:
    _nb = numba.njit(cache=True, fastmath=False)
    _nbp = numba.njit(cache=True, parallel=True)
    prange = numba.prange

    @_nb
    def _ol_rhs_nb(u, F, out):
        J = u.shape[0]
        for j in range(J):
            out[j] = (u[(j + 1) % J] - u[j - 2]) * u[j - 1] - u[j] + F

    @_nbp
    def onelayer_advance_nb(U, F, dt, nsteps):
        M, J = U.shape
        blow = np.full(M, -1, dtype=np.int64)
        for i in prange(M):
            u = U[i].copy()
            k1 = np.empty(J)
            k2 = np.empty(J)
            k3 = np.empty(J)
            k4 = np.empty(J)
            w = np.empty(J)
            for s in range(nsteps):
                _ol_rhs_nb(u, F, k1)
                for j in range(J):
                    w[j] = u[j] + 0.5 * dt * k1[j]
                _ol_rhs_nb(w, F, k2)
                for j in range(J):
                    w[j] = u[j] + 0.5 * dt * k2[j]
                _ol_rhs_nb(w, F, k3)
                for j in range(J):
                    w[j] = u[j] + dt * k3[j]
                _ol_rhs_nb(w, F, k4)
                tot = 0.0
                for j in range(J):
                    u[j] += (dt / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
                    tot += u[j]
                if not np.isfinite(tot):
                    blow[i] = s
                    break
            U[i, :] = u
        return blow

    @_nb
    def _tl_rhs_nb(u, v, F, c, b, h, du, dv):
        J = u.shape[0]
        N = v.shape[0]
        L = N // J
        hcb = h * c / b
        cb = c * b
        for j in range(J):
            acc = 0.0
            for r in range(L):
                acc += v[j * L + r]
            du[j] = (u[(j + 1) % J] - u[j - 2]) * u[j - 1] - u[j] + F - hcb * acc
        for i in range(N):
            dv[i] = -cb * (v[(i + 2) % N] - v[i - 1]) * v[(i + 1) % N] - c * v[i] + hcb * u[i // L]

    @_nbp
    def twolayer_advance_nb(U, V, F, c, b, h, dt, nsteps):
        M, J = U.shape
        N = V.shape[1]
        blow = np.full(M, -1, dtype=np.int64)
        for i in prange(M):
            u = U[i].copy()
            v = V[i].copy()
            a1 = np.empty(J)
            a2 = np.empty(J)
            a3 = np.empty(J)
            a4 = np.empty(J)
            b1 = np.empty(N)
            b2 = np.empty(N)
            b3 = np.empty(N)
            b4 = np.empty(N)
            wu = np.empty(J)
            wv = np.empty(N)
            for s in range(nsteps):
                _tl_rhs_nb(u, v, F, c, b, h, a1, b1)
                for j in range(J):
                    wu[j] = u[j] + 0.5 * dt * a1[j]
                for j in range(N):
                    wv[j] = v[j] + 0.5 * dt * b1[j]
                _tl_rhs_nb(wu, wv, F, c, b, h, a2, b2)
                for j in range(J):
                    wu[j] = u[j] + 0.5 * dt * a2[j]
                for j in range(N):
                    wv[j] = v[j] + 0.5 * dt * b2[j]
                _tl_rhs_nb(wu, wv, F, c, b, h, a3, b3)
                for j in range(J):
                    wu[j] = u[j] + dt * a3[j]
                for j in range(N):
                    wv[j] = v[j] + dt * b3[j]
                _tl_rhs_nb(wu, wv, F, c, b, h, a4, b4)
                tot = 0.0
                for j in range(J):
                    u[j] += (dt / 6.0) * (a1[j] + 2.0 * a2[j] + 2.0 * a3[j] + a4[j])
                    tot += u[j]
                for j in range(N):
                    v[j] += (dt / 6.0) * (b1[j] + 2.0 * b2[j] + 2.0 * b3[j] + b4[j])
                    tot += v[j]
                if not np.isfinite(tot):
                    blow[i] = s
                    break
            U[i, :] = u
            V[i, :] = v
        return blow

    @_nbp
    def _quad_sum_nb(Z, pidx, mi, ni, cw, out):
        M = Z.shape[0]
        n_out = mi.shape[1]
        P = mi.shape[2]
        for i in prange(M):
            pt = pidx[i]
            for o in range(n_out):
                re = 0.0
                im = 0.0
                for j in range(P):
                    a = Z[i, mi[pt, o, j]]
                    bb = Z[i, ni[pt, o, j]]
                    # a * conj(bb)
                    pr = a.real * bb.real + a.imag * bb.imag
                    pi = a.imag * bb.real - a.real * bb.imag
                    w = cw[pt, o, j]
                    re += w.real * pr - w.imag * pi
                    im += w.real * pi + w.imag * pr
                out[i, o] = complex(re, im)

    def quad_sum_nb(Z, pidx, mi, ni, cw):
        out = np.empty((Z.shape[0], mi.shape[1]), dtype=np.complex128)
        _quad_sum_nb(np.ascontiguousarray(Z), pidx, mi, ni, cw, out)
        return out
else:  # pragma: no cover
    onelayer_advance_nb = twolayer_advance_nb = quad_sum_nb = None


if USE_NUMBA:
    onelayer_advance = onelayer_advance_nb
    twolayer_advance = twolayer_advance_nb
    quad_sum = quad_sum_nb
else:
    onelayer_advance = onelayer_advance_np
    twolayer_advance = twolayer_advance_np
    quad_sum = quad_sum_np
