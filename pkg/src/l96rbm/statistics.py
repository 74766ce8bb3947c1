"""Empirical moments, histograms, energy and error norms, plus the on-disk
time-series record shared by every run type."""
import csv
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats as sps

from .errors import AlignmentError, StateError

__all__ = [
    "StatisticsSeries",
    "Histogram",
    "Moments",
    "GaussianFit",
    "signed_sum",
    "empirical_moments",
    "total_energy",
    "histogram1d",
    "histogram2d",
    "gaussian_fit",
    "skewness",
    "tv_distance",
    "align",
    "variance_error_norm",
    "mean_error_norm",
    "time_average",
]

TIME_DIGITS = 12


def _num(x):
    return repr(float(x))


def signed_sum(r, axis=-1):
    """Sum of a symmetric half-layout spectrum over the full signed index set."""
    r = np.asarray(r)
    r = np.moveaxis(r, axis, -1)
    return r[..., 0] + 2.0 * r[..., 1:-1].sum(axis=-1) + r[..., -1]


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------

class Moments(NamedTuple):
    mean: np.ndarray
    variance: np.ndarray
    third: dict


def empirical_moments(Z, triples=()):
    """Mean and variance per mode over the member axis (axis 0), dividing by M.

    ``triples`` lists full-layout index triples ``(m, n, k)``; for each the raw
    third moment ``<Z_m conj(Z_n) conj(Z_k)>`` is returned in ``third``.
    """
    Z = np.asarray(Z)
    if Z.shape[0] < 2:
        raise StateError(f"need at least 2 members, got {Z.shape[0]}")
    mean = Z.mean(axis=0)
    var = np.mean(np.abs(Z - mean) ** 2, axis=0)
    third = {}
    for m, n, k in triples:
        third[(m, n, k)] = np.mean(Z[:, m] * np.conj(Z[:, n]) * np.conj(Z[:, k]))
    return Moments(mean, var, third)


def total_energy(state):
    """``ubar^2 + (1/K) tr R`` with ``R`` the covariance in the orthonormal
    Fourier basis, i.e. ``ubar^2 + sum_k r_k / J^2`` over the signed set.

    For a two-layer state the small-scale layer adds ``L (vbar^2 + sum_l
    r^v_l / (JL)^2)`` (energy per large-scale cell).
    """
    r = np.asarray(state.r, dtype=float)
    J = 2 * (r.shape[-1] - 1)
    E = state.ubar ** 2 + signed_sum(r) / J ** 2
    if getattr(state, "rv", None) is not None:
        rv = np.asarray(state.rv, dtype=float)
        N = 2 * (rv.shape[-1] - 1)
        L = N // J
        E = E + L * (state.vbar ** 2 + signed_sum(rv) / N ** 2)
    return float(E)


# ---------------------------------------------------------------------------
# histograms and distributions
# ---------------------------------------------------------------------------

@dataclass
class Histogram:
    variables: tuple
    edges: tuple
    counts: np.ndarray
    total: int

    @property
    def ndim(self):
        return len(self.edges)

    def density(self):
        widths = np.diff(self.edges[0])
        if self.ndim == 2:
            widths = np.outer(widths, np.diff(self.edges[1]))
        return self.counts / (self.total * widths)

    def probabilities(self):
        return self.counts / self.total


def _range(x, policy):
    if policy == "auto":
        mu, sd = float(np.mean(x)), float(np.std(x))
        if sd == 0.0:
            sd = 0.1
        return mu - 5.0 * sd, mu + 5.0 * sd
    lo, hi = policy
    if not hi > lo:
        raise ValueError(f"invalid histogram range ({lo}, {hi})")
    return float(lo), float(hi)


def histogram1d(samples, n_bins=61, range_policy="auto", variable="x"):
    """Counts over uniform bins; ``range_policy`` is ``"auto"`` (mean +- 5 sd)
    or a fixed ``(lo, hi)`` pair.  Samples outside the range are clipped into
    the edge bins so counts always sum to the sample total."""
    x = np.ravel(np.asarray(samples, dtype=float))
    if x.size == 0:
        raise StateError("cannot histogram an empty sample")
    lo, hi = _range(x, range_policy)
    edges = np.linspace(lo, hi, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    return Histogram((variable,), (edges,), counts, int(x.size))


def histogram2d(x, y, n_bins=61, range_policy="auto", variables=("x", "y")):
    x = np.ravel(np.asarray(x, dtype=float))
    y = np.ravel(np.asarray(y, dtype=float))
    if x.size == 0 or x.size != y.size:
        raise StateError("histogram2d needs two nonempty samples of equal length")
    pol = range_policy if isinstance(range_policy, str) else range_policy[0]
    pol_y = range_policy if isinstance(range_policy, str) else range_policy[1]
    ex = np.linspace(*_range(x, pol), n_bins + 1)
    ey = np.linspace(*_range(y, pol_y), n_bins + 1)
    ix = np.clip(np.searchsorted(ex, x, side="right") - 1, 0, n_bins - 1)
    iy = np.clip(np.searchsorted(ey, y, side="right") - 1, 0, n_bins - 1)
    counts = np.zeros((n_bins, n_bins), dtype=np.int64)
    np.add.at(counts, (ix, iy), 1)
    return Histogram(tuple(variables), (ex, ey), counts, int(x.size))


class GaussianFit(NamedTuple):
    mean: float
    variance: float
    degenerate: bool


def gaussian_fit(samples):
    """Moment-matched Gaussian (variance divides by the sample count)."""
    x = np.ravel(np.asarray(samples, dtype=float))
    if x.size < 2:
        raise StateError("gaussian_fit needs at least 2 samples")
    var = float(np.var(x))
    return GaussianFit(float(np.mean(x)), var, var == 0.0)


def skewness(samples):
    return float(sps.skew(np.ravel(samples), bias=True))


def _rebin(h, edges):
    """Spread 1D counts onto ``edges`` assuming uniform density inside bins."""
    src = h.edges[0]
    cdf = np.concatenate([[0.0], np.cumsum(h.probabilities())])
    return np.diff(np.interp(edges, src, cdf, left=0.0, right=1.0))


def tv_distance(a, b):
    """Total-variation distance between two 1D histograms on their union grid."""
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("tv_distance is defined for 1D histograms")
    if a.edges[0].shape == b.edges[0].shape and np.array_equal(a.edges[0], b.edges[0]):
        pa, pb = a.probabilities(), b.probabilities()
    else:
        edges = np.union1d(a.edges[0], b.edges[0])
        pa, pb = _rebin(a, edges), _rebin(b, edges)
    return 0.5 * float(np.abs(pa - pb).sum())


# ---------------------------------------------------------------------------
# time series
# ---------------------------------------------------------------------------

@dataclass
class StatisticsSeries:
    """Time-indexed record of means, spectra, energy and pooled samples."""

    times: list = field(default_factory=list)
    ubar: list = field(default_factory=list)
    r: list = field(default_factory=list)
    vbar: list = field(default_factory=list)
    rv: list = field(default_factory=list)
    rx: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    samples: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def append(self, t, ubar, r, energy, vbar=None, rv=None, rx=None):
        t = round(float(t), TIME_DIGITS)
        if self.times and t <= self.times[-1]:
            raise StateError(f"record times must increase, got {t} after {self.times[-1]}")
        self.times.append(t)
        self.ubar.append(float(ubar))
        self.r.append(np.array(r, dtype=float))
        self.energy.append(float(energy))
        if vbar is not None:
            self.vbar.append(float(vbar))
            self.rv.append(np.array(rv, dtype=float))
            self.rx.append(np.array(rx, dtype=complex))

    def add_samples(self, name, values):
        self.samples.setdefault(name, []).append(np.ravel(np.asarray(values, dtype=float)))

    def pooled(self, name):
        return np.concatenate(self.samples[name]) if name in self.samples else np.empty(0)

    @property
    def two_layer(self):
        return len(self.vbar) > 0

    def arrays(self):
        """Dict of stacked numpy arrays."""
        out = {
            "times": np.asarray(self.times),
            "ubar": np.asarray(self.ubar),
            "r": np.asarray(self.r),
            "energy": np.asarray(self.energy),
        }
        if self.two_layer:
            out["vbar"] = np.asarray(self.vbar)
            out["rv"] = np.asarray(self.rv)
            out["rx"] = np.asarray(self.rx)
        return out

    def window(self, t0, t1=np.inf):
        """Boolean mask of records with ``t0 <= t <= t1``."""
        t = np.asarray(self.times)
        return (t >= t0 - 1e-12) & (t <= t1 + 1e-12)

    # ---- persistence -----------------------------------------------------

    def save(self, outdir, n_bins=61):
        """Write means/spectra/energy CSVs and one histogram CSV per pooled
        sample; returns the list of written paths."""
        os.makedirs(outdir, exist_ok=True)
        tag = f"# config_hash={self.meta.get('config_hash', '')} seed={self.meta.get('seed', '')}"
        paths = []
        a = self.arrays()

        def writer(name, header, rows):
            path = os.path.join(outdir, name)
            with open(path, "w", newline="") as fh:
                fh.write(tag + "\n")
                w = csv.writer(fh)
                w.writerow(header)
                w.writerows(rows)
            paths.append(path)

        if self.two_layer:
            writer("means.csv", ["time", "ubar", "vbar"],
                   [(_num(t), _num(u), _num(v)) for t, u, v in zip(self.times, self.ubar, self.vbar)])
        else:
            writer("means.csv", ["time", "ubar"], [(_num(t), _num(u)) for t, u in zip(self.times, self.ubar)])

        rows = []
        if self.two_layer:
            nk = a["r"].shape[1]
            for i, t in enumerate(self.times):
                for l in range(a["rv"].shape[1]):
                    ru = _num(a["r"][i, l]) if l < nk else ""
                    x = a["rx"][i, l]
                    rows.append((_num(t), l, ru, _num(a["rv"][i, l]), _num(x.real), _num(x.imag)))
            writer("spectra.csv", ["time", "k", "r_u", "r_v", "re_r_x", "im_r_x"], rows)
        else:
            for i, t in enumerate(self.times):
                for k in range(a["r"].shape[1]):
                    rows.append((_num(t), k, _num(a["r"][i, k])))
            writer("spectra.csv", ["time", "k", "r_u"], rows)

        writer("energy.csv", ["time", "E"], [(_num(t), _num(e)) for t, e in zip(self.times, self.energy)])

        for name in sorted(self.samples):
            h = histogram1d(self.pooled(name), n_bins, variable=name)
            e = h.edges[0]
            writer(f"hist_{name}.csv", ["bin_lo", "bin_hi", "count"],
                   [(_num(e[i]), _num(e[i + 1]), int(c)) for i, c in enumerate(h.counts)])
        return paths

    @classmethod
    def load(cls, outdir):
        """Read back the CSVs written by :meth:`save` (histograms excluded)."""

        def read(name):
            with open(os.path.join(outdir, name), newline="") as fh:
                first = fh.readline()
                rows = list(csv.reader(fh))
            return first, rows[0], rows[1:]

        tag, header, rows = read("means.csv")
        s = cls()
        for part in tag.lstrip("# ").split():
            key, _, val = part.partition("=")
            s.meta[key] = val
        two = "vbar" in header
        times = [float(r[0]) for r in rows]
        ubar = [float(r[1]) for r in rows]
        vbar = [float(r[2]) for r in rows] if two else None
        _, eh, erows = read("energy.csv")
        energy = [float(r[1]) for r in erows]
        _, sh, srows = read("spectra.csv")
        by_t = {}
        for row in srows:
            by_t.setdefault(float(row[0]), []).append(row)
        for i, t in enumerate(times):
            block = sorted(by_t[t], key=lambda row: int(row[1]))
            r = [float(row[2]) for row in block if row[2] != ""]
            if two:
                rv = [float(row[3]) for row in block]
                rx = [complex(float(row[4]), float(row[5])) for row in block]
                s.append(t, ubar[i], r, energy[i], vbar[i], rv, rx)
            else:
                s.append(t, ubar[i], r, energy[i])
        return s


# ---------------------------------------------------------------------------
# error norms
# ---------------------------------------------------------------------------

def align(a, b):
    """Indices of the records the two series share (exact time match)."""
    ta = np.round(np.asarray(a.times), TIME_DIGITS)
    tb = np.round(np.asarray(b.times), TIME_DIGITS)
    common, ia, ib = np.intersect1d(ta, tb, return_indices=True)
    if common.size == 0:
        raise AlignmentError("series share no record times")
    return common, ia, ib


def variance_error_norm(model, truth, which="r", t0=-np.inf, t1=np.inf):
    """``(1/N) sum_s sum_k |r_m,k(t_s) - r_t,k(t_s)|`` over shared times in
    ``[t0, t1]``; ``k`` runs over the full signed set (both halves)."""
    t, ia, ib = align(model, truth)
    sel = (t >= t0 - 1e-12) & (t <= t1 + 1e-12)
    if not sel.any():
        raise AlignmentError(f"no shared record times in [{t0}, {t1}]")
    rm = np.asarray(getattr(model, which))[ia[sel]]
    rt = np.asarray(getattr(truth, which))[ib[sel]]
    if rm.shape[1:] != rt.shape[1:]:
        raise AlignmentError(f"spectra have different lengths {rm.shape[1:]} and {rt.shape[1:]}")
    return float(np.mean(signed_sum(np.abs(rm - rt))))


def mean_error_norm(model, truth, which="ubar", t0=-np.inf, t1=np.inf):
    """``(1/N) sum_s |m(t_s) - t(t_s)|^2`` over shared times in ``[t0, t1]``."""
    t, ia, ib = align(model, truth)
    sel = (t >= t0 - 1e-12) & (t <= t1 + 1e-12)
    if not sel.any():
        raise AlignmentError(f"no shared record times in [{t0}, {t1}]")
    xm = np.asarray(getattr(model, which))[ia[sel]]
    xt = np.asarray(getattr(truth, which))[ib[sel]]
    return float(np.mean(np.abs(xm - xt) ** 2))


def time_average(series, name, t0=-np.inf, t1=np.inf):
    mask = series.window(t0, t1)
    if not mask.any():
        raise AlignmentError(f"no records in [{t0}, {t1}]")
    return np.asarray(getattr(series, name))[mask].mean(axis=0)
