"""Experiment configuration, orchestration, comparisons and sweeps."""
import dataclasses
import hashlib
import json
import logging
import os
import pickle
import time
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import __version__
from .closure import ClosureConfig, CoupledModel, initial_closure_state, run_closure
from .errors import AlignmentError, ConfigError, DivergenceError
from .lorenz96 import InitialDistribution, OneLayerParams, TwoLayerParams, run_mc
from .rbm import OneLayerSampler, RbmConfig, rescale_factors, run_rbm
from .statistics import (
    Histogram,
    StatisticsSeries,
    align,
    histogram1d,
    mean_error_norm,
    signed_sum,
    tv_distance,
    variance_error_norm,
)

__all__ = [
    "ExperimentConfig",
    "RunManifest",
    "SweepTable",
    "load_config",
    "run_experiment",
    "truth_series",
    "compare",
    "compare_dirs",
    "load_histograms",
    "fit_slope",
    "dt_sweep",
    "batch_sweep",
    "time_stochastic_update",
]

log = logging.getLogger(__name__)

SYSTEMS = ("one-layer", "two-layer")
METHODS = ("mc", "closure", "rbm", "rbm-reduced")

_FLOAT_FIELDS = ("F", "c", "b", "h", "dt", "T", "u_mean", "u_std", "v_mean", "v_std", "sample_from",
                 "t_avg_start")

_DEFAULTS = {
    "one-layer": {"J": 40, "L": 1, "F": 8.0},
    "two-layer": {"J": 8, "L": 32, "F": 20.0},
}


@dataclass
class ExperimentConfig:
    """One experiment; ``None`` fields take system-dependent defaults when
    :meth:`resolve` runs."""

    system: str = "one-layer"
    method: str = "mc"
    J: int = None
    L: int = None
    F: float = None
    c: float = 10.0
    b: float = 10.0
    h: float = 1.0
    dt: float = 5e-4
    T: float = 10.0
    record_every: int = 100
    M: int = 20000
    M1: int = 100
    M2: int = None
    truth_M: int = 20000
    p: int = 5
    q: int = None
    resample_every: int = 1
    eps: float = 0.1
    sigma: object = None
    seed: int = 0
    out: str = None
    u_mean: float = None
    u_std: float = 1.0
    v_mean: float = 0.0
    v_std: float = 0.1
    samples: list = field(default_factory=list)
    sample_from: float = None
    t_avg_start: float = None
    n_bins: int = 61

    @property
    def two_layer(self):
        return self.system == "two-layer"

    def resolve(self):
        """Fill defaults and validate every module-level precondition."""
        if self.system not in SYSTEMS:
            raise ConfigError(f"system must be one of {SYSTEMS}, got {self.system!r}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        for key, val in _DEFAULTS[self.system].items():
            if getattr(self, key) is None:
                setattr(self, key, val)
        if not self.two_layer and self.L != 1:
            raise ConfigError(f"one-layer system has L = 1, got {self.L}")
        if self.method == "rbm-reduced" and not self.two_layer:
            raise ConfigError("rbm-reduced needs the two-layer system")
        if isinstance(self.eps, str):
            if self.eps.strip().lower() not in ("inf", "infinity", ".inf"):
                raise ConfigError(f"eps must be a number or 'inf', got {self.eps!r}")
            self.eps = float("inf")
        self.eps = float(self.eps)
        # YAML 1.1 reads "1e-3" as a string
        for key in _FLOAT_FIELDS:
            val = getattr(self, key)
            if val is not None:
                try:
                    setattr(self, key, float(val))
                except (TypeError, ValueError) as err:
                    raise ConfigError(f"{key} must be a number, got {val!r}") from err
        for key in ("J", "L", "record_every", "M", "M1", "truth_M", "p", "resample_every", "seed", "n_bins"):
            val = getattr(self, key)
            if int(val) != val:
                raise ConfigError(f"{key} must be an integer, got {val!r}")
            setattr(self, key, int(val))
        if self.record_every < 1:
            raise ConfigError(f"record_every must be >= 1, got {self.record_every}")
        if self.t_avg_start is None:
            self.t_avg_start = self.T / 2
        if self.sample_from is None:
            self.sample_from = self.t_avg_start
        if not 0 <= self.t_avg_start <= self.T:
            raise ConfigError(f"t_avg_start={self.t_avg_start} outside [0, T={self.T}]")
        self.samples = list(self.samples or [])
        if self.two_layer and self.q is None:
            self.q = min(16, self.J * self.L)
        self.physical_params()
        if self.method == "mc" and self.M < 2:
            raise ConfigError(f"Monte-Carlo ensemble needs M >= 2, got {self.M}")
        if self.method != "mc":
            self.closure_config()
        if self.method in ("rbm", "rbm-reduced"):
            self.rbm_config()
            if self.two_layer:
                f = rescale_factors(self.J, self.p, self.J, self.L, self.q,
                                    self.M1 if self.method == "rbm-reduced" else None, self.M2)
                if self.method == "rbm-reduced":
                    self.M2 = f.M2
            else:
                rescale_factors(self.J, self.p)
        return self

    def physical_params(self):
        if self.two_layer:
            return TwoLayerParams(J=self.J, L=self.L, F=float(self.F), c=float(self.c), b=float(self.b),
                                  h=float(self.h), dt=float(self.dt), T=float(self.T))
        return OneLayerParams(J=self.J, F=float(self.F), dt=float(self.dt), T=float(self.T))

    def initial_distribution(self):
        return InitialDistribution(self.u_mean, self.u_std, self.v_mean, self.v_std)

    def _sigma(self):
        if self.sigma is None:
            return None
        return tuple(np.broadcast_to(np.asarray(self.sigma, dtype=float), (self.J // 2 + 1,)))

    def closure_config(self):
        return ClosureConfig(eps=self.eps, sigma=self._sigma(), dt=self.dt, T=self.T, M1=self.M1,
                             record_every=self.record_every)

    def rbm_config(self):
        return RbmConfig(p=self.p, q=self.q, M1=self.M1, M2=self.M2, eps=self.eps, dt=self.dt, T=self.T,
                         resample_every=self.resample_every, record_every=self.record_every,
                         reduced=self.method == "rbm-reduced", sigma=self._sigma())

    def to_dict(self):
        d = dataclasses.asdict(self)
        if isinstance(d["eps"], float) and np.isinf(d["eps"]):
            d["eps"] = "inf"
        return d

    def replace(self, **changes):
        d = dataclasses.asdict(self)
        d.update(changes)
        return ExperimentConfig(**d).resolve()

    def config_hash(self, exclude=("out", "seed")):
        """Short digest of every field that affects results apart from the seed."""
        d = {k: v for k, v in self.to_dict().items() if k not in exclude}
        blob = json.dumps(d, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _line_of(err):
    mark = getattr(err, "problem_mark", None) or getattr(err, "context_mark", None)
    return None if mark is None else mark.line + 1


def config_from_dict(data, source="<dict>"):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{source}: unknown keys {unknown}")
    try:
        return ExperimentConfig(**data).resolve()
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{source}: {err}") from err


def load_config(path, overrides=None):
    """Parse a YAML experiment file, apply ``overrides`` and validate."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as err:
        line = _line_of(err)
        where = f"{path}:{line}" if line else str(path)
        raise ConfigError(f"{where}: cannot parse config ({getattr(err, 'problem', err)})") from err
    if isinstance(data, dict) and overrides:
        data = {**data, **overrides}
    return config_from_dict(data, str(path))


def parse_override(text):
    """``key=value`` with the value parsed as YAML (so numbers stay numbers)."""
    key, sep, val = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must look like key=value, got {text!r}")
    try:
        value = yaml.safe_load(val)
    except yaml.YAMLError as err:
        raise ConfigError(f"cannot parse override {text!r}") from err
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            pass
    return key.strip(), value


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    config_hash: str
    seed: int
    version: str
    method: str
    status: str = "ok"
    timings: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    failure: dict = None

    def write(self, outdir):
        path = os.path.join(outdir, "manifest.yaml")
        with open(path, "w") as fh:
            yaml.safe_dump(dataclasses.asdict(self), fh, sort_keys=False)
        return path


def _dispatch(config):
    params = config.physical_params()
    init = config.initial_distribution()
    kw = dict(sample_vars=tuple(config.samples), sample_from=config.sample_from)
    if config.method == "mc":
        return run_mc(params, config.M, init, config.seed, config.record_every, **kw)
    if config.method == "closure":
        return run_closure(params, config.closure_config(), init, config.seed, **kw)
    return run_rbm(params, config.rbm_config(), init, config.seed, **kw)


def run_experiment(config, out=None):
    """Run ``config`` and write its outputs to ``out`` (default
    ``config.out``; nothing is written when both are ``None``).

    On divergence the partial series is still written, the manifest is
    flagged ``diverged`` and the error is re-raised.
    """
    out = out or config.out
    h = config.config_hash()
    manifest = RunManifest(h, config.seed, __version__, config.method, config=config.to_dict())
    t0 = time.perf_counter()
    error = None
    try:
        series = _dispatch(config)
    except DivergenceError as err:
        error = err
        series = getattr(err, "series", None) or StatisticsSeries()
        manifest.status = "diverged"
        manifest.failure = {"time": float(err.time), "member": err.member, "message": str(err)}
    manifest.timings["integrate_s"] = round(time.perf_counter() - t0, 3)
    series.meta.update(config_hash=h, seed=config.seed, method=config.method)
    if out:
        t1 = time.perf_counter()
        files = series.save(out, config.n_bins) if series.times else []
        manifest.timings["write_s"] = round(time.perf_counter() - t1, 3)
        manifest.files = [os.path.basename(f) for f in files] + ["manifest.yaml"]
        os.makedirs(out, exist_ok=True)
        manifest.write(out)
    if error is not None:
        raise error
    return series, manifest


def cache_dir():
    return os.environ.get("L96RBM_CACHE") or os.path.join(os.path.expanduser("~"), ".cache", "l96rbm")


def truth_series(config, use_cache=True):
    """Monte-Carlo reference for ``config`` (``truth_M`` members, same seed,
    initial law, record times and samples), cached on disk by config hash."""
    truth = config.replace(method="mc", M=config.truth_M, out=None)
    unused = ("out", "M1", "M2", "truth_M", "p", "q", "resample_every", "eps", "sigma", "t_avg_start")
    key = f"mc-{truth.config_hash(exclude=unused)}-s{truth.seed}.pkl"
    path = os.path.join(cache_dir(), key)
    if use_cache and os.path.exists(path):
        with open(path, "rb") as fh:
            return pickle.load(fh)
    log.info("computing Monte-Carlo truth with M=%d", truth.M)
    series, _ = run_experiment(truth)
    if use_cache:
        os.makedirs(cache_dir(), exist_ok=True)
        tmp = path + f".{os.getpid()}.tmp"
        with open(tmp, "wb") as fh:
            pickle.dump(series, fh)
        os.replace(tmp, path)
    return series


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------

def _histograms(series, n_bins=61):
    return {name: histogram1d(series.pooled(name), n_bins, variable=name) for name in series.samples}


def load_histograms(outdir):
    """Histograms written by :meth:`StatisticsSeries.save`, keyed by variable."""
    out = {}
    for fname in sorted(os.listdir(outdir)):
        if not (fname.startswith("hist_") and fname.endswith(".csv")):
            continue
        data = np.loadtxt(os.path.join(outdir, fname), delimiter=",", skiprows=2, ndmin=2)
        edges = np.append(data[:, 0], data[:, 1][-1])
        counts = data[:, 2].astype(np.int64)
        name = fname[5:-4]
        out[name] = Histogram((name,), (edges,), counts, int(counts.sum()))
    return out


def compare(a, b, t0=-np.inf, t1=np.inf, hist_a=None, hist_b=None):
    """Error report of series ``a`` (model) against ``b`` (truth)."""
    t, ia, ib = align(a, b)
    sel = (t >= t0 - 1e-12) & (t <= t1 + 1e-12)
    if not sel.any():
        raise AlignmentError(f"no shared record times in [{t0}, {t1}]")
    A, B = a.arrays(), b.arrays()
    report = {
        "n_times": int(sel.sum()),
        "variance_error": variance_error_norm(a, b, "r", t0, t1),
        "mean_error": mean_error_norm(a, b, "ubar", t0, t1),
        "curves": {
            "time": t[sel],
            "ubar_error": np.abs(A["ubar"][ia] - B["ubar"][ib])[sel],
            "variance_error": signed_sum(np.abs(A["r"][ia] - B["r"][ib]))[sel],
        },
    }
    if a.two_layer and b.two_layer:
        report["variance_error_v"] = variance_error_norm(a, b, "rv", t0, t1)
        report["mean_error_v"] = mean_error_norm(a, b, "vbar", t0, t1)
        report["curves"]["vbar_error"] = np.abs(A["vbar"][ia] - B["vbar"][ib])[sel]
    ha = _histograms(a) if hist_a is None else hist_a
    hb = _histograms(b) if hist_b is None else hist_b
    report["tv_distance"] = {name: tv_distance(ha[name], hb[name]) for name in sorted(set(ha) & set(hb))}
    return report


def compare_dirs(dir_a, dir_b, t0=-np.inf, t1=np.inf):
    a, b = StatisticsSeries.load(dir_a), StatisticsSeries.load(dir_b)
    return compare(a, b, t0, t1, load_histograms(dir_a), load_histograms(dir_b))


def write_curves(report, path):
    curves = report["curves"]
    names = list(curves)
    rows = np.column_stack([curves[n] for n in names])
    np.savetxt(path, rows, delimiter=",", header=",".join(names), comments="", fmt="%.17g")
    return path


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepTable:
    name: str
    values: list
    errors: list
    status: list
    slope: float = None
    fit_range: tuple = None
    extra: dict = field(default_factory=dict)

    def rows(self):
        cols = [self.values, self.errors, self.status] + list(self.extra.values())
        return list(zip(*cols))

    def header(self):
        return [self.name, "error", "status"] + list(self.extra)

    def write(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            fh.write(f"# slope={self.slope} fit_range={self.fit_range}\n")
            w = csv.writer(fh)
            w.writerow(self.header())
            w.writerows(self.rows())
        return path


def fit_slope(x, y, saturation_slope=0.35):
    """Log-log least-squares slope of ``y`` against ``x`` over the
    pre-saturation range.

    Points are taken in descending ``x``; the range ends before the first
    step whose local slope falls below ``saturation_slope`` (the error has
    stopped following the trend).  At least two points are always used.
    Returns ``(slope, (first, last))`` with indices into the sorted input.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    order = np.argsort(-x)
    lx, ly = np.log(x[order]), np.log(y[order])
    end = len(x)
    for i in range(1, len(x)):
        local = (ly[i - 1] - ly[i]) / (lx[i - 1] - lx[i])
        if local < saturation_slope and i >= 2:
            end = i
            break
    slope = np.polyfit(lx[:end], ly[:end], 1)[0]
    return float(slope), (0, end - 1)


def _sweep_error(model, truth, t0, metric):
    if metric == "variance":
        return variance_error_norm(model, truth, "r", t0)
    if metric == "total_variance":
        t, ia, ib = align(model, truth)
        sel = t >= t0 - 1e-12
        tm = signed_sum(model.arrays()["r"][ia[sel]])
        tt = signed_sum(truth.arrays()["r"][ib[sel]])
        return float(np.mean(np.abs(tm - tt)))
    if metric == "mean":
        return mean_error_norm(model, truth, "ubar", t0)
    raise ConfigError(f"unknown sweep metric {metric!r}")


def dt_sweep(base, dts, truth=None, record_dt=None, t0=0.0, metric="variance", saturation_slope=0.35):
    """Run ``base`` at each ``dt`` (descending, at least three) against one
    fixed truth series and fit the log-log error slope.

    Records are taken every ``record_dt`` time units (default: the record
    interval of ``base``) so every run shares the truth's record times.
    """
    dts = [float(d) for d in dts]
    if len(dts) < 3:
        raise ConfigError(f"dt sweep needs at least 3 step sizes, got {len(dts)}")
    if any(a <= b for a, b in zip(dts, dts[1:])):
        raise ConfigError(f"dt list must be strictly descending, got {dts}")
    record_dt = record_dt or base.dt * base.record_every
    for d in dts:
        n = record_dt / d
        if abs(n - round(n)) > 1e-9:
            raise ConfigError(f"record interval {record_dt} is not a multiple of dt={d}")
    if truth is None:
        truth = truth_series(base.replace(record_every=int(round(record_dt / base.dt))))
    errors, status = [], []
    for d in dts:
        cfg = base.replace(dt=d, record_every=int(round(record_dt / d)))
        try:
            series, _ = run_experiment(cfg, out=None)
            errors.append(_sweep_error(series, truth, t0, metric))
            status.append("ok")
        except DivergenceError as err:
            log.warning("dt=%g diverged: %s", d, err)
            errors.append(float("nan"))
            status.append("diverged")
    ok = [i for i, s in enumerate(status) if s == "ok"]
    slope = fit = None
    if len(ok) >= 2:
        slope, (i0, i1) = fit_slope([dts[i] for i in ok], [errors[i] for i in ok], saturation_slope)
        fit = (dts[ok[i0]], dts[ok[i1]])
    return SweepTable("dt", dts, errors, status, slope, fit)


def time_stochastic_update(J, p, M1, n_steps=20, seed=0, repeats=3):
    """Median wall time of one stochastic-ensemble drift evaluation per step
    (one-layer, batch size ``p``), including the partition draw."""
    params = OneLayerParams(J=J)
    stat, ens = initial_closure_state(params, M1, None, seed)
    model = CoupledModel(params, ClosureConfig(M1=M1))
    x = model.pack(stat, ens)
    sampler = OneLayerSampler(J, p)
    rng = np.random.default_rng(seed)
    model.drift(x, sampler(rng))  # warm up compiled kernels
    samples = []
    for _ in range(repeats):
        t = time.perf_counter()
        for _ in range(n_steps):
            model.drift(x, sampler(rng))
        samples.append((time.perf_counter() - t) / n_steps)
    return float(np.median(samples))


def batch_sweep(base, ps, truth=None, t0=None, metric="variance", timing_steps=20):
    """Error against truth and per-step stochastic-update time for each batch size."""
    t0 = base.t_avg_start if t0 is None else t0
    if truth is None:
        truth = truth_series(base)
    errors, status, times = [], [], []
    for p in ps:
        cfg = base.replace(p=int(p))
        try:
            series, _ = run_experiment(cfg, out=None)
            errors.append(_sweep_error(series, truth, t0, metric))
            status.append("ok")
        except DivergenceError as err:
            log.warning("p=%d diverged: %s", p, err)
            errors.append(float("nan"))
            status.append("diverged")
        times.append(time_stochastic_update(base.J, int(p), base.M1, timing_steps, base.seed)
                     if not base.two_layer else float("nan"))
    return SweepTable("p", list(ps), errors, status, extra={"step_time_s": times})
