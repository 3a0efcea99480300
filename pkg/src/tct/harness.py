"""Monte Carlo replication of the CLT, power and matching experiments."""

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .contour import calibrate, get_function, moment_via_contour
from .contraction import contracted_noise
from .dyson import DysonSolution
from .errors import ConfigurationError
from .limit_laws import LimitContext
from .spectra import symmetric_eigenvalues, tv_distance
from .tensor_core import (
    DISTRIBUTIONS,
    DimensionProfile,
    SpikedModel,
    assemble_spiked,
    delocalized_vectors,
    derive_seed,
    generate_noise,
    localized_vectors,
    noise_cumulants,
    read_vectors,
    vector_stats,
)
from .testing import alignment_calibration, alignment_test, drift, normal_cdf, overlaps, \
    theoretical_power, unfold_recover

KINDS = ("table1", "power", "matching", "qq", "spectrum")
VECTOR_MODES = ("delocalized", "localized")
TABLE1_ROWS = (("gaussian", "delocalized"), ("uniform_pm_sqrt3", "localized"),
               ("uniform_pm_sqrt3", "delocalized"))
DIST_ALIASES = {"normal": "gaussian", "uniform": "uniform_pm_sqrt3", "unif": "uniform_pm_sqrt3"}


@dataclass
class ExperimentConfig:
    kind: str = "table1"
    dims: tuple = (100, 100, 100)
    dist: str = "gaussian"
    vectors: str = "delocalized"
    f: tuple = ("x2", "exp", "cos", "expsq")
    reps: int = 100
    alpha: float = 0.05
    betas: tuple = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2)
    beta0s: tuple = (2.0, 2.5, 3.0)
    seed: int = 0
    output: str = None
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    bins: int = 50
    eig_method: str = "lapack"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}; choose from {KINDS}")
        self.dims = tuple(int(n) for n in self.dims)
        self.dist = DIST_ALIASES.get(self.dist, self.dist)
        if self.dist not in DISTRIBUTIONS:
            raise ConfigurationError(f"unknown noise distribution {self.dist!r}")
        if isinstance(self.f, str):
            self.f = (self.f,)
        self.f = tuple(self.f)
        for name in self.f:
            get_function(name)
        self.reps = int(self.reps)
        if self.reps < 1:
            raise ConfigurationError("reps must be at least 1")
        if not 0 < self.alpha < 1:
            raise ConfigurationError("alpha must lie in (0, 1)")
        self.betas = tuple(float(b) for b in self.betas)
        if any(b < 0 for b in self.betas) or list(self.betas) != sorted(self.betas):
            raise ConfigurationError("beta grid must be nonnegative and ascending")
        self.beta0s = tuple(float(b) for b in self.beta0s)
        self.threads = max(1, int(self.threads))
        self.seed = int(self.seed)

    @property
    def profile(self):
        return DimensionProfile(self.dims)

    def with_(self, **kw):
        return replace(self, **kw)


def _split(value, conv):
    if isinstance(value, (list, tuple)):
        return tuple(conv(v) for v in value)
    return tuple(conv(v) for v in str(value).replace(",", " ").split())


_CONVERTERS = {
    "dims": lambda v: _split(v, int),
    "f": lambda v: _split(v, str),
    "betas": lambda v: _split(v, float),
    "beta0s": lambda v: _split(v, float),
    "reps": int,
    "seed": int,
    "threads": int,
    "bins": int,
    "alpha": float,
}


def parse_config_text(text):
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def config_from_mapping(mapping):
    known = {f.name for f in fields(ExperimentConfig)}
    kw = {}
    for key, value in mapping.items():
        if key not in known:
            raise ConfigurationError(f"unknown config key {key!r}")
        kw[key] = _CONVERTERS.get(key, lambda v: v)(value) if value is not None else None
    return ExperimentConfig(**kw)


def load_config(path, **overrides):
    with open(path) as fh:
        mapping = parse_config_text(fh.read())
    mapping.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_mapping(mapping)


# ---------------------------------------------------------------------------
# Replication


def run_replicates(fn, reps, threads=1):
    """``[fn(0), ..., fn(reps - 1)]``, optionally on a thread pool; order preserved."""
    if threads <= 1 or reps <= 1:
        return [fn(r) for r in range(reps)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(reps)))


def direction_vectors(profile, mode):
    if mode == "delocalized":
        return delocalized_vectors(profile)
    if mode == "localized":
        return localized_vectors(profile)
    return read_vectors(mode)


def noise_spectrum(profile, dist, vectors, seed, method="lapack"):
    X = generate_noise(profile, dist, seed)
    return symmetric_eigenvalues(contracted_noise(X, vectors), method=method).eigenvalues


def limit_context(profile, dist, vectors, kappa3=None, kappa4=None):
    k3, k4 = noise_cumulants(dist)
    k3 = k3 if kappa3 is None else kappa3
    k4 = k4 if kappa4 is None else kappa4
    return LimitContext(DysonSolution(profile.ratios), vector_stats(vectors), k3, k4)


def _lss_samples(config, dist, mode, tag):
    prof = config.profile
    vecs = direction_vectors(prof, mode)
    sol = DysonSolution(prof.ratios)
    integrals = {name: moment_via_contour(sol, name) for name in config.f}
    funcs = {name: get_function(name) for name in config.f}

    def one(r):
        ev = noise_spectrum(prof, dist, vecs, derive_seed(config.seed, tag, dist, mode, r),
                            config.eig_method)
        return [float(np.sum(np.real(funcs[k](ev + 0j)))) - prof.N * integrals[k] for k in config.f]

    return vecs, np.array(run_replicates(one, config.reps, config.threads)).reshape(config.reps, -1)


def _limits(profile, dist, vecs, names):
    ctx = limit_context(profile, dist, vecs)
    out = {}
    for name in names:
        cal = calibrate(ctx, name)
        out[name] = (cal.xi(ctx.kappa3, ctx.kappa4), cal.variance(ctx.kappa4))
    return out


def run_table1(config, rows=TABLE1_ROWS):
    """Empirical and limiting mean and variance of ``G_N(f)`` per configuration."""
    out = []
    for dist, mode in rows:
        vecs, G = _lss_samples(config, dist, mode, "table1")
        limits = _limits(config.profile, dist, vecs, config.f)
        for j, name in enumerate(config.f):
            col = G[:, j]
            out.append(dict(f=name, dist=dist, vector_type=mode,
                            empirical_mean=float(np.mean(col)), empirical_var=float(np.var(col, ddof=1)),
                            limit_mean=limits[name][0], limit_var=limits[name][1]))
    return out


def run_qq(config):
    """Sorted normalized ``G_N(f)`` against standard-normal quantiles."""
    from statistics import NormalDist

    vecs, G = _lss_samples(config, config.dist, config.vectors, "qq")
    limits = _limits(config.profile, config.dist, vecs, config.f)
    nd = NormalDist()
    n = config.reps
    q = [nd.inv_cdf((i + 0.5) / n) for i in range(n)]
    out = []
    for j, name in enumerate(config.f):
        mean, var = limits[name]
        z = np.sort((G[:, j] - mean) / math.sqrt(var))
        for i in range(n):
            out.append(dict(f=name, normal_quantile=q[i], normalized=float(z[i])))
    return out


def ks_statistic(values):
    """Kolmogorov-Smirnov distance of a sample to N(0, 1)."""
    x = np.sort(np.asarray(values, dtype=float))
    n = x.size
    F = np.array([normal_cdf(v) for v in x])
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def ks_critical(n, level=0.01):
    """Asymptotic one-sample KS critical value."""
    c = math.sqrt(-0.5 * math.log(level / 2))
    return c / (math.sqrt(n) + 0.12 + 0.11 / math.sqrt(n))


def _spiked(profile, beta, vecs):
    return SpikedModel(profile, (beta,), (vecs,)) if beta > 0 else SpikedModel(profile, (), ())


def run_power(config):
    """Rejection rate of the alignment test with ``a = x`` over the beta grid."""
    prof = config.profile
    vecs = direction_vectors(prof, config.vectors)
    cal = alignment_calibration(prof, vecs)
    _, k4 = noise_cumulants(config.dist)
    sigma = cal.sigma(k4)
    out = []
    for beta in config.betas:
        model = _spiked(prof, beta, vecs)

        def one(r):
            X = generate_noise(prof, config.dist, derive_seed(config.seed, "power", config.dist,
                                                               config.vectors, beta, r))
            rep = alignment_test(assemble_spiked(model, X), vecs, config.alpha, cal)
            return rep.reject, rep.normalized

        res = run_replicates(one, config.reps, config.threads)
        rej = np.array([r[0] for r in res], dtype=float)
        D = drift(model, vecs)
        out.append(dict(beta=beta, empirical_power=float(np.mean(rej)),
                        theoretical_power=theoretical_power(D, sigma, config.alpha),
                        mean_normalized=float(np.mean([r[1] for r in res]))))
    return out


def run_matching(config, beta1s=None):
    """Power with known and with unfolding-estimated directions."""
    prof = config.profile
    vecs = direction_vectors(prof, config.vectors)
    cal = alignment_calibration(prof, vecs)
    beta1s = config.betas if beta1s is None else beta1s
    out = []
    for beta0 in config.beta0s:
        m0 = _spiked(prof, beta0, vecs)
        for beta1 in beta1s:
            m1 = _spiked(prof, beta1, vecs)

            def one(r):
                tags = (config.seed, "matching", config.dist, config.vectors, beta0, beta1, r)
                X0 = generate_noise(prof, config.dist, derive_seed(*tags, 0))
                X1 = generate_noise(prof, config.dist, derive_seed(*tags, 1))
                T0 = assemble_spiked(m0, X0)
                T1 = assemble_spiked(m1, X1)
                rec = unfold_recover(T0, 1)
                known = alignment_test(T1, vecs, config.alpha, cal)
                est = alignment_test(T1, rec[0], config.alpha)
                return known.reject, est.reject, float(np.min(overlaps(rec[0], vecs)))

            res = np.array(run_replicates(one, config.reps, config.threads), dtype=float)
            out.append(dict(beta0=beta0, beta1=beta1, empirical_power_known=float(res[:, 0].mean()),
                            empirical_power_estimated=float(res[:, 1].mean()),
                            overlap_pass_rate=float(np.mean(res[:, 2] >= 0.9))))
    return out


def run_spectrum(config, draws=None):
    """Averaged eigenvalue histogram with the limiting bin masses."""
    from .spectra import histogram, lsd_bin_masses

    prof = config.profile
    vecs = direction_vectors(prof, config.vectors)
    sol = DysonSolution(prof.ratios)
    z = sol.edge
    limits = (-z - 0.1, z + 0.1)
    draws = config.reps if draws is None else draws

    def one(r):
        return noise_spectrum(prof, config.dist, vecs, derive_seed(config.seed, "spectrum", r),
                              config.eig_method)

    spectra = run_replicates(one, draws, config.threads)
    fracs = []
    tvs = []
    for ev in spectra:
        edges, frac = histogram(ev, config.bins, limits)
        fracs.append(frac)
        tvs.append(tv_distance(ev, sol, config.bins, limits))
    masses = lsd_bin_masses(sol, edges)
    mean_frac = np.mean(fracs, axis=0)
    rows = [dict(left=edges[i], right=edges[i + 1], empirical=float(mean_frac[i]), lsd=float(masses[i]))
            for i in range(config.bins)]
    # tv of the averaged histogram; the per-draw mean also carries the counting noise of N eigenvalues
    summary = dict(tv=0.5 * float(np.sum(np.abs(mean_frac - masses))), mean_tv=float(np.mean(tvs)),
                   max_abs_eigenvalue=float(max(np.max(np.abs(s)) for s in spectra)),
                   edge=z, near_zero_fraction=float(np.mean([np.mean(np.abs(s) <= 0.05) for s in spectra])))
    return rows, summary


# ---------------------------------------------------------------------------
# CSV


def format_value(v, digits=6):
    if isinstance(v, float):
        return f"{v:.{digits}g}"
    return str(v)


def rows_to_csv(rows, digits=6):
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    keys = list(rows[0])
    w.writerow(keys)
    for row in rows:
        w.writerow([format_value(row[k], digits) for k in keys])
    return buf.getvalue()


def write_csv(rows, path=None, digits=6):
    text = rows_to_csv(rows, digits)
    if path is None:
        return text
    with open(path, "w") as fh:
        fh.write(text)
    return text

