"""Cumulant estimation, the alignment and matching tests, drift and power."""

import itertools
import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .contour import ContourSpec, calibrate
from .contraction import frobenius_sq, phi_d
from .dyson import DysonSolution
from .errors import ConfigurationError, NumericalError
from .limit_laws import LimitContext
from .tensor_core import DenseTensor, UnitVectorSet, _check_same, vector_stats

_NORMAL = NormalDist()
POWER_TOL = 1e-10
POWER_MAX_ITER = 500
X2_MARGIN = 1.0
X2_NODES = 32
CACHE_SIZE = 256


def normal_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_sf(x):
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def z_quantile(alpha):
    """Upper ``alpha`` quantile of the standard normal."""
    if not 0 < alpha < 1:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    return _NORMAL.inv_cdf(1.0 - alpha)


# ---------------------------------------------------------------------------
# Cumulants and statistics


def estimate_cumulants(T):
    """Moment estimators ``(k3, k4)`` of the noise cumulants from ``T``."""
    prof = T.profile
    d, N = prof.d, prof.N
    pc = float(np.prod(prof.ratios))
    v = T.values
    v2 = v * v
    s3 = float(np.sum(v2 * v))
    s4 = float(np.sum(v2 * v2))
    k3 = s3 * N ** (1.5 - d) / pc
    k4 = s4 * N ** (2.0 - d) / pc - 3.0
    return k3, k4


def second_moment(c):
    """``int x^2 dnu = 1 - sum_j c_j^2``."""
    c = np.asarray(c, dtype=float)
    return float(1.0 - np.sum(c * c))


def alignment_statistic(T, vectors, c=None):
    """``||Phi_d(T, a)||_F^2 - N int x^2 dnu``."""
    _check_same(T.profile, vectors.profile)
    if c is None:
        c = T.profile.ratios
    return frobenius_sq(phi_d(T, vectors)) - T.profile.N * second_moment(c)


def drift(model, vectors):
    """``sum_r beta_r^2 sum_{k != l} prod_{j != k, l} <x^(r,j), a^(j)>^2``."""
    _check_same(model.profile, vectors.profile)
    d = model.profile.d
    total = 0.0
    for beta, sig in zip(model.betas, model.signals):
        ip2 = [float(np.dot(sig[j], vectors[j])) ** 2 for j in range(d)]
        s = 0.0
        for k, l in itertools.permutations(range(d), 2):
            s += math.prod(ip2[j] for j in range(d) if j not in (k, l))
        total += beta * beta * s
    return total


def theoretical_power(D, sigma, alpha=0.05):
    """Asymptotic power ``1 - Phi(z_alpha - D / sigma)``."""
    if not sigma > 0:
        raise ConfigurationError("sigma must be positive")
    return normal_sf(z_quantile(alpha) - D / sigma)


# ---------------------------------------------------------------------------
# Alignment test


@dataclass(frozen=True)
class TestReport:
    statistic: float
    xi_hat: float
    sigma_hat: float
    normalized: float
    alpha: float
    z_alpha: float
    reject: bool
    p_value: float
    kappa3_hat: float
    kappa4_hat: float

    def as_lines(self):
        return [f"{k}={v}" for k, v in self.__dict__.items()]


_CALIBRATIONS = {}


def _key(c, stats, convention, covariance):
    return (tuple(np.round(c, 15)), stats.b1.tobytes(), stats.b4.tobytes(), stats.b3.tobytes(),
            convention, covariance)


def alignment_calibration(profile, vectors, convention="main", covariance="logdet"):
    """Kappa-linear calibration of the alignment statistic (``f = x^2``), cached."""
    stats = vector_stats(vectors)
    key = _key(profile.ratios, stats, convention, covariance)
    cal = _CALIBRATIONS.get(key)
    if cal is None:
        sol = DysonSolution(profile.ratios)
        ctx = LimitContext(sol, stats, convention=convention, covariance=covariance)
        # x^2 is entire and slowly growing, so a wide contour far from the support needs few nodes
        contour = ContourSpec(sol.edge + X2_MARGIN, X2_MARGIN, X2_NODES)
        cal = calibrate(ctx, "x2", contour)
        if len(_CALIBRATIONS) >= CACHE_SIZE:
            _CALIBRATIONS.pop(next(iter(_CALIBRATIONS)))
        _CALIBRATIONS[key] = cal
    return cal


def alignment_test(T, vectors, alpha=0.05, calibration=None):
    """Test whether the signal of ``T`` is orthogonal to the directions ``vectors``."""
    z_alpha = z_quantile(alpha)
    k3, k4 = estimate_cumulants(T)
    stat = alignment_statistic(T, vectors)
    try:
        if calibration is None:
            calibration = alignment_calibration(T.profile, vectors)
        xi = calibration.xi(k3, k4)
        sigma = calibration.sigma(k4)
    except NumericalError as exc:
        raise NumericalError(f"calibration: {exc}", residual=exc.residual, where="calibration") from exc
    if not sigma > 0:
        raise NumericalError("calibration: zero limiting variance", where="calibration")
    t = (stat - xi) / sigma
    return TestReport(stat, xi, sigma, t, alpha, z_alpha, bool(t > z_alpha), normal_sf(t), k3, k4)


# ---------------------------------------------------------------------------
# Unfolding recovery


def _top_eigvec(G, tol=POWER_TOL, max_iter=POWER_MAX_ITER):
    """Power iteration on a symmetric PSD matrix started from its largest column."""
    v = G[:, np.argmax(np.sum(G * G, axis=0))].copy()
    nrm = np.linalg.norm(v)
    if nrm == 0:
        v = np.zeros(G.shape[0])
        v[0] = 1.0
        return v, 0.0, True
    v /= nrm
    lam = float(v @ G @ v)
    for _ in range(max_iter):
        w = G @ v
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return v, 0.0, True
        v = w / nrm
        new = float(v @ G @ v)
        if abs(new - lam) <= tol * max(abs(new), 1.0):
            return v, new, True
        lam = new
    return v, lam, False


def _fix_sign(v):
    return v if v[np.argmax(np.abs(v))] >= 0 else -v


def _top_left(A):
    v, _, ok = _top_eigvec(A @ A.T)
    return _fix_sign(v), ok


@dataclass(frozen=True)
class Recovery:
    components: tuple
    converged: bool

    def __iter__(self):
        return iter(self.components)

    def __len__(self):
        return len(self.components)

    def __getitem__(self, r):
        return self.components[r]


def unfold_recover(T, rank, refine=1):
    """Estimate ``rank`` sets of signal directions by tensor unfolding.

    Mode 1 vectors are the top left singular vectors of the mode-1 unfolding,
    extracted with power iteration and deflation.  Each further mode is the top
    left singular vector of ``T`` contracted with the modes already found.
    ``refine`` extra sweeps re-estimate every mode from ``T`` contracted with
    the current estimates of all other modes.
    """
    if rank < 1:
        raise ConfigurationError("rank must be at least 1")
    prof = T.profile
    d = prof.d
    X = T.values
    A = X.reshape(prof.dims[0], -1)
    G = A @ A.T
    converged = True
    firsts = []
    for _ in range(rank):
        v, lam, ok = _top_eigvec(G)
        converged &= ok
        firsts.append(_fix_sign(v))
        G = G - lam * np.outer(v, v)
    comps = []
    for v1 in firsts:
        vecs = [v1]
        Y = np.tensordot(X, v1, axes=([0], [0]))
        for l in range(1, d - 1):
            u, ok = _top_left(Y.reshape(prof.dims[l], -1))
            converged &= ok
            vecs.append(u)
            Y = np.tensordot(Y, u, axes=([0], [0]))
        last = Y / np.linalg.norm(Y) if np.linalg.norm(Y) > 0 else np.eye(prof.dims[-1])[0]
        vecs.append(_fix_sign(last))
        for _ in range(refine):
            for l in range(d):
                Y = X
                for m in range(d - 1, -1, -1):
                    if m != l:
                        Y = np.tensordot(Y, vecs[m], axes=([m], [0]))
                nrm = np.linalg.norm(Y)
                if nrm > 0:
                    vecs[l] = _fix_sign(Y / nrm)
        comps.append(UnitVectorSet(vecs, prof, normalize=True))
    return Recovery(tuple(comps), bool(converged))


# ---------------------------------------------------------------------------
# Matching test


@dataclass(frozen=True)
class MatchingReport:
    reports: tuple
    reject: bool
    recovery: Recovery


def matching_test(T0, T1, alpha=0.05, rank=1, refine=1):
    """Test whether ``T1`` shares a signal direction set with ``T0``.

    The overall null is kept only if every per-component null is kept.
    """
    _check_same(T0.profile, T1.profile)
    rec = unfold_recover(T0, rank, refine=refine)
    reports = tuple(alignment_test(T1, vecs, alpha) for vecs in rec)
    return MatchingReport(reports, any(r.reject for r in reports), rec)


def overlaps(estimate, truth):
    """Per-mode ``|<xhat, x>|``."""
    return np.array([abs(float(np.dot(a, b))) for a, b in zip(estimate, truth)])


def as_tensor(values):
    return values if isinstance(values, DenseTensor) else DenseTensor.from_array(values)
