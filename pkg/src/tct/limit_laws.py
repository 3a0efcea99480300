"""Mean and covariance functions of the linear spectral statistic CLT.

All functions broadcast over the shape of ``z`` (or of ``z1`` and ``z2``) and
return arrays with trailing ``(d,)`` or ``(d, d)`` axes.  The Stieltjes
vector ``g`` is solved once per distinct argument array.

Two switches select between variants of the formulas:

``convention``
    ``"main"`` uses ``V(z1, z2)`` and ``g(z2)`` inside the kurtosis term of the
    covariance system and a third-cumulant mean term equal to
    ``-2 k3 prod(c)^-1 g1 g2 g3 b1 b2 b3`` at d = 3.  ``"general"`` uses
    ``V(z2, z2)`` and ``g(conj z2)`` and the doubled third-cumulant sum.

``covariance``
    ``"logdet"`` evaluates ``2 d1 d2 [-log det Pi(z1, z2)]`` plus a kurtosis
    term, which is the covariance of ``Tr Q(z1)`` and ``Tr Q(z2)``.
    ``"system"`` evaluates ``1' Pi^-1 diag(g1 / c) (2 V + k4 U) 1`` with the
    auxiliary matrices built by :func:`script_v` and :func:`u_matrix`.
"""

from dataclasses import dataclass

import numpy as np

from .dyson import DysonSolution, dyson_derivative, self_energy
from .errors import ConfigurationError, DimensionError, NumericalError
from .tensor_core import VectorStats

CONVENTIONS = ("main", "general")
COVARIANCES = ("logdet", "system")
RESIDUAL_TOL = 1e-10


@dataclass
class LimitContext:
    """Ratios, noise cumulants and direction-vector statistics."""

    solution: DysonSolution
    stats: VectorStats
    kappa3: float = 0.0
    kappa4: float = 0.0
    convention: str = "main"
    covariance: str = "logdet"

    def __post_init__(self):
        if not isinstance(self.solution, DysonSolution):
            self.solution = DysonSolution(self.solution)
        if self.stats.d != self.solution.d:
            raise DimensionError(f"vector statistics have d={self.stats.d}, ratios have d={self.solution.d}")
        if self.kappa4 < -2:
            raise ConfigurationError(f"kappa4 must be >= -2, got {self.kappa4}")
        if self.convention not in CONVENTIONS:
            raise ConfigurationError(f"unknown convention {self.convention!r}")
        if self.covariance not in COVARIANCES:
            raise ConfigurationError(f"unknown covariance method {self.covariance!r}")

    @property
    def c(self):
        return self.solution.c

    @property
    def d(self):
        return self.solution.d

    def g(self, z):
        return self.solution.g(z)

    def replace(self, **kw):
        fields = dict(solution=self.solution, stats=self.stats, kappa3=self.kappa3,
                      kappa4=self.kappa4, convention=self.convention, covariance=self.covariance)
        fields.update(kw)
        return LimitContext(**fields)


def _diag(v):
    return v[..., :, None] * np.eye(v.shape[-1])


def _solve(A, B, where):
    try:
        X = np.linalg.solve(A, B)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular {where} matrix", where=where) from exc
    if not np.all(np.isfinite(X)):
        raise NumericalError(f"non-finite solution of the {where} system", where=where)
    return X


def _pair(ctx, z1, z2):
    z1 = np.asarray(z1, dtype=complex)
    z2 = np.asarray(z2, dtype=complex)
    g1 = ctx.g(z1)
    g2 = ctx.g(z2)
    shape = np.broadcast_shapes(z1.shape, z2.shape)
    d = ctx.d
    return z1, z2, np.broadcast_to(g1, shape + (d,)), np.broadcast_to(g2, shape + (d,))


# ---------------------------------------------------------------------------
# Auxiliary matrices


def gamma_from_g(z, g):
    z = np.asarray(z, dtype=complex)
    d = g.shape[-1]
    S = self_energy(d)
    G = g.sum(axis=-1)
    I = np.eye(d)
    Dg = _diag(g)
    return ((z + G)[..., None, None] * I - Dg + G[..., None, None] * S
            - Dg @ S - S @ Dg)


def w_from_g(z, g):
    Gam = gamma_from_g(z, g)
    I = np.broadcast_to(np.eye(g.shape[-1], dtype=complex), Gam.shape)
    return -_solve(Gam, I, "Gamma")


def pi_from_g(c, g1, g2):
    d = g1.shape[-1]
    return np.eye(d) - _diag(g1 * g2 / c) @ self_energy(d)


def v_from_g(c, g1, g2):
    return _solve(pi_from_g(c, g1, g2), _diag(g1 * g2 / c), "Pi")


def gamma_matrix(ctx, z):
    z = np.asarray(z, dtype=complex)
    return gamma_from_g(z, ctx.g(z))


def w_matrix(ctx, z):
    """``W(z) = -Gamma(z)^-1``."""
    z = np.asarray(z, dtype=complex)
    return w_from_g(z, ctx.g(z))


def pi_matrix(ctx, z1, z2):
    """``Pi(z1, z2) = I - diag(g(z1) g(z2) / c) S``."""
    _, _, g1, g2 = _pair(ctx, z1, z2)
    return pi_from_g(ctx.c, g1, g2)


def v_matrix(ctx, z1, z2):
    """``V(z1, z2) = Pi(z1, z2)^-1 diag(g(z1) g(z2) / c)``."""
    _, _, g1, g2 = _pair(ctx, z1, z2)
    return v_from_g(ctx.c, g1, g2)


def script_v(ctx, z1, z2):
    """The matrix ``V_st = sum_{l != s} (Vtilde_l)_st``."""
    _, _, g1, g2 = _pair(ctx, z1, z2)
    return _script_v_from_g(ctx.c, g1, g2)


def _script_v_from_g(c, g1, g2):
    d = c.size
    S = self_energy(d)
    P = pi_from_g(c, g1, g2)
    V12 = v_from_g(c, g1, g2)
    V22 = v_from_g(c, g2, g2)
    SV = S @ V12
    # A[..., r, s, t] = delta_st V22_ss + (S V12)_sr V12_st
    A = (_diag(np.diagonal(V22, axis1=-2, axis2=-1))[..., None, :, :]
         + np.swapaxes(SV, -1, -2)[..., :, :, None] * V12[..., None, :, :])
    B = (g1 / c)[..., None, :, None] * A
    Vt = _solve(P[..., None, :, :], B, "Pi")
    # sum over r != s of Vt[r, s, t]
    mask = S[:, :, None]
    return np.sum(Vt * mask, axis=-3)


def _ring_v(c, g1, g2, convention):
    if convention == "main":
        return (g1 / c)[..., :, None] * v_from_g(c, g1, g2)
    return (g1 / c)[..., :, None] * v_from_g(c, g2, g2)


def u_matrix(ctx, z1, z2):
    """Kurtosis matrix ``U`` under the context's convention."""
    _, z2, g1, g2 = _pair(ctx, z1, z2)
    if ctx.convention == "general":
        g2b = np.broadcast_to(ctx.g(np.conj(z2)), g1.shape)
    else:
        g2b = g2
    return _u_from_g(ctx.c, ctx.stats.b4, g1, g2, g2b, ctx.convention)


def _u_from_g(c, b4, g1, g2, g2b, convention):
    R = _ring_v(c, g1, g2, convention)
    p = g1 * g2b / c
    return p[..., :, None] * (b4 @ R) + R * (p @ b4.T)[..., :, None]


# ---------------------------------------------------------------------------
# Mean function


def kappa3_weight(convention):
    """Coefficient of the ordered-pair third-cumulant sum in ``M_i``."""
    return -1.0 if convention == "main" else -2.0


def mean_parts(ctx, z):
    """Components ``(M0, M3, M4)`` with ``M = M0 + k3 M3 + k4 M4``."""
    z = np.asarray(z, dtype=complex)
    return _mean_parts_from_g(ctx.c, ctx.stats, z, ctx.g(z), ctx.convention)


def _mean_parts_from_g(c, stats, z, g, convention):
    d = c.size
    S = self_energy(d)
    W = w_from_g(z, g)
    V = v_from_g(c, g, g)
    A = W * S
    off = A.sum(axis=(-2, -1))
    rows = A.sum(axis=-1)
    cols = A.sum(axis=-2)
    M0 = g * (off[..., None] - rows - cols)
    G = g.sum(axis=-1)
    K = (G[..., None, None] - g[..., :, None] - g[..., None, :]) * W + V
    M0 = M0 + np.sum(K * S, axis=-1)
    h = g * stats.b1 / c
    M3 = kappa3_weight(convention) * h * np.einsum("ilt,...l,...t->...i", stats.b3, h, h)
    q = g**2 / c
    M4 = q * (q @ stats.b4.T)
    return M0, M3, M4


def mean_vector(ctx, z):
    M0, M3, M4 = mean_parts(ctx, z)
    return M0 + ctx.kappa3 * M3 + ctx.kappa4 * M4


def _mu_from_parts(c, g, parts):
    P = pi_from_g(c, g, g)
    out = []
    for M in parts:
        x = _solve(P, ((g / c) * M)[..., None], "Pi")[..., 0]
        out.append(x.sum(axis=-1))
    return out


def mu_parts(ctx, z):
    """``(mu0, mu3, mu4)`` with ``mu = mu0 + k3 mu3 + k4 mu4``."""
    z = np.asarray(z, dtype=complex)
    g = ctx.g(z)
    parts = _mean_parts_from_g(ctx.c, ctx.stats, z, g, ctx.convention)
    return tuple(_mu_from_parts(ctx.c, g, parts))


def mu_function(ctx, z):
    """``mu(z) = 1' Pi(z, z)^-1 diag(g / c) M(z)``."""
    mu0, mu3, mu4 = mu_parts(ctx, z)
    return mu0 + ctx.kappa3 * mu3 + ctx.kappa4 * mu4


# ---------------------------------------------------------------------------
# Covariance function


def _logdet_parts(c, b4, g1, dg1, g2, dg2):
    d = c.size
    S = self_energy(d)
    P = pi_from_g(c, g1, g2)
    P1 = -_diag(dg1 * g2 / c) @ S
    P2 = -_diag(g1 * dg2 / c) @ S
    P12 = -_diag(dg1 * dg2 / c) @ S
    X12 = _solve(P, P12, "Pi")
    X1 = _solve(P, P1, "Pi")
    X2 = _solve(P, P2, "Pi")
    tr12 = np.trace(X12, axis1=-2, axis2=-1)
    tr1_2 = np.einsum("...ij,...ji->...", X1, X2)
    C0 = -2.0 * (tr12 - tr1_2)
    # d/dz (g_s g_t) at both arguments, weighted by B4 / (c_s c_t) over s < t
    e1 = dg1[..., :, None] * g1[..., None, :] + g1[..., :, None] * dg1[..., None, :]
    e2 = dg2[..., :, None] * g2[..., None, :] + g2[..., :, None] * dg2[..., None, :]
    w = np.triu(b4, 1) / np.outer(c, c)
    C4 = np.sum(w * e1 * e2, axis=(-2, -1))
    return C0, C4


def _system_parts(c, b4, g1, g2, g2b, convention):
    P = pi_from_g(c, g1, g2)
    sv = _script_v_from_g(c, g1, g2)
    U = _u_from_g(c, b4, g1, g2, g2b, convention)
    out = []
    for F in (2.0 * sv, U):
        y = _solve(P, (g1 / c)[..., :, None] * F, "Pi")
        out.append(y.sum(axis=(-2, -1)))
    return out


def cov_parts(ctx, z1, z2):
    """``(C0, C4)`` with ``C = C0 + k4 C4``."""
    _, z2, g1, g2 = _pair(ctx, z1, z2)
    z1 = np.asarray(z1, dtype=complex)
    if ctx.covariance == "logdet":
        dg1 = np.broadcast_to(dyson_derivative(ctx.c, z1, ctx.g(z1)), g1.shape)
        dg2 = np.broadcast_to(dyson_derivative(ctx.c, z2, ctx.g(z2)), g2.shape)
        return tuple(_logdet_parts(ctx.c, ctx.stats.b4, g1, dg1, g2, dg2))
    g2b = np.broadcast_to(ctx.g(np.conj(z2)), g1.shape) if ctx.convention == "general" else g2
    return tuple(_system_parts(ctx.c, ctx.stats.b4, g1, g2, g2b, ctx.convention))


def cov_function(ctx, z1, z2):
    """Limiting ``Cov(Tr Q(z1), Tr Q(z2))``."""
    C0, C4 = cov_parts(ctx, z1, z2)
    return C0 + ctx.kappa4 * C4


# ---------------------------------------------------------------------------
# Entrywise law


def entrywise_prediction(ctx, z, s, t, i_s, i_t, vectors):
    """Deterministic approximation of the resolvent entry ``Q^{st}_{i_s i_t}(z)``."""
    z = np.asarray(z, dtype=complex)
    g = ctx.g(z)
    W = w_from_g(z, g)
    d = ctx.d
    G = g.sum(axis=-1)
    corr = 0
    for k in range(d):
        if k != s:
            corr = corr + (G - g[..., s] - g[..., k]) * W[..., s, k]
    delta = 1.0 if (s == t and i_s == i_t) else 0.0
    a = vectors[s][i_s]
    return g[..., s] / ctx.c[s] * (delta + a * a * corr)


def residuals(ctx, z1, z2=None):
    """Max residuals of ``Gamma W = -I`` at z1 and ``Pi V = diag`` at (z1, z2)."""
    z1 = np.asarray(z1, dtype=complex)
    z2 = z1 if z2 is None else np.asarray(z2, dtype=complex)
    g = ctx.g(z1)
    Gam = gamma_from_g(z1, g)
    W = w_from_g(z1, g)
    r1 = np.max(np.abs(Gam @ W + np.eye(ctx.d)))
    _, _, g1, g2 = _pair(ctx, z1, z2)
    P = pi_from_g(ctx.c, g1, g2)
    V = v_from_g(ctx.c, g1, g2)
    r2 = np.max(np.abs(P @ V - _diag(g1 * g2 / ctx.c)))
    return float(r1), float(r2)
