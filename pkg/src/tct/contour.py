"""Rectangular contour quadrature for spectral moments and CLT constants."""

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .dyson import DysonSolution, solve_dyson
from .errors import ConfigurationError, NumericalError
from .limit_laws import cov_parts, mu_parts

DEFAULT_MARGIN = 0.5
DEFAULT_ETA = 0.3
DEFAULT_NODES = 64
NODES_PER_ASPECT = 6
OUTER_SHIFT = (0.25, 0.05)
IMAG_TOL = 1e-6
ROW_BLOCK = 128


@dataclass(frozen=True)
class ContourSpec:
    """Rectangle with vertices ``+-E0 +- i eta0``, traversed counterclockwise."""

    E0: float
    eta0: float
    nodes_per_side: int = DEFAULT_NODES

    def __post_init__(self):
        if not self.E0 > 0 or not self.eta0 > 0:
            raise ConfigurationError("contour half-width and half-height must be positive")
        if self.nodes_per_side < 16:
            raise ConfigurationError("nodes_per_side must be at least 16")

    def nodes(self):
        """Quadrature nodes ``z`` and weights ``dz`` over the four sides."""
        x, w = leggauss(self.nodes_per_side)
        E, eta = self.E0, self.eta0
        verts = [complex(E, -eta), complex(E, eta), complex(-E, eta), complex(-E, -eta)]
        zs, ws = [], []
        for a, b in zip(verts, verts[1:] + verts[:1]):
            zs.append(0.5 * (a + b) + 0.5 * (b - a) * x)
            ws.append(0.5 * (b - a) * w)
        return np.concatenate(zs), np.concatenate(ws)

    def enlarged(self, dE=OUTER_SHIFT[0], deta=OUTER_SHIFT[1]):
        return ContourSpec(self.E0 + dE, self.eta0 + deta, self.nodes_per_side)

    def encloses(self, x):
        return abs(x) < self.E0


def nodes_for(E0, eta0):
    """Nodes per side resolving an integrand that varies on the scale ``eta0``.

    The Stieltjes transform sits a distance ``eta0`` from the horizontal
    sides, so the count grows like ``E0 / eta0``; rounded up to a multiple of 32.
    """
    return max(DEFAULT_NODES, 32 * math.ceil(NODES_PER_ASPECT * E0 / eta0 / 32))


def default_contour(solution, margin=DEFAULT_MARGIN, eta0=DEFAULT_ETA, nodes_per_side=None):
    """Contour at ``zeta + margin`` around the support of the limiting law."""
    if not isinstance(solution, DysonSolution):
        solution = DysonSolution(solution)
    E0 = solution.edge + margin
    return ContourSpec(E0, eta0, nodes_per_side or nodes_for(E0, eta0))


def _evaluate(fn, z):
    errors = (NumericalError, ArithmeticError, ValueError)
    try:
        vals = np.asarray(fn(z), dtype=complex)
    except errors as exc:
        for zk in z:
            try:
                fn(np.array([zk]))
            except errors as inner:
                raise NumericalError(f"integrand failed at z={zk}: {inner}", where=zk) from inner
        raise NumericalError(f"integrand failed: {exc}") from exc
    bad = ~np.isfinite(vals)
    if np.any(bad):
        zk = z[np.argmax(bad)]
        raise NumericalError(f"integrand not finite at z={zk}", where=zk)
    return vals


def contour_integrate(fn, contour):
    """``oint fn(z) dz`` by composite Gauss-Legendre on the rectangle."""
    z, w = contour.nodes()
    return complex(np.sum(_evaluate(fn, z) * w))


# ---------------------------------------------------------------------------
# Test functions


def _poly(coefs):
    coefs = [float(a) for a in coefs]

    def f(z):
        return np.polynomial.polynomial.polyval(z, coefs) + 0j

    return f


FUNCTIONS = {
    "x2": lambda z: z * z,
    "exp": np.exp,
    "cos": np.cos,
    "expsq": lambda z: np.exp(z * z) / np.sqrt(1 + z**4),
}
ALIASES = {"x^2": "x2", "e^x": "exp", "cosx": "cos", "exp(x^2)/sqrt(1+x^4)": "expsq"}


def get_function(name):
    """Look up a test function by name.

    ``poly:a0,a1,...`` builds ``a0 + a1 x + ...``.
    """
    if callable(name):
        return name
    key = ALIASES.get(name, name)
    if key in FUNCTIONS:
        return FUNCTIONS[key]
    if isinstance(key, str) and key.startswith("poly:"):
        try:
            return _poly(key[5:].split(","))
        except ValueError as exc:
            raise ConfigurationError(f"bad polynomial {name!r}") from exc
    raise ConfigurationError(f"unknown function {name!r}; choose from {sorted(FUNCTIONS)} or poly:a0,a1,...")


# ---------------------------------------------------------------------------
# Moments and CLT constants


def _real(value, where, tol=IMAG_TOL):
    if abs(value.imag) > tol * max(1.0, abs(value.real)):
        raise NumericalError(f"{where} has imaginary part {value.imag:.3e}", residual=abs(value.imag), where=where)
    return float(value.real)


def moment_via_contour(c, f, contour=None):
    """``-(1/2 pi i) oint f(z) sum_j g_j(z) dz = int f dnu``."""
    solution = c if isinstance(c, DysonSolution) else DysonSolution(c)
    if contour is None:
        contour = default_contour(solution)
    f = get_function(f)
    val = contour_integrate(lambda z: f(z) * solve_dyson(solution.c, z).sum(axis=-1), contour)
    return _real(-val / (2j * math.pi), "moment")


@dataclass(frozen=True)
class Calibration:
    """Kappa-linear pieces of the limiting mean and variance for a fixed ``f``.

    ``xi = xi0 + k3 xi3 + k4 xi4`` and ``sigma^2 = var0 + k4 var4``.
    """

    xi0: float
    xi3: float
    xi4: float
    var0: float
    var4: float

    def xi(self, kappa3=0.0, kappa4=0.0):
        return self.xi0 + kappa3 * self.xi3 + kappa4 * self.xi4

    def variance(self, kappa4=0.0):
        return self.var0 + kappa4 * self.var4

    def sigma(self, kappa4=0.0):
        v = self.variance(kappa4)
        if v < -1e-8:
            raise NumericalError(f"negative limiting variance {v:.3e}", residual=v, where="variance")
        return math.sqrt(max(v, 0.0))


def _contours(ctx, contour1, contour2):
    if contour1 is None:
        contour1 = default_contour(ctx.solution)
    if contour2 is None:
        contour2 = contour1.enlarged()
    if not (contour2.E0 > contour1.E0 and contour2.eta0 > contour1.eta0) and \
            not (contour1.E0 > contour2.E0 and contour1.eta0 > contour2.eta0):
        raise ConfigurationError("the two contours must be strictly nested")
    return contour1, contour2


def xi_parts(ctx, f, contour=None):
    """``(xi0, xi3, xi4)`` for the mean ``-(1/2 pi i) oint f mu dz``."""
    if contour is None:
        contour = default_contour(ctx.solution)
    f = get_function(f)
    z, w = contour.nodes()
    fz = _evaluate(f, z)
    parts = mu_parts(ctx, z)
    return tuple(_real(-np.sum(fz * p * w) / (2j * math.pi), "mean") for p in parts)


def variance_parts(ctx, f, contour1=None, contour2=None):
    """``(var0, var4)`` for ``-(1/4 pi^2) oint oint f f C dz1 dz2``."""
    contour1, contour2 = _contours(ctx, contour1, contour2)
    f = get_function(f)
    z1, w1 = contour1.nodes()
    z2, w2 = contour2.nodes()
    a = _evaluate(f, z1) * w1
    b = _evaluate(f, z2) * w2
    # g at the outer nodes is solved once; rows of the node grid are processed in blocks
    totals = np.zeros(2, dtype=complex)
    for k in range(0, z1.size, ROW_BLOCK):
        rows = slice(k, k + ROW_BLOCK)
        parts = cov_parts(ctx, z1[rows, None], z2[None, :])
        totals += [a[rows] @ p @ b for p in parts]
    return tuple(_real(-t / (4 * math.pi**2), "variance") for t in totals)


def calibrate(ctx, f, contour1=None, contour2=None):
    contour1, contour2 = _contours(ctx, contour1, contour2)
    xi = xi_parts(ctx, f, contour1)
    var = variance_parts(ctx, f, contour1, contour2)
    return Calibration(*xi, *var)


def xi_limit(ctx, f, contour=None):
    """Limiting mean ``xi_N`` of ``G_N(f)``."""
    x0, x3, x4 = xi_parts(ctx, f, contour)
    return x0 + ctx.kappa3 * x3 + ctx.kappa4 * x4


def variance_limit(ctx, f, contour1=None, contour2=None):
    v0, v4 = variance_parts(ctx, f, contour1, contour2)
    v = v0 + ctx.kappa4 * v4
    if v < -1e-8:
        raise NumericalError(f"negative limiting variance {v:.3e}", residual=v, where="variance")
    return max(v, 0.0)


def sigma_limit(ctx, f, contour1=None, contour2=None):
    """Limiting standard deviation ``sigma_N`` of ``G_N(f)``."""
    return math.sqrt(variance_limit(ctx, f, contour1, contour2))
