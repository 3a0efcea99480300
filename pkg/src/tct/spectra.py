"""Symmetric eigenvalues and empirical linear spectral statistics."""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .contour import get_function, moment_via_contour
from .dyson import EDGE_ETA, DysonSolution, atom_at_zero, density
from .errors import ConfigurationError, NumericalError

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

DEFAULT_TOL = 1e-11
MAX_SWEEPS = 100
SYMMETRY_TOL = 1e-12
INVARIANT_TOL = 1e-9


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues sorted ascending."""

    eigenvalues: np.ndarray

    def __post_init__(self):
        ev = np.sort(np.asarray(self.eigenvalues, dtype=float))
        ev.flags.writeable = False
        object.__setattr__(self, "eigenvalues", ev)

    @property
    def N(self):
        return self.eigenvalues.size


@njit(cache=True)
def _jacobi_sweeps(A, tol, max_sweeps):
    n = A.shape[0]
    scale = np.sqrt(np.sum(A * A))
    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += 2.0 * A[p, q] * A[p, q]
        if np.sqrt(off) <= tol * scale:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for r in range(n):
                    arp = A[r, p]
                    arq = A[r, q]
                    A[r, p] = c * arp - s * arq
                    A[r, q] = s * arp + c * arq
                for r in range(n):
                    apr = A[p, r]
                    aqr = A[q, r]
                    A[p, r] = c * apr - s * aqr
                    A[q, r] = s * apr + c * aqr
                A[p, q] = 0.0
                A[q, p] = 0.0
    return -1


def symmetric_eigenvalues(M, tol=DEFAULT_TOL, method="jacobi"):
    """Eigenvalues of a real symmetric matrix.

    ``method="jacobi"`` runs cyclic-by-rows Jacobi rotations until the
    off-diagonal Frobenius norm is at most ``tol * ||M||_F``.  ``"lapack"``
    calls ``numpy.linalg.eigvalsh``.
    """
    A = np.array(M, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigurationError(f"expected a square matrix, got shape {A.shape}")
    scale = max(np.max(np.abs(A)), 1.0) if A.size else 1.0
    if np.max(np.abs(A - A.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise ConfigurationError("matrix is not symmetric within 1e-12")
    if method == "lapack":
        return Spectrum(np.linalg.eigvalsh(A))
    if method != "jacobi":
        raise ConfigurationError(f"unknown eigenvalue method {method!r}")
    A = np.ascontiguousarray(0.5 * (A + A.T))
    trace, frob = np.trace(A), np.sum(A * A)
    sweeps = _jacobi_sweeps(A, float(tol), MAX_SWEEPS)
    if sweeps < 0:
        raise NumericalError(f"Jacobi iteration did not converge in {MAX_SWEEPS} sweeps", where="jacobi")
    ev = np.diag(A).copy()
    # rotations preserve the trace and the Frobenius norm
    if abs(ev.sum() - trace) > INVARIANT_TOL * max(np.sqrt(frob), 1.0) or \
            abs(np.sum(ev * ev) - frob) > INVARIANT_TOL * max(frob, 1.0):
        raise NumericalError("Jacobi eigenvalues violate the trace or Frobenius identity", where="jacobi")
    return Spectrum(ev)


def _values(spectrum):
    return spectrum.eigenvalues if isinstance(spectrum, Spectrum) else np.asarray(spectrum, dtype=float)


def empirical_lss(spectrum, f):
    """``sum_l f(lambda_l)``."""
    f = get_function(f)
    return float(np.sum(np.real(f(_values(spectrum) + 0j))))


def lsd_integral(c, f):
    """``int f dnu`` by the contour route."""
    return moment_via_contour(c, f)


def g_n_statistic(spectrum, f, c, integral=None):
    """``G_N(f) = sum f(lambda) - N int f dnu``."""
    ev = _values(spectrum)
    if integral is None:
        integral = lsd_integral(c, f)
    return empirical_lss(ev, f) - ev.size * integral


# ---------------------------------------------------------------------------
# Histogram against the limiting density


def lsd_bin_masses(c, edges, nodes_per_bin=8, eta=EDGE_ETA):
    """Mass of the limiting law in each histogram bin, atom at 0 included."""
    sol = c if isinstance(c, DysonSolution) else DysonSolution(c)
    edges = np.asarray(edges, dtype=float)
    x, w = leggauss(nodes_per_bin)
    lo, hi = edges[:-1, None], edges[1:, None]
    E = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x
    atom = atom_at_zero(sol.c)
    dens = density(sol.c, E, eta)
    if atom > 0:
        dens = dens - atom * eta / (np.pi * (E**2 + eta**2))
    masses = np.sum(dens * w, axis=-1) * 0.5 * (edges[1:] - edges[:-1])
    if atom > 0:
        k = np.searchsorted(edges, 0.0, side="right") - 1
        if 0 <= k < masses.size:
            masses[k] += atom
    return np.clip(masses, 0.0, None)


def histogram(spectrum, bins=50, limits=None):
    """Normalized histogram ``(edges, fractions)`` of the eigenvalues."""
    ev = _values(spectrum)
    if limits is None:
        m = np.max(np.abs(ev)) if ev.size else 1.0
        limits = (-m, m)
    counts, edges = np.histogram(ev, bins=bins, range=limits)
    return edges, counts / max(ev.size, 1)


def tv_distance(spectrum, c, bins=50, limits=None):
    """Total-variation distance between the eigenvalue histogram and the LSD."""
    sol = c if isinstance(c, DysonSolution) else DysonSolution(c)
    if limits is None:
        z = sol.edge
        limits = (-z - 0.1, z + 0.1)
    edges, frac = histogram(spectrum, bins, limits)
    return 0.5 * float(np.sum(np.abs(frac - lsd_bin_masses(sol, edges))))
