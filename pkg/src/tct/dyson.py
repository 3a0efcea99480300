"""Vector Dyson equation ``-c/g = z + S g`` and the limiting spectral law it defines.

``g = (g_1, ..., g_d)`` are the blockwise Stieltjes transforms of the contracted
noise matrix, ``S = 11^T - I`` and ``c`` are the dimension ratios.  All
evaluators accept scalar or array ``z`` and return arrays of shape
``z.shape + (d,)``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ConfigurationError, NumericalError

DEFAULT_TOL = 1e-12
EDGE_ETA = 1e-7
EDGE_THRESHOLD = 1e-5
CONTINUATION_START = 1.0
RECENT_SIZE = 8
CONTINUATION_FACTOR = 0.5


def _ratios(c):
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.size < 2 or np.any(c <= 0):
        raise ConfigurationError(f"ratios must be positive, got {c}")
    return c


def self_energy(d):
    """``S_d = 11^T - I``."""
    return np.ones((d, d)) - np.eye(d)


def _others(u):
    """``(S u)_j = sum_{k != j} u_k`` without cancellation against large u_j."""
    return u @ self_energy(u.shape[-1])


def dyson_residual(c, z, g):
    """``max_j |c_j/g_j + z + (S g)_j|`` for each z."""
    c = _ratios(c)
    z = np.asarray(z, dtype=complex)
    r = c / g + z[..., None] + _others(g)
    return np.max(np.abs(r), axis=-1)


def _fixed_point(c, z, u, tol, max_iter):
    """Damped iteration ``u <- (1-lam) u + lam * (-c / (z + S u))``, lam halved on growth."""
    zc = z[..., None]
    lam = np.ones(z.shape)
    res = _scaled_residual(c, z, u)
    for _ in range(max_iter):
        active = res > tol
        if not active.any():
            break
        new = -c / (zc + _others(u))
        trial = (1 - lam[..., None]) * u + lam[..., None] * new
        trial_res = _scaled_residual(c, z, trial)
        better = (trial_res <= res) & active
        u = np.where(better[..., None], trial, u)
        res = np.where(better, trial_res, res)
        lam = np.where(active & ~better, lam * 0.5, lam)
        lam = np.where(lam < 1e-6, 1.0, lam)
    return u, res


def _newton(c, z, u, tol, max_iter=80):
    """Newton on the cleared form ``G_j(u) = c_j + u_j (z + sum_{k != j} u_k)``.

    Clearing the denominators keeps the Jacobian well scaled when some
    components blow up like ``1/z`` and others vanish (point mass at zero).
    Backtracking on ``||G||_2``; keeps ``Im u > 0`` when ``Im z > 0``.
    """
    d = c.size
    upper = z.imag > 0
    eye = np.eye(d)

    def cleared(v):
        return c + v * (z[..., None] + _others(v))

    res = _scaled_residual(c, z, u)
    for _ in range(max_iter):
        active = res > tol
        if not active.any():
            break
        G = cleared(u)
        diag = z[..., None] + _others(u)
        J = u[..., :, None] * (1 - eye) + np.einsum("...i,ij->...ij", diag, eye)
        try:
            step = np.linalg.solve(J, -G[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        step = np.where(np.isfinite(step), step, 0)
        m0 = np.linalg.norm(G, axis=-1)
        t = np.ones(z.shape)
        accepted = np.zeros(z.shape, dtype=bool)
        new_u = u.copy()
        for _ in range(40):
            cand = u + t[..., None] * step
            ok = (np.linalg.norm(cleared(cand), axis=-1) < m0) & ~accepted & active
            ok &= ~upper | np.all(cand.imag > 0, axis=-1)
            new_u = np.where(ok[..., None], cand, new_u)
            accepted |= ok
            if np.all(accepted | ~active):
                break
            t = np.where(accepted, t, 0.5 * t)
        if not accepted[active].any():
            break
        u = new_u
        res = _scaled_residual(c, z, u)
    return u, res


def _predict(c, z0, u0, z1):
    """First-order predictor ``u0 + g'(z0) (z1 - z0)``, kept only where it helps."""
    try:
        du = dyson_derivative(c, z0, u0)
    except np.linalg.LinAlgError:
        return u0
    cand = u0 + du * (z1 - z0)[..., None]
    good = np.all(np.isfinite(cand), axis=-1) & (
        _scaled_residual(c, z1, cand) < _scaled_residual(c, z1, u0))
    return np.where(good[..., None], cand, u0)


def _scaled_residual(c, z, u):
    """Relative residual ``max_j |F_j| / max(|c_j/u_j|, |z + (S u)_j|)``.

    Both halves of each equation are equal at the solution, so this measures
    the agreement of the two sides independently of their scale.
    """
    a = c / u
    b = z[..., None] + _others(u)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)
    return np.max(np.abs(a + b) / scale, axis=-1)


def _continuation(c, z, tol, max_iter):
    """Follow the solution from ``Re z + i*CONTINUATION_START`` down to ``z``.

    Each point keeps its own step ratio: halved toward 1 after a failed
    Newton solve, squared (bigger steps) after a success.
    """
    target = np.maximum(z.imag, 0.0)
    h = np.maximum(CONTINUATION_START, target)
    z0 = z.real + 1j * h
    u, _ = _fixed_point(c, z0, -c / z0[..., None], tol, max_iter)
    u, res = _newton(c, z0, u, tol)
    ratio = np.full(z.shape, CONTINUATION_FACTOR)
    done = (h == target) & (res <= tol)
    for _ in range(2000):
        live = ~done & (res <= tol) & (ratio < 0.9999)
        if not live.any():
            break
        hn = h[live] * ratio[live]
        hn = np.where((hn <= target[live]) | (hn < 1e-12), target[live], hn)
        zo = z.real[live] + 1j * h[live]
        zn = z.real[live] + 1j * hn
        un = _predict(c, zo, u[live], zn)
        un, rn = _newton(c, zn, un, tol)
        ok = rn <= tol
        idx = np.nonzero(live)[0]
        acc = idx[ok]
        u[acc], h[acc] = un[ok], hn[ok]
        ratio[acc] = np.maximum(ratio[acc] ** 2, CONTINUATION_FACTOR**2)
        rej = idx[~ok]
        ratio[rej] = np.sqrt(ratio[rej])
        done = (h == target)
    zf = z.real + 1j * h
    res = _scaled_residual(c, zf, u)
    res = np.where(done, res, np.inf)
    return u, res


def _solve_upper(c, z, tol, max_iter):
    """Solve for Im z >= 0 (real z only off the support), array input.

    Points well away from the real axis use the damped fixed point followed by
    a Newton polish.  Points close to the axis, and any point where that fails,
    are reached by continuation in Im z from height ``CONTINUATION_START``.
    """
    u = np.empty(z.shape + (c.size,), dtype=complex)
    res = np.full(z.shape, np.inf)
    far = (z.imag >= CONTINUATION_START) | (np.abs(z) > 2 * (c.size + 1))
    if far.any():
        zf = z[far]
        uf, _ = _fixed_point(c, zf, -c / zf[..., None], tol, max_iter)
        uf, rf = _newton(c, zf, uf, tol)
        u[far], res[far] = uf, rf
    bad = ~(res <= tol)
    if bad.any():
        ub, rb = _continuation(c, z[bad], tol, max_iter)
        u[bad] = ub
        res[bad] = rb
    return u, res


def solve_dyson(c, z, tol=DEFAULT_TOL, max_iter=2000):
    """Blockwise Stieltjes transforms ``g(z)``; shape ``z.shape + (d,)``.

    Points with ``Im z < 0`` are served through ``g(conj z) = conj g(z)``.
    Raises :class:`NumericalError` when the residual exceeds ``max(tol, 1e-10)``.
    """
    c = _ratios(c)
    z = np.asarray(z, dtype=complex)
    if not (0 < tol <= 1e-6):
        raise ConfigurationError("tol must lie in (0, 1e-6]")
    flat = z.reshape(-1)
    lower = flat.imag < 0
    zu = np.where(lower, np.conj(flat), flat)
    if np.any(zu == 0):
        raise NumericalError("g is undefined at z = 0", where=0j)
    g, res = _solve_upper(c, zu, tol, max_iter)
    worst = np.max(res) if res.size else 0.0
    limit = max(tol, 1e-10)
    if not worst <= limit:
        i = int(np.nanargmax(np.where(np.isfinite(res), res, np.inf)))
        raise NumericalError(
            f"Dyson solver did not converge at z={zu[i]}: residual {res[i]:.3e}",
            residual=float(res[i]),
            where=complex(zu[i]),
        )
    g = np.where(lower[:, None], np.conj(g), g)
    return g.reshape(z.shape + (c.size,))


def dyson_derivative(c, z, g=None):
    """``dg/dz`` from implicit differentiation: ``(S - diag(c/g^2)) g' = -1``."""
    c = _ratios(c)
    z = np.asarray(z, dtype=complex)
    if g is None:
        g = solve_dyson(c, z)
    d = c.size
    J = self_energy(d) - np.einsum("...i,ij->...ij", c / g**2, np.eye(d))
    rhs = -np.ones(g.shape, dtype=complex)
    return np.linalg.solve(J, rhs[..., None])[..., 0]


def stieltjes(c, z):
    """Total Stieltjes transform ``sum_j g_j(z)``."""
    return solve_dyson(c, z).sum(axis=-1)


def equal_thirds_closed_form(z):
    """``(3/4)(sqrt(z^2 - 8/3) - z)`` on the branch with ``g ~ -1/z`` at infinity."""
    z = np.asarray(z, dtype=complex)
    # sqrt(z - a) sqrt(z + a) has the cut on [-a, a] and behaves like z at infinity
    a = math.sqrt(8.0 / 3.0)
    return 0.75 * (np.sqrt(z - a) * np.sqrt(z + a) - z)


def density(c, E, eta):
    """``pi^{-1} Im sum_j g_j(E + i eta)``."""
    if np.any(np.asarray(eta) <= 0):
        raise ConfigurationError("eta must be positive")
    z = np.asarray(E, dtype=float) + 1j * np.asarray(eta, dtype=float)
    return stieltjes(c, z).imag / math.pi


def spectral_bound(c, d=None):
    """Operator-norm bound ``2(d-1) sum_j sqrt(c_j)``."""
    c = _ratios(c)
    d = c.size if d is None else int(d)
    return 2.0 * (d - 1) * float(np.sum(np.sqrt(c)))


def has_point_mass(c):
    return bool(np.max(_ratios(c)) >= 0.5)


def support_edge(c, eta=EDGE_ETA, threshold=EDGE_THRESHOLD, scan_points=400):
    """Outer edge of the support, the largest E with density above ``threshold``.

    A coarse scan from ``2 sqrt(d-1) + 0.1`` downward brackets the outermost
    crossing, which is then refined by bisection.
    """
    c = _ratios(c)
    d = c.size
    hi = 2.0 * math.sqrt(d - 1) + 0.1
    grid = np.linspace(hi, 0.0, scan_points + 1)[:-1]
    dens = density(c, grid, eta)
    above = np.nonzero(dens > threshold)[0]
    if above.size == 0:
        raise NumericalError("support edge bracket failure: density below threshold everywhere")
    k = above[0]
    if k == 0:
        raise NumericalError("support edge bracket failure: density above threshold at the bound")
    lo, up = grid[k], grid[k - 1]
    for _ in range(60):
        mid = 0.5 * (lo + up)
        if density(c, mid, eta) > threshold:
            lo = mid
        else:
            up = mid
        if up - lo < 1e-12:
            break
    return 0.5 * (lo + up)


def atom_at_zero(c):
    """Mass of the point mass at 0.

    Near ``z = 0`` the dominant component behaves like ``g_1 ~ -m/z`` while the
    others vanish like ``c_k z/m``; matching the ``z`` terms of the first
    equation gives ``m = 2 max(c) - 1`` when positive, and 0 otherwise.
    """
    c = _ratios(c)
    return float(max(0.0, 2.0 * np.max(c) - 1.0))


def _edge_nodes(a, b, n_nodes):
    """Gauss-Legendre nodes on ``[a, b]`` after ``x = mid + half sin(theta)``.

    The substitution cancels square-root vanishing of the density at both ends.
    """
    t, w = leggauss(n_nodes)
    theta = 0.5 * math.pi * t
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * np.sin(theta), w * 0.5 * math.pi * half * np.cos(theta)


def _graded_nodes(zeta, n_nodes, levels=16):
    """Nodes on ``[-zeta, zeta]`` after ``x = zeta sin(theta)``, graded toward 0.

    The theta range ``[0, pi/2]`` is cut into panels that halve toward 0 so an
    integrable singularity at the origin is resolved; mirrored to negative x.
    """
    t, w = leggauss(max(4, n_nodes // (2 * (levels + 1))))
    edges = [0.0] + [0.5 * math.pi * 2.0**-j for j in range(levels, -1, -1)]
    th, wt = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        th.append(0.5 * (a + b) + 0.5 * (b - a) * t)
        wt.append(0.5 * (b - a) * w)
    th = np.concatenate(th)
    wt = np.concatenate(wt) * zeta * np.cos(th)
    x = zeta * np.sin(th)
    return np.concatenate([-x[::-1], x]), np.concatenate([wt[::-1], wt])


def _continuous_density(c, E, eta, atom):
    """Smoothed density with the Lorentzian image of the atom at 0 removed."""
    E = np.asarray(E, dtype=float)
    return density(c, E, eta) - atom * eta / (math.pi * (E**2 + eta**2))


def inner_edge(c, eta=EDGE_ETA, threshold=EDGE_THRESHOLD, scan_points=400, edge=None):
    """Inner edge of the continuous part when an atom at 0 is present, else 0.

    The continuous part of the law vanishes on a gap around the atom; the
    first grid point from 0 where it exceeds ``threshold`` brackets the edge,
    refined by bisection.  Returns 0.0 if no gap is detected.
    """
    c = _ratios(c)
    atom = atom_at_zero(c)
    if atom == 0.0:
        return 0.0
    zeta = support_edge(c) if edge is None else edge
    grid = np.linspace(0.0, zeta, scan_points + 1)[1:]
    dens = _continuous_density(c, grid, eta, atom)
    above = np.nonzero(dens > threshold)[0]
    if above.size == 0 or above[0] == 0:
        return 0.0
    k = above[0]
    lo, up = grid[k - 1], grid[k]
    for _ in range(60):
        mid = 0.5 * (lo + up)
        if _continuous_density(c, mid, eta, atom) > threshold:
            up = mid
        else:
            lo = mid
        if up - lo < 1e-12:
            break
    return 0.5 * (lo + up)


def moment(c, k, n_nodes=400, eta=EDGE_ETA, edge=None):
    """``int x^k dnu`` by Gauss-Legendre quadrature of the smoothed density.

    Square-root edges are absorbed by a sine substitution, and one Richardson
    step in eta removes the leading smoothing bias.  With an atom at 0 its mass
    is added exactly and the continuous part is integrated over
    ``[a, zeta]`` (mirrored), ``a`` the inner edge.  At the threshold
    ``max c = 1/2`` the density is singular at 0 and panels are graded there.
    """
    k = int(k)
    if k < 0:
        raise ConfigurationError("moment order must be nonnegative")
    if k % 2:
        return 0.0
    c = _ratios(c)
    zeta = support_edge(c) if edge is None else edge
    atom = atom_at_zero(c)
    if atom > 0:
        a = inner_edge(c, edge=zeta)
        if a > 0:
            x, wx = _edge_nodes(a, zeta, n_nodes // 2)
            x, wx = np.concatenate([-x, x]), np.concatenate([wx, wx])
        else:
            x, wx = _graded_nodes(zeta, 2 * n_nodes)
    elif abs(np.max(c) - 0.5) < 1e-9:
        x, wx = _graded_nodes(zeta, 2 * n_nodes)
    else:
        x, wx = _edge_nodes(-zeta, zeta, n_nodes)

    def quad(h):
        return float(np.sum(wx * _continuous_density(c, x, h, atom) * x**k))

    value = 2 * quad(eta) - quad(2 * eta)
    if k == 0:
        value += atom
    return value


@dataclass
class DysonSolution:
    """Solver handle with write-once caches for the edge, bound and moments."""

    c: np.ndarray
    tol: float = DEFAULT_TOL
    max_iter: int = 2000
    _edge: float = field(default=None, repr=False)
    _moments: dict = field(default_factory=dict, repr=False)
    _recent: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.c = _ratios(self.c)

    @property
    def d(self):
        return self.c.size

    def g(self, z):
        """``solve_dyson`` with a small memo of recent node arrays (read-only results)."""
        z = np.asarray(z, dtype=complex)
        if z.size < 16:
            return solve_dyson(self.c, z, self.tol, self.max_iter)
        key = (z.shape, z.tobytes())
        hit = self._recent.get(key)
        if hit is None:
            hit = solve_dyson(self.c, z, self.tol, self.max_iter)
            hit.flags.writeable = False
            if len(self._recent) >= RECENT_SIZE:
                self._recent.pop(next(iter(self._recent)))
            self._recent[key] = hit
        return hit

    def dg(self, z, g=None):
        return dyson_derivative(self.c, z, g)

    def residual(self, z):
        z = np.asarray(z, dtype=complex)
        return dyson_residual(self.c, z, self.g(z))

    def density(self, E, eta=EDGE_ETA):
        return density(self.c, E, eta)

    @property
    def edge(self):
        if self._edge is None:
            self._edge = support_edge(self.c)
        return self._edge

    @property
    def bound(self):
        return spectral_bound(self.c)

    @property
    def has_point_mass(self):
        return has_point_mass(self.c)

    def moment(self, k):
        if k not in self._moments:
            self._moments[k] = moment(self.c, k, edge=self.edge)
        return self._moments[k]
