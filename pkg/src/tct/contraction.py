"""Blockwise contraction of a d-fold tensor into an N x N symmetric matrix."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .tensor_core import DimensionProfile, _check_same


@dataclass(frozen=True)
class ContractedMatrix:
    """Symmetric block matrix with zero diagonal blocks."""

    profile: DimensionProfile
    entries: np.ndarray

    @property
    def offsets(self):
        return self.profile.offsets

    @property
    def N(self):
        return self.profile.N

    def block(self, j1, j2):
        o = self.offsets
        n = self.profile.dims
        return self.entries[o[j1]:o[j1] + n[j1], o[j2]:o[j2] + n[j2]]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def scaled(self, factor):
        return ContractedMatrix(self.profile, _readonly(self.entries * factor))


def _readonly(a):
    a.flags.writeable = False
    return a


def _check_modes(d, j1, j2):
    if not (0 <= j1 < j2 < d):
        raise ConfigurationError(f"need 0 <= j1 < j2 < {d}, got ({j1}, {j2})")


def second_order_contraction(T, vectors, j1, j2):
    """``T^{j1 j2}``: contract every mode except j1 and j2 with its vector."""
    _check_same(T.profile, vectors.profile)
    d = T.profile.d
    _check_modes(d, j1, j2)
    out = T.values
    # contract from the last mode down so earlier axis numbers stay valid
    for l in range(d - 1, -1, -1):
        if l not in (j1, j2):
            out = np.tensordot(out, vectors[l], axes=([l], [0]))
    return out


def phi_d(T, vectors):
    """Contraction matrix with blocks ``T^{j1 j2}`` above the diagonal."""
    prof = T.profile
    if prof.dims != vectors.profile.dims:
        raise DimensionError(f"dimension mismatch: {prof.dims} vs {vectors.profile.dims}")
    N, d = prof.N, prof.d
    o, n = prof.offsets, prof.dims
    R = np.zeros((N, N))
    for j1 in range(d):
        for j2 in range(j1 + 1, d):
            R[o[j1]:o[j1] + n[j1], o[j2]:o[j2] + n[j2]] = second_order_contraction(T, vectors, j1, j2)
    upper = np.triu(R)
    R = upper + upper.T
    return ContractedMatrix(prof, _readonly(R))


def frobenius_sq(M):
    """Sum of squared entries."""
    a = np.asarray(M)
    return float(np.sum(a * a))


def contracted_noise(X, vectors):
    """``M = N^{-1/2} Phi_d(X, a)`` for a noise tensor X."""
    return phi_d(X, vectors).scaled(X.profile.N ** -0.5)


def write_matrix_csv(path, M, digits=17):
    np.savetxt(path, np.asarray(M), delimiter=",", fmt=f"%.{digits}g")


def read_matrix_csv(path):
    return np.loadtxt(path, delimiter=",", ndmin=2)
