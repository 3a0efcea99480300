"""Dense tensors, direction vectors, their summary statistics and spiked-model data."""

import hashlib
import itertools
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError

DISTRIBUTIONS = ("gaussian", "uniform_pm_sqrt3")
MAX_ENTRIES = 10**8


@dataclass(frozen=True)
class DimensionProfile:
    """Mode sizes ``n_1..n_d`` of a d-fold tensor."""

    dims: tuple

    def __init__(self, dims):
        dims = tuple(int(n) for n in dims)
        if len(dims) < 3:
            raise DimensionError(f"need at least 3 modes, got {len(dims)}")
        if any(n < 1 for n in dims):
            raise DimensionError(f"mode sizes must be positive, got {dims}")
        if math.prod(dims) > MAX_ENTRIES:
            raise DimensionError(f"tensor with dims {dims} exceeds {MAX_ENTRIES} entries")
        object.__setattr__(self, "dims", dims)

    @property
    def d(self):
        return len(self.dims)

    @property
    def N(self):
        return sum(self.dims)

    @property
    def ratios(self):
        return np.array(self.dims, dtype=float) / self.N

    @property
    def size(self):
        return math.prod(self.dims)

    @property
    def offsets(self):
        """Start index of each mode's block in an N-vector."""
        return np.concatenate([[0], np.cumsum(self.dims)[:-1]]).astype(int)


@dataclass(frozen=True)
class DenseTensor:
    """Real d-fold tensor stored as a numpy array of shape ``profile.dims``."""

    profile: DimensionProfile
    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=float)
        if values.size != self.profile.size:
            raise DimensionError(
                f"{values.size} values for a tensor with {self.profile.size} entries"
            )
        values = values.reshape(self.profile.dims)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, array):
        array = np.asarray(array, dtype=float)
        return cls(DimensionProfile(array.shape), array)

    def flat(self):
        """Row-major flat view (last index fastest)."""
        return self.values.reshape(-1)

    def __add__(self, other):
        _check_same(self.profile, other.profile)
        return DenseTensor(self.profile, self.values + other.values)

    def __mul__(self, scalar):
        return DenseTensor(self.profile, float(scalar) * self.values)

    __rmul__ = __mul__


def _check_same(p, q):
    if p.dims != q.dims:
        raise DimensionError(f"dimension mismatch: {p.dims} vs {q.dims}")


@dataclass(frozen=True)
class UnitVectorSet:
    """One unit vector per mode."""

    profile: DimensionProfile
    vectors: tuple

    def __init__(self, vectors, profile=None, normalize=False):
        vecs = [np.array(v, dtype=float).reshape(-1) for v in vectors]
        if profile is None:
            profile = DimensionProfile([v.size for v in vecs])
        if len(vecs) != profile.d or any(v.size != n for v, n in zip(vecs, profile.dims)):
            raise DimensionError("vector lengths do not match the dimension profile")
        for v in vecs:
            nrm = np.linalg.norm(v)
            if normalize:
                if nrm == 0:
                    raise ConfigurationError("cannot normalize a zero vector")
                v /= nrm
            elif abs(nrm - 1.0) > 1e-12:
                raise ConfigurationError(f"vector norm {nrm!r} is not 1 within 1e-12")
            v.flags.writeable = False
        object.__setattr__(self, "profile", profile)
        object.__setattr__(self, "vectors", tuple(vecs))

    def __getitem__(self, k):
        return self.vectors[k]

    def __len__(self):
        return len(self.vectors)


def delocalized_vectors(profile):
    """Flat vectors ``n_k^{-1/2} 1``."""
    return UnitVectorSet([np.full(n, n**-0.5) for n in profile.dims], profile)


def localized_vectors(profile):
    """First standard basis vector in every mode."""
    vecs = []
    for n in profile.dims:
        e = np.zeros(n)
        e[0] = 1.0
        vecs.append(e)
    return UnitVectorSet(vecs, profile)


@dataclass(frozen=True)
class SpikedModel:
    """Rank-R signal ``sum_r beta_r x^(r,1) o ... o x^(r,d)``."""

    profile: DimensionProfile
    betas: tuple
    signals: tuple = field(default=())

    def __post_init__(self):
        betas = tuple(float(b) for b in self.betas)
        if len(betas) != len(self.signals):
            raise ConfigurationError("one signal vector set per beta is required")
        if any(b < 0 for b in betas):
            raise ConfigurationError("signal strengths must be nonnegative")
        for s in self.signals:
            _check_same(self.profile, s.profile)
        for mode in range(self.profile.d):
            if not self.signals:
                break
            X = np.stack([s[mode] for s in self.signals], axis=1)
            gram = X.T @ X
            if np.max(np.abs(gram - np.eye(len(self.signals)))) > 1e-10:
                raise ConfigurationError(f"signal vectors in mode {mode} are not orthonormal")
        object.__setattr__(self, "betas", betas)

    @property
    def rank(self):
        return len(self.betas)

    def signal_tensor(self):
        out = np.zeros(self.profile.dims)
        for beta, s in zip(self.betas, self.signals):
            out += beta * outer(s.vectors)
        return out


def outer(vectors):
    """Outer product ``v1 o v2 o ... o vd`` as a dense array."""
    out = np.asarray(vectors[0], dtype=float)
    for v in vectors[1:]:
        out = np.multiply.outer(out, np.asarray(v, dtype=float))
    return out


def orthonormalize(vectors, tol=1e-12):
    """Modified Gram-Schmidt on the columns of ``vectors`` (n x R)."""
    Q = np.array(vectors, dtype=float, copy=True)
    if Q.ndim == 1:
        Q = Q[:, None]
    for j in range(Q.shape[1]):
        for i in range(j):
            Q[:, j] -= (Q[:, i] @ Q[:, j]) * Q[:, i]
        nrm = np.linalg.norm(Q[:, j])
        if nrm < tol:
            raise ConfigurationError("signal vectors are linearly dependent")
        Q[:, j] /= nrm
    return Q


def make_spiked_model(profile, betas, signal_vectors):
    """Build a model from per-component raw vectors, orthonormalizing each mode.

    ``signal_vectors[r][l]`` is the raw mode-l vector of component r.
    """
    R = len(betas)
    if R == 0:
        return SpikedModel(profile, (), ())
    per_mode = []
    for l in range(profile.d):
        cols = np.stack([np.asarray(signal_vectors[r][l], float) for r in range(R)], axis=1)
        per_mode.append(orthonormalize(cols))
    signals = tuple(
        UnitVectorSet([per_mode[l][:, r] for l in range(profile.d)], profile) for r in range(R)
    )
    return SpikedModel(profile, tuple(betas), signals)


def derive_seed(root, *tags):
    """64-bit seed from a root seed and a tuple of tags, independent of call order."""
    h = hashlib.sha256(repr((int(root),) + tuple(tags)).encode()).digest()
    return int.from_bytes(h[:8], "little")


def rng_for(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed) % 2**64)))


def generate_noise(profile, dist, seed):
    """iid mean-zero unit-variance noise tensor, deterministic in ``seed``."""
    rng = rng_for(seed)
    if dist == "gaussian":
        vals = rng.standard_normal(profile.dims)
    elif dist == "uniform_pm_sqrt3":
        vals = rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), profile.dims)
    else:
        raise ConfigurationError(f"unknown noise distribution {dist!r}; choose from {DISTRIBUTIONS}")
    return DenseTensor(profile, vals)


def noise_cumulants(dist):
    """Exact (kappa3, kappa4) of the supported noise laws."""
    if dist == "gaussian":
        return 0.0, 0.0
    if dist == "uniform_pm_sqrt3":
        return 0.0, -1.2
    raise ConfigurationError(f"unknown noise distribution {dist!r}")


def assemble_spiked(model, noise):
    """``T = sum_r beta_r x^(r,1) o ... o x^(r,d) + N^{-1/2} X``."""
    _check_same(model.profile, noise.profile)
    N = model.profile.N
    return DenseTensor(model.profile, model.signal_tensor() + noise.values / math.sqrt(N))


@dataclass(frozen=True)
class VectorStats:
    """Sums of direction-vector entries entering the limiting mean and variance.

    ``b1[k] = N^{-1/2} sum_i a^(k)_i``; ``b4[k, l]`` is the product of
    ``||a^(m)||_4^4`` over modes m outside {k, l}; ``b3[k, l, t]`` is the product
    of ``sum_i (a^(m)_i)^3`` over modes m outside {k, l, t}.  Entries with
    repeated indices are set to zero.
    """

    b1: np.ndarray
    b4: np.ndarray
    b3: np.ndarray

    @property
    def d(self):
        return self.b1.size


def vector_stats(vectors):
    prof = vectors.profile
    d, N = prof.d, prof.N
    b1 = np.array([v.sum() for v in vectors]) / math.sqrt(N)
    p4 = np.array([np.sum(v**4) for v in vectors])
    p3 = np.array([np.sum(v**3) for v in vectors])
    b4 = np.zeros((d, d))
    for k, l in itertools.permutations(range(d), 2):
        b4[k, l] = math.prod(p4[m] for m in range(d) if m not in (k, l))
    b3 = np.zeros((d, d, d))
    for k, l, t in itertools.permutations(range(d), 3):
        b3[k, l, t] = math.prod(p3[m] for m in range(d) if m not in (k, l, t))
    return VectorStats(b1, b4, b3)


def vector_stats_from_arrays(b1, b4, b3=None):
    b1 = np.asarray(b1, float)
    d = b1.size
    b3 = np.zeros((d, d, d)) if b3 is None else np.asarray(b3, float)
    return VectorStats(b1, np.asarray(b4, float), b3)


# ---------------------------------------------------------------------------
# File formats

_MAGIC = b"TNSR"


def write_tensor_text(path, tensor):
    with open(path, "w") as fh:
        fh.write("dims: " + " ".join(str(n) for n in tensor.profile.dims) + "\n")
        flat = tensor.flat()
        for start in range(0, flat.size, 8):
            fh.write(" ".join(repr(float(x)) for x in flat[start:start + 8]) + "\n")


def read_tensor_text(path):
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("dims:"):
            raise ConfigurationError(f"{path}: first line must start with 'dims:'")
        dims = [int(t) for t in header[5:].split()]
        vals = np.array(fh.read().split(), dtype=float)
    return DenseTensor(DimensionProfile(dims), vals)


def write_tensor_binary(path, tensor):
    dims = tensor.profile.dims
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(dims)))
        fh.write(struct.pack(f"<{len(dims)}Q", *dims))
        fh.write(tensor.flat().astype("<f8").tobytes())


def read_tensor_binary(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ConfigurationError(f"{path}: bad magic, expected TNSR")
        (d,) = struct.unpack("<I", fh.read(4))
        dims = struct.unpack(f"<{d}Q", fh.read(8 * d))
        vals = np.frombuffer(fh.read(), dtype="<f8")
    return DenseTensor(DimensionProfile(dims), vals.astype(float))


def read_tensor(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    return read_tensor_binary(path) if magic == _MAGIC else read_tensor_text(path)


def read_vectors(path, normalize=True):
    """One vector per non-empty line, whitespace separated."""
    vecs = []
    with open(path) as fh:
        for line in fh:
            if line.strip() and not line.lstrip().startswith("#"):
                vecs.append(np.array(line.split(), dtype=float))
    return UnitVectorSet(vecs, normalize=normalize)


def write_vectors(path, vectors):
    with open(path, "w") as fh:
        for v in vectors:
            fh.write(" ".join(repr(float(x)) for x in v) + "\n")
