"""Sparse random matrix ensembles and the Dyson matrix flow.

Entries of an ``M x N`` matrix ``X`` are i.i.d., centred, with variance
``1/N``.  Sparsity enters through ``q = sqrt(N p)``: the k-th cumulant of
an entry scales like ``1/(N q**(k-2))``.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from math import comb
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import DataError, ParameterError

__all__ = [
    "Distribution",
    "EnsembleParams",
    "CumulantProfile",
    "MatrixSample",
    "FlowState",
    "trial_rng",
    "sample_matrix",
    "gaussian_matrix",
    "flow_state",
    "dyson_flow_at",
    "cumulant_profile",
    "moment_audit",
    "write_matrix",
    "read_matrix",
]

# stream tags keep the randomness of different consumers disjoint
STREAM_MATRIX = 0
STREAM_FLOW = 1
STREAM_TW = 2
STREAM_GAUSS_REF = 3

MATRIX_MAGIC = b"MPSL"
MATRIX_VERSION = 1

Sampler = Callable[[np.random.Generator, tuple], np.ndarray]


class Distribution(str, enum.Enum):
    SPARSE_BERNOULLI = "SparseBernoulli"
    BIPARTITE_BIADJACENCY = "BipartiteBiadjacency"
    GAUSSIAN = "Gaussian"


@dataclass(frozen=True)
class EnsembleParams:
    """Dimensions, sparsity and entry law of a sparse sample covariance ensemble.

    Give either ``p`` or ``q``; the other is derived from ``p = q**2 / N``.
    For the Gaussian kind the sparsity is irrelevant and ``q = sqrt(N)``.
    """

    N: int
    M: int
    p: Optional[float] = None
    q: Optional[float] = None
    dist: Distribution = Distribution.SPARSE_BERNOULLI
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dist", Distribution(self.dist))
        if int(self.N) != self.N or int(self.M) != self.M:
            raise ParameterError("N and M must be integers")
        if self.M < 1 or self.N < 1:
            raise ParameterError(f"dimensions must be positive, got M={self.M}, N={self.N}")
        if self.N < self.M:
            raise ParameterError(f"need N >= M (d = N/M >= 1), got N={self.N}, M={self.M}")
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError("seed must fit in an unsigned 64-bit integer")
        p, q = self.p, self.q
        if self.dist is Distribution.GAUSSIAN:
            if p is None and q is None:
                p = 1.0
            elif p is None:
                p = q * q / self.N
            q = math.sqrt(self.N * p)
        else:
            if p is None and q is None:
                raise ParameterError("sparse ensembles need p or q")
            if p is None:
                if not q > 0:
                    raise ParameterError(f"q must be positive, got {q}")
                p = q * q / self.N
            elif q is not None and not math.isclose(q * q / self.N, p, rel_tol=1e-12):
                raise ParameterError("inconsistent p and q")
            if not 0.0 < p < 1.0:
                raise ParameterError(f"p must lie in (0, 1), got {p}")
            q = math.sqrt(self.N * p)
        object.__setattr__(self, "p", float(p))
        object.__setattr__(self, "q", float(q))

    @property
    def d(self) -> float:
        return self.N / self.M

    @property
    def phi(self) -> float:
        """Sparsity exponent with ``q = N**phi``."""
        if self.N == 1:
            return 0.5
        return math.log(self.q) / math.log(self.N)

    @property
    def scale(self) -> float:
        """Normalisation ``c = sqrt(N p (1-p))`` of the two-point law."""
        return math.sqrt(self.N * self.p * (1.0 - self.p))

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "M": self.M,
            "p": self.p,
            "q": self.q,
            "d": self.d,
            "phi": self.phi,
            "dist": self.dist.value,
            "seed": int(self.seed),
        }


@dataclass
class MatrixSample:
    entries: np.ndarray
    params: EnsembleParams
    trial_index: int = 0
    raw: Optional[np.ndarray] = None  # 0/1 biadjacency, BipartiteBiadjacency only

    @property
    def M(self) -> int:
        return self.entries.shape[0]

    @property
    def N(self) -> int:
        return self.entries.shape[1]


@dataclass
class FlowState:
    X0: MatrixSample
    WG: np.ndarray
    t: float


@dataclass
class CumulantProfile:
    kappa: np.ndarray  # kappa[k-1] is the k-th cumulant
    s: np.ndarray
    t: float
    q: float
    q_t: float
    kappa_t: np.ndarray
    s_t: np.ndarray

    def s4_over_q2(self) -> float:
        """Coefficient ``s_t^(4) / q_t**2`` of the quartic correction."""
        return float(self.s_t[3] / self.q_t**2)


def trial_rng(seed: int, trial: int, stream: int = STREAM_MATRIX) -> np.random.Generator:
    """Independent generator for one (master seed, trial, stream) triple.

    The triple is hashed by :class:`numpy.random.SeedSequence` into the
    PCG64 state, so results never depend on the order in which trials run.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(trial)))
    return np.random.Generator(np.random.PCG64(ss))


def _two_point_values(params: EnsembleParams) -> tuple[float, float]:
    c = params.scale
    return (1.0 - params.p) / c, -params.p / c


def sample_matrix(params: EnsembleParams, trial: int = 0, sampler: Optional[Sampler] = None) -> MatrixSample:
    """Draw the ``M x N`` matrix of trial ``trial``.

    ``sampler(rng, shape)`` overrides the entry law; it must return entries
    already centred with variance ``1/N``.
    """
    rng = trial_rng(params.seed, trial, STREAM_MATRIX)
    shape = (params.M, params.N)
    if sampler is not None:
        X = np.asarray(sampler(rng, shape), dtype=float)
        if X.shape != shape:
            raise ParameterError(f"sampler returned shape {X.shape}, expected {shape}")
        if not np.all(np.isfinite(X)):
            raise DataError("sampler returned non-finite entries")
        return MatrixSample(X, params, trial)
    if params.dist is Distribution.GAUSSIAN:
        X = rng.standard_normal(shape) / math.sqrt(params.N)
        return MatrixSample(X, params, trial)
    # both sparse kinds share the same Bernoulli mask, so the centred
    # biadjacency view coincides bitwise with the SparseBernoulli draw
    mask = rng.random(shape) < params.p
    hi, lo = _two_point_values(params)
    X = np.where(mask, hi, lo)
    raw = mask.astype(np.int8) if params.dist is Distribution.BIPARTITE_BIADJACENCY else None
    return MatrixSample(X, params, trial, raw=raw)


def center_biadjacency(raw: np.ndarray, p: float) -> np.ndarray:
    """Centre and scale a 0/1 biadjacency matrix to entry variance ``1/N``."""
    N = raw.shape[1]
    return (raw - p) / math.sqrt(N * p * (1.0 - p))


def gaussian_matrix(M: int, N: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((M, N)) / math.sqrt(N)


def flow_state(sample: MatrixSample, t: float) -> FlowState:
    """Attach the Gaussian endpoint ``W^G`` of the flow for this trial."""
    if not t >= 0:
        raise ParameterError(f"flow time must be non-negative, got {t}")
    rng = trial_rng(sample.params.seed, sample.trial_index, STREAM_FLOW)
    return FlowState(sample, gaussian_matrix(sample.M, sample.N, rng), t)


def dyson_flow_at(state: FlowState) -> MatrixSample:
    """``X_t = exp(-t/2) X_0 + sqrt(1 - exp(-t)) W^G``."""
    t = state.t
    if not t >= 0:
        raise ParameterError(f"flow time must be non-negative, got {t}")
    X0 = state.X0
    if t == 0:
        return MatrixSample(X0.entries.copy(), X0.params, X0.trial_index)
    Xt = math.exp(-t / 2) * X0.entries + math.sqrt(-math.expm1(-t)) * state.WG
    return MatrixSample(Xt, X0.params, X0.trial_index)


def _cumulants_from_moments(mu: np.ndarray) -> np.ndarray:
    # mu[n] = E X^n (mu[0] = 1); standard moment -> cumulant recursion
    K = len(mu) - 1
    kappa = np.zeros(K + 1)
    for n in range(1, K + 1):
        kappa[n] = mu[n] - sum(comb(n - 1, m - 1) * kappa[m] * mu[n - m] for m in range(1, n))
    return kappa[1:]


def entry_cumulants(params: EnsembleParams, K_max: int = 8) -> np.ndarray:
    """Exact cumulants ``kappa^(1..K_max)`` of a single entry."""
    if params.dist is Distribution.GAUSSIAN:
        kappa = np.zeros(K_max)
        kappa[1] = 1.0 / params.N
        return kappa
    p = params.p
    hi, lo = _two_point_values(params)
    mu = np.array([p * hi**k + (1 - p) * lo**k for k in range(K_max + 1)])
    kappa = _cumulants_from_moments(mu)
    kappa[0] = 0.0  # exact by construction, drop rounding noise
    return kappa


def cumulant_profile(params: EnsembleParams, t: float = 0.0, K_max: int = 8) -> CumulantProfile:
    if K_max < 4:
        raise ParameterError("K_max must be at least 4")
    if not t >= 0:
        raise ParameterError(f"flow time must be non-negative, got {t}")
    kappa = entry_cumulants(params, K_max)
    k = np.arange(1, K_max + 1)
    N, q = params.N, params.q
    s = N * q ** (k - 2.0) * kappa
    s[0], s[1] = 0.0, 1.0
    q_t = q * math.exp(t / 2)
    kappa_t = kappa.copy()
    kappa_t[2:] = np.exp(-k[2:] * t / 2) * kappa[2:]
    s_t = N * q_t ** (k - 2.0) * kappa_t
    s_t[0], s_t[1] = 0.0, 1.0
    return CumulantProfile(kappa, s, float(t), q, q_t, kappa_t, s_t)


def normalized_s4(params: EnsembleParams) -> float:
    """``s^(4)``; equals ``(1 - 6p + 6p^2)/(1 - p)`` for the sparse kinds."""
    if params.dist is Distribution.GAUSSIAN:
        return 0.0
    p = params.p
    return (1.0 - 6.0 * p + 6.0 * p * p) / (1.0 - p)


def moment_audit(sample: MatrixSample, K_max: int = 8, C: float = 1.0, c: float = 1.0) -> dict:
    """Empirical moments with standard errors and a check of the moment bound.

    The bound is ``E|X|^k <= (C k)^(c k) / (N q^(k-2))`` for ``k >= 3``.
    """
    x = np.asarray(sample.entries, dtype=float).ravel()
    if x.size == 0:
        raise ParameterError("empty sample")
    n = x.size
    N, q = sample.params.N, sample.params.q
    rows = []
    for k in range(1, K_max + 1):
        xk = x**k
        m = xk.mean()
        se = xk.std(ddof=1) / math.sqrt(n) if n > 1 else float("inf")
        abs_m = np.abs(xk).mean()
        bound = (C * k) ** (c * k) / (N * q ** (k - 2)) if k >= 3 else None
        rows.append(
            {
                "k": k,
                "moment": float(m),
                "stderr": float(se),
                "abs_moment": float(abs_m),
                "bound": bound,
                "violated": bool(bound is not None and abs_m > bound),
            }
        )
    return {"n": n, "C": C, "c": c, "moments": rows, "any_violation": any(r["violated"] for r in rows)}


def write_matrix(path, X: np.ndarray) -> None:
    """Binary dump: ``MPSL``, u32 version, u64 M, u64 N, row-major f64 LE."""
    X = np.ascontiguousarray(X, dtype="<f8")
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise ParameterError("only 1-d or 2-d arrays can be dumped")
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC + struct.pack("<IQQ", MATRIX_VERSION, X.shape[0], X.shape[1]))
        fh.write(X.tobytes(order="C"))


def read_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    header = struct.calcsize("<IQQ")
    if data[:4] != MATRIX_MAGIC or len(data) < 4 + header:
        raise DataError(f"{path}: not an MPSL matrix dump")
    version, M, N = struct.unpack("<IQQ", data[4 : 4 + header])
    if version != MATRIX_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    body = data[4 + header :]
    if len(body) != 8 * M * N:
        raise DataError(f"{path}: truncated payload")
    return np.frombuffer(body, dtype="<f8").reshape(M, N).copy()
