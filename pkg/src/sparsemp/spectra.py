"""Spectra and Green-function observables of sampled matrices."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import DataError, NumericalError, ParameterError

__all__ = [
    "Spectrum",
    "GreenBlocks",
    "eigenvalues",
    "empirical_stieltjes",
    "linearized_green",
    "counting",
    "delocalization_stat",
    "delocalization_parts",
    "onatski_R",
    "write_spectrum_csv",
    "read_spectrum_csv",
]

GREEN_MAX_DIM = 2000


@dataclass
class Spectrum:
    """Eigenvalues of ``X^T X``, sorted descending (``N`` values)."""

    lambdas: np.ndarray
    M: int
    N: int

    @property
    def d(self) -> float:
        return self.N / self.M

    @property
    def top(self) -> float:
        return float(self.lambdas[0])


@dataclass
class GreenBlocks:
    z: complex
    G_TT: np.ndarray
    G_TbarTbar: np.ndarray
    m: complex
    m_bar: complex
    schur_error: float  # max entrywise |G_TT - (X^T X - z)^{-1}|
    schur_error_bar: float  # same for the lower block against z (X X^T - z)^{-1}


def _entries(sample) -> np.ndarray:
    X = getattr(sample, "entries", sample)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DataError("expected a 2-d matrix")
    if not np.all(np.isfinite(X)):
        raise DataError("matrix has non-finite entries")
    return X


def eigenvalues(sample) -> Spectrum:
    """Squared singular values of ``X`` padded with ``N - M`` exact zeros."""
    X = _entries(sample)
    M, N = X.shape
    s = linalg.svdvals(X, check_finite=False)
    lam = np.zeros(N)
    lam[: len(s)] = s * s
    lam[::-1].sort()
    return Spectrum(lam, M, N)


def empirical_stieltjes(spec: Spectrum, z):
    """``(1/N) sum_i 1/(lambda_i - z)``; vectorised over ``z``."""
    z_arr = np.asarray(z, dtype=complex)
    if np.any(z_arr.imag <= 0):
        raise ParameterError("empirical_stieltjes needs Im z > 0")
    lam = spec.lambdas
    if z_arr.ndim == 0:
        return complex(np.mean(1.0 / (lam - z_arr)))
    out = np.empty(z_arr.shape, dtype=complex)
    flat = z_arr.ravel()
    res = out.ravel()
    for k in range(0, len(flat), 256):
        zz = flat[k : k + 256]
        res[k : k + 256] = np.mean(1.0 / (lam[None, :] - zz[:, None]), axis=1)
    return res.reshape(z_arr.shape)


def linearized_green(sample, z) -> GreenBlocks:
    """Invert ``H = [[-z I_N, X^T], [X, -I_M]]`` and check the Schur identities."""
    X = _entries(sample)
    M, N = X.shape
    z = complex(z)
    if z.imag <= 0:
        raise ParameterError("linearized_green needs Im z > 0")
    if M + N > GREEN_MAX_DIM:
        raise ParameterError(f"M + N = {M + N} exceeds the dense cap {GREEN_MAX_DIM}")
    H = np.block([[-z * np.eye(N), X.T], [X, -np.eye(M)]]).astype(complex)
    try:
        G = linalg.inv(H)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"linearisation is singular at z = {z}") from exc
    G_TT = G[:N, :N]
    G_bar = G[N:, N:]
    R = linalg.inv(X.T @ X - z * np.eye(N))
    R_bar = z * linalg.inv(X @ X.T - z * np.eye(M))
    return GreenBlocks(
        z=z,
        G_TT=G_TT,
        G_TbarTbar=G_bar,
        m=complex(np.trace(G_TT) / N),
        m_bar=complex(np.trace(G_bar) / N),
        schur_error=float(np.abs(G_TT - R).max()),
        schur_error_bar=float(np.abs(G_bar - R_bar).max()),
    )


def counting(spec: Spectrum, E1: float, E2: float) -> float:
    """Fraction of eigenvalues in the half-open window ``(E1, E2]``."""
    if not E1 < E2:
        raise ParameterError(f"need E1 < E2, got {E1}, {E2}")
    lam = spec.lambdas
    return float(np.count_nonzero((lam > E1) & (lam <= E2)) / len(lam))


def delocalization_parts(sample) -> tuple[float, float]:
    """Largest sup-norms ``(over eigenvectors of X^T X, over eigenvectors of X X^T)``.

    Only eigenvectors with non-zero eigenvalue enter for ``X^T X``: the
    ``N - M`` dimensional kernel has no canonical basis.
    """
    X = _entries(sample)
    M, N = X.shape
    if M + N > GREEN_MAX_DIM:
        raise ParameterError(f"M + N = {M + N} exceeds the dense cap {GREEN_MAX_DIM}")
    U, s, Vt = linalg.svd(X, full_matrices=False, check_finite=False)
    tol = s.max(initial=0.0) * max(M, N) * np.finfo(float).eps
    rank = int(np.count_nonzero(s > tol))
    # U's columns belong to the M eigenvalues of X X^T; a zero singular value
    # still leaves a valid (kernel) eigenvector there
    v_max = np.abs(U).max() if U.size else 0.0
    u_max = np.abs(Vt[:rank]).max() if rank else 0.0
    return float(u_max), float(v_max)


def delocalization_stat(sample) -> float:
    """Largest sup-norm over normalised eigenvectors of ``X^T X`` and ``X X^T``."""
    return max(delocalization_parts(sample))


def onatski_R(spec: Spectrum) -> float:
    """``(l1 - l2) / (l2 - l3)`` from the three largest eigenvalues."""
    lam = spec.lambdas
    if len(lam) < 3:
        raise ParameterError("need at least three eigenvalues")
    l1, l2, l3 = lam[:3]
    if not l2 > l3:
        raise NumericalError("degenerate spectrum: lambda_2 == lambda_3")
    return float((l1 - l2) / (l2 - l3))


def write_spectrum_csv(path, spec: Spectrum) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["lambda"])
        for x in spec.lambdas:
            w.writerow([repr(float(x))])


def read_spectrum_csv(path, M: Optional[int] = None) -> Spectrum:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["lambda"]:
        raise DataError(f"{path}: missing 'lambda' header")
    lam = np.array([float(r[0]) for r in rows[1:]])
    N = len(lam)
    if M is None:
        M = int(np.count_nonzero(lam)) or N
    return Spectrum(lam, M, N)
